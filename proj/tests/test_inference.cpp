#include <gtest/gtest.h>

#include <random>
#include <set>

#include "texparse/inference.hpp"
#include "texparse/params.hpp"

using namespace texparse;

namespace {

Tensor rows_of(const TextEmbedder& e, const std::vector<std::string>& phrases) {
  return embed_prompts(phrases, e).embeddings;
}

PredictedMask box(int h, int w, int y0, int x0, int y1, int x1, const std::string& label) {
  PredictedMask m;
  m.label = label;
  m.score = 1;
  m.mask = Mask(h, w);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) m.mask.set(y, x);
  return m;
}

}  // namespace

TEST(Assign, OneMaskOnePrompt) {
  const Tensor sim({1, 1}, std::vector<double>{0.8});
  auto a = assign_from_similarity(sim, {{0}}, 0.5);
  EXPECT_EQ(a[0].label, 0);
  EXPECT_EQ(a[0].score, 0.8);
  a = assign_from_similarity(Tensor({1, 1}, std::vector<double>{0.4}), {{0}}, 0.5);
  EXPECT_EQ(a[0].label, -1);
  EXPECT_THROW(assign_from_similarity(sim, {}, 0.5), std::invalid_argument);
  EXPECT_THROW(assign_labels(Tensor({1, 4}), LabelUniverse{}, 0.5), std::invalid_argument);
}

TEST(Assign, TiesGoToTheLowestIndexAndMaxOverExpansion) {
  const Tensor sim({2, 4}, std::vector<double>{0.7, 0.2, 0.7, 0.1,   // labels 0 and 2 tie
                                               0.1, 0.9, 0.3, 0.95});
  const std::vector<std::vector<int>> rows = {{0}, {1}, {2}, {3, 0}};
  const auto a = assign_from_similarity(sim, {{0}, {1}, {2}}, 0.5);
  EXPECT_EQ(a[0].label, 0);
  EXPECT_EQ(a[1].label, 1);
  const auto b = assign_from_similarity(sim, rows, 0.5);
  EXPECT_EQ(b[1].label, 3);
  EXPECT_EQ(b[1].score, 0.95);
}

TEST(Assign, ScalingInvariance) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const int N = 1 + rng() % 6, E = 1 + rng() % 8;
    const Tensor sim = randn({N, E}, 1.0, rng);
    std::vector<std::vector<int>> rows;
    for (int l = 0; l < 1 + static_cast<int>(rng() % 5); ++l) rows.push_back({static_cast<int>(rng() % E), static_cast<int>(rng() % E)});
    const double c = 0.1 + (rng() % 100) / 10.0, thr = 0.3;
    Tensor scaled = sim;
    for (auto& v : scaled.values()) v *= c;
    const auto a = assign_from_similarity(sim, rows, thr), b = assign_from_similarity(scaled, rows, thr * c);
    for (int i = 0; i < N; ++i) EXPECT_EQ(a[i].label, b[i].label);
  }
}

TEST(Assign, CapIsLabeledHat) {
  const TextEmbedder e = TextEmbedder::toy(777, 64);
  const LabelUniverse u = build_label_universe({"red top"}, e, kDefaultTemplate, true, true);
  const auto a = assign_labels(rows_of(e, {"cap"}), u, 0.5);
  ASSERT_GE(a[0].label, 0);
  EXPECT_EQ(u.labels[a[0].label], "hat");
  EXPECT_NEAR(a[0].score, 1.0, 1e-12);
  // Without ensembles "cap" has no home.
  const LabelUniverse plain = build_label_universe({"red top"}, e, kDefaultTemplate, true, false);
  const auto b = assign_labels(rows_of(e, {"cap"}), plain, 0.5);
  EXPECT_TRUE(b[0].label < 0 || plain.labels[b[0].label] != "hat");
}

TEST(Assign, LabelsStayInsideTheUniverse) {
  const TextEmbedder e = TextEmbedder::toy(5, 32);
  const LabelUniverse u = build_label_universe({"blue jeans", "green scarf", "blue jeans"}, e, kDefaultTemplate, true, true);
  EXPECT_EQ(u.labels[0], "blue jeans");
  EXPECT_EQ(u.labels[1], "green scarf");
  EXPECT_EQ(std::set<std::string>(u.labels.begin(), u.labels.end()).size(), u.labels.size());
  EXPECT_EQ(static_cast<int>(u.labels.size()), static_cast<int>(u.rows.size()));
  std::mt19937_64 rng(8);
  const auto a = assign_labels(randn({40, 32}, 1.0, rng), u, -1.0);
  for (const auto& x : a) {
    ASSERT_GE(x.label, 0);
    ASSERT_LT(x.label, static_cast<int>(u.labels.size()));
  }
}

TEST(Infer, EvalSizeKeepsAspect) {
  EXPECT_EQ(eval_size(64, 64, 64), std::make_pair(64, 64));
  EXPECT_EQ(eval_size(100, 200, 64), std::make_pair(64, 128));
  EXPECT_EQ(eval_size(300, 100, 64), std::make_pair(192, 64));
}

TEST(Overlay, ShapeLegendAndBlend) {
  const ImageTensor img = ImageTensor::filled(20, 30, 0.2, 0.4, 0.6);
  const Overlay none = visualize_masks(img, {});
  EXPECT_EQ(none.image.height(), 20 + kLegendHeight);
  EXPECT_EQ(none.image.width(), 30);
  EXPECT_TRUE(none.legend.entries.empty());
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 20; ++y)
      for (int x = 0; x < 30; ++x) ASSERT_EQ(none.image.at(c, y, x), img.at(c, y, x));

  const std::vector<PredictedMask> masks = {box(20, 30, 0, 0, 5, 5, "hand"), box(20, 30, 10, 10, 15, 15, "hand"),
                                            box(20, 30, 5, 20, 9, 29, "hat")};
  const Overlay o = visualize_masks(img, masks);
  EXPECT_EQ(o.image.height(), 20 + kLegendHeight);
  ASSERT_EQ(o.legend.entries.size(), 3u);
  EXPECT_EQ(o.legend.entries[0].first, "hand");
  EXPECT_EQ(o.legend.entries[1].first, "hand 2");
  std::set<Rgb> colors;
  for (const auto& [l, c] : o.legend.entries) colors.insert(c);
  EXPECT_EQ(colors.size(), 3u);
  const Rgb c0 = o.legend.entries[0].second;
  EXPECT_NEAR(o.image.at(0, 2, 2), 0.45 * 0.2 + 0.55 * c0[0] / 255.0, 1e-12);
  EXPECT_EQ(o.image.at(1, 19, 0), img.at(1, 19, 0));

  const Overlay again = visualize_masks(img, masks);
  EXPECT_TRUE(again.image == o.image);
  EXPECT_EQ(legend_to_json(again.legend), legend_to_json(o.legend));
  EXPECT_EQ(o.legend.entries[0].second, palette_color("hand", 0));
}

TEST(Overlay, ManySameLabelMasksStayDistinct) {
  const ImageTensor img = ImageTensor::filled(40, 40, 0.5, 0.5, 0.5);
  std::vector<PredictedMask> masks;
  for (int k = 0; k < 30; ++k) masks.push_back(box(40, 40, k, 0, k + 1, 40, "hand"));
  const Overlay o = visualize_masks(img, masks);
  std::set<Rgb> colors;
  for (const auto& [l, c] : o.legend.entries) colors.insert(c);
  EXPECT_EQ(colors.size(), 30u);
}
