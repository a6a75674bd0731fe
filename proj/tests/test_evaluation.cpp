#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "oracles.hpp"
#include "texparse/evaluation.hpp"

using namespace texparse;
using namespace oracles;

namespace {

LabeledSample sample_with(const std::vector<std::pair<std::string, Mask>>& parts, int person = 0) {
  LabeledSample s;
  s.name = "s";
  s.image = ImageTensor::filled(parts.front().second.height, parts.front().second.width, 0.5, 0.5, 0.5);
  for (const auto& [l, m] : parts) s.instances.push_back({m, l, person});
  return s;
}

std::set<std::string> labels_of(const ProtocolGT& g) {
  std::set<std::string> out;
  for (const auto& r : g.regions) out.insert(r.label);
  return out;
}

}  // namespace

// ----------------------------------------------------------------- protocols

TEST(Protocols, Parse) {
  EXPECT_EQ(parse_protocol("cop"), Protocol::COP);
  EXPECT_EQ(parse_protocol(" FPP "), Protocol::FPP);
  EXPECT_THROW(parse_protocol("XYZ"), std::invalid_argument);
  EXPECT_EQ(parse_protocol_list("COP,BHP"), (std::vector<Protocol>{Protocol::COP, Protocol::BHP}));
  EXPECT_THROW(parse_protocol_list(""), std::invalid_argument);
}

TEST(Protocols, UnifiedFilters) {
  const auto s = sample_with({{"face", rect(8, 8, 0, 2, 0, 8)}, {"tops", rect(8, 8, 2, 5, 0, 8)},
                              {"pants", rect(8, 8, 5, 8, 0, 8)}});
  EXPECT_EQ(labels_of(build_protocol_gt(s, {Protocol::COP})), (std::set<std::string>{"top", "bottom"}));
  EXPECT_EQ(labels_of(build_protocol_gt(s, {Protocol::BHP})), (std::set<std::string>{"face"}));
  EXPECT_TRUE(build_protocol_gt(s, {Protocol::CCP}).regions.empty());
  const auto fpp = build_protocol_gt(s, {Protocol::FPP});
  ASSERT_EQ(fpp.regions.size(), 1u);
  EXPECT_EQ(fpp.regions[0].mask.area(), 64);
  const auto shoe = sample_with({{"sneakers", rect(8, 8, 0, 2, 0, 2)}, {"handbag", rect(8, 8, 4, 6, 0, 2)}});
  EXPECT_EQ(labels_of(build_protocol_gt(shoe, {Protocol::CCP})), (std::set<std::string>{"shoe", "bag"}));
  ProtocolSpec ign{Protocol::COP};
  ign.ignore = {"bottom"};
  const auto g = build_protocol_gt(s, ign);
  EXPECT_EQ(labels_of(g), (std::set<std::string>{"top"}));
  EXPECT_EQ(g.ignore.area(), 24);
}

TEST(Protocols, FppIsUnionOfOthers) {
  SynthConfig cfg;
  cfg.max_figures = 2;
  for (const auto& s : generate_synthetic_dataset(12, 7, cfg)) {
    Mask others(s.image.height(), s.image.width());
    for (Protocol p : {Protocol::BHP, Protocol::COP, Protocol::CCP})
      for (const auto& r : build_protocol_gt(s, {p}).regions) others = mask_union(others, r.mask);
    Mask fpp(s.image.height(), s.image.width());
    for (const auto& r : build_protocol_gt(s, {Protocol::FPP}).regions) fpp = mask_union(fpp, r.mask);
    EXPECT_TRUE(fpp == others) << s.name;
  }
}

// ------------------------------------------------------------------ semantic

TEST(Semantic, Examples) {
  LabelMap gt(4, 4), pred(4, 4);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x) gt.cls[y * 4 + x] = 0;
  auto r = semantic_metrics(gt, gt, 1);
  EXPECT_DOUBLE_EQ(r.miou, 100.0);
  EXPECT_DOUBLE_EQ(r.macc, 100.0);
  for (int y = 0; y < 2; ++y)
    for (int x = 1; x < 3; ++x) pred.cls[y * 4 + x] = 0;
  r = semantic_metrics(pred, gt, 1);
  EXPECT_NEAR(r.miou, 100.0 / 3.0, 1e-12);
  EXPECT_EQ(r.per_class[0].inter, 2);
  EXPECT_EQ(r.per_class[0].uni, 6);
  LabelMap far(4, 4);
  far.cls[15] = 0;
  EXPECT_DOUBLE_EQ(semantic_metrics(far, gt, 1).miou, 0.0);
  const auto e = semantic_metrics(LabelMap(4, 4), LabelMap(4, 4), 2);
  EXPECT_TRUE(e.empty);
  EXPECT_TRUE(std::isnan(e.miou));
}

TEST(Semantic, ApThresholds) {
  EXPECT_DOUBLE_EQ(semantic_ap({{5, 5}, {3, 3}}), 100.0);
  EXPECT_DOUBLE_EQ(semantic_ap({{3, 5}}), 30.0);
  EXPECT_DOUBLE_EQ(semantic_ap({{49, 100}}), 0.0);
  EXPECT_TRUE(std::isnan(semantic_ap({})));
}

TEST(Semantic, OracleOnRandomSets) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const int K = 1 + rng() % 5, n = 1 + rng() % 4;
    std::vector<LabelMap> preds, gts;
    SemanticAccumulator acc(K);
    std::vector<IoUCount> pairs;
    for (int i = 0; i < n; ++i) {
      const int h = 3 + rng() % 10, w = 3 + rng() % 10;
      LabelMap p(h, w), g(h, w);
      for (auto& v : p.cls) v = static_cast<int>(rng() % (K + 1)) - 1;
      for (auto& v : g.cls) v = rng() % 10 == 0 ? LabelMap::kIgnore : static_cast<int>(rng() % (K + 1)) - 1;
      acc.add(p, g);
      for (const auto& [c, iou] : image_class_ious(p, g)) {
        // symmetric in its arguments once ignore pixels are dropped
        LabelMap p2 = p, g2 = g;
        for (std::size_t q = 0; q < g.cls.size(); ++q)
          if (g.cls[q] == LabelMap::kIgnore) p2.cls[q] = g2.cls[q] = LabelMap::kBackground;
        const auto back = image_class_ious(g2, p2).at(c);
        EXPECT_EQ(back.inter, iou.inter);
        EXPECT_EQ(back.uni, iou.uni);
        pairs.push_back(iou);
      }
      preds.push_back(p);
      gts.push_back(g);
    }
    const auto got = acc.result();
    const auto want = oracle_semantic(preds, gts, K);
    if (std::isnan(want.miou)) {
      EXPECT_TRUE(got.empty);
    } else {
      EXPECT_NEAR(got.miou, want.miou, 1e-9);
    }
    if (!std::isnan(want.macc)) EXPECT_NEAR(got.macc, want.macc, 1e-9);
    if (!pairs.empty()) EXPECT_NEAR(semantic_ap(pairs), oracle_semantic_ap(pairs), 1e-9);
  }
}

// ------------------------------------------------------------------ instance

TEST(Instance, Examples) {
  const Mask g = rect(10, 10, 0, 10, 0, 10);
  InstanceImage perfect{{{"hat", 0.9, g}}, {{"hat", g}}};
  auto r = instance_metrics({perfect});
  EXPECT_DOUBLE_EQ(r.map, 100.0);
  EXPECT_DOUBLE_EQ(r.ar100, 100.0);
  InstanceImage seventy{{{"hat", 0.9, rect(10, 10, 0, 7, 0, 10)}}, {{"hat", g}}};
  r = instance_metrics({seventy});
  EXPECT_DOUBLE_EQ(r.map, 50.0);
  EXPECT_DOUBLE_EQ(r.ar100, 50.0);
  InstanceImage none{{}, {{"hat", g}}};
  r = instance_metrics({none});
  EXPECT_DOUBLE_EQ(r.map, 0.0);
  EXPECT_DOUBLE_EQ(r.ar100, 0.0);
  InstanceImage wrong_label{{{"bag", 0.9, g}}, {{"hat", g}}};
  EXPECT_DOUBLE_EQ(instance_metrics({wrong_label}).map, 0.0);
}

TEST(Instance, KeepsAtMostMaxDetections) {
  const Mask g = rect(10, 10, 0, 5, 0, 5);
  InstanceImage im;
  im.gts.push_back({"hat", g});
  for (int k = 0; k < 100; ++k) im.preds.push_back({"hat", 1.0 - k * 1e-3, rect(10, 10, 6, 10, 6, 10)});
  im.preds.push_back({"hat", 0.01, g});
  EXPECT_DOUBLE_EQ(instance_metrics({im}).ar100, 0.0);
  EXPECT_DOUBLE_EQ(instance_metrics({im}, 101).ar100, 100.0);
}

TEST(Instance, OracleOnRandomSets) {
  std::mt19937_64 rng(23);
  const char* labels[] = {"a", "b", "c"};
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<InstanceImage> images(1 + rng() % 4);
    for (auto& im : images) {
      const int h = 6 + rng() % 6, w = 6 + rng() % 6;
      const int G = rng() % 4, D = rng() % 6;
      for (int g = 0; g < G; ++g) im.gts.push_back({labels[rng() % 3], random_rect(h, w, rng)});
      for (int d = 0; d < D; ++d) {
        // Half of the predictions are jittered copies of a gt.
        Mask m = G && rng() % 2 ? im.gts[rng() % G].mask : random_rect(h, w, rng);
        if (rng() % 2) m.bits[rng() % m.size()] ^= 1;
        im.preds.push_back({labels[rng() % 3], static_cast<double>(rng() % 5) / 4.0, m});
      }
    }
    const auto got = instance_metrics(images);
    const auto want = oracle_instance(images);
    if (std::isnan(want.map)) {
      EXPECT_TRUE(got.empty);
    } else {
      EXPECT_NEAR(got.map, want.map, 1e-9) << "trial " << trial;
    }
    if (std::isnan(want.ar)) {
      EXPECT_TRUE(std::isnan(got.ar100));
    } else {
      EXPECT_NEAR(got.ar100, want.ar, 1e-9) << "trial " << trial;
    }
  }
}

// ------------------------------------------------------------- split, gamma

TEST(Split, Examples) {
  auto s = unseen_split({"tops", "bottoms"}, {"tops", "saree"});
  EXPECT_EQ(s.unseen, (std::set<std::string>{"saree"}));
  EXPECT_EQ(s.seen, (std::set<std::string>{"tops"}));
  EXPECT_TRUE(unseen_split({"hat", "bag"}, {"hat", "bag"}).unseen.empty());
  s = unseen_split({"top", "bottom"}, {"jeans", "jumpsuit", "hoodie", "Baseball Cap"});
  EXPECT_EQ(s.seen, (std::set<std::string>{"jeans"}));
  EXPECT_EQ(s.unseen, (std::set<std::string>{"jumpsuit", "hoodie", "baseball cap"}));
}

TEST(Gamma, Convention) {
  Tensor px({3, 8, 8}, 0.25);
  px[0] = 0.0;
  px[1] = 1.0;
  const ImageTensor x(px);
  EXPECT_TRUE(gamma_correct(x, 1.0) == x);
  const ImageTensor d = gamma_correct(x, 0.5);
  EXPECT_DOUBLE_EQ(d.pixels()[2], 0.0625);
  EXPECT_DOUBLE_EQ(d.pixels()[0], 0.0);
  EXPECT_DOUBLE_EQ(d.pixels()[1], 1.0);
  EXPECT_THROW(gamma_correct(x, 0.0), std::invalid_argument);
  EXPECT_THROW(gamma_correct(x, -1.0), std::invalid_argument);
  double prev = -1;
  for (int i = 0; i <= 20; ++i) {
    const double v = i / 20.0;
    const double out = gamma_correct(ImageTensor::filled(8, 8, v, v, v), 0.25).pixels()[0];
    EXPECT_GE(out, 0.0);
    EXPECT_LE(out, 1.0);
    EXPECT_GE(out, prev);
    if (i > 0 && i < 20) EXPECT_LT(out, v);
    prev = out;
  }
}

// ------------------------------------------------------------- dataset level

TEST(Evaluate, GroundTruthAgainstItself) {
  SynthConfig cfg;
  cfg.max_figures = 2;
  const auto ds = generate_synthetic_dataset(8, 3, cfg);
  std::vector<Prediction> preds;
  for (const auto& s : ds) preds.push_back(prediction_from_ground_truth(s));
  EvalOptions opt;
  opt.train_labels = std::set<std::string>{"top", "bottom", "hat"};
  const auto rep = evaluate(ds, preds, opt);
  ASSERT_EQ(rep.protocols.size(), 4u);
  for (const auto& [name, r] : rep.protocols) {
    EXPECT_DOUBLE_EQ(r.miou, 100.0) << name;
    EXPECT_DOUBLE_EQ(r.macc, 100.0) << name;
    EXPECT_DOUBLE_EQ(r.map_ss, 100.0) << name;
    EXPECT_DOUBLE_EQ(r.map_is, 100.0) << name;
    EXPECT_DOUBLE_EQ(r.ar100, 100.0) << name;
  }
  ASSERT_TRUE(rep.unseen && rep.seen);
  EXPECT_TRUE(rep.split.seen.count("top"));
  EXPECT_FALSE(rep.split.unseen.count("top"));
  const auto j = report_to_json(rep);
  for (const char* k : {"FPP", "BHP", "CCP", "COP", "unseen", "seen", "conventions"}) EXPECT_TRUE(j.contains(k)) << k;
  EXPECT_EQ(j.dump(), report_to_json(evaluate(ds, preds, opt)).dump());
  EXPECT_NE(report_to_text(rep).find("COP"), std::string::npos);
}

TEST(Evaluate, ProtocolSelectionAndMissing) {
  const auto ds = generate_synthetic_dataset(3, 4);
  std::vector<Prediction> preds{prediction_from_ground_truth(ds[0]), Prediction{}, prediction_from_ground_truth(ds[2])};
  EvalOptions opt;
  opt.protocols = parse_protocol_list("COP,BHP");
  const auto rep = evaluate(ds, preds, opt);
  EXPECT_EQ(rep.protocols.size(), 2u);
  EXPECT_EQ(rep.missing_predictions, (std::vector<std::string>{ds[1].name}));
  EXPECT_FALSE(rep.unseen.has_value());
  Prediction wrong = prediction_from_ground_truth(ds[0]);
  EXPECT_THROW(evaluate({ds[1]}, {wrong}, opt), DataError);
}

TEST(Evaluate, FppMergesConnectedParts) {
  const Mask a = rect(8, 8, 0, 4, 0, 4), b = rect(8, 8, 4, 8, 0, 4), far = rect(8, 8, 0, 2, 6, 8);
  std::vector<std::vector<int>> members;
  auto people = merge_fpp({a, b}, &members);
  ASSERT_EQ(people.size(), 1u);
  EXPECT_EQ(people[0].area(), a.area() + b.area());
  EXPECT_EQ(members[0], (std::vector<int>{0, 1}));
  EXPECT_TRUE(merge_fpp({}).empty());
  const Mask c = rect(8, 8, 2, 6, 0, 4);
  people = merge_fpp({a, c});
  ASSERT_EQ(people.size(), 1u);
  EXPECT_LT(people[0].area(), a.area() + c.area());
  EXPECT_EQ(merge_fpp({a, far}).size(), 2u);
}
