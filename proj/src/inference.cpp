#include "texparse/inference.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

#include "texparse/params.hpp"
#include "texparse/training.hpp"

namespace texparse {

LabelUniverse build_label_universe(const std::vector<std::string>& phrases, const TextEmbedder& embedder,
                                   const std::string& templ, bool use_ebp, bool use_ensembles,
                                   const EnsembleTable& table) {
  std::vector<std::string> labels;
  std::set<std::string> seen;
  auto push = [&](const std::string& l) {
    if (!l.empty() && seen.insert(l).second) labels.push_back(l);
  };
  for (const auto& p : phrases) push(p);
  if (use_ebp)
    for (const auto& l : ebp_labels()) push(l);
  if (use_ensembles)
    for (const auto& [key, list] : table.entries()) push(key);

  LabelUniverse u;
  u.labels = labels;
  std::vector<std::string> prompts;
  std::map<std::string, int> row_of;
  for (const auto& l : labels) {
    std::vector<int> rows;
    const auto expansion = use_ensembles ? expand_ensemble(l, table) : std::vector<std::string>{l};
    for (const auto& e : expansion) {
      auto [it, fresh] = row_of.emplace(e, static_cast<int>(prompts.size()));
      if (fresh) prompts.push_back(e);
      rows.push_back(it->second);
    }
    u.rows.push_back(std::move(rows));
  }
  u.embeddings = embed_prompts(prompts, embedder, templ).embeddings;
  return u;
}

std::vector<LabelAssignment> assign_from_similarity(const Tensor& sim, const std::vector<std::vector<int>>& rows,
                                                    double threshold) {
  if (rows.empty()) throw std::invalid_argument("label assignment needs at least one prompt");
  const int N = sim.dim(0), E = sim.dim(1);
  std::vector<LabelAssignment> out(N);
  for (int i = 0; i < N; ++i) {
    int best = -1;
    double best_score = -INFINITY;
    for (std::size_t l = 0; l < rows.size(); ++l) {
      double s = -INFINITY;
      for (int r : rows[l]) {
        if (r < 0 || r >= E) throw std::out_of_range("label row out of range");
        s = std::max(s, sim.at(i, r));
      }
      if (s > best_score) {  // strict: ties keep the lower index
        best_score = s;
        best = static_cast<int>(l);
      }
    }
    out[i].score = best_score;
    out[i].label = best_score >= threshold ? best : -1;
  }
  return out;
}

std::vector<LabelAssignment> assign_labels(const Tensor& z, const LabelUniverse& universe, double threshold) {
  if (universe.labels.empty()) throw std::invalid_argument("label assignment needs at least one prompt");
  const int N = z.dim(0), d = z.dim(1), E = universe.embeddings.dim(0);
  if (universe.embeddings.dim(1) != d) throw std::invalid_argument("mask embedding and prompt widths differ");
  Tensor sim({N, E});
  for (int i = 0; i < N; ++i) {
    double n = 0;
    for (int c = 0; c < d; ++c) n += z.at(i, c) * z.at(i, c);
    n = std::sqrt(n);
    for (int e = 0; e < E; ++e) {
      double dot = 0;
      for (int c = 0; c < d; ++c) dot += z.at(i, c) * universe.embeddings.at(e, c);
      sim.at(i, e) = n > 0 ? dot / n : 0.0;
    }
  }
  return assign_from_similarity(sim, universe.rows, threshold);
}

std::pair<int, int> eval_size(int height, int width, int target, int multiple) {
  auto round_to = [&](double v) { return std::max(multiple, static_cast<int>(std::lround(v / multiple)) * multiple); };
  if (height <= width) return {round_to(target), round_to(static_cast<double>(width) * target / height)};
  return {round_to(static_cast<double>(height) * target / width), round_to(target)};
}

Prediction predict(const ParsingHead& head, const Backbone& backbone, const TextEmbedder& embedder,
                   const std::string& name, const ImageTensor& image, const std::string& caption,
                   const RunConfig& cfg) {
  ag::NoGradGuard ng;
  const auto [eh, ew] = eval_size(image.height(), image.width(), cfg.resize);
  const ImageTensor x = resize_image(image, eh, ew);
  const Tensor f = extract_features(backbone, x, cfg.timestep, mix_seed(cfg.seed, fnv1a(name))).f;
  const HeadOutput out = head.forward(f);
  const int N = out.masks.count();
  const Tensor probs = ag::resize_bilinear(out.masks.probs().reshaped({N, out.masks.height, out.masks.width}),
                                           image.height(), image.width());

  const auto phrases = extract_phrases(caption, cfg.k_phrase);
  const LabelUniverse u = build_label_universe(phrases, embedder, cfg.prompt_template, cfg.use_ebp, cfg.use_ensembles);
  const auto assigned = assign_labels(out.z.value(), u, cfg.threshold);

  Prediction p;
  p.image = name;
  p.height = image.height();
  p.width = image.width();
  const std::size_t P = static_cast<std::size_t>(p.height) * p.width;
  for (int i = 0; i < N; ++i) {
    if (assigned[i].label < 0) continue;
    PredictedMask m;
    m.label = u.labels[assigned[i].label];
    m.score = assigned[i].score;
    m.mask = Mask(p.height, p.width);
    m.prob.resize(P);
    for (std::size_t k = 0; k < P; ++k) {
      const double v = probs[i * P + k];
      m.prob[k] = static_cast<float>(v);
      m.mask.bits[k] = v >= 0.5;
    }
    if (m.mask.area() == 0) continue;
    p.masks.push_back(std::move(m));
  }
  return p;
}

void save_predictions(const std::filesystem::path& dir, const std::vector<Prediction>& preds, const nlohmann::json& meta) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream lines(dir / "predictions.jsonl");
  for (const auto& p : preds) {
    nlohmann::json j = {{"image", p.image}, {"height", p.height}, {"width", p.width}, {"masks", nlohmann::json::array()}};
    for (std::size_t k = 0; k < p.masks.size(); ++k) {
      const PredictedMask& m = p.masks[k];
      const std::string rel = "masks/" + p.image + "/" + std::to_string(k) + ".png";
      fs::create_directories((dir / rel).parent_path());
      std::vector<std::uint8_t> gray(m.mask.size());
      for (std::size_t i = 0; i < gray.size(); ++i) {
        const double v = m.prob.empty() ? (m.mask[i] ? 1.0 : 0.0) : m.prob[i];
        // Keep the stored map consistent with the binary mask at 128.
        int q = static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255));
        if (m.mask[i]) q = std::max(q, 128);
        else q = std::min(q, 127);
        gray[i] = static_cast<std::uint8_t>(q);
      }
      write_png_gray(dir / rel, m.mask.height, m.mask.width, gray);
      j["masks"].push_back({{"file", rel}, {"label", m.label}, {"score", m.score}, {"person", m.person}});
    }
    lines << j.dump() << '\n';
  }
  std::ofstream(dir / "meta.json") << meta.dump(2) << '\n';
}

std::vector<Prediction> load_predictions(const std::filesystem::path& dir, nlohmann::json* meta) {
  std::ifstream in(dir / "predictions.jsonl");
  if (!in) throw DataError("no predictions.jsonl in " + dir.string());
  std::vector<Prediction> out;
  int line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const nlohmann::json j = nlohmann::json::parse(line);
      Prediction p;
      p.image = j.at("image").get<std::string>();
      p.height = j.at("height").get<int>();
      p.width = j.at("width").get<int>();
      for (const auto& mj : j.at("masks")) {
        PredictedMask m;
        m.label = mj.at("label").get<std::string>();
        m.score = mj.at("score").get<double>();
        m.person = mj.value("person", -1);
        int h = 0, w = 0;
        const auto gray = read_png_gray(dir / mj.at("file").get<std::string>(), &h, &w);
        if (h != p.height || w != p.width) throw DataError("mask size differs from the image size");
        m.mask = Mask(h, w);
        m.prob.resize(gray.size());
        for (std::size_t i = 0; i < gray.size(); ++i) {
          m.prob[i] = gray[i] / 255.0f;
          m.mask.bits[i] = gray[i] >= 128;
        }
        p.masks.push_back(std::move(m));
      }
      out.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("predictions.jsonl line " + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("predictions.jsonl line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (meta) {
    std::ifstream m(dir / "meta.json");
    *meta = m ? nlohmann::json::parse(m, nullptr, false) : nlohmann::json::object();
    if (meta->is_discarded()) throw DataError("meta.json in " + dir.string() + " is not valid JSON");
  }
  return out;
}

// ------------------------------------------------------------------ overlays

namespace {

// High-contrast palette (Kelly's colours without black and white).
constexpr Rgb kPalette[] = {
    {255, 179, 0},  {128, 62, 117}, {255, 104, 0},  {166, 189, 215}, {193, 0, 32},   {206, 162, 98},
    {129, 112, 102}, {0, 125, 52},  {246, 118, 142}, {0, 83, 138},   {255, 122, 92}, {83, 55, 122},
    {255, 142, 0},  {179, 40, 81},  {244, 200, 0},  {127, 24, 13},   {147, 170, 0},  {89, 51, 21},
    {241, 58, 19},  {35, 44, 22}};
constexpr int kPaletteSize = static_cast<int>(std::size(kPalette));

// 3x5 glyphs, rows top to bottom, 3 bits each (MSB left).
const std::map<char, const char*>& glyphs() {
  static const std::map<char, const char*> g = {
      {'a', "010101111101101"}, {'b', "110101110101110"}, {'c', "011100100100011"}, {'d', "110101101101110"},
      {'e', "111100110100111"}, {'f', "111100110100100"}, {'g', "011100101101011"}, {'h', "101101111101101"},
      {'i', "111010010010111"}, {'j', "001001001101010"}, {'k', "101101110101101"}, {'l', "100100100100111"},
      {'m', "101111111101101"}, {'n', "110101101101101"}, {'o', "010101101101010"}, {'p', "110101110100100"},
      {'q', "010101101110011"}, {'r', "110101110101101"}, {'s', "011100010001110"}, {'t', "111010010010010"},
      {'u', "101101101101111"}, {'v', "101101101101010"}, {'w', "101101111111101"}, {'x', "101101010101101"},
      {'y', "101101010010010"}, {'z', "111001010100111"}, {'0', "111101101101111"}, {'1', "010110010010111"},
      {'2', "110001010100111"}, {'3', "110001010001110"}, {'4', "101101111001001"}, {'5', "111100110001110"},
      {'6', "011100111101111"}, {'7', "111001010010010"}, {'8', "111101111101111"}, {'9', "111101111001110"},
      {'-', "000000111000000"}};
  return g;
}

struct Canvas {
  int h, w;
  std::vector<double> px;  // [3, h, w]
  void put(int y, int x, const Rgb& c) {
    if (y < 0 || y >= h || x < 0 || x >= w) return;
    for (int k = 0; k < 3; ++k) px[(static_cast<std::size_t>(k) * h + y) * w + x] = c[k] / 255.0;
  }
};

// Returns the x just past the drawn text.
int draw_text(Canvas& c, int x, int y, const std::string& text, const Rgb& color) {
  for (char ch : text) {
    const auto it = glyphs().find(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    if (it != glyphs().end())
      for (int r = 0; r < 5; ++r)
        for (int q = 0; q < 3; ++q)
          if (it->second[r * 3 + q] == '1') c.put(y + r, x + q, color);
    x += 4;
  }
  return x;
}

}  // namespace

Rgb palette_color(const std::string& label, int ordinal) {
  return kPalette[mix_seed(fnv1a(label), static_cast<std::uint64_t>(ordinal)) % kPaletteSize];
}

Overlay visualize_masks(const ImageTensor& image, const std::vector<PredictedMask>& masks) {
  const int H = image.height(), W = image.width();
  Canvas c{H + kLegendHeight, W, std::vector<double>(static_cast<std::size_t>(3) * (H + kLegendHeight) * W, 1.0)};
  for (int k = 0; k < 3; ++k)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) c.px[(static_cast<std::size_t>(k) * c.h + y) * W + x] = image.at(k, y, x);

  Overlay out;
  std::map<std::string, int> ordinal;
  std::set<Rgb> used;
  for (const auto& m : masks) {
    if (m.mask.height != H || m.mask.width != W) throw std::invalid_argument("mask size differs from the image");
    const int ord = ordinal[m.label]++;
    const std::size_t base = mix_seed(fnv1a(m.label), static_cast<std::uint64_t>(ord)) % kPaletteSize;
    Rgb color = kPalette[base];
    // Probe the palette, then nudge, until the colour is unused in this image.
    for (int k = 1; k < kPaletteSize && used.count(color); ++k) color = kPalette[(base + k) % kPaletteSize];
    for (int bump = 1; used.count(color); ++bump)
      color = {static_cast<std::uint8_t>((color[0] + 37 * bump) % 256), static_cast<std::uint8_t>((color[1] + 91 * bump) % 256),
               static_cast<std::uint8_t>((color[2] + 53 * bump) % 256)};
    used.insert(color);
    out.legend.entries.emplace_back(ord == 0 ? m.label : m.label + " " + std::to_string(ord + 1), color);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        if (!m.mask.at(y, x)) continue;
        for (int k = 0; k < 3; ++k) {
          double& v = c.px[(static_cast<std::size_t>(k) * c.h + y) * W + x];
          v = (1 - kOverlayAlpha) * v + kOverlayAlpha * (color[k] / 255.0);
        }
      }
  }

  // Legend strip: swatch then label, left to right, clipped at the width.
  int x = 1;
  for (const auto& [label, color] : out.legend.entries) {
    for (int y = 0; y < 8; ++y)
      for (int q = 0; q < 8; ++q) c.put(H + 2 + y, x + q, color);
    x = draw_text(c, x + 10, H + 4, label, {0, 0, 0}) + 4;
  }
  out.image = ImageTensor(Tensor({3, c.h, W}, std::move(c.px)));
  return out;
}

nlohmann::json legend_to_json(const ColorLegend& legend) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& [label, c] : legend.entries) j.push_back({{"label", label}, {"rgb", {c[0], c[1], c[2]}}});
  return j;
}

}  // namespace texparse
