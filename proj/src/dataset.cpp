#include "texparse/dataset.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "texparse/bundled_data.hpp"

namespace texparse {
namespace {

// Figures are drawn on a 32 x 32 cell grid; each cell is size/32 pixels.
constexpr int kGrid = 32;
constexpr int kFigureWidth = 16;

struct Rect {
  int r0, r1, c0, c1;  // half-open, figure-local cells
};

const std::map<std::string, CategoryStyle>& styles() {
  static const std::map<std::string, CategoryStyle> s = {
      {"face", {"tan", {210, 160, 115}}},
      {"hair", {"black", {20, 20, 20}}},
      {"left hand", {"pink", {255, 140, 180}}},
      {"right hand", {"pink", {255, 140, 180}}},
      {"left leg", {"beige", {235, 215, 160}}},
      {"right leg", {"beige", {235, 215, 160}}},
      {"left shoe", {"brown", {115, 65, 25}}},
      {"right shoe", {"brown", {115, 65, 25}}},
      {"hat", {"yellow", {240, 230, 30}}},
      {"eyewear", {"cyan", {30, 230, 230}}},
      {"scarf", {"orange", {255, 128, 10}}},
      {"top", {"red", {230, 25, 25}}},
      {"bottom", {"blue", {25, 50, 230}}},
      {"one-piece outfit", {"purple", {150, 30, 200}}},
      {"special clothing", {"green", {30, 180, 50}}},
      {"belt", {"white", {245, 245, 245}}},
      {"bag", {"teal", {0, 128, 128}}},
  };
  return s;
}

// Top-to-bottom order, used for captions. Drawing order differs.
const std::vector<std::string>& caption_order() {
  static const std::vector<std::string> o = {"hat",  "hair",      "face",       "eyewear",   "scarf",    "top",
                                             "one-piece outfit",  "special clothing", "belt", "bottom",
                                             "left hand", "right hand", "left leg", "right leg", "left shoe",
                                             "right shoe", "bag"};
  return o;
}

const std::vector<std::string>& draw_order() {
  static const std::vector<std::string> o = {"hair", "face", "hat", "eyewear", "special clothing", "one-piece outfit",
                                             "top", "bottom", "belt", "scarf", "left hand", "right hand",
                                             "left leg", "right leg", "left shoe", "right shoe", "bag"};
  return o;
}

bool is_torso(const std::string& l) { return l == "top" || l == "one-piece outfit" || l == "special clothing"; }

bool compatible(const std::set<std::string>& chosen, const std::string& l) {
  if (chosen.count(l)) return false;
  if (is_torso(l)) {
    for (const auto& c : chosen)
      if (is_torso(c)) return false;
    if (l != "top" && chosen.count("bottom")) return false;
  }
  if (l == "bottom" && (chosen.count("one-piece outfit") || chosen.count("special clothing"))) return false;
  return true;
}

// Lowest cell row covered by garments below the waist, where the legs start.
int leg_top(const std::set<std::string>& chosen) {
  if (chosen.count("special clothing")) return 27;
  if (chosen.count("bottom")) return 26;
  if (chosen.count("one-piece outfit")) return 25;
  return 20;
}

std::vector<Rect> shape_of(const std::string& l, const std::set<std::string>& chosen) {
  const int legs = leg_top(chosen);
  if (l == "hat") return {{0, 3, 3, 11}};
  if (l == "hair") return {{2, 5, 3, 11}};
  if (l == "face") return {{5, 6, 5, 9}, {6, 10, 4, 10}, {10, 11, 5, 9}};
  if (l == "eyewear") return {{7, 9, 4, 10}};
  if (l == "scarf") return {{11, 13, 3, 11}};
  if (l == "top") return {{13, 20, 3, 11}};
  if (l == "one-piece outfit") return {{13, 20, 3, 11}, {20, 25, 2, 12}};
  if (l == "special clothing") return {{11, 27, 2, 12}};
  if (l == "belt") return {{19, 21, 3, 11}};
  if (l == "bottom") return {{20, 26, 3, 11}};
  if (l == "left hand") return {{13, 21, 1, 3}};
  if (l == "right hand") return {{13, 21, 11, 13}};
  if (l == "left leg") return {{legs, 30, 4, 7}};
  if (l == "right leg") return {{legs, 30, 7, 10}};
  if (l == "left shoe") return {{29, 32, 3, 7}};
  if (l == "right shoe") return {{29, 32, 7, 11}};
  if (l == "bag") return {{15, 23, 13, 16}};
  throw std::out_of_range("no shape for label '" + l + "'");
}

std::string article_list(const std::vector<std::string>& items) {
  std::string s;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) s += i + 1 == items.size() ? " and " : ", ";
    s += (std::string("aeiou").find(items[i][0]) != std::string::npos ? "an " : "a ") + items[i];
  }
  return s;
}

void check_png(bool ok, const png_image& img, const std::string& what) {
  if (!ok) throw DataError(what + ": " + std::string(img.message));
}

}  // namespace

const CategoryStyle& category_style(const std::string& label) {
  const auto it = styles().find(label);
  if (it == styles().end()) throw std::out_of_range("no drawing style for label '" + label + "'");
  return it->second;
}

std::vector<LabeledSample> generate_synthetic_dataset(int n, std::uint64_t seed, const SynthConfig& cfg) {
  if (n < 1) throw std::invalid_argument("dataset size must be >= 1");
  if (cfg.size < kGrid || cfg.size % kGrid) throw std::invalid_argument("synthetic image size must be a positive multiple of 32");
  if (cfg.max_instances < 2) throw std::invalid_argument("max_instances must be >= 2");
  if (cfg.max_figures < 1 || cfg.max_figures > 2) throw std::invalid_argument("max_figures must be 1 or 2");
  const int cell = cfg.size / kGrid;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  // Spread every category over the set, then pad each figure randomly.
  std::vector<std::string> labels = caption_order();
  std::shuffle(labels.begin(), labels.end(), rng);
  std::vector<int> figures(n);
  for (auto& f : figures) f = 1 + static_cast<int>(rng() % cfg.max_figures);
  std::vector<std::set<std::string>> required(n);
  for (std::size_t k = 0; k < labels.size(); ++k) {
    for (int tries = 0; tries < n; ++tries) {
      auto& req = required[(k + tries) % n];
      const int limit = cfg.max_instances / figures[(k + tries) % n];
      if (static_cast<int>(req.size()) < limit && compatible(req, labels[k])) {
        req.insert(labels[k]);
        break;
      }
    }
  }

  std::vector<LabeledSample> out;
  for (int i = 0; i < n; ++i) {
    LabeledSample s;
    s.name = "synth_" + std::to_string(i);
    const int bg = 96 + 16 * static_cast<int>(rng() % 5);
    std::vector<int> owner(static_cast<std::size_t>(kGrid) * kGrid, -1);
    struct Drawn {
      std::string label;
      int person;
      std::uint8_t rgb[3];
    };
    std::vector<Drawn> drawn;
    std::vector<std::string> clauses;
    const int limit = cfg.max_instances / figures[i];
    for (int f = 0; f < figures[i]; ++f) {
      std::set<std::string> chosen = f == 0 ? required[i] : std::set<std::string>{};
      std::vector<std::string> extra = caption_order();
      std::shuffle(extra.begin(), extra.end(), rng);
      const int drawn_target = std::min(limit, 2 + static_cast<int>(rng() % std::max(1, limit - 1)));
      const int target = std::max(static_cast<int>(chosen.size()), drawn_target);
      for (const auto& l : extra) {
        if (static_cast<int>(chosen.size()) >= target) break;
        if (compatible(chosen, l)) chosen.insert(l);
      }
      const int x0 = figures[i] == 1 ? (kGrid - kFigureWidth) / 2 : f * kFigureWidth;
      for (const auto& l : draw_order()) {
        if (!chosen.count(l)) continue;
        Drawn d{l, f, {}};
        const CategoryStyle& st = category_style(l);
        const double shade = 1.0 + cfg.shade_jitter * (2.0 * unit(rng) - 1.0);
        for (int c = 0; c < 3; ++c) d.rgb[c] = static_cast<std::uint8_t>(std::clamp(std::lround(st.rgb[c] * shade), 0L, 255L));
        const int id = static_cast<int>(drawn.size());
        drawn.push_back(d);
        for (const Rect& r : shape_of(l, chosen))
          for (int y = r.r0; y < r.r1; ++y)
            for (int x = r.c0 + x0; x < r.c1 + x0; ++x)
              if (x >= 0 && x < kGrid) owner[static_cast<std::size_t>(y) * kGrid + x] = id;
      }
      std::vector<std::string> items;
      for (const auto& l : caption_order())
        if (chosen.count(l)) items.push_back(category_style(l).color_name + " " + l);
      clauses.push_back("someone with " + article_list(items));
    }

    Tensor px({3, cfg.size, cfg.size});
    std::vector<Mask> masks(drawn.size(), Mask(cfg.size, cfg.size));
    for (int y = 0; y < cfg.size; ++y) {
      for (int x = 0; x < cfg.size; ++x) {
        const int id = owner[static_cast<std::size_t>(y / cell) * kGrid + x / cell];
        for (int c = 0; c < 3; ++c) px.at(c, y, x) = (id < 0 ? bg : drawn[id].rgb[c]) / 255.0;
        if (id >= 0) masks[id].set(y, x);
      }
    }
    s.image = ImageTensor(std::move(px));
    for (std::size_t k = 0; k < drawn.size(); ++k)
      if (masks[k].area() > 0) s.instances.push_back({std::move(masks[k]), drawn[k].label, drawn[k].person});
    for (std::size_t k = 0; k < clauses.size(); ++k) s.caption += (k ? ", and " : "") + clauses[k];
    out.push_back(std::move(s));
  }
  return out;
}

// ------------------------------------------------------------------------ PNG

ImageTensor read_png_image(const std::filesystem::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  check_png(png_image_begin_read_from_file(&img, path.string().c_str()), img, path.string());
  img.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
  check_png(png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr), img, path.string());
  const int h = static_cast<int>(img.height), w = static_cast<int>(img.width);
  Tensor px({3, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) px.at(c, y, x) = buf[(static_cast<std::size_t>(y) * w + x) * 3 + c] / 255.0;
  try {
    return ImageTensor(std::move(px));
  } catch (const std::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_png_rgb(const std::filesystem::path& path, int height, int width, const std::vector<std::uint8_t>& rgb) {
  if (rgb.size() != static_cast<std::size_t>(height) * width * 3) throw std::invalid_argument("rgb buffer size mismatch");
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(width);
  img.height = static_cast<png_uint_32>(height);
  img.format = PNG_FORMAT_RGB;
  check_png(png_image_write_to_file(&img, path.string().c_str(), 0, rgb.data(), 0, nullptr), img, path.string());
}

void write_png_image(const std::filesystem::path& path, const ImageTensor& im) {
  const int h = im.height(), w = im.width();
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(h) * w * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        buf[(static_cast<std::size_t>(y) * w + x) * 3 + c] =
            static_cast<std::uint8_t>(std::lround(std::clamp(im.at(c, y, x), 0.0, 1.0) * 255.0));
  write_png_rgb(path, h, w, buf);
}

std::vector<std::uint8_t> read_png_gray(const std::filesystem::path& path, int* height, int* width) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  check_png(png_image_begin_read_from_file(&img, path.string().c_str()), img, path.string());
  img.format = PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
  check_png(png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr), img, path.string());
  *height = static_cast<int>(img.height);
  *width = static_cast<int>(img.width);
  return buf;
}

void write_png_gray(const std::filesystem::path& path, int height, int width, const std::vector<std::uint8_t>& gray) {
  if (gray.size() != static_cast<std::size_t>(height) * width) throw std::invalid_argument("gray buffer size mismatch");
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(width);
  img.height = static_cast<png_uint_32>(height);
  img.format = PNG_FORMAT_GRAY;
  check_png(png_image_write_to_file(&img, path.string().c_str(), 0, gray.data(), 0, nullptr), img, path.string());
}

Mask read_png_mask(const std::filesystem::path& path) {
  int h = 0, w = 0;
  const auto g = read_png_gray(path, &h, &w);
  Mask m(h, w);
  for (std::size_t i = 0; i < g.size(); ++i) m.bits[i] = g[i] != 0;
  return m;
}

void write_png_mask(const std::filesystem::path& path, const Mask& m) {
  std::vector<std::uint8_t> g(m.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = m[i] ? 255 : 0;
  write_png_gray(path, m.height, m.width, g);
}

// --------------------------------------------------------------------- layout

std::string mask_file_stem(int instance, const std::string& label, int person) {
  std::string l = label;
  std::replace(l.begin(), l.end(), ' ', '+');
  return std::to_string(instance) + "_" + l + "_" + std::to_string(person);
}

void parse_mask_file_stem(const std::string& stem, int* instance, std::string* label, int* person) {
  const auto a = stem.find('_'), b = stem.rfind('_');
  if (a == std::string::npos || b == a) throw DataError("mask file name '" + stem + "' is not <instance>_<label>_<person>");
  try {
    std::size_t used = 0;
    *instance = std::stoi(stem.substr(0, a), &used);
    if (used != a) throw std::invalid_argument("instance");
    const std::string p = stem.substr(b + 1);
    *person = std::stoi(p, &used);
    if (used != p.size() || *person < 0) throw std::invalid_argument("person");
  } catch (const std::exception&) {
    throw DataError("mask file name '" + stem + "' is not <instance>_<label>_<person>");
  }
  *label = stem.substr(a + 1, b - a - 1);
  std::replace(label->begin(), label->end(), '+', ' ');
}

void save_dataset(const std::filesystem::path& dir, const std::vector<LabeledSample>& samples) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  fs::create_directories(dir / "meta");
  std::ofstream captions(dir / "captions.jsonl");
  std::set<std::string> labels;
  for (const auto& s : samples) {
    write_png_image(dir / "images" / (s.name + ".png"), s.image);
    const fs::path mdir = dir / "masks" / s.name;
    fs::remove_all(mdir);
    fs::create_directories(mdir);
    for (std::size_t k = 0; k < s.instances.size(); ++k) {
      const auto& inst = s.instances[k];
      write_png_mask(mdir / (mask_file_stem(static_cast<int>(k), inst.label, inst.person) + ".png"), inst.mask);
      labels.insert(inst.label);
    }
    captions << nlohmann::json{{"image", s.name}, {"caption", s.caption}}.dump() << '\n';
  }
  std::ofstream(dir / "meta" / "labels.json") << nlohmann::json{{"labels", labels}}.dump(2) << '\n';
  std::ofstream(dir / "meta" / "vocabulary.json") << bundled::kVocabulary;
  std::ofstream(dir / "meta" / "ensembles.json") << bundled::kEnsembles;
}

std::vector<LabeledSample> load_dataset(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir / "images")) throw DataError("no images/ directory under " + dir.string());
  std::vector<std::string> order;
  std::map<std::string, std::string> captions;
  if (fs::exists(dir / "captions.jsonl")) {
    std::ifstream in(dir / "captions.jsonl");
    std::string line;
    for (int lineno = 1; std::getline(in, line); ++lineno) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        const auto j = nlohmann::json::parse(line);
        const std::string name = j.at("image").get<std::string>();
        if (!captions.count(name)) order.push_back(name);
        captions[name] = j.value("caption", "");
      } catch (const nlohmann::json::exception& e) {
        throw DataError("captions.jsonl line " + std::to_string(lineno) + ": " + e.what());
      }
    }
  }
  std::vector<std::string> rest;
  for (const auto& e : fs::directory_iterator(dir / "images")) {
    if (e.path().extension() != ".png") continue;
    const std::string name = e.path().stem().string();
    if (!captions.count(name)) rest.push_back(name);
  }
  std::sort(rest.begin(), rest.end());
  order.insert(order.end(), rest.begin(), rest.end());
  if (order.empty()) throw DataError("dataset " + dir.string() + " has no images");

  std::vector<LabeledSample> out;
  for (const auto& name : order) {
    LabeledSample s;
    s.name = name;
    const fs::path img = dir / "images" / (name + ".png");
    if (!fs::exists(img)) throw DataError("captions.jsonl names missing image " + img.string());
    s.image = read_png_image(img);
    s.caption = captions.count(name) ? captions[name] : "";
    const fs::path mdir = dir / "masks" / name;
    if (fs::is_directory(mdir)) {
      std::vector<std::pair<int, Instance>> found;
      for (const auto& e : fs::directory_iterator(mdir)) {
        if (e.path().extension() != ".png") continue;
        int idx = 0;
        Instance inst;
        parse_mask_file_stem(e.path().stem().string(), &idx, &inst.label, &inst.person);
        inst.mask = read_png_mask(e.path());
        if (inst.mask.height != s.image.height() || inst.mask.width != s.image.width()) {
          throw DataError(e.path().string() + " does not match its image size");
        }
        found.emplace_back(idx, std::move(inst));
      }
      std::sort(found.begin(), found.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
      for (auto& [_, inst] : found) s.instances.push_back(std::move(inst));
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace texparse
