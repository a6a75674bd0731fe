#pragma once

// Labeled samples, the procedural figure generator and the on-disk layout
// (images/*.png, masks/<image>/<instance>_<label>_<person>.png, captions.jsonl,
// meta/*.json).

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "texparse/features.hpp"
#include "texparse/mask.hpp"

namespace texparse {

/// Malformed or missing dataset files.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Instance {
  Mask mask;
  std::string label;  // raw label
  int person = 0;
};

struct LabeledSample {
  std::string name;
  ImageTensor image;
  std::string caption;
  std::vector<Instance> instances;
};

struct SynthConfig {
  int size = 64;           // multiple of 32
  int max_instances = 8;
  int max_figures = 1;     // 1 or 2 figures side by side
  double shade_jitter = 0.0;
};

/// Deterministic under (n, seed). Every base category is placed at least once
/// when n * max_instances leaves room for it.
std::vector<LabeledSample> generate_synthetic_dataset(int n, std::uint64_t seed, const SynthConfig& cfg = {});

/// Canonical drawing colour (8-bit) and colour word of a base category.
struct CategoryStyle {
  std::string color_name;
  std::uint8_t rgb[3];
};
const CategoryStyle& category_style(const std::string& label);

// PNG IO. Images are 8-bit RGB; masks are 8-bit gray (nonzero = set), soft
// masks keep the 0..255 level.
ImageTensor read_png_image(const std::filesystem::path& path);
void write_png_image(const std::filesystem::path& path, const ImageTensor& img);
void write_png_rgb(const std::filesystem::path& path, int height, int width, const std::vector<std::uint8_t>& rgb);
std::vector<std::uint8_t> read_png_gray(const std::filesystem::path& path, int* height, int* width);
void write_png_gray(const std::filesystem::path& path, int height, int width, const std::vector<std::uint8_t>& gray);
Mask read_png_mask(const std::filesystem::path& path);
void write_png_mask(const std::filesystem::path& path, const Mask& m);

/// Mask file stem: "<instance>_<label>_<person>" with spaces as '+'.
std::string mask_file_stem(int instance, const std::string& label, int person);
/// Inverse of mask_file_stem; throws DataError on malformed names.
void parse_mask_file_stem(const std::string& stem, int* instance, std::string* label, int* person);

void save_dataset(const std::filesystem::path& dir, const std::vector<LabeledSample>& samples);
std::vector<LabeledSample> load_dataset(const std::filesystem::path& dir);

}  // namespace texparse
