#pragma once

// Open-vocabulary inference: mask embeddings scored against caption phrases,
// the fixed body-part list and ensemble labels; overlays with a legend.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "texparse/config.hpp"
#include "texparse/evaluation.hpp"
#include "texparse/features.hpp"
#include "texparse/head.hpp"
#include "texparse/prompts.hpp"

namespace texparse {

/// Candidate labels; each scores as the max over its expansion rows.
struct LabelUniverse {
  std::vector<std::string> labels;
  std::vector<std::vector<int>> rows;  // per label, rows of `embeddings`
  Tensor embeddings;                   // [E, d], unit-norm rows
};

/// Phrases first, then EBP, then ensemble keys; duplicates keep the first slot.
LabelUniverse build_label_universe(const std::vector<std::string>& phrases, const TextEmbedder& embedder,
                                   const std::string& templ, bool use_ebp, bool use_ensembles,
                                   const EnsembleTable& table = EnsembleTable::bundled());

struct LabelAssignment {
  int label = -1;  // index into the universe, -1 = unlabeled
  double score = 0.0;
};

/// sim is [N, E]; per mask the label score is the max over its rows, argmax
/// with ties to the lowest label index, kept when score >= threshold.
std::vector<LabelAssignment> assign_from_similarity(const Tensor& sim, const std::vector<std::vector<int>>& rows,
                                                    double threshold);

/// Cosine form: z [N, d] rows are normalized first. Throws on an empty universe.
std::vector<LabelAssignment> assign_labels(const Tensor& z, const LabelUniverse& universe, double threshold);

/// Size fed to the backbone at test time: shorter edge = `target`, longer edge
/// scaled to keep the aspect ratio and rounded to a multiple of `multiple`.
std::pair<int, int> eval_size(int height, int width, int target, int multiple = 16);

/// Full single-image inference. Masks come back at the input resolution.
Prediction predict(const ParsingHead& head, const Backbone& backbone, const TextEmbedder& embedder,
                   const std::string& name, const ImageTensor& image, const std::string& caption,
                   const RunConfig& cfg);

using Rgb = std::array<std::uint8_t, 3>;

struct ColorLegend {
  std::vector<std::pair<std::string, Rgb>> entries;  // first-appearance order
};

struct Overlay {
  ImageTensor image;  // input height + legend strip
  ColorLegend legend;
};

inline constexpr int kLegendHeight = 12;
inline constexpr double kOverlayAlpha = 0.55;

/// Colour of the `ordinal`-th mask carrying `label` (before de-duplication).
Rgb palette_color(const std::string& label, int ordinal);

/// predictions.jsonl plus masks/<image>/<k>.png holding the probability map
/// quantized to 8 bits (>= 128 reproduces prob >= 0.5 exactly). `meta` goes
/// to meta.json.
void save_predictions(const std::filesystem::path& dir, const std::vector<Prediction>& preds,
                      const nlohmann::json& meta = nlohmann::json::object());
/// Throws DataError on a malformed directory.
std::vector<Prediction> load_predictions(const std::filesystem::path& dir, nlohmann::json* meta = nullptr);

Overlay visualize_masks(const ImageTensor& image, const std::vector<PredictedMask>& masks);
nlohmann::json legend_to_json(const ColorLegend& legend);

}  // namespace texparse
