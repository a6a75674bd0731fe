#pragma once

// Head training on frozen features: cached feature extraction, the batched
// objective, AdamW, and checkpoints.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "texparse/config.hpp"
#include "texparse/dataset.hpp"
#include "texparse/features.hpp"
#include "texparse/head.hpp"
#include "texparse/losses.hpp"
#include "texparse/prompts.hpp"

namespace texparse {

/// "toy:<seed>" or "archive:<path>"; the toy width follows `dim`.
TextEmbedder make_text_embedder(const std::string& provider, int dim);

// Image-space transforms shared by training and inference.
ImageTensor resize_image(const ImageTensor& x, int height, int width);
Mask resize_mask(const Mask& m, int height, int width);  // nearest
ImageTensor flip_image(const ImageTensor& x, bool horizontal, bool vertical);
Mask flip_mask(const Mask& m, bool horizontal, bool vertical);

/// One training image after resizing, with its prompts embedded.
struct TrainExample {
  std::string name;
  ImageTensor image;
  GroundTruthMasks gt;   // all instances, raw labels
  std::vector<Mask> masks;
  std::vector<std::string> phrases;
  Tensor text;           // [K, d_emb]
};

std::vector<TrainExample> prepare_examples(const std::vector<LabeledSample>& samples, const RunConfig& cfg,
                                           const TextEmbedder& embedder);

/// Frozen features per (example, flip variant), computed on first use.
class FeatureCache {
 public:
  FeatureCache(const Backbone& backbone, int timestep, std::uint64_t seed) : backbone_(backbone), t_(timestep), seed_(seed) {}
  const Tensor& get(const TrainExample& ex, std::size_t index, bool hflip, bool vflip);

 private:
  const Backbone& backbone_;
  int t_;
  std::uint64_t seed_;
  std::map<std::pair<std::size_t, int>, Tensor> cache_;
};

struct AdamState {
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
  long step = 0;
};

/// Decoupled weight decay on matrices only (rank >= 2, excluding the
/// temperature); bias, norm and embedding vectors are not decayed.
void adamw_update(ParamSet& params, AdamState& state, const OptimConfig& cfg);

struct TrainState {
  ParsingHead head;
  AdamState adam;

  TrainState(const HeadConfig& cfg, std::uint64_t seed) : head(cfg, seed) {}
};

struct StepLoss {
  double total = 0.0;
  double bce = 0.0;
  double dice = 0.0;
  double grounding = 0.0;
};

/// Forward over the batch, matching, objective, one AdamW step. The batch is
/// (example index, hflip, vflip). Throws on an empty batch.
StepLoss train_step(TrainState& state, const std::vector<TrainExample>& examples,
                    const std::vector<std::tuple<std::size_t, bool, bool>>& batch, FeatureCache& features,
                    const RunConfig& cfg, std::uint64_t step_seed);

/// Objective without an update (no flips), for monitoring.
StepLoss evaluate_loss(const TrainState& state, const std::vector<TrainExample>& examples, FeatureCache& features,
                       const RunConfig& cfg, std::uint64_t seed);

/// Deterministic batch schedule: per-epoch shuffles and per-item flips.
std::vector<std::tuple<std::size_t, bool, bool>> batch_for_step(long step, std::size_t num_examples,
                                                               const RunConfig& cfg);

void save_checkpoint(const std::filesystem::path& path, const TrainState& state, const RunConfig& cfg);
/// Restores head parameters and optimizer state; the head config must match.
void load_checkpoint(const std::filesystem::path& path, TrainState& state);

struct TrainLogEntry {
  long step;
  StepLoss loss;
};

/// Full loop: cfg.optim.steps steps from the current state. `log` receives
/// every step's loss.
void train(TrainState& state, const std::vector<TrainExample>& examples, FeatureCache& features, const RunConfig& cfg,
           std::vector<TrainLogEntry>* log = nullptr);

}  // namespace texparse
