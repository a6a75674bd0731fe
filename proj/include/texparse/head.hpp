#pragma once

// Class-agnostic mask head: a small feature pyramid over the frozen features,
// a query-based transformer decoder that emits N mask logits, and
// masked-average-pooled mask embeddings projected into the text space.

#include <cstdint>
#include <vector>

#include "texparse/autograd.hpp"
#include "texparse/params.hpp"
#include "texparse/tensor.hpp"

namespace texparse {

struct HeadConfig {
  int in_channels = 64;        // channels of f
  int num_queries = 100;
  int hidden = 256;            // pyramid and decoder width
  int d_emb = 512;             // mask embedding width, equal to the text width
  int layers = 9;
  int heads = 8;
  int ffn_mult = 4;
  std::vector<int> strides = {4, 2, 1};  // coarse -> fine, relative to the f grid
  int mask_upsample = 2;       // mask features relative to the f grid
  bool masked_attention = true;
  bool aux_loss = true;
  double eps_pool = 1e-6;
  double tau_init = 0.07;

  void validate() const;
};

struct PyramidFeatures {
  std::vector<ag::Var> levels;  // [hidden, h_l, w_l], coarse -> fine
  ag::Var mask_features;        // [hidden, Hm, Wm]
};

struct MaskSet {
  ag::Var logits;  // [N, Hm * Wm]
  int height = 0;
  int width = 0;

  int count() const { return logits.dim(0); }
  /// Elementwise sigmoid of the logits, [N, Hm * Wm].
  Tensor probs() const;
};

struct HeadOutput {
  MaskSet masks;
  ag::Var z;                    // [N, d_emb]
  std::vector<MaskSet> aux;     // one per earlier decoder stage
  std::vector<ag::Var> aux_z;
};

class ParsingHead {
 public:
  ParsingHead(HeadConfig config, std::uint64_t seed);

  const HeadConfig& config() const { return config_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  PyramidFeatures pixel_decode(const Tensor& f) const;
  /// Final masks plus the per-stage masks (initial queries and every layer but the last).
  MaskSet transformer_decode(const PyramidFeatures& pyr, std::vector<MaskSet>* aux = nullptr) const;
  HeadOutput forward(const Tensor& f) const;

  /// Learnable grounding temperature, exp(log_tau).
  ag::Var tau() const;

 private:
  ag::Var predict_masks(const ag::Var& queries, const ag::Var& mask_tokens) const;
  ag::Var embed_masks(const ag::Var& f_tokens, const MaskSet& masks) const;

  HeadConfig config_;
  ParamSet params_;
};

/// sum_p m(p) f(:, p) / max(sum_p m(p), eps). f is [C, H, W], mask [H, W]
/// (or [H * W]); the mask must match f's spatial size.
Tensor masked_average_pool(const Tensor& f, const Tensor& mask, double eps = 1e-6);

/// Batched, differentiable form: f_tokens [P, C], probs [N, P] -> [N, C].
ag::Var masked_average_pool(const ag::Var& f_tokens, const ag::Var& probs, double eps);

}  // namespace texparse
