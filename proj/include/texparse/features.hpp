#pragma once

// Texture-aligned feature extraction: a frozen image-to-texture backbone run
// once per image, no iterative denoising.
//
//   C, cls   = context_head(image_encoder(x))
//   f_E, x_e = latent_encoder(x)
//   x_t      = sqrt(abar_t) x_e + sqrt(1 - abar_t) eps
//   f_U      = denoiser(x_t, C, cls, t)
//   f_D      = latent_decoder(x_t)
//   f        = f_E || f_U || f_D     (channel concat on a common grid)

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "texparse/archive.hpp"
#include "texparse/params.hpp"
#include "texparse/tensor.hpp"

namespace texparse {

/// RGB image with values in [0, 1], stored channel-major as [3, H, W].
class ImageTensor {
 public:
  ImageTensor() = default;
  /// Validates range and minimum size (8 x 8).
  explicit ImageTensor(Tensor pixels);
  static ImageTensor filled(int height, int width, double r, double g, double b);

  int height() const { return pixels_.dim(1); }
  int width() const { return pixels_.dim(2); }
  const Tensor& pixels() const { return pixels_; }
  double at(int c, int y, int x) const { return pixels_.at(c, y, x); }

  friend bool operator==(const ImageTensor& a, const ImageTensor& b) { return a.pixels_.values() == b.pixels_.values() && a.pixels_.shape() == b.pixels_.shape(); }

 private:
  Tensor pixels_;
};

struct ContextEmbedding {
  Tensor tokens;  // [T_ctx, d_ctx]
  Tensor cls;     // [d_ctx]
};

class NoiseSchedule {
 public:
  /// alphas[k-1] holds alpha_k for k = 1..T_max.
  explicit NoiseSchedule(std::vector<double> alphas);
  static NoiseSchedule linear(int t_max, double beta_start, double beta_end);
  static NoiseSchedule constant(int t_max, double alpha);
  /// "linear(beta_start,beta_end)" or "constant(alpha)".
  static NoiseSchedule parse(const std::string& kind, int t_max);

  int t_max() const { return static_cast<int>(alphas_.size()); }
  double alpha(int k) const;
  /// Cumulative products, alpha_bars()[0] == 1.
  const std::vector<double>& alpha_bars() const { return alpha_bars_; }

 private:
  std::vector<double> alphas_;
  std::vector<double> alpha_bars_;
};

/// prod_{k=1..t} alpha_k; t = 0 gives the empty product 1.
double alpha_bar(const NoiseSchedule& schedule, int t);

/// sqrt(abar_t) * x_e + sqrt(1 - abar_t) * eps. abar_t == 1 returns x_e
/// untouched and abar_t == 0 returns eps untouched.
Tensor noisy_latent(const Tensor& x_e, int t, const NoiseSchedule& schedule, const Tensor& eps);

struct BackboneConfig {
  int patch = 8;             // image encoder patch size
  int d_cv = 32;             // image encoder width
  int t_ctx = 8;             // context tokens
  int d_ctx = 32;            // context width
  int i2c_depth = 1;         // attention blocks in the context head
  int i2c_heads = 2;
  int c_e = 16;              // latent encoder hidden width
  int c_u = 32;              // denoiser hidden width
  int c_d = 16;              // latent decoder hidden width
  int latent_dim = 256;      // latent channels
  int latent_stride = 2;     // image -> latent downsampling
  int t_max = 1000;
  std::string schedule = "linear(0.00085,0.012)";

  int feature_channels() const { return c_e + c_u + c_d; }
  void validate() const;
};

struct FeatureBundle {
  Tensor f_e;  // [c_E, h, w]
  Tensor f_u;  // [c_U, h, w]
  Tensor f_d;  // [c_D, h, w]
  Tensor f;    // [c_E + c_U + c_D, h, w]
  int timestep = 0;
};

/// Frozen toy image-to-texture network. Immutable after construction and safe
/// to share between threads.
class Backbone {
 public:
  /// Seeded random initialisation; a pure function of (config, seed).
  Backbone(BackboneConfig config, std::uint64_t seed);
  /// Weights from a (merged) archive with the parameter names of to_archive().
  Backbone(BackboneConfig config, const TensorArchive& weights);
  /// "toy:<seed>" or "archive:<path>".
  static Backbone from_provider(const BackboneConfig& config, const std::string& provider);

  const BackboneConfig& config() const { return config_; }
  const NoiseSchedule& schedule() const { return schedule_; }
  const ParamSet& params() const { return params_; }
  TensorArchive to_archive(DType dtype = DType::F32) const { return params_.to_archive(dtype); }

  ContextEmbedding context(const ImageTensor& x) const;
  /// Returns f_E and writes the latent code to x_e.
  Tensor encode(const ImageTensor& x, Tensor* x_e) const;
  /// Final hidden activation of the denoiser for one pass.
  Tensor denoise(const Tensor& x_t, const ContextEmbedding& ctx, int t) const;
  Tensor decode_hidden(const Tensor& x_t) const;

  /// Number of denoiser passes run so far (diagnostic).
  long denoiser_calls() const { return denoiser_calls_.load(); }

 private:
  void init_shapes(std::mt19937_64* rng);

  BackboneConfig config_;
  NoiseSchedule schedule_;
  ParamSet params_;
  mutable std::atomic<long> denoiser_calls_{0};
};

ContextEmbedding compute_context(const Backbone& backbone, const ImageTensor& x);

/// One forward pass. The noise draw is seeded by `seed` and skipped at t = 0.
FeatureBundle extract_features(const Backbone& backbone, const ImageTensor& x, int t, std::uint64_t seed);

}  // namespace texparse
