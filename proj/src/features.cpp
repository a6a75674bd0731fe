#include "texparse/features.hpp"

#include <cmath>
#include <regex>
#include <stdexcept>

#include "texparse/autograd.hpp"
#include "texparse/layers.hpp"

namespace texparse {
namespace {

constexpr int kTimeEmbedDim = 16;
constexpr double kSiluGain = 1.6;

ag::Var image_input(const ImageTensor& x) {
  Tensor t = x.pixels();
  for (auto& v : t.values()) v = 2.0 * v - 1.0;
  return ag::constant(std::move(t));
}

Tensor time_embedding(int t) {
  Tensor e({kTimeEmbedDim});
  const int half = kTimeEmbedDim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::pow(10000.0, -static_cast<double>(i) / half);
    e[i] = std::sin(t * freq);
    e[half + i] = std::cos(t * freq);
  }
  return e;
}

}  // namespace

// ---------------------------------------------------------------- ImageTensor

ImageTensor::ImageTensor(Tensor pixels) : pixels_(std::move(pixels)) {
  if (pixels_.rank() != 3 || pixels_.dim(0) != 3) {
    throw ShapeError("image must be [3, H, W], got " + shape_str(pixels_.shape()));
  }
  if (pixels_.dim(1) < 8 || pixels_.dim(2) < 8) {
    throw ShapeError("image must be at least 8x8, got " + std::to_string(pixels_.dim(1)) + "x" +
                     std::to_string(pixels_.dim(2)));
  }
  for (double v : pixels_.values()) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("image pixel value outside [0, 1]");
  }
}

ImageTensor ImageTensor::filled(int height, int width, double r, double g, double b) {
  Tensor t({3, height, width});
  const double rgb[3] = {r, g, b};
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) t.at(c, y, x) = rgb[c];
  return ImageTensor(std::move(t));
}

// -------------------------------------------------------------- NoiseSchedule

NoiseSchedule::NoiseSchedule(std::vector<double> alphas) : alphas_(std::move(alphas)) {
  alpha_bars_.reserve(alphas_.size() + 1);
  alpha_bars_.push_back(1.0);
  for (double a : alphas_) {
    if (!(a > 0.0 && a <= 1.0)) throw std::invalid_argument("noise schedule alphas must lie in (0, 1]");
    alpha_bars_.push_back(alpha_bars_.back() * a);
  }
}

NoiseSchedule NoiseSchedule::linear(int t_max, double beta_start, double beta_end) {
  if (t_max < 1) throw std::invalid_argument("schedule needs T_max >= 1");
  std::vector<double> alphas(t_max);
  for (int k = 0; k < t_max; ++k) {
    const double frac = t_max == 1 ? 0.0 : static_cast<double>(k) / (t_max - 1);
    alphas[k] = 1.0 - (beta_start + (beta_end - beta_start) * frac);
  }
  return NoiseSchedule(std::move(alphas));
}

NoiseSchedule NoiseSchedule::constant(int t_max, double alpha) {
  if (t_max < 1) throw std::invalid_argument("schedule needs T_max >= 1");
  return NoiseSchedule(std::vector<double>(t_max, alpha));
}

NoiseSchedule NoiseSchedule::parse(const std::string& kind, int t_max) {
  static const std::regex lin(R"(\s*linear\(\s*([-+0-9.eE]+)\s*,\s*([-+0-9.eE]+)\s*\)\s*)");
  static const std::regex cst(R"(\s*constant\(\s*([-+0-9.eE]+)\s*\)\s*)");
  std::smatch m;
  if (std::regex_match(kind, m, lin)) return linear(t_max, std::stod(m[1]), std::stod(m[2]));
  if (std::regex_match(kind, m, cst)) return constant(t_max, std::stod(m[1]));
  throw std::invalid_argument("unknown schedule kind '" + kind + "'");
}

double NoiseSchedule::alpha(int k) const {
  if (k < 1 || k > t_max()) throw std::out_of_range("alpha index " + std::to_string(k) + " outside 1.." + std::to_string(t_max()));
  return alphas_[k - 1];
}

double alpha_bar(const NoiseSchedule& schedule, int t) {
  if (t < 0 || t > schedule.t_max()) {
    throw std::out_of_range("timestep " + std::to_string(t) + " outside 0.." + std::to_string(schedule.t_max()));
  }
  return schedule.alpha_bars()[t];
}

Tensor noisy_latent(const Tensor& x_e, int t, const NoiseSchedule& schedule, const Tensor& eps) {
  if (!x_e.same_shape(eps)) {
    throw ShapeError("noise shape " + shape_str(eps.shape()) + " differs from latent " + shape_str(x_e.shape()));
  }
  const double ab = alpha_bar(schedule, t);
  if (ab == 1.0) return x_e;
  if (ab == 0.0) return eps;
  const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
  Tensor out(x_e.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a * x_e[i] + b * eps[i];
  return out;
}

// ------------------------------------------------------------------- Backbone

void BackboneConfig::validate() const {
  auto positive = [](int v, const char* what) {
    if (v <= 0) throw std::invalid_argument(std::string("backbone ") + what + " must be positive");
  };
  positive(patch, "patch");
  positive(d_cv, "d_cv");
  positive(t_ctx, "t_ctx");
  positive(d_ctx, "d_ctx");
  positive(i2c_depth, "i2c_depth");
  positive(i2c_heads, "i2c_heads");
  positive(c_e, "c_e");
  positive(c_u, "c_u");
  positive(c_d, "c_d");
  positive(latent_dim, "latent_dim");
  positive(latent_stride, "latent_stride");
  positive(t_max, "t_max");
  if (d_ctx % i2c_heads) throw std::invalid_argument("backbone d_ctx must be divisible by i2c_heads");
}

Backbone::Backbone(BackboneConfig config, std::uint64_t seed)
    : config_(std::move(config)), schedule_(NoiseSchedule::parse(config_.schedule, config_.t_max)) {
  config_.validate();
  std::mt19937_64 rng(seed);
  init_shapes(&rng);
}

Backbone::Backbone(BackboneConfig config, const TensorArchive& weights)
    : config_(std::move(config)), schedule_(NoiseSchedule::parse(config_.schedule, config_.t_max)) {
  config_.validate();
  std::mt19937_64 rng(0);
  init_shapes(&rng);
  params_.load(weights);
}

Backbone Backbone::from_provider(const BackboneConfig& config, const std::string& provider) {
  const auto colon = provider.find(':');
  const std::string kind = provider.substr(0, colon);
  const std::string arg = colon == std::string::npos ? "" : provider.substr(colon + 1);
  if (kind == "toy") return Backbone(config, arg.empty() ? 777ULL : std::stoull(arg));
  if (kind == "archive") return Backbone(config, TensorArchive::load(arg));
  throw std::invalid_argument("unknown backbone provider '" + provider + "' (expected toy:<seed> or archive:<path>)");
}

void Backbone::init_shapes(std::mt19937_64* rng) {
  using namespace layers;
  const auto& c = config_;
  const bool frozen = false;
  add_conv(params_, "cv.patch", 3, c.d_cv, c.patch, *rng, kSiluGain, frozen);
  add_linear(params_, "i2c.proj", c.d_cv, c.d_ctx, *rng, 1.0, true, frozen);
  params_.add("i2c.queries", randn({c.t_ctx, c.d_ctx}, 1.0, *rng), frozen);
  for (int b = 0; b < c.i2c_depth; ++b) {
    const std::string p = "i2c.blocks." + std::to_string(b);
    add_attention(params_, p + ".attn", c.d_ctx, c.d_ctx, c.d_ctx, *rng, frozen);
    add_layernorm(params_, p + ".ln1", c.d_ctx, frozen);
    add_linear(params_, p + ".ffn1", c.d_ctx, 2 * c.d_ctx, *rng, kSiluGain, true, frozen);
    add_linear(params_, p + ".ffn2", 2 * c.d_ctx, c.d_ctx, *rng, 1.0, true, frozen);
    add_layernorm(params_, p + ".ln2", c.d_ctx, frozen);
  }
  add_linear(params_, "i2c.cls", c.d_ctx, c.d_ctx, *rng, 1.0, true, frozen);

  add_conv(params_, "enc.patch", 3, c.c_e, c.latent_stride, *rng, kSiluGain, frozen);
  add_conv(params_, "enc.head", c.c_e, c.latent_dim, 1, *rng, 1.0, frozen);

  add_linear(params_, "unet.time", kTimeEmbedDim, c.c_u, *rng, 0.5, true, frozen);
  add_conv(params_, "unet.in", c.latent_dim, c.c_u, 3, *rng, kSiluGain, frozen);
  add_conv(params_, "unet.down", c.c_u, c.c_u, 3, *rng, kSiluGain, frozen);
  add_attention(params_, "unet.xattn", c.c_u, c.d_ctx, c.c_u, *rng, frozen);
  add_conv(params_, "unet.mid", c.c_u, c.c_u, 3, *rng, kSiluGain, frozen);
  add_conv(params_, "unet.up", 2 * c.c_u, c.c_u, 3, *rng, kSiluGain, frozen);

  add_conv(params_, "dec.in", c.latent_dim, c.c_d, 3, *rng, kSiluGain, frozen);
}

ContextEmbedding Backbone::context(const ImageTensor& x) const {
  const auto& c = config_;
  if (x.height() < c.patch || x.width() < c.patch) {
    throw ShapeError("image " + std::to_string(x.height()) + "x" + std::to_string(x.width()) +
                     " is smaller than the " + std::to_string(c.patch) + "x" + std::to_string(c.patch) + " patch grid");
  }
  ag::NoGradGuard ng;
  const ag::Var patches = ag::silu(layers::conv(params_, "cv.patch", image_input(x), c.patch, c.patch, 0));
  const ag::Var tokens = layers::linear(params_, "i2c.proj", layers::to_tokens(patches));
  ag::Var q = params_.at("i2c.queries");
  for (int b = 0; b < c.i2c_depth; ++b) {
    const std::string p = "i2c.blocks." + std::to_string(b);
    q = layers::layernorm(params_, p + ".ln1", ag::add(q, layers::attention(params_, p + ".attn", q, tokens, c.i2c_heads)));
    const ag::Var ff = layers::linear(params_, p + ".ffn2", ag::silu(layers::linear(params_, p + ".ffn1", q)));
    q = layers::layernorm(params_, p + ".ln2", ag::add(q, ff));
  }
  const int n = tokens.dim(0);
  const ag::Var avg = ag::matmul(ag::constant(Tensor({1, n}, 1.0 / n)), tokens);
  const ag::Var cls = layers::linear(params_, "i2c.cls", avg);
  return ContextEmbedding{q.value(), cls.value().reshaped({c.d_ctx})};
}

Tensor Backbone::encode(const ImageTensor& x, Tensor* x_e) const {
  const auto& c = config_;
  if (x.height() % c.latent_stride || x.width() % c.latent_stride) {
    throw ShapeError("image size " + std::to_string(x.height()) + "x" + std::to_string(x.width()) +
                     " must be a multiple of the latent stride " + std::to_string(c.latent_stride));
  }
  ag::NoGradGuard ng;
  const ag::Var f_e = ag::silu(layers::conv(params_, "enc.patch", image_input(x), c.latent_stride, c.latent_stride, 0));
  if (x_e) *x_e = layers::conv(params_, "enc.head", f_e, 1, 1, 0).value();
  return f_e.value();
}

Tensor Backbone::denoise(const Tensor& x_t, const ContextEmbedding& ctx, int t) const {
  const auto& c = config_;
  if (x_t.rank() != 3 || x_t.dim(0) != c.latent_dim) {
    throw ShapeError("latent must be [" + std::to_string(c.latent_dim) + ", h, w], got " + shape_str(x_t.shape()));
  }
  ++denoiser_calls_;
  ag::NoGradGuard ng;
  const int h = x_t.dim(1), w = x_t.dim(2);

  ag::Var h0 = layers::conv(params_, "unet.in", ag::constant(x_t), 3, 1, 1);
  const ag::Var temb = layers::linear(params_, "unet.time", ag::constant(time_embedding(t).reshaped({1, kTimeEmbedDim})));
  Tensor shifted = h0.value();
  for (int ch = 0; ch < c.c_u; ++ch)
    for (int i = 0; i < h * w; ++i) shifted[static_cast<std::size_t>(ch) * h * w + i] += temb.value()[ch];
  h0 = ag::silu(ag::constant(std::move(shifted)));

  ag::Var h1 = ag::silu(layers::conv(params_, "unet.down", h0, 3, 2, 1));
  const int h1h = h1.dim(1), h1w = h1.dim(2);
  const ag::Var memory = ag::concat_rows({ag::constant(ctx.tokens), ag::constant(ctx.cls.reshaped({1, c.d_ctx}))});
  ag::Var tok = layers::to_tokens(h1);
  tok = ag::add(tok, layers::attention(params_, "unet.xattn", tok, memory, 1));
  h1 = ag::silu(layers::conv(params_, "unet.mid", layers::to_map(tok, h1h, h1w), 3, 1, 1));

  const ag::Var up = ag::resize_bilinear(h1, h, w);
  return ag::silu(layers::conv(params_, "unet.up", ag::concat_channels({up, h0}), 3, 1, 1)).value();
}

Tensor Backbone::decode_hidden(const Tensor& x_t) const {
  ag::NoGradGuard ng;
  return ag::silu(layers::conv(params_, "dec.in", ag::constant(x_t), 3, 1, 1)).value();
}

ContextEmbedding compute_context(const Backbone& backbone, const ImageTensor& x) { return backbone.context(x); }

FeatureBundle extract_features(const Backbone& backbone, const ImageTensor& x, int t, std::uint64_t seed) {
  const ContextEmbedding ctx = backbone.context(x);
  Tensor x_e;
  FeatureBundle out;
  out.timestep = t;
  out.f_e = backbone.encode(x, &x_e);

  Tensor x_t = x_e;
  if (t > 0) {
    Tensor eps(x_e.shape());
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& v : eps.values()) v = normal(rng);
    x_t = noisy_latent(x_e, t, backbone.schedule(), eps);
  } else {
    alpha_bar(backbone.schedule(), t);  // range check
  }

  out.f_u = backbone.denoise(x_t, ctx, t);
  out.f_d = backbone.decode_hidden(x_t);

  int gh = 0, gw = 0;
  for (const Tensor* s : {&out.f_e, &out.f_u, &out.f_d}) {
    if (s->dim(1) * s->dim(2) > gh * gw) {
      gh = s->dim(1);
      gw = s->dim(2);
    }
  }
  const Tensor e = ag::resize_bilinear(out.f_e, gh, gw);
  const Tensor u = ag::resize_bilinear(out.f_u, gh, gw);
  const Tensor d = ag::resize_bilinear(out.f_d, gh, gw);
  out.f = Tensor({e.dim(0) + u.dim(0) + d.dim(0), gh, gw});
  std::size_t off = 0;
  for (const Tensor* s : {&e, &u, &d}) {
    std::copy(s->values().begin(), s->values().end(), out.f.data() + off);
    off += s->numel();
  }
  return out;
}

}  // namespace texparse
