#include "texparse/head.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "texparse/layers.hpp"

namespace texparse {
namespace {

std::string level(int l) { return "pix.level" + std::to_string(l); }
std::string layer(int j) { return "dec.layer" + std::to_string(j); }

// Downsample by an integer factor: average pooling when it divides evenly,
// bilinear resampling otherwise.
ag::Var downsample(const ag::Var& x, int stride) {
  if (stride == 1) return x;
  const int h = x.dim(1), w = x.dim(2);
  if (h % stride == 0 && w % stride == 0) return ag::avgpool2d(x, stride);
  return ag::resize_bilinear(x, std::max(1, h / stride), std::max(1, w / stride));
}

}  // namespace

void HeadConfig::validate() const {
  if (in_channels <= 0 || num_queries <= 0 || hidden <= 0 || d_emb <= 0 || layers < 0 || heads <= 0 || ffn_mult <= 0) {
    throw std::invalid_argument("head config: widths, query count and heads must be positive");
  }
  if (hidden % heads) throw std::invalid_argument("head config: hidden must be divisible by heads");
  if (strides.empty()) throw std::invalid_argument("head config: at least one pyramid stride required");
  for (std::size_t i = 0; i < strides.size(); ++i) {
    if (strides[i] <= 0) throw std::invalid_argument("head config: strides must be positive");
    if (i && strides[i] >= strides[i - 1]) throw std::invalid_argument("head config: strides must decrease coarse -> fine");
  }
  if (mask_upsample < 1) throw std::invalid_argument("head config: mask_upsample must be >= 1");
  if (!(eps_pool > 0) || !(tau_init > 0)) throw std::invalid_argument("head config: eps_pool and tau_init must be positive");
}

Tensor MaskSet::probs() const {
  Tensor p = logits.value();
  for (auto& v : p.values()) v = 1.0 / (1.0 + std::exp(-v));
  return p;
}

ParsingHead::ParsingHead(HeadConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  using namespace layers;
  const auto& c = config_;
  std::mt19937_64 rng(seed);
  const int levels = static_cast<int>(c.strides.size());
  for (int l = 0; l < levels; ++l) {
    add_conv(params_, level(l) + ".lateral", c.in_channels, c.hidden, 1, rng);
    if (l + 1 < levels) add_conv(params_, level(l) + ".smooth", c.hidden, c.hidden, 3, rng);
    params_.add(level(l) + ".embed", randn({c.hidden}, 0.1, rng));
  }
  add_conv(params_, "pix.mask", c.hidden, c.hidden, 1, rng);

  params_.add("dec.queries", randn({c.num_queries, c.hidden}, 1.0, rng));
  for (int j = 0; j < c.layers; ++j) {
    add_attention(params_, layer(j) + ".cross", c.hidden, c.hidden, c.hidden, rng);
    add_layernorm(params_, layer(j) + ".ln_cross", c.hidden);
    add_attention(params_, layer(j) + ".self", c.hidden, c.hidden, c.hidden, rng);
    add_layernorm(params_, layer(j) + ".ln_self", c.hidden);
    add_linear(params_, layer(j) + ".ffn1", c.hidden, c.ffn_mult * c.hidden, rng);
    add_linear(params_, layer(j) + ".ffn2", c.ffn_mult * c.hidden, c.hidden, rng);
    add_layernorm(params_, layer(j) + ".ln_ffn", c.hidden);
  }
  add_layernorm(params_, "dec.norm", c.hidden);
  add_linear(params_, "dec.mask_embed1", c.hidden, c.hidden, rng);
  add_linear(params_, "dec.mask_embed2", c.hidden, c.hidden, rng);

  add_linear(params_, "embed.proj", c.in_channels, c.d_emb, rng, 1.0, /*bias=*/false);
  params_.add("grounding.log_tau", Tensor({1}, std::log(c.tau_init)));
}

ag::Var ParsingHead::tau() const { return ag::exp(params_.at("grounding.log_tau")); }

PyramidFeatures ParsingHead::pixel_decode(const Tensor& f) const {
  const auto& c = config_;
  if (f.rank() != 3 || f.dim(0) != c.in_channels) {
    throw ShapeError("head expects features [" + std::to_string(c.in_channels) + ", h, w], got " + shape_str(f.shape()));
  }
  const ag::Var x = ag::constant(f);
  PyramidFeatures pyr;
  ag::Var prev;
  const int levels = static_cast<int>(c.strides.size());
  for (int l = 0; l < levels; ++l) {
    ag::Var lat = layers::conv(params_, level(l) + ".lateral", downsample(x, c.strides[l]), 1, 1, 0);
    if (prev.defined()) lat = ag::add(lat, ag::resize_bilinear(prev, lat.dim(1), lat.dim(2)));
    ag::Var out = l + 1 < levels ? layers::conv(params_, level(l) + ".smooth", lat, 3, 1, 1) : lat;
    out = ag::gelu(out);
    pyr.levels.push_back(out);
    prev = out;
  }
  const ag::Var fine = layers::conv(params_, "pix.mask", prev, 1, 1, 0);
  pyr.mask_features = c.mask_upsample == 1
                          ? fine
                          : ag::resize_bilinear(fine, fine.dim(1) * c.mask_upsample, fine.dim(2) * c.mask_upsample);
  return pyr;
}

ag::Var ParsingHead::predict_masks(const ag::Var& queries, const ag::Var& mask_tokens) const {
  const ag::Var q = layers::layernorm(params_, "dec.norm", queries);
  const ag::Var e = layers::linear(params_, "dec.mask_embed2", ag::gelu(layers::linear(params_, "dec.mask_embed1", q)));
  return ag::matmul_nt(e, mask_tokens);
}

MaskSet ParsingHead::transformer_decode(const PyramidFeatures& pyr, std::vector<MaskSet>* aux) const {
  const auto& c = config_;
  const int hm = pyr.mask_features.dim(1), wm = pyr.mask_features.dim(2);
  const ag::Var mask_tokens = layers::to_tokens(pyr.mask_features);
  const int levels = static_cast<int>(pyr.levels.size());

  std::vector<ag::Var> memory(levels);
  for (int l = 0; l < levels; ++l) {
    memory[l] = ag::add_row_bias(layers::to_tokens(pyr.levels[l]), params_.at(level(l) + ".embed"));
  }

  ag::Var q = params_.at("dec.queries");
  if (q.dim(0) != c.num_queries) throw ShapeError("query count differs from config");
  MaskSet current{predict_masks(q, mask_tokens), hm, wm};

  for (int j = 0; j < c.layers; ++j) {
    const int l = j % levels;
    const int lh = pyr.levels[l].dim(1), lw = pyr.levels[l].dim(2);
    std::vector<unsigned char> keep;
    if (c.masked_attention) {
      const Tensor coarse =
          ag::resize_bilinear(current.logits.value().reshaped({c.num_queries, hm, wm}), lh, lw);
      keep.resize(coarse.numel());
      for (std::size_t i = 0; i < coarse.numel(); ++i) keep[i] = coarse[i] >= 0.0;  // sigmoid >= 0.5
    }
    if (aux) aux->push_back(current);

    const std::string p = layer(j);
    q = layers::layernorm(params_, p + ".ln_cross",
                          ag::add(q, layers::attention(params_, p + ".cross", q, memory[l], c.heads, keep)));
    q = layers::layernorm(params_, p + ".ln_self", ag::add(q, layers::attention(params_, p + ".self", q, q, c.heads)));
    const ag::Var ff = layers::linear(params_, p + ".ffn2", ag::gelu(layers::linear(params_, p + ".ffn1", q)));
    q = layers::layernorm(params_, p + ".ln_ffn", ag::add(q, ff));
    current = MaskSet{predict_masks(q, mask_tokens), hm, wm};
  }
  return current;
}

ag::Var ParsingHead::embed_masks(const ag::Var& f_tokens, const MaskSet& masks) const {
  const ag::Var pooled = masked_average_pool(f_tokens, ag::sigmoid(masks.logits), config_.eps_pool);
  // Unit rows: the grounding inner products become cosines, as at inference.
  const ag::Var z = layers::linear(params_, "embed.proj", pooled);
  const ag::Var norm = ag::exp(ag::scale(ag::log(ag::add_scalar(ag::sum_cols(ag::mul(z, z)), 1e-12)), 0.5));
  return ag::div_rows(z, norm);
}

HeadOutput ParsingHead::forward(const Tensor& f) const {
  const PyramidFeatures pyr = pixel_decode(f);
  HeadOutput out;
  std::vector<MaskSet> aux;
  out.masks = transformer_decode(pyr, config_.aux_loss ? &aux : nullptr);
  const Tensor f_resized = ag::resize_bilinear(f, out.masks.height, out.masks.width);
  const ag::Var f_tokens = layers::to_tokens(ag::constant(f_resized));
  out.z = embed_masks(f_tokens, out.masks);
  for (const MaskSet& m : aux) {
    out.aux.push_back(m);
    out.aux_z.push_back(embed_masks(f_tokens, m));
  }
  return out;
}

Tensor masked_average_pool(const Tensor& f, const Tensor& mask, double eps) {
  if (f.rank() != 3) throw ShapeError("masked_average_pool expects f [C, H, W], got " + shape_str(f.shape()));
  const int C = f.dim(0);
  const std::size_t P = static_cast<std::size_t>(f.dim(1)) * f.dim(2);
  if (mask.numel() != P) {
    throw ShapeError("mask has " + std::to_string(mask.numel()) + " pixels, features have " + std::to_string(P));
  }
  double total = 0;
  for (std::size_t p = 0; p < P; ++p) total += mask[p];
  Tensor out({C});
  if (total == 0.0) return out;
  const double denom = std::max(total, eps);
  for (int c = 0; c < C; ++c) {
    double s = 0;
    for (std::size_t p = 0; p < P; ++p) s += mask[p] * f[c * P + p];
    out[c] = s / denom;
  }
  return out;
}

ag::Var masked_average_pool(const ag::Var& f_tokens, const ag::Var& probs, double eps) {
  return ag::div_rows(ag::matmul(probs, f_tokens), ag::clamp_min(ag::sum_cols(probs), eps));
}

}  // namespace texparse
