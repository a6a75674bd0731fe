#include "texparse/layers.hpp"

#include <cmath>

namespace texparse::layers {

void add_linear(ParamSet& p, const std::string& prefix, int in, int out, std::mt19937_64& rng, double gain, bool bias,
                bool trainable) {
  p.add(prefix + ".weight", randn({out, in}, gain / std::sqrt(static_cast<double>(in)), rng), trainable);
  if (bias) p.add(prefix + ".bias", Tensor({out}), trainable);
}

void add_conv(ParamSet& p, const std::string& prefix, int in, int out, int kernel, std::mt19937_64& rng, double gain,
              bool trainable) {
  const int fan_in = in * kernel * kernel;
  p.add(prefix + ".weight", randn({out, fan_in}, gain / std::sqrt(static_cast<double>(fan_in)), rng), trainable);
  p.add(prefix + ".bias", Tensor({out}), trainable);
}

void add_layernorm(ParamSet& p, const std::string& prefix, int dim, bool trainable) {
  p.add(prefix + ".gamma", Tensor({dim}, 1.0), trainable);
  p.add(prefix + ".beta", Tensor({dim}), trainable);
}

void add_attention(ParamSet& p, const std::string& prefix, int d_query, int d_memory, int d_model,
                   std::mt19937_64& rng, bool trainable) {
  add_linear(p, prefix + ".q", d_query, d_model, rng, 1.0, true, trainable);
  add_linear(p, prefix + ".k", d_memory, d_model, rng, 1.0, true, trainable);
  add_linear(p, prefix + ".v", d_memory, d_model, rng, 1.0, true, trainable);
  add_linear(p, prefix + ".o", d_model, d_query, rng, 1.0, true, trainable);
}

ag::Var linear(const ParamSet& p, const std::string& prefix, const ag::Var& x) {
  const std::string bname = prefix + ".bias";
  return ag::linear(x, p.at(prefix + ".weight"), p.contains(bname) ? p.at(bname) : ag::Var());
}

ag::Var conv(const ParamSet& p, const std::string& prefix, const ag::Var& x, int kernel, int stride, int pad) {
  return ag::conv2d(x, p.at(prefix + ".weight"), p.at(prefix + ".bias"), kernel, stride, pad);
}

ag::Var layernorm(const ParamSet& p, const std::string& prefix, const ag::Var& x) {
  return ag::layernorm_rows(x, p.at(prefix + ".gamma"), p.at(prefix + ".beta"));
}

ag::Var attention(const ParamSet& p, const std::string& prefix, const ag::Var& queries, const ag::Var& memory,
                  int heads, const std::vector<unsigned char>& keep) {
  const ag::Var q = linear(p, prefix + ".q", queries);
  const ag::Var k = linear(p, prefix + ".k", memory);
  const ag::Var v = linear(p, prefix + ".v", memory);
  const int d_model = q.dim(1);
  if (heads <= 0 || d_model % heads != 0) {
    throw ShapeError("attention '" + prefix + "': width " + std::to_string(d_model) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  const int dh = d_model / heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<ag::Var> outs;
  outs.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    const ag::Var qh = heads == 1 ? q : ag::slice_cols(q, h * dh, (h + 1) * dh);
    const ag::Var kh = heads == 1 ? k : ag::slice_cols(k, h * dh, (h + 1) * dh);
    const ag::Var vh = heads == 1 ? v : ag::slice_cols(v, h * dh, (h + 1) * dh);
    const ag::Var weights = ag::softmax_rows(ag::scale(ag::matmul_nt(qh, kh), inv), keep);
    outs.push_back(ag::matmul(weights, vh));
  }
  const ag::Var merged = heads == 1 ? outs[0] : ag::concat_cols(outs);
  return linear(p, prefix + ".o", merged);
}

ag::Var to_tokens(const ag::Var& map) {
  const int C = map.dim(0), H = map.dim(1), W = map.dim(2);
  return ag::transpose(ag::reshape(map, {C, H * W}));
}

ag::Var to_map(const ag::Var& tokens, int height, int width) {
  const int C = tokens.dim(1);
  return ag::reshape(ag::transpose(tokens), {C, height, width});
}

}  // namespace texparse::layers
