#pragma once

// Small building blocks shared by the backbone and the parsing head. Every
// block reads its weights from a ParamSet under a name prefix.

#include <random>
#include <string>
#include <vector>

#include "texparse/autograd.hpp"
#include "texparse/params.hpp"

namespace texparse::layers {

void add_linear(ParamSet& p, const std::string& prefix, int in, int out, std::mt19937_64& rng, double gain = 1.0,
                bool bias = true, bool trainable = true);
void add_conv(ParamSet& p, const std::string& prefix, int in, int out, int kernel, std::mt19937_64& rng,
              double gain = 1.0, bool trainable = true);
void add_layernorm(ParamSet& p, const std::string& prefix, int dim, bool trainable = true);
/// Query/key/value/output projections; output width equals the query width.
void add_attention(ParamSet& p, const std::string& prefix, int d_query, int d_memory, int d_model, std::mt19937_64& rng,
                   bool trainable = true);

ag::Var linear(const ParamSet& p, const std::string& prefix, const ag::Var& x);
ag::Var conv(const ParamSet& p, const std::string& prefix, const ag::Var& x, int kernel, int stride, int pad);
ag::Var layernorm(const ParamSet& p, const std::string& prefix, const ag::Var& x);

/// Multi-head attention of queries [Nq, dq] over memory [M, dm]. keep is an
/// optional [Nq, M] mask shared by all heads.
ag::Var attention(const ParamSet& p, const std::string& prefix, const ag::Var& queries, const ag::Var& memory,
                  int heads, const std::vector<unsigned char>& keep = {});

/// [C, H, W] -> [H*W, C]
ag::Var to_tokens(const ag::Var& map);
/// [H*W, C] -> [C, H, W]
ag::Var to_map(const ag::Var& tokens, int height, int width);

}  // namespace texparse::layers
