#pragma once

// Bipartite matching between predicted and ground-truth masks, point-sampled
// BCE / Dice mask losses, the batch-contrastive grounding loss and the
// weighted objective.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "texparse/autograd.hpp"
#include "texparse/head.hpp"
#include "texparse/tensor.hpp"

namespace texparse {

struct LossConfig {
  double lambda_bce = 2.0;
  double lambda_dice = 5.0;
  double lambda_g = 1.0;
  int num_points = 12544;
  double eps_bce = 1e-7;
  // BCE towards an empty mask for queries left unmatched, relative to the
  // matched BCE term. 0 disables it.
  double unmatched_weight = 0.1;
  // Positive grounding pairs attend to the masks matched to a phrase's linked
  // ground truth instead of the softmax, where such links exist.
  bool phrase_links = false;

  void validate() const;
};

struct GroundTruthMasks {
  int height = 0;
  int width = 0;
  std::vector<Tensor> masks;       // each [H, W] with values in {0, 1}
  std::vector<std::string> labels;
  std::vector<int> phrase;         // index into the image's PromptSet, -1 if none

  int count() const { return static_cast<int>(masks.size()); }
};

struct Assignment {
  std::vector<std::pair<int, int>> pairs;  // (pred, gt), sorted by pred index
  double total_cost = 0.0;
};

struct Point {
  double y = 0.0;
  double x = 0.0;
};

/// Uniform, with replacement, over [0, height) x [0, width).
std::vector<Point> sample_points(int height, int width, int num_points, std::uint64_t seed);

/// Bilinear read-out of a (grid_h x grid_w) map at image-space points, where the
/// grid covers an image of size (image_h x image_w). Half-pixel centres, edges clamped.
ag::SparseMap bilinear_sampler(const std::vector<Point>& points, int image_h, int image_w, int grid_h, int grid_w);

/// Nearest-pixel values of a binary [H, W] mask at the points.
Tensor sample_mask(const Tensor& mask, const std::vector<Point>& points);

/// Mean of -[y log p + (1 - y) log(1 - p)] with p clamped to [eps, 1 - eps].
/// probs and target are [P] or [1, P].
ag::Var bce_loss(const ag::Var& probs, const Tensor& target, double eps = 1e-7);
double bce_loss(const std::vector<double>& probs, const std::vector<double>& target, double eps = 1e-7);

/// 1 - (2 y.p + 1) / (sum y + sum p + 1).
ag::Var dice_loss(const ag::Var& probs, const Tensor& target);
double dice_loss(const std::vector<double>& probs, const std::vector<double>& target);

/// Minimum-cost assignment covering min(N, G) pairs of an N x G cost matrix.
Assignment hungarian_match(const Tensor& cost);

/// cost(i, j) = lambda_bce * bce + lambda_dice * dice between pred i and gt j at
/// one shared point sample drawn from `seed`.
Tensor match_cost(const MaskSet& pred, const GroundTruthMasks& gt, const LossConfig& cfg, std::uint64_t seed);

struct MaskLossTerms {
  ag::Var bce;
  ag::Var dice;
  Assignment assignment;
};

/// Matches, then evaluates the mask losses on the matched pairs (plus the
/// empty-mask term for unmatched queries) at the same point sample.
MaskLossTerms mask_losses(const MaskSet& pred, const GroundTruthMasks& gt, const LossConfig& cfg, std::uint64_t seed);

/// g[m][n] = (1/K_n) sum_k sum_i p_ik <z_i^m, T_k^n>, with p_ik the softmax
/// over masks i of <z_i^m, T_k^n> / tau. z[m] is [N_m, d], text[n] is [K_n, d].
ag::Var grounding_scores(const std::vector<ag::Var>& z, const std::vector<Tensor>& text, const ag::Var& tau);

/// -(1/B) sum_m [2 g_mm / tau - lse_n(g_mn / tau) - lse_n(g_nm / tau)].
ag::Var grounding_loss_from_scores(const ag::Var& g, const ag::Var& tau);

ag::Var grounding_loss(const std::vector<ag::Var>& z, const std::vector<Tensor>& text, const ag::Var& tau);

/// links[m][k]: masks of image m matched to instances tied to phrase k. A
/// nonempty list replaces column k of p in g_mm by uniform weights on it.
using PhraseLinks = std::vector<std::vector<std::vector<int>>>;
ag::Var grounding_scores(const std::vector<ag::Var>& z, const std::vector<Tensor>& text, const ag::Var& tau,
                         const PhraseLinks& links);
ag::Var grounding_loss(const std::vector<ag::Var>& z, const std::vector<Tensor>& text, const ag::Var& tau,
                       const PhraseLinks& links);

/// Phrase index per instance: the phrase ending with the raw label, else the
/// first whose unified label agrees, else -1.
std::vector<int> link_phrases(const std::vector<std::string>& labels, const std::vector<std::string>& phrases);

struct LossComponents {
  double bce = 0.0;
  double dice = 0.0;
  double grounding = 0.0;
};

double total_loss(const LossComponents& c, const LossConfig& cfg);
ag::Var total_loss(const ag::Var& bce, const ag::Var& dice, const ag::Var& grounding, const LossConfig& cfg);

}  // namespace texparse
