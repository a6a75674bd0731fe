#include "texparse/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include "texparse/vocabulary.hpp"

namespace texparse {
namespace {

void require_same_length(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": prediction has " + std::to_string(a) + " points, target has " +
                     std::to_string(b));
  }
}

// Clamp to [eps, 1 - eps] through two lower clamps so gradients stay exact inside.
ag::Var clamp_prob(const ag::Var& p, double eps) {
  const ag::Var lower = ag::clamp_min(p, eps);
  return ag::add_scalar(ag::scale(ag::clamp_min(ag::add_scalar(ag::scale(lower, -1.0), 1.0), eps), -1.0), 1.0);
}

ag::Var one_minus(const ag::Var& p) { return ag::add_scalar(ag::scale(p, -1.0), 1.0); }

double clamp_prob(double p, double eps) { return std::clamp(p, eps, 1.0 - eps); }

// Pred logits sampled at the points, [N, P]. Each point is read at the centre
// of the ground-truth pixel containing it, so a prediction identical to its
// target is scored on exactly the target's values.
ag::Var sample_logits(const MaskSet& pred, const std::vector<Point>& points, int image_h, int image_w) {
  std::vector<Point> centres(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    centres[i].y = std::floor(points[i].y) + 0.5;
    centres[i].x = std::floor(points[i].x) + 0.5;
  }
  return ag::sparse_apply(pred.logits, bilinear_sampler(centres, image_h, image_w, pred.height, pred.width));
}

}  // namespace

void LossConfig::validate() const {
  if (lambda_bce < 0 || lambda_dice < 0 || lambda_g < 0) throw std::invalid_argument("loss weights must be >= 0");
  if (num_points < 1) throw std::invalid_argument("num_points must be >= 1");
  if (!(eps_bce > 0 && eps_bce < 0.5)) throw std::invalid_argument("eps_bce must lie in (0, 0.5)");
  if (unmatched_weight < 0) throw std::invalid_argument("unmatched_weight must be >= 0");
}

std::vector<Point> sample_points(int height, int width, int num_points, std::uint64_t seed) {
  if (num_points < 1) throw std::invalid_argument("num_points must be >= 1");
  if (height < 1 || width < 1) throw std::invalid_argument("sample_points needs a non-empty grid");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uy(0.0, height), ux(0.0, width);
  std::vector<Point> pts(num_points);
  for (auto& p : pts) {
    p.y = uy(rng);
    p.x = ux(rng);
  }
  return pts;
}

ag::SparseMap bilinear_sampler(const std::vector<Point>& points, int image_h, int image_w, int grid_h, int grid_w) {
  ag::SparseMap map;
  map.in_size = grid_h * grid_w;
  map.index.resize(points.size());
  map.weight.resize(points.size());
  const double sy = static_cast<double>(grid_h) / image_h, sx = static_cast<double>(grid_w) / image_w;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double gy = std::clamp(points[i].y * sy - 0.5, 0.0, grid_h - 1.0);
    const double gx = std::clamp(points[i].x * sx - 0.5, 0.0, grid_w - 1.0);
    const int y0 = static_cast<int>(gy), x0 = static_cast<int>(gx);
    const int y1 = std::min(y0 + 1, grid_h - 1), x1 = std::min(x0 + 1, grid_w - 1);
    const double wy = gy - y0, wx = gx - x0;
    map.index[i] = {y0 * grid_w + x0, y0 * grid_w + x1, y1 * grid_w + x0, y1 * grid_w + x1};
    map.weight[i] = {(1 - wy) * (1 - wx), (1 - wy) * wx, wy * (1 - wx), wy * wx};
  }
  return map;
}

Tensor sample_mask(const Tensor& mask, const std::vector<Point>& points) {
  const int H = mask.dim(0), W = mask.dim(1);
  Tensor out({static_cast<int>(points.size())});
  for (std::size_t i = 0; i < points.size(); ++i) {
    const int y = std::min(static_cast<int>(points[i].y), H - 1);
    const int x = std::min(static_cast<int>(points[i].x), W - 1);
    out[i] = mask.at(y, x);
  }
  return out;
}

ag::Var bce_loss(const ag::Var& probs, const Tensor& target, double eps) {
  require_same_length(probs.value().numel(), target.numel(), "bce_loss");
  const ag::Var p = clamp_prob(probs, eps);
  const ag::Var y = ag::constant(target.reshaped(probs.shape()));
  const ag::Var ny = ag::constant(one_minus(y).value());
  const ag::Var ll = ag::add(ag::mul(y, ag::log(p)), ag::mul(ny, ag::log(one_minus(p))));
  return ag::scale(ag::mean(ll), -1.0);
}

double bce_loss(const std::vector<double>& probs, const std::vector<double>& target, double eps) {
  require_same_length(probs.size(), target.size(), "bce_loss");
  if (probs.empty()) throw std::invalid_argument("bce_loss of zero points");
  double s = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = clamp_prob(probs[i], eps);
    s += target[i] * std::log(p) + (1 - target[i]) * std::log(1 - p);
  }
  return -s / static_cast<double>(probs.size());
}

ag::Var dice_loss(const ag::Var& probs, const Tensor& target) {
  require_same_length(probs.value().numel(), target.numel(), "dice_loss");
  const ag::Var y = ag::constant(target.reshaped(probs.shape()));
  double sy = 0;
  for (double v : target.values()) sy += v;
  const ag::Var num = ag::add_scalar(ag::scale(ag::sum(ag::mul(probs, y)), 2.0), 1.0);
  const ag::Var den = ag::add_scalar(ag::sum(probs), sy + 1.0);
  return one_minus(ag::div(num, den));
}

double dice_loss(const std::vector<double>& probs, const std::vector<double>& target) {
  require_same_length(probs.size(), target.size(), "dice_loss");
  double inter = 0, sp = 0, sy = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    inter += probs[i] * target[i];
    sp += probs[i];
    sy += target[i];
  }
  return 1.0 - (2.0 * inter + 1.0) / (sy + sp + 1.0);
}

Assignment hungarian_match(const Tensor& cost) {
  if (cost.rank() != 2) throw ShapeError("cost must be a matrix, got " + shape_str(cost.shape()));
  const int N = cost.dim(0), G = cost.dim(1);
  Assignment out;
  if (N == 0 || G == 0) return out;
  for (double v : cost.values()) {
    if (!std::isfinite(v)) throw std::invalid_argument("hungarian_match: non-finite cost");
  }
  // Shortest augmenting path formulation with potentials; rows <= cols.
  const bool transposed = N > G;
  const int n = transposed ? G : N, m = transposed ? N : G;
  auto a = [&](int i, int j) { return transposed ? cost.at(j, i) : cost.at(i, j); };
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  for (int j = 1; j <= m; ++j) {
    if (!p[j]) continue;
    const int row = p[j] - 1, col = j - 1;
    out.pairs.emplace_back(transposed ? col : row, transposed ? row : col);
  }
  std::sort(out.pairs.begin(), out.pairs.end());
  for (const auto& [i, j] : out.pairs) out.total_cost += cost.at(i, j);
  return out;
}

namespace {

struct PointSample {
  std::vector<Point> points;
  ag::Var logits;                // [N, P]
  std::vector<Tensor> targets;  // G x [P]
};

PointSample draw(const MaskSet& pred, const GroundTruthMasks& gt, const LossConfig& cfg, std::uint64_t seed) {
  if (gt.height < 1 || gt.width < 1) throw ShapeError("ground truth has no spatial size");
  PointSample s;
  s.points = sample_points(gt.height, gt.width, cfg.num_points, seed);
  s.logits = sample_logits(pred, s.points, gt.height, gt.width);
  for (const Tensor& m : gt.masks) {
    if (m.rank() != 2 || m.dim(0) != gt.height || m.dim(1) != gt.width) {
      throw ShapeError("ground-truth mask " + shape_str(m.shape()) + " does not match " + std::to_string(gt.height) +
                       "x" + std::to_string(gt.width));
    }
    s.targets.push_back(sample_mask(m, s.points));
  }
  return s;
}

Tensor cost_from_sample(const PointSample& s, const LossConfig& cfg) {
  const int N = s.logits.dim(0), P = s.logits.dim(1), G = static_cast<int>(s.targets.size());
  Tensor cost({N, G});
  std::vector<double> probs(P);
  for (int i = 0; i < N; ++i) {
    const double* row = s.logits.value().data() + static_cast<std::size_t>(i) * P;
    for (int p = 0; p < P; ++p) probs[p] = 1.0 / (1.0 + std::exp(-row[p]));
    for (int j = 0; j < G; ++j) {
      cost.at(i, j) = cfg.lambda_bce * bce_loss(probs, s.targets[j].values(), cfg.eps_bce) +
                      cfg.lambda_dice * dice_loss(probs, s.targets[j].values());
    }
  }
  return cost;
}

}  // namespace

Tensor match_cost(const MaskSet& pred, const GroundTruthMasks& gt, const LossConfig& cfg, std::uint64_t seed) {
  ag::NoGradGuard ng;
  return cost_from_sample(draw(pred, gt, cfg, seed), cfg);
}

MaskLossTerms mask_losses(const MaskSet& pred, const GroundTruthMasks& gt, const LossConfig& cfg, std::uint64_t seed) {
  const PointSample s = draw(pred, gt, cfg, seed);
  MaskLossTerms out;
  {
    ag::NoGradGuard ng;
    out.assignment = hungarian_match(cost_from_sample(s, cfg));
  }
  const int N = s.logits.dim(0), P = s.logits.dim(1);
  const ag::Var probs = ag::sigmoid(s.logits);
  std::vector<char> matched(N, 0);
  std::vector<ag::Var> bce, dice;
  for (const auto& [i, j] : out.assignment.pairs) {
    matched[i] = 1;
    const ag::Var pi = ag::row(probs, i);
    bce.push_back(bce_loss(pi, s.targets[j], cfg.eps_bce));
    dice.push_back(dice_loss(pi, s.targets[j]));
  }
  ag::Var bce_term = bce.empty() ? ag::constant(Tensor({1})) : ag::mean(ag::stack(bce));
  out.dice = dice.empty() ? ag::constant(Tensor({1})) : ag::mean(ag::stack(dice));
  if (cfg.unmatched_weight > 0) {
    std::vector<ag::Var> empty;
    const Tensor zeros({P});
    for (int i = 0; i < N; ++i) {
      if (!matched[i]) empty.push_back(bce_loss(ag::row(probs, i), zeros, cfg.eps_bce));
    }
    if (!empty.empty()) bce_term = ag::add(bce_term, ag::scale(ag::mean(ag::stack(empty)), cfg.unmatched_weight));
  }
  out.bce = bce_term;
  return out;
}

ag::Var grounding_scores(const std::vector<ag::Var>& z, const std::vector<Tensor>& text, const ag::Var& tau) {
  return grounding_scores(z, text, tau, PhraseLinks{});
}

ag::Var grounding_scores(const std::vector<ag::Var>& z, const std::vector<Tensor>& text, const ag::Var& tau,
                         const PhraseLinks& links) {
  const int B = static_cast<int>(z.size());
  if (B == 0) throw std::invalid_argument("grounding needs a non-empty batch");
  if (static_cast<int>(text.size()) != B) throw ShapeError("grounding: image and caption batch sizes differ");
  const ag::Var inv_tau = ag::reciprocal(tau);
  std::vector<ag::Var> constants;
  constants.reserve(B);
  for (int n = 0; n < B; ++n) {
    if (text[n].rank() != 2 || text[n].dim(0) == 0) {
      throw std::invalid_argument("grounding: sample " + std::to_string(n) + " has no phrases");
    }
    constants.push_back(ag::constant(text[n]));
  }
  std::vector<ag::Var> g;
  g.reserve(static_cast<std::size_t>(B) * B);
  for (int m = 0; m < B; ++m) {
    for (int n = 0; n < B; ++n) {
      if (z[m].dim(1) != text[n].dim(1)) {
        throw ShapeError("grounding: mask embedding width " + std::to_string(z[m].dim(1)) + " vs text width " +
                         std::to_string(text[n].dim(1)));
      }
      const ag::Var sim = ag::matmul_nt(constants[n], z[m]);  // [K, N]
      ag::Var p = ag::softmax_rows(ag::mul_by(sim, inv_tau));
      if (m == n && m < static_cast<int>(links.size()) && !links[m].empty()) {
        const int K = text[n].dim(0), N = z[m].dim(0);
        Tensor keep({K, N}, 1.0), fixed({K, N});
        bool any = false;
        for (int k = 0; k < K && k < static_cast<int>(links[m].size()); ++k) {
          if (links[m][k].empty()) continue;
          any = true;
          for (int i = 0; i < N; ++i) keep.at(k, i) = 0.0;
          for (int i : links[m][k]) {
            if (i < 0 || i >= N) throw std::out_of_range("grounding: linked mask index out of range");
            fixed.at(k, i) += 1.0 / links[m][k].size();
          }
        }
        if (any) p = ag::add(ag::mul(p, ag::constant(keep)), ag::constant(fixed));
      }
      g.push_back(ag::scale(ag::sum(ag::mul(p, sim)), 1.0 / text[n].dim(0)));
    }
  }
  return ag::reshape(ag::stack(g), {B, B});
}

ag::Var grounding_loss_from_scores(const ag::Var& g, const ag::Var& tau) {
  if (g.value().rank() != 2 || g.dim(0) != g.dim(1)) throw ShapeError("grounding scores must be square");
  const int B = g.dim(0);
  const ag::Var scaled = ag::mul_by(g, ag::reciprocal(tau));
  Tensor eye({B, B});
  for (int i = 0; i < B; ++i) eye.at(i, i) = 1.0;
  const ag::Var diag = ag::sum(ag::mul(scaled, ag::constant(eye)));
  const ag::Var scaled_t = ag::transpose(scaled);
  std::vector<ag::Var> lse;
  lse.reserve(2 * static_cast<std::size_t>(B));
  for (int m = 0; m < B; ++m) {
    lse.push_back(ag::logsumexp(ag::row(scaled, m)));
    lse.push_back(ag::logsumexp(ag::row(scaled_t, m)));
  }
  const ag::Var per_batch = ag::sub(ag::scale(diag, 2.0), ag::sum(ag::stack(lse)));
  return ag::scale(per_batch, -1.0 / B);
}

ag::Var grounding_loss(const std::vector<ag::Var>& z, const std::vector<Tensor>& text, const ag::Var& tau) {
  return grounding_loss_from_scores(grounding_scores(z, text, tau), tau);
}

ag::Var grounding_loss(const std::vector<ag::Var>& z, const std::vector<Tensor>& text, const ag::Var& tau,
                       const PhraseLinks& links) {
  return grounding_loss_from_scores(grounding_scores(z, text, tau, links), tau);
}

std::vector<int> link_phrases(const std::vector<std::string>& labels, const std::vector<std::string>& phrases) {
  const Vocabulary& vocab = Vocabulary::bundled();
  std::vector<int> out;
  for (const auto& raw : labels) {
    const std::string l = normalize_label(raw);
    int hit = -1;
    for (std::size_t k = 0; k < phrases.size() && hit < 0; ++k) {
      const std::string& p = phrases[k];
      if (p == l || (p.size() > l.size() && p.compare(p.size() - l.size(), l.size(), l) == 0 && p[p.size() - l.size() - 1] == ' '))
        hit = static_cast<int>(k);
    }
    const std::string u = vocab.unify(raw);
    for (std::size_t k = 0; k < phrases.size() && hit < 0 && !u.empty(); ++k)
      if (vocab.unify(phrases[k]) == u) hit = static_cast<int>(k);
    out.push_back(hit);
  }
  return out;
}

double total_loss(const LossComponents& c, const LossConfig& cfg) {
  return cfg.lambda_bce * c.bce + cfg.lambda_dice * c.dice + cfg.lambda_g * c.grounding;
}

ag::Var total_loss(const ag::Var& bce, const ag::Var& dice, const ag::Var& grounding, const LossConfig& cfg) {
  ag::Var out = ag::add(ag::scale(bce, cfg.lambda_bce), ag::scale(dice, cfg.lambda_dice));
  if (grounding.defined()) out = ag::add(out, ag::scale(grounding, cfg.lambda_g));
  return out;
}

}  // namespace texparse
