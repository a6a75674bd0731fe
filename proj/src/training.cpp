#include "texparse/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "texparse/params.hpp"

namespace texparse {
namespace {

Tensor flip_plane(const Tensor& m, bool h, bool v) {
  if (!h && !v) return m;
  const int H = m.dim(0), W = m.dim(1);
  Tensor out({H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) out.at(v ? H - 1 - y : y, h ? W - 1 - x : x) = m.at(y, x);
  return out;
}

GroundTruthMasks flip_gt(const GroundTruthMasks& gt, bool h, bool v) {
  if (!h && !v) return gt;
  GroundTruthMasks out = gt;
  for (auto& m : out.masks) m = flip_plane(m, h, v);
  return out;
}

int flip_code(bool h, bool v) { return (h ? 1 : 0) | (v ? 2 : 0); }

std::uint64_t parse_provider_seed(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(s, &used);
    if (used != s.size()) throw std::invalid_argument(what);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("bad " + what + " seed '" + s + "'");
  }
}

// Objective over the batch; returns the graph root and fills `parts`.
ag::Var batch_objective(const ParsingHead& head, const std::vector<TrainExample>& examples,
                        const std::vector<std::tuple<std::size_t, bool, bool>>& batch, FeatureCache& features,
                        const RunConfig& cfg, std::uint64_t seed, StepLoss* parts) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  std::vector<ag::Var> bce, dice, zs;
  std::vector<Tensor> texts;
  PhraseLinks links;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto [idx, hf, vf] = batch[b];
    const TrainExample& ex = examples.at(idx);
    const HeadOutput out = head.forward(features.get(ex, idx, hf, vf));
    const GroundTruthMasks gt = flip_gt(ex.gt, hf, vf);
    const MaskLossTerms final_terms = mask_losses(out.masks, gt, cfg.loss, mix_seed(seed, b, 0));
    bce.push_back(final_terms.bce);
    dice.push_back(final_terms.dice);
    for (std::size_t k = 0; k < out.aux.size(); ++k) {
      const MaskLossTerms t = mask_losses(out.aux[k], gt, cfg.loss, mix_seed(seed, b, k + 1));
      bce.push_back(t.bce);
      dice.push_back(t.dice);
    }
    if (ex.text.numel() > 0) {
      if (ex.text.dim(1) != head.config().d_emb) {
        throw std::invalid_argument("text embedding width " + std::to_string(ex.text.dim(1)) +
                                    " differs from head d_emb " + std::to_string(head.config().d_emb));
      }
      zs.push_back(out.z);
      texts.push_back(ex.text);
      if (cfg.loss.phrase_links) {
        std::vector<std::vector<int>> l(static_cast<std::size_t>(ex.text.dim(0)));
        for (const auto& [i, j] : final_terms.assignment.pairs)
          if (gt.phrase[j] >= 0) l[gt.phrase[j]].push_back(i);
        links.push_back(std::move(l));
      }
    }
  }
  // Stage terms are summed, images averaged.
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  const ag::Var bce_t = ag::scale(ag::sum(ag::stack(bce)), inv_b);
  const ag::Var dice_t = ag::scale(ag::sum(ag::stack(dice)), inv_b);
  ag::Var g;
  if (cfg.loss.lambda_g != 0.0 && !zs.empty()) g = grounding_loss(zs, texts, head.tau(), links);
  const ag::Var total = total_loss(bce_t, dice_t, g, cfg.loss);
  parts->bce = bce_t.item();
  parts->dice = dice_t.item();
  parts->grounding = g.defined() ? g.item() : 0.0;
  parts->total = total.item();
  return total;
}

}  // namespace

TextEmbedder make_text_embedder(const std::string& provider, int dim) {
  const auto colon = provider.find(':');
  const std::string kind = provider.substr(0, colon), rest = colon == std::string::npos ? "" : provider.substr(colon + 1);
  if (kind == "toy") return TextEmbedder::toy(rest.empty() ? 777 : parse_provider_seed(rest, "text provider"), dim);
  if (kind == "archive") {
    TextEmbedder e = TextEmbedder::archive(std::filesystem::path(rest));
    if (e.dim() != dim) throw ConfigError("text archive width " + std::to_string(e.dim()) + " differs from head.d_emb " + std::to_string(dim));
    return e;
  }
  throw ConfigError("unknown text provider '" + provider + "' (expected toy:<seed> or archive:<path>)");
}

ImageTensor resize_image(const ImageTensor& x, int height, int width) {
  if (x.height() == height && x.width() == width) return x;
  Tensor p = ag::resize_bilinear(x.pixels(), height, width);
  for (auto& v : p.values()) v = std::clamp(v, 0.0, 1.0);
  return ImageTensor(std::move(p));
}

Mask resize_mask(const Mask& m, int height, int width) {
  if (m.height == height && m.width == width) return m;
  Mask out(height, width);
  for (int y = 0; y < height; ++y) {
    const int sy = std::min(m.height - 1, static_cast<int>((y + 0.5) * m.height / height));
    for (int x = 0; x < width; ++x) {
      const int sx = std::min(m.width - 1, static_cast<int>((x + 0.5) * m.width / width));
      out.set(y, x, m.at(sy, sx));
    }
  }
  return out;
}

ImageTensor flip_image(const ImageTensor& x, bool h, bool v) {
  if (!h && !v) return x;
  const int H = x.height(), W = x.width();
  Tensor out({3, H, W});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < H; ++y)
      for (int xx = 0; xx < W; ++xx) out.at(c, v ? H - 1 - y : y, h ? W - 1 - xx : xx) = x.at(c, y, xx);
  return ImageTensor(std::move(out));
}

Mask flip_mask(const Mask& m, bool h, bool v) {
  Mask out(m.height, m.width);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) out.set(v ? m.height - 1 - y : y, h ? m.width - 1 - x : x, m.at(y, x));
  return out;
}

std::vector<TrainExample> prepare_examples(const std::vector<LabeledSample>& samples, const RunConfig& cfg,
                                           const TextEmbedder& embedder) {
  std::vector<TrainExample> out;
  for (const auto& s : samples) {
    TrainExample ex;
    ex.name = s.name;
    ex.image = resize_image(s.image, cfg.resize, cfg.resize);
    ex.gt.height = cfg.resize;
    ex.gt.width = cfg.resize;
    for (const auto& inst : s.instances) {
      Mask m = resize_mask(inst.mask, cfg.resize, cfg.resize);
      if (m.area() == 0) continue;
      Tensor t({cfg.resize, cfg.resize});
      for (std::size_t i = 0; i < m.size(); ++i) t[i] = m[i];
      ex.gt.masks.push_back(std::move(t));
      ex.gt.labels.push_back(inst.label);
      ex.masks.push_back(std::move(m));
    }
    ex.phrases = extract_phrases(s.caption, cfg.k_phrase);
    ex.gt.phrase = link_phrases(ex.gt.labels, ex.phrases);
    ex.text = embed_prompts(ex.phrases, embedder, cfg.prompt_template).embeddings;
    out.push_back(std::move(ex));
  }
  return out;
}

const Tensor& FeatureCache::get(const TrainExample& ex, std::size_t index, bool hflip, bool vflip) {
  const int code = flip_code(hflip, vflip);
  const auto key = std::make_pair(index, code);
  auto it = cache_.find(key);
  if (it == cache_.end()) {
    ag::NoGradGuard ng;
    const ImageTensor img = flip_image(ex.image, hflip, vflip);
    it = cache_.emplace(key, extract_features(backbone_, img, t_, mix_seed(seed_, index, code)).f).first;
  }
  return it->second;
}

void adamw_update(ParamSet& params, AdamState& state, const OptimConfig& cfg) {
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));

  double scale = 1.0;
  if (cfg.grad_clip > 0) {
    double norm2 = 0;
    for (const auto& [name, p] : params.items())
      if (p.requires_grad() && !p.grad().empty())
        for (double g : p.grad().values()) norm2 += g * g;
    const double norm = std::sqrt(norm2);
    if (norm > cfg.grad_clip) scale = cfg.grad_clip / norm;
  }

  for (auto& [name, p] : params.items()) {
    if (!p.requires_grad()) continue;
    Tensor& w = p.mutable_value();
    auto [mit, fresh] = state.m.try_emplace(name, Tensor(w.shape()));
    if (fresh) state.v.emplace(name, Tensor(w.shape()));
    Tensor& m = mit->second;
    Tensor& v = state.v.at(name);
    const bool has_grad = !p.grad().empty();
    const bool decay = w.rank() >= 2 && name != "grounding.log_tau";
    for (std::size_t i = 0; i < w.numel(); ++i) {
      const double g = has_grad ? p.grad()[i] * scale : 0.0;
      m[i] = cfg.beta1 * m[i] + (1 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1 - cfg.beta2) * g * g;
      const double step = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg.eps);
      w[i] -= cfg.lr * (step + (decay ? cfg.weight_decay * w[i] : 0.0));
    }
  }
}

StepLoss train_step(TrainState& state, const std::vector<TrainExample>& examples,
                    const std::vector<std::tuple<std::size_t, bool, bool>>& batch, FeatureCache& features,
                    const RunConfig& cfg, std::uint64_t step_seed) {
  state.head.params().zero_grad();
  StepLoss parts;
  const ag::Var total = batch_objective(state.head, examples, batch, features, cfg, step_seed, &parts);
  ag::backward(total);
  adamw_update(state.head.params(), state.adam, cfg.optim);
  return parts;
}

StepLoss evaluate_loss(const TrainState& state, const std::vector<TrainExample>& examples, FeatureCache& features,
                       const RunConfig& cfg, std::uint64_t seed) {
  ag::NoGradGuard ng;
  std::vector<std::tuple<std::size_t, bool, bool>> batch;
  for (std::size_t i = 0; i < examples.size(); ++i) batch.emplace_back(i, false, false);
  StepLoss parts;
  batch_objective(state.head, examples, batch, features, cfg, seed, &parts);
  return parts;
}

std::vector<std::tuple<std::size_t, bool, bool>> batch_for_step(long step, std::size_t n, const RunConfig& cfg) {
  if (n == 0) throw std::invalid_argument("no training examples");
  const std::size_t B = std::min<std::size_t>(static_cast<std::size_t>(cfg.optim.batch_size), n);
  const std::size_t per_epoch = (n + B - 1) / B;
  const long epoch = step / static_cast<long>(per_epoch);
  const std::size_t slot = static_cast<std::size_t>(step % static_cast<long>(per_epoch));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(mix_seed(cfg.seed, 0x5eed, static_cast<std::uint64_t>(epoch)));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::tuple<std::size_t, bool, bool>> batch;
  for (std::size_t k = slot * B; k < std::min(n, (slot + 1) * B); ++k) {
    const std::uint64_t r = mix_seed(cfg.seed, 0xf11b, static_cast<std::uint64_t>(step), k);
    batch.emplace_back(order[k], cfg.hflip && (r & 1), cfg.vflip && (r & 2));
  }
  return batch;
}

void save_checkpoint(const std::filesystem::path& path, const TrainState& state, const RunConfig& cfg) {
  TensorArchive a = state.head.params().to_archive(DType::F64, "head.");
  ParamSet moments;
  for (const auto& [name, t] : state.adam.m) moments.add("adam.m." + name, t, false);
  for (const auto& [name, t] : state.adam.v) moments.add("adam.v." + name, t, false);
  const TensorArchive adam = moments.to_archive(DType::F64);
  for (const auto& [name, entry] : adam.entries()) a.put(entry.matrix, DType::F64);
  a.metadata()["adam_step"] = state.adam.step;
  a.metadata()["config"] = config_to_ini(cfg);
  a.save(path);
}

void load_checkpoint(const std::filesystem::path& path, TrainState& state) {
  const TensorArchive a = TensorArchive::load(path);
  state.head.params().load(a, "head.");
  state.adam = AdamState{};
  for (const auto& [name, p] : state.head.params().items()) {
    for (const char* which : {"m", "v"}) {
      const std::string key = std::string("adam.") + which + "." + name;
      if (!a.contains(key)) continue;
      const auto vals = a.get(key).values();
      if (vals.size() != p.value().numel()) throw ArchiveError("checkpoint entry " + key + " has the wrong size");
      Tensor t(p.value().shape(), std::vector<double>(vals.begin(), vals.end()));
      (which[0] == 'm' ? state.adam.m : state.adam.v).emplace(name, std::move(t));
    }
  }
  if (a.metadata().contains("adam_step")) state.adam.step = a.metadata().at("adam_step").get<long>();
}

void train(TrainState& state, const std::vector<TrainExample>& examples, FeatureCache& features, const RunConfig& cfg,
           std::vector<TrainLogEntry>* log) {
  for (int s = 0; s < cfg.optim.steps; ++s) {
    const long step = state.adam.step;
    const auto batch = batch_for_step(step, examples.size(), cfg);
    const StepLoss l = train_step(state, examples, batch, features, cfg, mix_seed(cfg.seed, 0x1055, static_cast<std::uint64_t>(step)));
    if (log) log->push_back({step, l});
  }
}

}  // namespace texparse
