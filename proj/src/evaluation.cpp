#include "texparse/evaluation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace texparse {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// IoU thresholds in percent.
constexpr int kThresholds[] = {50, 55, 60, 65, 70, 75, 80, 85, 90, 95};
constexpr int kNumThresholds = 10;

// a > b for IoU counts, compared as exact fractions.
bool iou_greater(const IoUCount& a, const IoUCount& b) {
  if (a.uni == 0) return false;
  if (b.uni == 0) return a.inter > 0;
  return static_cast<__int128>(a.inter) * b.uni > static_cast<__int128>(b.inter) * a.uni;
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return kNaN;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

int class_index(const std::vector<std::string>& classes, const std::string& label) {
  const auto it = std::lower_bound(classes.begin(), classes.end(), label);
  return it != classes.end() && *it == label ? static_cast<int>(it - classes.begin()) : LabelMap::kBackground;
}

LabelMap gt_label_map(const ProtocolGT& gt, const std::vector<std::string>& classes) {
  LabelMap m(gt.height, gt.width);
  for (const auto& r : gt.regions) {
    const int c = class_index(classes, r.label);
    for (std::size_t i = 0; i < m.cls.size(); ++i)
      if (r.mask[i]) m.cls[i] = c;
  }
  for (std::size_t i = 0; i < m.cls.size(); ++i)
    if (gt.ignore[i]) m.cls[i] = LabelMap::kIgnore;
  return m;
}

struct Accepted {
  std::string label;
  double score;
  Mask mask;
  const std::vector<float>* prob;  // null: use mask
};

// Prediction masks that survive the protocol's category filter, with unified
// labels. Under FPP the parts are merged into person masks.
std::vector<Accepted> accepted_masks(const Prediction& pred, const ProtocolSpec& spec) {
  std::vector<Accepted> out;
  for (const auto& m : pred.masks) {
    const std::string c = spec.vocab->unify(m.label);
    if (spec.ignore.count(c) || !spec.accepts(c)) continue;
    out.push_back({c, m.score, m.mask, m.prob.empty() ? nullptr : &m.prob});
  }
  if (spec.kind != Protocol::FPP) return out;

  std::vector<std::vector<int>> members;
  std::vector<Mask> people;
  const bool grouped = std::all_of(pred.masks.begin(), pred.masks.end(), [](const auto& m) { return m.person >= 0; });
  if (grouped) {
    std::map<int, int> slot;
    for (std::size_t i = 0, j = 0; i < pred.masks.size(); ++i) {
      const std::string c = spec.vocab->unify(pred.masks[i].label);
      if (spec.ignore.count(c) || !spec.accepts(c)) continue;
      const auto [it, fresh] = slot.try_emplace(pred.masks[i].person, static_cast<int>(people.size()));
      if (fresh) {
        people.push_back(out[j].mask);
        members.emplace_back();
      } else {
        people[it->second] = mask_union(people[it->second], out[j].mask);
      }
      members[it->second].push_back(static_cast<int>(j++));
    }
  } else {
    std::vector<Mask> parts;
    for (const auto& a : out) parts.push_back(a.mask);
    people = merge_fpp(parts, &members);
  }
  std::vector<Accepted> merged;
  for (std::size_t k = 0; k < people.size(); ++k) {
    double score = 0.0;
    for (int i : members[k]) score = std::max(score, out[i].score);
    merged.push_back({spec.vocab->person(), score, people[k], nullptr});
  }
  return merged;
}

LabelMap label_map_from(const std::vector<Accepted>& masks, int h, int w, const std::vector<std::string>& classes) {
  LabelMap m(h, w);
  const std::size_t P = m.cls.size();
  for (std::size_t i = 0; i < P; ++i) {
    double best = -1.0;
    int arg = -1;
    for (std::size_t k = 0; k < masks.size(); ++k) {
      const double p = masks[k].prob ? (*masks[k].prob)[i] : (masks[k].mask[i] ? 1.0 : 0.0);
      if (p >= 0.5 && p > best) {
        best = p;
        arg = static_cast<int>(k);
      }
    }
    if (arg >= 0) m.cls[i] = class_index(classes, masks[arg].label);
  }
  return m;
}

struct ProtocolInputs {
  std::vector<ProtocolGT> gts;
  std::vector<std::string> classes;  // sorted gt categories
};

ProtocolReport run_protocol(const std::vector<LabeledSample>& samples, const std::vector<const Prediction*>& preds,
                            const ProtocolSpec& spec, const std::set<std::string>* only) {
  ProtocolInputs in;
  std::set<std::string> cls;
  for (const auto& s : samples) {
    in.gts.push_back(build_protocol_gt(s, spec));
    for (const auto& r : in.gts.back().regions) cls.insert(r.label);
  }
  in.classes.assign(cls.begin(), cls.end());
  auto wanted = [&](const std::string& c) { return !only || only->count(c); };

  SemanticAccumulator acc(static_cast<int>(in.classes.size()));
  std::vector<IoUCount> pairs;
  std::vector<InstanceImage> inst(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const ProtocolGT& gt = in.gts[i];
    std::vector<Accepted> masks;
    if (preds[i]) {
      if (preds[i]->height != gt.height || preds[i]->width != gt.width) {
        throw DataError("prediction for " + samples[i].name + " is " + std::to_string(preds[i]->height) + "x" +
                        std::to_string(preds[i]->width) + ", image is " + std::to_string(gt.height) + "x" +
                        std::to_string(gt.width));
      }
      masks = accepted_masks(*preds[i], spec);
    }
    const LabelMap gmap = gt_label_map(gt, in.classes);
    const LabelMap pmap = label_map_from(masks, gt.height, gt.width, in.classes);
    acc.add(pmap, gmap);
    for (const auto& [c, iou] : image_class_ious(pmap, gmap))
      if (wanted(in.classes[c])) pairs.push_back(iou);

    for (const auto& r : gt.regions) {
      if (!wanted(r.label)) continue;
      Mask m = mask_minus(r.mask, gt.ignore);
      if (m.area() > 0) inst[i].gts.push_back({r.label, std::move(m)});
    }
    for (const auto& a : masks) {
      if (!wanted(a.label)) continue;
      inst[i].preds.push_back({a.label, a.score, mask_minus(a.mask, gt.ignore)});
    }
  }

  std::vector<int> subset;
  for (std::size_t c = 0; c < in.classes.size(); ++c)
    if (wanted(in.classes[c])) subset.push_back(static_cast<int>(c));
  const SemanticResult sem = acc.result(&subset);
  const InstanceResult ins = instance_metrics(inst);

  ProtocolReport r;
  r.protocol = protocol_name(spec.kind);
  r.images = static_cast<int>(samples.size());
  r.empty = sem.empty;
  r.miou = sem.miou;
  r.macc = sem.macc;
  r.map_ss = semantic_ap(pairs);
  r.map_is = ins.map;
  r.ar100 = ins.ar100;
  for (int c : subset)
    if (sem.per_class[c].uni > 0) r.per_class_iou[in.classes[c]] = 100.0 * sem.per_class[c].value();
  return r;
}

nlohmann::json metric(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

nlohmann::json protocol_json(const ProtocolReport& r) {
  nlohmann::json per_class = nlohmann::json::object();
  for (const auto& [k, v] : r.per_class_iou) per_class[k] = v;
  return {{"mIoU", metric(r.miou)},     {"mAcc", metric(r.macc)},   {"mAP_SS", metric(r.map_ss)},
          {"mAP_IS", metric(r.map_is)}, {"AR_100", metric(r.ar100)}, {"per_class", per_class},
          {"empty", r.empty},           {"images", r.images}};
}

std::string fmt(double v) {
  if (!std::isfinite(v)) return "-";
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << v;
  return s.str();
}

}  // namespace

// ------------------------------------------------------------------ protocols

Protocol parse_protocol(const std::string& name) {
  std::string n;
  for (unsigned char c : name)
    if (!std::isspace(c)) n += static_cast<char>(std::toupper(c));
  if (n == "FPP") return Protocol::FPP;
  if (n == "BHP") return Protocol::BHP;
  if (n == "CCP") return Protocol::CCP;
  if (n == "COP") return Protocol::COP;
  throw std::invalid_argument("unknown protocol '" + name + "' (expected FPP, BHP, CCP or COP)");
}

std::vector<Protocol> parse_protocol_list(const std::string& csv) {
  std::vector<Protocol> out;
  std::istringstream in(csv);
  for (std::string item; std::getline(in, item, ',');) {
    const Protocol p = parse_protocol(item);
    if (std::find(out.begin(), out.end(), p) == out.end()) out.push_back(p);
  }
  if (out.empty()) throw std::invalid_argument("empty protocol list");
  return out;
}

std::string protocol_name(Protocol p) {
  switch (p) {
    case Protocol::FPP: return "FPP";
    case Protocol::BHP: return "BHP";
    case Protocol::CCP: return "CCP";
    case Protocol::COP: return "COP";
  }
  return "?";
}

bool ProtocolSpec::accepts(const std::string& c) const {
  switch (kind) {
    case Protocol::FPP: return true;
    case Protocol::BHP: return vocab->body().count(c) > 0;
    case Protocol::CCP: return vocab->accessories().count(c) > 0;
    case Protocol::COP: return !vocab->body().count(c) && c != vocab->person();
  }
  return false;
}

ProtocolGT build_protocol_gt(const LabeledSample& sample, const ProtocolSpec& spec) {
  ProtocolGT g;
  g.height = sample.image.height();
  g.width = sample.image.width();
  g.ignore = Mask(g.height, g.width);
  std::map<int, Mask> people;
  for (const auto& inst : sample.instances) {
    if (inst.mask.height != g.height || inst.mask.width != g.width) {
      throw DataError("instance '" + inst.label + "' of " + sample.name + " does not match the image size");
    }
    const std::string c = spec.vocab->unify(inst.label);
    if (spec.ignore.count(c)) {
      g.ignore = mask_union(g.ignore, inst.mask);
      continue;
    }
    if (spec.kind == Protocol::FPP) {
      auto [it, fresh] = people.try_emplace(inst.person, inst.mask);
      if (!fresh) it->second = mask_union(it->second, inst.mask);
    } else if (spec.accepts(c)) {
      g.regions.push_back({c, inst.person, inst.mask});
    }
  }
  for (auto& [person, m] : people) g.regions.push_back({spec.vocab->person(), person, std::move(m)});
  return g;
}

// ------------------------------------------------------------------- semantic

SemanticAccumulator::SemanticAccumulator(int num_classes)
    : counts_(num_classes), gt_pixels_(num_classes, 0), hits_(num_classes, 0) {}

void SemanticAccumulator::add(const LabelMap& pred, const LabelMap& gt) {
  if (pred.height != gt.height || pred.width != gt.width) throw std::invalid_argument("label maps differ in size");
  const int K = static_cast<int>(counts_.size());
  for (std::size_t i = 0; i < gt.cls.size(); ++i) {
    const int g = gt.cls[i];
    if (g == LabelMap::kIgnore) continue;
    const int p = pred.cls[i];
    if (g >= K || p >= K) throw std::out_of_range("class index out of range");
    if (g >= 0) {
      ++gt_pixels_[g];
      ++counts_[g].uni;
      if (p == g) {
        ++hits_[g];
        ++counts_[g].inter;
      }
    }
    if (p >= 0 && p != g) ++counts_[p].uni;
  }
}

SemanticResult SemanticAccumulator::result(const std::vector<int>* subset) const {
  SemanticResult r;
  r.per_class = counts_;
  r.gt_pixels = gt_pixels_;
  r.hits = hits_;
  std::vector<int> all(counts_.size());
  std::iota(all.begin(), all.end(), 0);
  std::vector<double> ious, accs;
  for (int c : subset ? *subset : all) {
    if (counts_[c].uni > 0) ious.push_back(100.0 * counts_[c].value());
    if (gt_pixels_[c] > 0) accs.push_back(100.0 * static_cast<double>(hits_[c]) / static_cast<double>(gt_pixels_[c]));
  }
  r.empty = ious.empty();
  r.miou = mean(ious);
  r.macc = mean(accs);
  return r;
}

SemanticResult semantic_metrics(const LabelMap& pred, const LabelMap& gt, int num_classes) {
  SemanticAccumulator acc(num_classes);
  acc.add(pred, gt);
  return acc.result();
}

std::map<int, IoUCount> image_class_ious(const LabelMap& pred, const LabelMap& gt) {
  if (pred.height != gt.height || pred.width != gt.width) throw std::invalid_argument("label maps differ in size");
  std::map<int, IoUCount> out;
  for (std::size_t i = 0; i < gt.cls.size(); ++i) {
    const int g = gt.cls[i], p = pred.cls[i];
    if (g == LabelMap::kIgnore) continue;
    if (g >= 0) {
      auto& c = out[g];
      ++c.uni;
      if (p == g) ++c.inter;
    }
    if (p >= 0 && p != g) ++out[p].uni;
  }
  return out;
}

double semantic_ap(const std::vector<IoUCount>& pairs) {
  if (pairs.empty()) return kNaN;
  double total = 0;
  for (int t : kThresholds) {
    long long pass = 0;
    for (const auto& p : pairs) pass += p.at_least(t);
    total += static_cast<double>(pass) / static_cast<double>(pairs.size());
  }
  return 100.0 * total / kNumThresholds;
}

// ------------------------------------------------------------------- instance

InstanceResult instance_metrics(const std::vector<InstanceImage>& images, int max_dets) {
  if (max_dets <= 0) throw std::invalid_argument("max_dets must be positive");
  const std::size_t I = images.size();

  // Kept predictions per image in descending score order, and their IoUs.
  std::vector<std::vector<int>> kept(I);
  std::vector<std::vector<std::vector<IoUCount>>> ious(I);
  std::set<std::string> categories;
  for (std::size_t i = 0; i < I; ++i) {
    const auto& im = images[i];
    std::vector<int> order(im.preds.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return im.preds[a].score > im.preds[b].score; });
    if (static_cast<int>(order.size()) > max_dets) order.resize(max_dets);
    kept[i] = order;
    ious[i].assign(order.size(), std::vector<IoUCount>(im.gts.size()));
    for (std::size_t d = 0; d < order.size(); ++d)
      for (std::size_t g = 0; g < im.gts.size(); ++g) ious[i][d][g] = overlap(im.preds[order[d]].mask, im.gts[g].mask);
    for (const auto& g : im.gts) categories.insert(g.label);
  }

  // Greedy matching of image i at threshold t; tp[d] for the kept detections.
  auto match = [&](std::size_t i, int t, std::vector<char>* tp) {
    const auto& im = images[i];
    std::vector<char> used(im.gts.size(), 0);
    tp->assign(kept[i].size(), 0);
    for (std::size_t d = 0; d < kept[i].size(); ++d) {
      const std::string& label = im.preds[kept[i][d]].label;
      int best = -1;
      for (std::size_t g = 0; g < im.gts.size(); ++g) {
        if (used[g] || im.gts[g].label != label || !ious[i][d][g].at_least(t)) continue;
        if (best < 0 || iou_greater(ious[i][d][g], ious[i][d][best])) best = static_cast<int>(g);
      }
      if (best >= 0) {
        used[best] = 1;
        (*tp)[d] = 1;
      }
    }
  };

  // matches[t][i][d]
  std::vector<std::vector<std::vector<char>>> matches(kNumThresholds, std::vector<std::vector<char>>(I));
  for (int k = 0; k < kNumThresholds; ++k)
    for (std::size_t i = 0; i < I; ++i) match(i, kThresholds[k], &matches[k][i]);

  InstanceResult r;
  std::vector<double> aps;
  for (const auto& c : categories) {
    struct Det {
      double score;
      std::size_t image;
      std::size_t d;
    };
    std::vector<Det> dets;
    long long npos = 0;
    for (std::size_t i = 0; i < I; ++i) {
      for (std::size_t d = 0; d < kept[i].size(); ++d)
        if (images[i].preds[kept[i][d]].label == c) dets.push_back({images[i].preds[kept[i][d]].score, i, d});
      for (const auto& g : images[i].gts) npos += g.label == c;
    }
    std::stable_sort(dets.begin(), dets.end(), [](const Det& a, const Det& b) { return a.score > b.score; });

    double ap_c = 0;
    for (int k = 0; k < kNumThresholds; ++k) {
      std::vector<double> rc(dets.size()), pr(dets.size());
      long long tp = 0, fp = 0;
      for (std::size_t n = 0; n < dets.size(); ++n) {
        if (matches[k][dets[n].image][dets[n].d]) ++tp;
        else ++fp;
        rc[n] = static_cast<double>(tp) / static_cast<double>(npos);
        pr[n] = static_cast<double>(tp) / static_cast<double>(tp + fp);
      }
      for (std::size_t n = pr.size(); n-- > 1;) pr[n - 1] = std::max(pr[n - 1], pr[n]);
      double q = 0;
      for (int s = 0; s <= 100; ++s) {
        const double level = s / 100.0;
        const auto it = std::lower_bound(rc.begin(), rc.end(), level);
        if (it != rc.end()) q += pr[static_cast<std::size_t>(it - rc.begin())];
      }
      ap_c += q / 101.0;
    }
    ap_c = 100.0 * ap_c / kNumThresholds;
    r.per_class_ap[c] = ap_c;
    aps.push_back(ap_c);
  }
  r.map = mean(aps);

  std::vector<double> recalls;
  for (std::size_t i = 0; i < I; ++i) {
    if (images[i].gts.empty()) continue;
    for (int k = 0; k < kNumThresholds; ++k) {
      const auto& m = matches[k][i];
      const long long hit = std::count(m.begin(), m.end(), 1);
      recalls.push_back(static_cast<double>(hit) / static_cast<double>(images[i].gts.size()));
    }
  }
  r.ar100 = recalls.empty() ? kNaN : 100.0 * mean(recalls);
  r.empty = aps.empty();
  return r;
}

// -------------------------------------------------------------- splits, gamma

LabelSplit unseen_split(const std::set<std::string>& train_labels, const std::set<std::string>& test_labels,
                        const Vocabulary& vocab, const EnsembleTable& table) {
  std::set<std::string> known;
  for (const auto& t : train_labels) {
    const std::string u = vocab.unify(t);
    known.insert(u);
    known.insert(normalize_label(t));
    for (const auto& e : expand_ensemble(u, table)) {
      known.insert(e);
      known.insert(vocab.unify(e));
    }
  }
  LabelSplit s;
  for (const auto& l : test_labels) {
    const std::string n = normalize_label(l);
    (known.count(n) || known.count(vocab.unify(n)) ? s.seen : s.unseen).insert(n);
  }
  return s;
}

ImageTensor gamma_correct(const ImageTensor& x, double gamma) {
  if (!(gamma > 0) || !std::isfinite(gamma)) {
    throw std::invalid_argument("gamma must be positive, got " + std::to_string(gamma));
  }
  Tensor p = x.pixels();
  if (gamma != 1.0) {
    const double e = 1.0 / gamma;
    for (auto& v : p.values()) v = std::pow(v, e);
  }
  return ImageTensor(std::move(p));
}

// -------------------------------------------------------------- dataset level

LabelMap prediction_label_map(const Prediction& pred, const ProtocolSpec& spec, const std::vector<std::string>& classes) {
  return label_map_from(accepted_masks(pred, spec), pred.height, pred.width, classes);
}

Prediction prediction_from_ground_truth(const LabeledSample& sample) {
  Prediction p;
  p.image = sample.name;
  p.height = sample.image.height();
  p.width = sample.image.width();
  for (const auto& inst : sample.instances) p.masks.push_back({inst.label, 1.0, inst.mask, {}, inst.person});
  return p;
}

MetricReport evaluate(const std::vector<LabeledSample>& samples, const std::vector<Prediction>& preds,
                      const EvalOptions& options, const Vocabulary& vocab) {
  if (preds.size() != samples.size()) {
    throw std::invalid_argument("expected one prediction slot per sample (" + std::to_string(samples.size()) +
                                "), got " + std::to_string(preds.size()));
  }
  MetricReport report;
  std::vector<const Prediction*> aligned(samples.size(), nullptr);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (preds[i].image.empty()) {
      report.missing_predictions.push_back(samples[i].name);
    } else if (preds[i].image != samples[i].name) {
      throw DataError("prediction '" + preds[i].image + "' is not aligned with image '" + samples[i].name + "'");
    } else {
      aligned[i] = &preds[i];
    }
  }

  for (Protocol p : options.protocols) {
    const ProtocolSpec spec{p, &vocab, options.ignore};
    report.protocols[protocol_name(p)] = run_protocol(samples, aligned, spec, nullptr);
  }

  if (options.train_labels) {
    const ProtocolSpec cop{Protocol::COP, &vocab, options.ignore};
    std::set<std::string> test;
    for (const auto& s : samples)
      for (const auto& r : build_protocol_gt(s, cop).regions) test.insert(r.label);
    report.split = unseen_split(*options.train_labels, test, vocab);
    report.unseen = run_protocol(samples, aligned, cop, &report.split.unseen);
    report.seen = run_protocol(samples, aligned, cop, &report.split.seen);
    report.unseen->protocol = "COP/unseen";
    report.seen->protocol = "COP/seen";
  }
  return report;
}

nlohmann::json report_to_json(const MetricReport& report) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, r] : report.protocols) j[name] = protocol_json(r);
  if (report.unseen) {
    j["unseen"] = protocol_json(*report.unseen);
    j["unseen"]["labels"] = report.split.unseen;
  }
  if (report.seen) {
    j["seen"] = protocol_json(*report.seen);
    j["seen"]["labels"] = report.split.seen;
  }
  j["missing_predictions"] = report.missing_predictions;
  if (!report.gamma.empty()) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& g : report.gamma) {
      nlohmann::json m = nlohmann::json::object();
      for (const auto& [k, v] : g.miou) m[k] = metric(v);
      rows.push_back({{"gamma", g.gamma}, {"mIoU", m}});
    }
    j["gamma"] = rows;
  }
  j["conventions"] = {
      {"units", "percent"},
      {"mIoU", "dataset-level pixel counts; mean over classes with nonempty union; ignore pixels excluded"},
      {"mAcc", "mean over classes present in ground truth of pixel recall"},
      {"mAP_SS", "per (image, class) IoU; score 1 at threshold t if IoU >= t; t = 0.50:0.05:0.95; mean over t of mean score"},
      {"mAP_IS", "greedy score-ordered matching at IoU >= t, t = 0.50:0.05:0.95; 101-point interpolated AP; mean over t and categories with gt"},
      {"AR_100", "at most 100 predictions per image; recall averaged over t and images with gt"},
      {"FPP", "person masks = connected components of the union of predicted part masks"},
      {"gamma", "x^(1/gamma)"},
      {"semantic_map", "per pixel, highest-probability accepted mask with probability >= 0.5"}};
  return j;
}

std::string report_to_text(const MetricReport& report) {
  std::ostringstream s;
  s << std::left << std::setw(12) << "protocol" << std::right;
  for (const char* h : {"mIoU", "mAcc", "mAP_SS", "mAP_IS", "AR@100"}) s << std::setw(9) << h;
  s << '\n';
  auto row = [&](const ProtocolReport& r) {
    s << std::left << std::setw(12) << r.protocol << std::right;
    for (double v : {r.miou, r.macc, r.map_ss, r.map_is, r.ar100}) s << std::setw(9) << fmt(v);
    s << '\n';
  };
  for (const auto& [_, r] : report.protocols) row(r);
  if (report.unseen) row(*report.unseen);
  if (report.seen) row(*report.seen);
  for (const auto& [name, r] : report.protocols) {
    if (r.per_class_iou.empty()) continue;
    s << '\n' << name << " per-class IoU\n";
    for (const auto& [c, v] : r.per_class_iou) s << "  " << std::left << std::setw(20) << c << std::right << fmt(v) << '\n';
  }
  if (!report.gamma.empty()) {
    s << "\ngamma";
    for (const auto& [k, _] : report.gamma.front().miou) s << std::setw(9) << k;
    s << '\n';
    for (const auto& g : report.gamma) {
      s << std::left << std::setw(5) << g.gamma << std::right;
      for (const auto& [_, v] : g.miou) s << std::setw(9) << fmt(v);
      s << '\n';
    }
  }
  if (!report.missing_predictions.empty()) {
    s << "\nmissing predictions (scored as all-miss):";
    for (const auto& m : report.missing_predictions) s << ' ' << m;
    s << '\n';
  }
  return s.str();
}

}  // namespace texparse
