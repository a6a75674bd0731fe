#pragma once

// Parsing protocols (FPP / BHP / CCP / COP), semantic and instance metrics,
// the unseen/seen label split and the under-exposure transform.

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "texparse/dataset.hpp"
#include "texparse/mask.hpp"
#include "texparse/prompts.hpp"
#include "texparse/vocabulary.hpp"

namespace texparse {

enum class Protocol { FPP, BHP, CCP, COP };

/// "FPP", "bhp", ... ; throws std::invalid_argument on anything else.
Protocol parse_protocol(const std::string& name);
std::vector<Protocol> parse_protocol_list(const std::string& csv);
std::string protocol_name(Protocol p);

struct ProtocolSpec {
  Protocol kind = Protocol::COP;
  const Vocabulary* vocab = &Vocabulary::bundled();
  std::set<std::string> ignore;  // canonical categories the method never trained on

  /// Category filter on canonical labels.
  bool accepts(const std::string& canonical) const;
};

struct ProtocolRegion {
  std::string label;  // canonical; "person" under FPP
  int person = 0;
  Mask mask;
};

struct ProtocolGT {
  int height = 0;
  int width = 0;
  std::vector<ProtocolRegion> regions;
  Mask ignore;  // pixels excluded from every count
};

ProtocolGT build_protocol_gt(const LabeledSample& sample, const ProtocolSpec& spec);

struct LabelMap {
  static constexpr int kBackground = -1;
  static constexpr int kIgnore = -2;

  int height = 0;
  int width = 0;
  std::vector<int> cls;

  LabelMap() = default;
  LabelMap(int h, int w) : height(h), width(w), cls(static_cast<std::size_t>(h) * w, kBackground) {}
};

// Metrics are percentages in [0, 100]; `empty` marks a report with nothing to
// average over (values are then NaN, never 0).

struct SemanticResult {
  std::vector<IoUCount> per_class;    // dataset-level counts
  std::vector<long long> gt_pixels;   // per class
  std::vector<long long> hits;        // per class, pred == gt == c
  double miou = 0.0;
  double macc = 0.0;
  bool empty = true;
};

/// Accumulates exact pixel counts over images; classes are 0..num_classes-1.
class SemanticAccumulator {
 public:
  explicit SemanticAccumulator(int num_classes);
  void add(const LabelMap& pred, const LabelMap& gt);
  /// mIoU over classes with a nonempty union, mAcc over classes present in gt.
  /// `subset` restricts both means to the listed classes.
  SemanticResult result(const std::vector<int>* subset = nullptr) const;

 private:
  std::vector<IoUCount> counts_;
  std::vector<long long> gt_pixels_;
  std::vector<long long> hits_;
};

SemanticResult semantic_metrics(const LabelMap& pred, const LabelMap& gt, int num_classes);

/// IoU counts of every class present in pred or gt of one image (ignore
/// pixels excluded), keyed by class.
std::map<int, IoUCount> image_class_ious(const LabelMap& pred, const LabelMap& gt);

/// Thresholds 0.50, 0.55, ..., 0.95. A pair scores 1 at a threshold when its
/// IoU reaches it; result is the mean over thresholds of the mean score.
double semantic_ap(const std::vector<IoUCount>& pairs);

struct ScoredInstance {
  std::string label;
  double score = 0.0;
  Mask mask;
};

struct GtInstance {
  std::string label;
  Mask mask;
};

struct InstanceImage {
  std::vector<ScoredInstance> preds;
  std::vector<GtInstance> gts;
};

struct InstanceResult {
  double map = 0.0;
  double ar100 = 0.0;
  std::map<std::string, double> per_class_ap;
  bool empty = true;
};

/// Detection-style AP: per category and threshold, predictions across images
/// sorted by score, greedily matched to the best unmatched gt at IoU >= t,
/// 101-point interpolated precision. Categories without gt are skipped.
/// AR@100 averages recall over thresholds and images that have gt.
InstanceResult instance_metrics(const std::vector<InstanceImage>& images, int max_dets = 100);

struct LabelSplit {
  std::set<std::string> unseen;
  std::set<std::string> seen;
};

/// Seen test labels unify to a training label or one of its ensemble expansions.
LabelSplit unseen_split(const std::set<std::string>& train_labels, const std::set<std::string>& test_labels,
                        const Vocabulary& vocab = Vocabulary::bundled(),
                        const EnsembleTable& table = EnsembleTable::bundled());

/// Under-exposure: out = x^(1/gamma). gamma <= 0 throws.
ImageTensor gamma_correct(const ImageTensor& x, double gamma);

// ------------------------------------------------------------- dataset level

struct PredictedMask {
  std::string label;  // raw; unified before evaluation
  double score = 0.0;
  Mask mask;
  std::vector<float> prob;  // optional soft map for the per-pixel argmax; empty = mask
  int person = -1;          // known person grouping; -1 = group by connected components
};

struct Prediction {
  std::string image;
  int height = 0;
  int width = 0;
  std::vector<PredictedMask> masks;
};

struct ProtocolReport {
  std::string protocol;
  double miou = 0.0;
  double macc = 0.0;
  double map_ss = 0.0;
  double map_is = 0.0;
  double ar100 = 0.0;
  std::map<std::string, double> per_class_iou;
  bool empty = true;
  int images = 0;
};

struct GammaRow {
  double gamma = 1.0;
  std::map<std::string, double> miou;  // protocol -> mIoU
};

struct MetricReport {
  std::map<std::string, ProtocolReport> protocols;
  std::optional<ProtocolReport> unseen;
  std::optional<ProtocolReport> seen;
  LabelSplit split;
  std::vector<std::string> missing_predictions;
  std::vector<GammaRow> gamma;
};

struct EvalOptions {
  std::vector<Protocol> protocols{Protocol::FPP, Protocol::BHP, Protocol::CCP, Protocol::COP};
  std::set<std::string> ignore;
  std::optional<std::set<std::string>> train_labels;  // enables the unseen/seen sections (COP)
};

/// Semantic map of one prediction under a protocol: per pixel, the class of
/// the highest-probability accepted mask with prob >= 0.5.
LabelMap prediction_label_map(const Prediction& pred, const ProtocolSpec& spec, const std::vector<std::string>& classes);

/// preds[i] must describe samples[i] (matched by name); a default-constructed
/// Prediction with an empty name counts as missing.
MetricReport evaluate(const std::vector<LabeledSample>& samples, const std::vector<Prediction>& preds,
                      const EvalOptions& options, const Vocabulary& vocab = Vocabulary::bundled());

/// The ground truth itself as a prediction (score 1 per instance).
Prediction prediction_from_ground_truth(const LabeledSample& sample);

nlohmann::json report_to_json(const MetricReport& report);
std::string report_to_text(const MetricReport& report);

}  // namespace texparse
