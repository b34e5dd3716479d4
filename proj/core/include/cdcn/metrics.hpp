#pragma once

#include <string>
#include <vector>

#include "cdcn/error.hpp"

namespace cdcn {

enum class Label { kLive, kSpoof };

// Cross-ethnicity evaluation splits; scores are aggregated per split.
enum class SubProtocol { k4At1, k4At2, k4At3 };

const char* to_string(Label label);
const char* to_string(SubProtocol sp);
Label parse_label(const std::string& text);
SubProtocol parse_sub_protocol(const std::string& text);

// One scored sample. Live is the positive class throughout.
struct ScoredSample {
  std::string sample_id;
  SubProtocol sub_protocol = SubProtocol::k4At1;
  Label label = Label::kLive;
  double score = 0.0;
};

struct ConfusionCounts {
  long tp = 0;
  long tn = 0;
  long fp = 0;
  long fn = 0;

  long total() const { return tp + tn + fp + fn; }
};

struct ProtocolMetrics {
  double apcer = 0.0;
  double bpcer = 0.0;
  double acer = 0.0;
  double threshold = 0.0;
  SubProtocol sub_protocol = SubProtocol::k4At1;
};

struct AggregateResult {
  double mean = 0.0;
  double stddev = 0.0;
};

struct ThresholdPolicy {
  enum class Kind { kFixed, kMinAcer, kEer };

  Kind kind = Kind::kFixed;
  double value = 0.5;

  static ThresholdPolicy fixed(double t) { return {Kind::kFixed, t}; }
  static ThresholdPolicy min_acer() { return {Kind::kMinAcer, 0.0}; }
  static ThresholdPolicy eer() { return {Kind::kEer, 0.0}; }
};

// Accepts "fixed:<t>", a bare number (fixed), "min_acer", or "eer".
ThresholdPolicy parse_threshold_policy(const std::string& text);
std::string to_string(const ThresholdPolicy& policy);

// Tallies predictions at the given threshold; score >= threshold means
// predicted live. Throws ValueError on an empty sample list.
ConfusionCounts confusion(const std::vector<ScoredSample>& samples,
                          double threshold);

// APCER = FP/(TN+FP), BPCER = FN/(FN+TP), ACER = their mean. Requires both
// classes present; throws ValueError on a degenerate protocol. The returned
// threshold/sub_protocol fields are left at defaults for the caller to tag.
ProtocolMetrics compute_metrics(const ConfusionCounts& counts);

// Mean and sample (n-1) standard deviation of the ACER values. Requires at
// least two entries.
AggregateResult aggregate(const std::vector<ProtocolMetrics>& sub_results);
AggregateResult aggregate_acers(const std::vector<double>& acers);

// Picks an operating threshold on a dev set holding both classes.
// kFixed returns the configured value. kMinAcer scans {0, 1} plus midpoints
// between adjacent sorted unique scores and returns the lowest threshold
// minimizing ACER. kEer does the same scan minimizing |APCER - BPCER|.
double select_threshold(const std::vector<ScoredSample>& dev_samples,
                        const ThresholdPolicy& policy);

struct EvalReport {
  std::vector<ProtocolMetrics> per_protocol;
  AggregateResult overall;
};

// Builds the per-sub-protocol metrics plus the overall aggregate at one
// threshold. Sub-protocols absent from the samples are skipped; a present
// sub-protocol missing one class is a degenerate-protocol error.
EvalReport build_report(const std::vector<ScoredSample>& samples,
                        double threshold);

// Rates in percent with two decimals, matching the reporting convention.
std::string format_report_text(const EvalReport& report);
std::string format_report_json(const EvalReport& report);

// Score CSV with header: sample_id,sub_protocol,label,score
void write_score_csv(const std::string& path,
                     const std::vector<ScoredSample>& samples);
std::vector<ScoredSample> read_score_csv(const std::string& path);

}  // namespace cdcn
