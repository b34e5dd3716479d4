#include "cdcn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

namespace cdcn {

namespace {

const SubProtocol kAllSubProtocols[] = {SubProtocol::k4At1, SubProtocol::k4At2,
                                        SubProtocol::k4At3};

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string percent2(double fraction) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", fraction * 100.0);
  return buf;
}

double percent2_value(double fraction) {
  return std::round(fraction * 10000.0) / 100.0;
}

}  // namespace

const char* to_string(Label label) {
  return label == Label::kLive ? "live" : "spoof";
}

const char* to_string(SubProtocol sp) {
  switch (sp) {
    case SubProtocol::k4At1: return "4@1";
    case SubProtocol::k4At2: return "4@2";
    case SubProtocol::k4At3: return "4@3";
  }
  throw ValueError("unknown sub-protocol value");
}

Label parse_label(const std::string& text) {
  if (text == "live") return Label::kLive;
  if (text == "spoof") return Label::kSpoof;
  throw ValueError("unknown label '" + text + "' (expected live|spoof)");
}

SubProtocol parse_sub_protocol(const std::string& text) {
  if (text == "4@1") return SubProtocol::k4At1;
  if (text == "4@2") return SubProtocol::k4At2;
  if (text == "4@3") return SubProtocol::k4At3;
  throw ValueError("unknown sub-protocol '" + text +
                   "' (expected 4@1|4@2|4@3)");
}

ThresholdPolicy parse_threshold_policy(const std::string& text) {
  std::string t = trim(text);
  if (t == "min_acer") return ThresholdPolicy::min_acer();
  if (t == "eer") return ThresholdPolicy::eer();
  std::string number = t;
  if (t.rfind("fixed:", 0) == 0) number = t.substr(6);
  try {
    size_t used = 0;
    double v = std::stod(number, &used);
    if (used != number.size()) throw ValueError("trailing garbage");
    if (v < 0.0 || v > 1.0)
      throw ValueError("fixed threshold must lie in [0,1], got " + number);
    return ThresholdPolicy::fixed(v);
  } catch (const ValueError&) {
    throw;
  } catch (const std::exception&) {
    throw ValueError("unknown threshold policy '" + text +
                     "' (expected fixed:<t>, a number, min_acer, or eer)");
  }
}

std::string to_string(const ThresholdPolicy& policy) {
  switch (policy.kind) {
    case ThresholdPolicy::Kind::kMinAcer: return "min_acer";
    case ThresholdPolicy::Kind::kEer: return "eer";
    case ThresholdPolicy::Kind::kFixed: {
      char buf[48];
      std::snprintf(buf, sizeof(buf), "fixed:%g", policy.value);
      return buf;
    }
  }
  throw ValueError("unknown threshold policy kind");
}

ConfusionCounts confusion(const std::vector<ScoredSample>& samples,
                          double threshold) {
  if (samples.empty()) throw ValueError("confusion: empty sample list");
  ConfusionCounts c;
  for (const ScoredSample& s : samples) {
    bool predicted_live = s.score >= threshold;
    if (s.label == Label::kLive) {
      (predicted_live ? c.tp : c.fn) += 1;
    } else {
      (predicted_live ? c.fp : c.tn) += 1;
    }
  }
  return c;
}

ProtocolMetrics compute_metrics(const ConfusionCounts& counts) {
  if (counts.tn + counts.fp <= 0)
    throw ValueError("degenerate protocol: no spoof samples");
  if (counts.fn + counts.tp <= 0)
    throw ValueError("degenerate protocol: no live samples");
  ProtocolMetrics m;
  m.apcer = double(counts.fp) / double(counts.tn + counts.fp);
  m.bpcer = double(counts.fn) / double(counts.fn + counts.tp);
  m.acer = (m.apcer + m.bpcer) / 2.0;
  return m;
}

AggregateResult aggregate_acers(const std::vector<double>& acers) {
  if (acers.size() < 2)
    throw ValueError("aggregate needs at least two sub-protocol results");
  double sum = 0.0;
  for (double a : acers) sum += a;
  double mean = sum / double(acers.size());
  double ss = 0.0;
  for (double a : acers) ss += (a - mean) * (a - mean);
  AggregateResult out;
  out.mean = mean;
  out.stddev = std::sqrt(ss / double(acers.size() - 1));
  return out;
}

AggregateResult aggregate(const std::vector<ProtocolMetrics>& sub_results) {
  std::vector<double> acers;
  acers.reserve(sub_results.size());
  for (const ProtocolMetrics& m : sub_results) acers.push_back(m.acer);
  return aggregate_acers(acers);
}

double select_threshold(const std::vector<ScoredSample>& dev_samples,
                        const ThresholdPolicy& policy) {
  if (policy.kind == ThresholdPolicy::Kind::kFixed) return policy.value;
  long lives = 0;
  long spoofs = 0;
  for (const ScoredSample& s : dev_samples)
    (s.label == Label::kLive ? lives : spoofs) += 1;
  if (lives == 0 || spoofs == 0)
    throw ValueError("select_threshold: dev set must contain both classes");

  std::vector<double> uniq;
  uniq.reserve(dev_samples.size());
  for (const ScoredSample& s : dev_samples) uniq.push_back(s.score);
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());

  std::vector<double> candidates;
  candidates.push_back(0.0);
  for (size_t i = 0; i + 1 < uniq.size(); ++i)
    candidates.push_back((uniq[i] + uniq[i + 1]) / 2.0);
  candidates.push_back(1.0);
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()),
                   candidates.end());

  double best_threshold = candidates.front();
  double best_objective = std::numeric_limits<double>::infinity();
  for (double t : candidates) {
    ProtocolMetrics m = compute_metrics(confusion(dev_samples, t));
    double objective = policy.kind == ThresholdPolicy::Kind::kMinAcer
                           ? m.acer
                           : std::abs(m.apcer - m.bpcer);
    if (objective < best_objective) {
      best_objective = objective;
      best_threshold = t;
    }
  }
  return best_threshold;
}

EvalReport build_report(const std::vector<ScoredSample>& samples,
                        double threshold) {
  if (samples.empty()) throw ValueError("build_report: no samples");
  EvalReport report;
  for (SubProtocol sp : kAllSubProtocols) {
    std::vector<ScoredSample> subset;
    for (const ScoredSample& s : samples)
      if (s.sub_protocol == sp) subset.push_back(s);
    if (subset.empty()) continue;
    ProtocolMetrics m = compute_metrics(confusion(subset, threshold));
    m.threshold = threshold;
    m.sub_protocol = sp;
    report.per_protocol.push_back(m);
  }
  if (report.per_protocol.size() >= 2) {
    report.overall = aggregate(report.per_protocol);
  } else {
    report.overall.mean = report.per_protocol.front().acer;
    report.overall.stddev = 0.0;
  }
  return report;
}

std::string format_report_text(const EvalReport& report) {
  std::ostringstream out;
  for (const ProtocolMetrics& m : report.per_protocol) {
    char line[160];
    std::snprintf(line, sizeof(line),
                  "protocol %s: APCER %s%%  BPCER %s%%  ACER %s%%  "
                  "(threshold %.6f)\n",
                  to_string(m.sub_protocol), percent2(m.apcer).c_str(),
                  percent2(m.bpcer).c_str(), percent2(m.acer).c_str(),
                  m.threshold);
    out << line;
  }
  out << "overall ACER: " << percent2(report.overall.mean) << "% +/- "
      << percent2(report.overall.stddev) << "%\n";
  return out.str();
}

std::string format_report_json(const EvalReport& report) {
  nlohmann::json j;
  j["per_protocol"] = nlohmann::json::array();
  for (const ProtocolMetrics& m : report.per_protocol) {
    nlohmann::json p;
    p["sub_protocol"] = to_string(m.sub_protocol);
    p["apcer_pct"] = percent2_value(m.apcer);
    p["bpcer_pct"] = percent2_value(m.bpcer);
    p["acer_pct"] = percent2_value(m.acer);
    p["threshold"] = m.threshold;
    j["per_protocol"].push_back(p);
  }
  j["overall"]["mean_acer_pct"] = percent2_value(report.overall.mean);
  j["overall"]["std_acer_pct"] = percent2_value(report.overall.stddev);
  return j.dump(2);
}

void write_score_csv(const std::string& path,
                     const std::vector<ScoredSample>& samples) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open score file for writing: " + path);
  out << "sample_id,sub_protocol,label,score\n";
  for (const ScoredSample& s : samples) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.9g", s.score);
    out << s.sample_id << ',' << to_string(s.sub_protocol) << ','
        << to_string(s.label) << ',' << buf << '\n';
  }
  if (!out) throw IoError("failed writing score file: " + path);
}

std::vector<ScoredSample> read_score_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open score file: " + path);
  std::string line;
  if (!std::getline(in, line))
    throw ValueError("score file is empty: " + path);
  if (trim(line) != "sample_id,sub_protocol,label,score")
    throw ValueError("bad score file header in " + path + ": '" + trim(line) +
                     "'");
  std::vector<ScoredSample> samples;
  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    std::string row = trim(line);
    if (row.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(row);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(trim(field));
    if (fields.size() != 4)
      throw ValueError(path + ":" + std::to_string(line_no) +
                       ": expected 4 fields, got " +
                       std::to_string(fields.size()));
    ScoredSample s;
    s.sample_id = fields[0];
    s.sub_protocol = parse_sub_protocol(fields[1]);
    s.label = parse_label(fields[2]);
    try {
      size_t used = 0;
      s.score = std::stod(fields[3], &used);
      if (used != fields[3].size()) throw ValueError("trailing garbage");
    } catch (const std::exception&) {
      throw ValueError(path + ":" + std::to_string(line_no) +
                       ": bad score '" + fields[3] + "'");
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

}  // namespace cdcn
