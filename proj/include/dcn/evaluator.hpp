#pragma once

// Threshold sweep over the gated cascade: system accuracy and sensitivity,
// data-to-cloud rate, per-exit exit rates, average per-beat FLOPs,
// efficiency rate against the exit-free baseline, and transmission-savings
// figures. Head confidences do not depend on thresholds, so the sweep
// computes each beat's cascade trace once and derives every threshold point
// from it; aggregates stay exactly recountable from per-beat decisions.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dcn/cascade.hpp"

namespace dcn {

struct SweepPoint {
  double threshold = 0.0;
  double system_accuracy = 0.0;
  double system_sensitivity = 0.0;
  double dtc = 0.0;                // fraction reaching the final stage
  std::vector<double> exit_rate;   // one per EEP
  double total_flops = 0.0;        // average per beat
  double efficiency_rate = 0.0;    // total_flops / baseline_flops
  double bytes_per_beat = 0.0;
  double transmission_savings = 0.0;
};

struct SweepReport {
  std::vector<SweepPoint> points;
  ExitPlacement placement;
  double baseline_flops = 0.0;     // exit-free original model
  double baseline_accuracy = 0.0;  // final head over the gated full path
  double baseline_sensitivity = 0.0;
  std::uint64_t raw_beat_bytes = kRawBeatBytes;
};

// Macro-averaged recall over the AAMI classes; classes absent from the
// label set are excluded from the average.
inline double sensitivity(const std::vector<AamiClass>& predicted,
                          const std::vector<AamiClass>& labels) {
  if (predicted.empty() || predicted.size() != labels.size())
    throw InvalidInput("sensitivity: empty or mismatched inputs");
  std::array<std::size_t, kNumClasses> total{};
  std::array<std::size_t, kNumClasses> correct{};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    total[int(labels[i])] += 1;
    if (predicted[i] == labels[i]) correct[int(labels[i])] += 1;
  }
  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    if (total[c] == 0) continue;
    sum += double(correct[c]) / double(total[c]);
    ++present;
  }
  return present == 0 ? 0.0 : sum / present;
}

inline double transmission_savings(const SweepPoint& point,
                                   std::uint64_t raw_beat_bytes = kRawBeatBytes) {
  if (raw_beat_bytes == 0)
    throw InvalidInput("transmission_savings: raw_beat_bytes must be > 0");
  return 1.0 - point.bytes_per_beat / double(raw_beat_bytes);
}

// Inclusive grid lo, lo+step, ..., hi. The canonical sweep grid is
// 0.00..1.00 step 0.01 (101 points).
inline std::vector<double> threshold_grid(double lo = 0.0, double hi = 1.0,
                                          double step = 0.01) {
  if (!(step > 0.0) || hi < lo) throw InvalidInput("threshold_grid: bad range");
  const int n = int(std::llround((hi - lo) / step));
  std::vector<double> out;
  for (int i = 0; i <= n; ++i) out.push_back(lo + double(i) * step);
  return out;
}

inline SweepReport sweep(const PartitionPlan& plan, const ExitParams& params,
                         const std::vector<BeatRecord>& beats,
                         const std::vector<double>& thresholds) {
  if (beats.empty()) throw InvalidInput("sweep: empty beat set");
  if (thresholds.empty()) throw InvalidInput("sweep: empty threshold list");
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    if (!(thresholds[i] >= 0.0 && thresholds[i] <= 1.0))
      throw InvalidInput("sweep: thresholds must lie in [0,1]");
    if (i > 0 && thresholds[i] <= thresholds[i - 1])
      throw InvalidInput("sweep: thresholds must be strictly increasing");
  }

  const std::size_t stages = plan.stages.size();
  std::vector<CascadeBeatTrace> traces;
  traces.reserve(beats.size());
  for (const auto& b : beats) traces.push_back(compute_trace(plan, params, b));

  SweepReport report;
  report.placement = plan.model.placement();
  report.baseline_flops = double(plan.model.backbone.total_flops());

  std::vector<AamiClass> final_pred;
  std::vector<AamiClass> labels;
  for (std::size_t i = 0; i < beats.size(); ++i) {
    final_pred.push_back(traces[i].classes.back());
    labels.push_back(beats[i].label);
  }
  std::size_t base_correct = 0;
  for (std::size_t i = 0; i < beats.size(); ++i)
    if (final_pred[i] == labels[i]) ++base_correct;
  report.baseline_accuracy = double(base_correct) / double(beats.size());
  report.baseline_sensitivity = sensitivity(final_pred, labels);

  for (double t : thresholds) {
    const std::vector<double> per_exit(stages - 1, t);
    SweepPoint p;
    p.threshold = t;
    std::vector<std::size_t> exits(stages, 0);
    std::vector<AamiClass> predicted;
    predicted.reserve(beats.size());
    std::size_t correct = 0;
    double flops_sum = 0.0;
    double bytes_sum = 0.0;
    for (std::size_t i = 0; i < beats.size(); ++i) {
      const int s = decide_exit_stage(traces[i], per_exit);
      exits[std::size_t(s)] += 1;
      const AamiClass cls = traces[i].classes[std::size_t(s)];
      predicted.push_back(cls);
      if (cls == labels[i]) ++correct;
      flops_sum += double(traces[i].cum_flops[std::size_t(s)]);
      bytes_sum += double(traces[i].cum_bytes[std::size_t(s)]);
    }
    p.system_accuracy = double(correct) / double(beats.size());
    p.system_sensitivity = sensitivity(predicted, labels);
    p.dtc = double(exits[stages - 1]) / double(beats.size());
    for (std::size_t e = 0; e + 1 < stages; ++e)
      p.exit_rate.push_back(double(exits[e]) / double(beats.size()));
    p.total_flops = flops_sum / double(beats.size());
    p.efficiency_rate = p.total_flops / report.baseline_flops;
    p.bytes_per_beat = bytes_sum / double(beats.size());
    p.transmission_savings = transmission_savings(p, report.raw_beat_bytes);
    report.points.push_back(std::move(p));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Report files
// ---------------------------------------------------------------------------

inline void write_sweep_csv(const std::filesystem::path& path,
                            const SweepReport& report,
                            const std::vector<std::string>& meta = {}) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw InvalidInput("cannot open for writing: " + path.string());
  for (const auto& line : meta) f << "# " << line << "\n";
  f << "threshold,system_accuracy,system_sensitivity,dtc";
  const std::size_t exits =
      report.points.empty() ? 0 : report.points.front().exit_rate.size();
  for (std::size_t e = 0; e < exits; ++e) f << ",exit_rate_" << (e + 1);
  f << ",total_flops,efficiency_rate,bytes_per_beat,transmission_savings\n";
  for (const auto& p : report.points) {
    f << format_g9(p.threshold) << ',' << format_g9(p.system_accuracy) << ','
      << format_g9(p.system_sensitivity) << ',' << format_g9(p.dtc);
    for (double r : p.exit_rate) f << ',' << format_g9(r);
    f << ',' << format_g9(p.total_flops) << ',' << format_g9(p.efficiency_rate)
      << ',' << format_g9(p.bytes_per_beat) << ','
      << format_g9(p.transmission_savings) << "\n";
  }
}

inline nlohmann::json sweep_to_json(const SweepReport& report,
                                    const nlohmann::json& meta = {}) {
  nlohmann::json j;
  if (!meta.is_null()) j["meta"] = meta;
  j["placement"] = report.placement.boundaries;
  j["baseline_flops"] = round9(report.baseline_flops);
  j["baseline_accuracy"] = round9(report.baseline_accuracy);
  j["baseline_sensitivity"] = round9(report.baseline_sensitivity);
  j["raw_beat_bytes"] = report.raw_beat_bytes;
  j["points"] = nlohmann::json::array();
  for (const auto& p : report.points) {
    nlohmann::json q;
    q["threshold"] = round9(p.threshold);
    q["system_accuracy"] = round9(p.system_accuracy);
    q["system_sensitivity"] = round9(p.system_sensitivity);
    q["dtc"] = round9(p.dtc);
    q["exit_rate"] = nlohmann::json::array();
    for (double r : p.exit_rate) q["exit_rate"].push_back(round9(r));
    q["total_flops"] = round9(p.total_flops);
    q["efficiency_rate"] = round9(p.efficiency_rate);
    q["bytes_per_beat"] = round9(p.bytes_per_beat);
    q["transmission_savings"] = round9(p.transmission_savings);
    j["points"].push_back(std::move(q));
  }
  return j;
}

inline void write_sweep_json(const std::filesystem::path& path,
                             const SweepReport& report,
                             const nlohmann::json& meta = {}) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw InvalidInput("cannot open for writing: " + path.string());
  f << sweep_to_json(report, meta).dump(2) << "\n";
}

inline SweepReport read_sweep_json(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw InvalidInput("cannot open: " + path.string());
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad sweep json: ") + e.what(), 0);
  }
  SweepReport report;
  try {
    report.placement =
        ExitPlacement::of(j.at("placement").get<std::vector<int>>());
    report.baseline_flops = j.at("baseline_flops").get<double>();
    report.baseline_accuracy = j.at("baseline_accuracy").get<double>();
    report.baseline_sensitivity = j.at("baseline_sensitivity").get<double>();
    report.raw_beat_bytes = j.at("raw_beat_bytes").get<std::uint64_t>();
    for (const auto& q : j.at("points")) {
      SweepPoint p;
      p.threshold = q.at("threshold").get<double>();
      p.system_accuracy = q.at("system_accuracy").get<double>();
      p.system_sensitivity = q.at("system_sensitivity").get<double>();
      p.dtc = q.at("dtc").get<double>();
      p.exit_rate = q.at("exit_rate").get<std::vector<double>>();
      p.total_flops = q.at("total_flops").get<double>();
      p.efficiency_rate = q.at("efficiency_rate").get<double>();
      p.bytes_per_beat = q.at("bytes_per_beat").get<double>();
      p.transmission_savings = q.at("transmission_savings").get<double>();
      report.points.push_back(std::move(p));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad sweep json: ") + e.what(), 0);
  }
  return report;
}

}  // namespace dcn
