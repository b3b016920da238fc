#pragma once

// Duty-cycle energy model of the edge device: average current over one beat
// period as a time-weighted mix of inference, transmission and sleep
// currents. Reproduces the arithmetic behind the measured power table and
// its savings percentages; no radio or firmware modeling.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dcn/common.hpp"

namespace dcn {

enum class TxMode : std::uint8_t { Connected = 0, Broadcast = 1 };

inline const char* to_string(TxMode m) {
  return m == TxMode::Connected ? "connected" : "broadcast";
}

// Per-mode currents (mA) and duty-cycle times (s). Defaults follow the
// measured table: sleep 0.58, inference 0.74, connected 3.66, broadcast
// 3.20, one heartbeat per second.
struct PowerProfile {
  double i_sleep_ma = 0.58;
  double i_infer_ma = 0.74;
  double i_tx_connected_ma = 3.66;
  double i_tx_broadcast_ma = 3.20;
  double t_infer_s = 0.9;
  double t_tx_s = 0.1;
  double beat_period_s = 1.0;

  double i_tx(TxMode mode) const {
    return mode == TxMode::Connected ? i_tx_connected_ma : i_tx_broadcast_ma;
  }

  void validate() const {
    if (!(i_sleep_ma > 0.0) || !(i_infer_ma > 0.0) ||
        !(i_tx_connected_ma > 0.0) || !(i_tx_broadcast_ma > 0.0))
      throw InvalidInput("power profile: currents must be positive");
    if (i_sleep_ma > i_infer_ma || i_sleep_ma > i_tx_connected_ma ||
        i_sleep_ma > i_tx_broadcast_ma)
      throw InvalidInput("power profile: sleep must be the lowest current");
    if (t_infer_s < 0.0 || t_tx_s < 0.0 || !(beat_period_s > 0.0))
      throw InvalidInput("power profile: times must be non-negative");
    if (t_infer_s + t_tx_s > beat_period_s + 1e-12)
      throw InvalidInput("power profile: t_infer + t_tx exceeds beat period");
  }
};

// Average current over one beat period. forward_fraction is the fraction
// of beats transmitted past the edge EEP (1 - exit rate); the device sleeps
// whenever it neither infers nor transmits. Affine in forward_fraction.
inline double average_current(const PowerProfile& p, double forward_fraction,
                              TxMode mode) {
  p.validate();
  if (!(forward_fraction >= 0.0 && forward_fraction <= 1.0))
    throw InvalidInput("average_current: forward fraction outside [0,1]");
  const double tx_time = forward_fraction * p.t_tx_s;
  const double sleep_time = p.beat_period_s - p.t_infer_s - tx_time;
  return (p.t_infer_s * p.i_infer_ma + tx_time * p.i_tx(mode) +
          sleep_time * p.i_sleep_ma) /
         p.beat_period_s;
}

// ---------------------------------------------------------------------------
// Savings report
// ---------------------------------------------------------------------------

inline const std::vector<double>& deployment_thresholds() {
  static const std::vector<double> grid = {0.5, 0.6, 0.7, 0.8, 0.9};
  return grid;
}

struct EnergyInputs {
  std::vector<double> thresholds;  // must be the deployment grid 0.5..0.9
  std::vector<double> ours_connected_ma;
  std::vector<double> ours_broadcast_ma;
  double continuous_connected_ma = 3.66;
  double continuous_broadcast_ma = 3.20;
  double inference_only_ma = 0.74;
  double sleep_ma = 0.58;
};

struct EnergyReport {
  EnergyInputs inputs;
  double savings_connected = 0.0;  // 1 - mean(ours)/continuous
  double savings_broadcast = 0.0;
  double savings_overall = 0.0;    // 1 - pooled ours mean / pooled continuous
};

inline double mean_of(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s / double(xs.size());
}

inline EnergyReport savings_report(const EnergyInputs& in) {
  if (in.thresholds.size() != deployment_thresholds().size())
    throw InvalidInput("savings report: expected the 0.5..0.9 threshold grid");
  for (std::size_t i = 0; i < in.thresholds.size(); ++i)
    if (std::abs(in.thresholds[i] - deployment_thresholds()[i]) > 1e-9)
      throw InvalidInput("savings report: expected the 0.5..0.9 threshold grid");
  if (in.ours_connected_ma.size() != in.thresholds.size() ||
      in.ours_broadcast_ma.size() != in.thresholds.size())
    throw InvalidInput("savings report: per-mode current list length mismatch");
  for (std::size_t i = 0; i < in.thresholds.size(); ++i) {
    if (in.ours_connected_ma[i] < in.sleep_ma - 1e-9 ||
        in.ours_connected_ma[i] > in.continuous_connected_ma + 1e-9 ||
        in.ours_broadcast_ma[i] < in.sleep_ma - 1e-9 ||
        in.ours_broadcast_ma[i] > in.continuous_broadcast_ma + 1e-9)
      throw InvalidInput(
          "savings report: currents must satisfy sleep <= ours <= continuous");
  }
  EnergyReport r;
  r.inputs = in;
  const double mean_c = mean_of(in.ours_connected_ma);
  const double mean_b = mean_of(in.ours_broadcast_ma);
  r.savings_connected = 1.0 - mean_c / in.continuous_connected_ma;
  r.savings_broadcast = 1.0 - mean_b / in.continuous_broadcast_ma;
  r.savings_overall =
      1.0 - (mean_c + mean_b) /
                (in.continuous_connected_ma + in.continuous_broadcast_ma);
  return r;
}

// ---------------------------------------------------------------------------
// Model composition and calibration
// ---------------------------------------------------------------------------

// Modeled "ours" currents from edge exit rates on the deployment grid.
// forward_fraction = clamp(fraction_scale * (1 - exit_rate_edge)).
inline EnergyInputs model_energy_inputs(const PowerProfile& profile,
                                        const std::vector<double>& exit_rates,
                                        double fraction_scale = 1.0) {
  if (exit_rates.size() != deployment_thresholds().size())
    throw InvalidInput("energy model: need one edge exit rate per threshold");
  EnergyInputs in;
  in.thresholds = deployment_thresholds();
  in.continuous_connected_ma = profile.i_tx_connected_ma;
  in.continuous_broadcast_ma = profile.i_tx_broadcast_ma;
  in.inference_only_ma = average_current(profile, 0.0, TxMode::Broadcast);
  in.sleep_ma = profile.i_sleep_ma;
  for (double er : exit_rates) {
    if (!(er >= 0.0 && er <= 1.0))
      throw InvalidInput("energy model: exit rate outside [0,1]");
    const double f =
        std::min(1.0, std::max(0.0, fraction_scale * (1.0 - er)));
    in.ours_connected_ma.push_back(
        average_current(profile, f, TxMode::Connected));
    in.ours_broadcast_ma.push_back(
        average_current(profile, f, TxMode::Broadcast));
  }
  return in;
}

struct CalibrationResult {
  PowerProfile profile;     // t_tx fitted (clamped to the beat period)
  double fraction_scale = 1.0;
  std::vector<double> model_ma;  // fitted currents on the grid
  double max_rel_error = 0.0;    // vs the calibration targets
};

// Least-squares fit of the transmission term against measured currents.
// The model current is affine in the product t_tx * fraction_scale, so the
// product is fitted in closed form and split against the beat-period
// constraint. Exit rates map through f = fraction_scale * (1 - exit_rate).
inline CalibrationResult calibrate_transmission(
    const PowerProfile& base, const std::vector<double>& forward_fractions,
    const std::vector<double>& target_ma, TxMode mode) {
  base.validate();
  if (forward_fractions.size() != target_ma.size() || target_ma.empty())
    throw InvalidInput("calibrate: fraction/target length mismatch");
  const double idle =
      (base.t_infer_s * base.i_infer_ma +
       (base.beat_period_s - base.t_infer_s) * base.i_sleep_ma) /
      base.beat_period_s;
  const double slope = (base.i_tx(mode) - base.i_sleep_ma) / base.beat_period_s;
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < target_ma.size(); ++i) {
    const double b = forward_fractions[i] * slope;
    num += b * (target_ma[i] - idle);
    den += b * b;
  }
  CalibrationResult out;
  out.profile = base;
  const double gamma = den > 0.0 ? std::max(0.0, num / den) : base.t_tx_s;
  const double t_tx_max = base.beat_period_s - base.t_infer_s;
  out.profile.t_tx_s = std::min(gamma, t_tx_max);
  out.fraction_scale =
      out.profile.t_tx_s > 0.0 ? gamma / out.profile.t_tx_s : 1.0;
  for (std::size_t i = 0; i < target_ma.size(); ++i) {
    const double f =
        std::min(1.0, std::max(0.0, out.fraction_scale * forward_fractions[i]));
    const double m = average_current(out.profile, f, mode);
    out.model_ma.push_back(m);
    out.max_rel_error = std::max(out.max_rel_error,
                                 std::abs(m - target_ma[i]) / target_ma[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stage-boundary link latency
// ---------------------------------------------------------------------------

// Fixed delay plus payload/bandwidth per crossed boundary; feeds a per-beat
// latency column in reports.
struct LinkModel {
  double fixed_delay_s = 0.02;
  double bandwidth_bytes_per_s = 32000.0;

  double transfer_time(double payload_bytes) const {
    if (!(bandwidth_bytes_per_s > 0.0))
      throw InvalidInput("link: bandwidth must be positive");
    return fixed_delay_s + payload_bytes / bandwidth_bytes_per_s;
  }
};

// Energy report CSV: `threshold,mode,ours_mA,continuous_mA,savings_pct`,
// joinable with the sweep report on threshold.
inline void write_energy_csv(const std::filesystem::path& path,
                             const EnergyReport& report,
                             const std::vector<std::string>& meta = {}) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw InvalidInput("cannot open for writing: " + path.string());
  for (const auto& line : meta) f << "# " << line << "\n";
  f << "threshold,mode,ours_mA,continuous_mA,savings_pct\n";
  const auto& in = report.inputs;
  for (std::size_t i = 0; i < in.thresholds.size(); ++i) {
    f << format_g9(in.thresholds[i]) << ",connected,"
      << format_g9(in.ours_connected_ma[i]) << ','
      << format_g9(in.continuous_connected_ma) << ','
      << format_g9(100.0 *
                   (1.0 - in.ours_connected_ma[i] / in.continuous_connected_ma))
      << "\n";
  }
  for (std::size_t i = 0; i < in.thresholds.size(); ++i) {
    f << format_g9(in.thresholds[i]) << ",broadcast,"
      << format_g9(in.ours_broadcast_ma[i]) << ','
      << format_g9(in.continuous_broadcast_ma) << ','
      << format_g9(100.0 *
                   (1.0 - in.ours_broadcast_ma[i] / in.continuous_broadcast_ma))
      << "\n";
  }
}

}  // namespace dcn
