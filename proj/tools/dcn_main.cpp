// dcn: early-exit cascade runtime and decentralized-deployment simulator.
//
// Subcommands: gen, train, sweep, optimize, partition, simulate, verify.
// All randomness flows from --seed; identical invocations produce
// byte-identical artifacts. Exit codes: 0 success, 1 domain error, 2 usage.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dcn/beatset.hpp"
#include "dcn/cascade.hpp"
#include "dcn/config.hpp"
#include "dcn/energy.hpp"
#include "dcn/evaluator.hpp"
#include "dcn/exit_graph.hpp"
#include "dcn/ga.hpp"
#include "dcn/model_io.hpp"
#include "dcn/partition_io.hpp"
#include "dcn/trainer.hpp"

namespace {

using nlohmann::json;

json artifact_meta(const std::string& command, const dcn::RunConfig& cfg) {
  return {{"tool", "dcn"},
          {"version", dcn::kToolVersion},
          {"command", command},
          {"config", dcn::config_summary(cfg)}};
}

std::vector<std::string> meta_lines(const std::string& command,
                                    const dcn::RunConfig& cfg) {
  return {"tool: dcn " + std::string(dcn::kToolVersion),
          "command: " + command, "config: " + dcn::config_summary(cfg)};
}

void write_meta_sidecar(const std::filesystem::path& artifact,
                        const std::string& command,
                        const dcn::RunConfig& cfg) {
  std::ofstream f(artifact.string() + ".meta.json", std::ios::trunc);
  if (!f)
    throw dcn::InvalidInput("cannot write sidecar for " + artifact.string());
  f << artifact_meta(command, cfg).dump(2) << "\n";
}

dcn::ModelSpec backbone_from(const dcn::RunConfig& cfg) {
  return dcn::default_backbone(cfg.channels, cfg.dense_hidden);
}

std::vector<dcn::NodeRole> parse_roles(const std::string& s) {
  std::vector<dcn::NodeRole> roles;
  for (const auto& item : dcn::detail::split_list(s))
    roles.push_back(dcn::role_from_string(item));
  return roles;
}

std::vector<dcn::NodeRole> default_roles(std::size_t num_exits) {
  if (num_exits == 1) return {dcn::NodeRole::Edge, dcn::NodeRole::Cloud};
  return {dcn::NodeRole::Edge, dcn::NodeRole::Fog, dcn::NodeRole::Cloud};
}

std::vector<dcn::BeatRecord> select_split(const std::vector<dcn::BeatRecord>& beats,
                                          const std::string& which,
                                          const dcn::RunConfig& cfg) {
  if (which == "all") return beats;
  const auto split = dcn::split(beats, cfg.split_ratios, cfg.seed);
  if (which == "train") return split.train;
  if (which == "validation") return split.validation;
  if (which == "test") return split.test;
  throw dcn::InvalidInput("unknown split: " + which);
}

// Edge exit rates at the deployment thresholds, looked up in a sweep report.
std::vector<double> edge_exit_rates_at(const dcn::SweepReport& report,
                                       const std::vector<double>& grid) {
  std::vector<double> rates;
  for (double t : grid) {
    bool found = false;
    for (const auto& p : report.points) {
      if (std::abs(p.threshold - t) <= 1e-9) {
        rates.push_back(p.exit_rate.at(0));
        found = true;
        break;
      }
    }
    if (!found)
      throw dcn::InvalidInput("sweep report lacks threshold " +
                              dcn::format_g9(t));
  }
  return rates;
}

int run_verify(const std::filesystem::path& model_path,
               const std::filesystem::path& beats_path,
               const std::string& plan_dir) {
  bool ok = true;
  const auto check = [&ok](const std::string& name, bool pass,
                           const std::string& detail = "") {
    std::printf("[%s] %s%s\n", pass ? "ok" : "FAIL", name.c_str(),
                detail.empty() ? "" : (": " + detail).c_str());
    ok = ok && pass;
  };

  const auto beats_bytes = dcn::read_file_bytes(beats_path);
  const auto beats_file = dcn::deserialize_beats(beats_bytes);
  check("beats round-trip",
        dcn::serialize_beats(beats_file.beats, beats_file.flags) == beats_bytes);

  const auto model_bytes = dcn::read_file_bytes(model_path);
  auto [model, params] = dcn::deserialize_exit_model(model_bytes);
  check("model round-trip",
        dcn::serialize_exit_model(model, params) == model_bytes);

  const auto roles = default_roles(model.exits.size());
  const auto plan = dcn::partition(model, params, model.placement(), roles);

  // pass-through equivalence against the monolithic backbone
  bool equal = true;
  dcn::GateConfig passthrough = dcn::GateConfig::uniform(
      1.0, model.exits.size(), dcn::GateMode::PassThrough);
  for (const auto& beat : beats_file.beats) {
    const auto direct = dcn::forward<float>(model.backbone, params.backbone,
                                            dcn::beat_input<float>(beat));
    const auto staged = dcn::classify(plan, params, passthrough, beat);
    const int direct_cls = dcn::argmax_index(direct);
    equal = equal && direct_cls == int(staged.predicted_class) &&
            double(direct.data[direct_cls]) == staged.pred;
    if (!equal) break;
  }
  check("pass-through equivalence", equal);

  // conservation + recount on a coarse grid
  const auto grid = dcn::threshold_grid(0.0, 1.0, 0.1);
  const auto report = dcn::sweep(plan, params, beats_file.beats, grid);
  bool conserved = true;
  for (const auto& p : report.points) {
    double total = p.dtc;
    for (double r : p.exit_rate) total += r;
    conserved = conserved && std::abs(total - 1.0) <= 1e-9;
  }
  check("exit-rate conservation", conserved);

  bool recount_ok = true;
  for (double t : {0.0, 0.5, 0.9}) {
    const auto batch = dcn::classify_batch(
        plan, params, dcn::GateConfig::uniform(t, model.exits.size()),
        beats_file.beats);
    double flops = 0.0, bytes = 0.0;
    std::size_t correct = 0;
    for (const auto& d : batch.decisions) {
      flops += double(d.flops_spent);
      bytes += double(d.bytes_transmitted);
      if (d.predicted_class == d.true_label) ++correct;
    }
    flops /= double(batch.decisions.size());
    bytes /= double(batch.decisions.size());
    const dcn::SweepPoint* point = nullptr;
    for (const auto& p : report.points)
      if (std::abs(p.threshold - t) <= 1e-9) point = &p;
    if (!point) {
      recount_ok = false;
      break;
    }
    const double acc = double(correct) / double(batch.decisions.size());
    recount_ok = recount_ok &&
                 std::abs(point->total_flops - flops) <=
                     1e-9 * std::max(1.0, std::abs(flops)) &&
                 point->bytes_per_beat == bytes &&
                 point->system_accuracy == acc;
  }
  check("recount oracle", recount_ok);

  if (!plan_dir.empty()) {
    const auto err = dcn::check_exported_partition(plan, params, plan_dir);
    check("partition files", err.empty(), err);
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  dcn::RunConfig cfg;

  // --config applies before flags so flags override file values
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::string(argv[i]) == "--config") {
      try {
        dcn::apply_config_file(cfg, argv[i + 1]);
      } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
      }
    }
  }

  CLI::App app{"early-exit cascade runtime and deployment simulator"};
  app.set_version_flag("--version", std::string(dcn::kToolVersion));
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "config file (key=value sections)")
      ->expected(1);

  std::string placement_str, roles_str, split_which = "all";
  std::string out_path, history_path, beats_path, model_path, csv_path;
  std::string sweeps_str, plan_dir, trace_path, calibrate_broadcast;
  std::string thresholds_str;
  double trace_threshold = 0.8;
  std::uint64_t edge_budget = dcn::kDefaultEdgeBudgetBytes;
  std::string latency_path;

  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "config file")->expected(1);
    sub->add_option("--seed", cfg.seed, "master seed");
  };

  // gen
  auto* gen = app.add_subcommand("gen", "generate synthetic beats");
  add_common(gen);
  gen->add_option("--per-class", cfg.per_class, "beats per class");
  gen->add_option("--noise", cfg.noise_sigma, "noise sigma");
  gen->add_option("--out", out_path, "output .beats file")->required();
  gen->add_option("--csv", csv_path, "also export CSV");

  // train
  auto* train_cmd = app.add_subcommand("train", "train an exit-augmented model");
  add_common(train_cmd);
  train_cmd->add_option("--beats", beats_path, "input .beats file")->required();
  train_cmd->add_option("--placement", placement_str, "exit boundaries, e.g. 2 or 2,4");
  train_cmd->add_option("--bottleneck", cfg.bottleneck, "encoder bottleneck size");
  train_cmd->add_option("--epochs", cfg.train.epochs, "training epochs");
  train_cmd->add_option("--batch", cfg.train.batch_size, "batch size");
  train_cmd->add_option("--lr", cfg.train.learning_rate, "learning rate");
  train_cmd->add_option("--out", out_path, "output model file")->required();
  train_cmd->add_option("--history", history_path, "training history CSV");

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "threshold sweep report");
  add_common(sweep_cmd);
  sweep_cmd->add_option("--model", model_path, "trained model file")->required();
  sweep_cmd->add_option("--beats", beats_path, "input .beats file")->required();
  sweep_cmd->add_option("--split", split_which,
                        "evaluate on all|train|validation|test");
  sweep_cmd->add_option("--thresholds", thresholds_str, "grid lo:hi:step");
  sweep_cmd->add_option("--out", out_path, "output base path (.csv/.json)")
      ->required();
  sweep_cmd->add_option("--trace", trace_path, "decision trace CSV");
  sweep_cmd->add_option("--trace-threshold", trace_threshold,
                        "threshold for the decision trace");

  // optimize
  auto* opt_cmd = app.add_subcommand("optimize", "GA placement search");
  add_common(opt_cmd);
  opt_cmd->add_option("--sweeps", sweeps_str,
                      "comma-separated sweep .json files")->required();
  opt_cmd->add_option("--w-acc", cfg.weights.w_acc, "accuracy weight");
  opt_cmd->add_option("--w-sen", cfg.weights.w_sen, "sensitivity weight");
  opt_cmd->add_option("--w-com", cfg.weights.w_com, "complexity weight");
  opt_cmd->add_option("--pop", cfg.ga.population_size, "population size");
  opt_cmd->add_option("--gens", cfg.ga.generations, "generations");
  opt_cmd->add_option("--pc", cfg.ga.crossover_prob, "crossover probability");
  opt_cmd->add_option("--pm", cfg.ga.mutation_prob, "mutation probability");
  opt_cmd->add_option("--out", out_path, "optimizer report .json")->required();

  // partition
  auto* part_cmd = app.add_subcommand("partition", "export node sub-networks");
  add_common(part_cmd);
  part_cmd->add_option("--model", model_path, "trained model file")->required();
  part_cmd->add_option("--roles", roles_str, "node roles, e.g. edge,cloud");
  part_cmd->add_option("--out-dir", out_path, "output directory")->required();
  part_cmd->add_option("--edge-budget", edge_budget, "edge RAM budget bytes");

  // simulate
  auto* sim_cmd = app.add_subcommand("simulate", "duty-cycle energy report");
  add_common(sim_cmd);
  sim_cmd->add_option("--sweep", model_path, "sweep report .json")->required();
  sim_cmd->add_option("--out", out_path, "energy report CSV")->required();
  sim_cmd->add_option("--latency", latency_path, "per-threshold latency CSV");
  sim_cmd->add_option("--fraction-scale", cfg.fraction_scale,
                      "exit-rate to forward-fraction scale");
  sim_cmd->add_option("--calibrate-broadcast", calibrate_broadcast,
                      "fit t_tx/scale to 5 broadcast currents, e.g. "
                      "0.79,0.80,0.82,0.86,0.94");

  // verify
  auto* verify_cmd = app.add_subcommand("verify", "run artifact self-checks");
  add_common(verify_cmd);
  verify_cmd->add_option("--model", model_path, "trained model file")->required();
  verify_cmd->add_option("--beats", beats_path, "input .beats file")->required();
  verify_cmd->add_option("--plan", plan_dir, "exported partition directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand(gen)) {
      const auto beats =
          dcn::generate_synthetic(cfg.per_class, cfg.seed, cfg.noise_sigma);
      dcn::write_beats_file(out_path, beats);
      write_meta_sidecar(out_path, "gen", cfg);
      if (!csv_path.empty())
        dcn::write_beats_csv(csv_path, beats, meta_lines("gen", cfg));
      std::printf("wrote %zu beats to %s\n", beats.size(), out_path.c_str());
    } else if (app.got_subcommand(train_cmd)) {
      if (!placement_str.empty()) cfg.placement = dcn::parse_int_list(placement_str);
      const auto beats_file = dcn::read_beats_file(beats_path);
      const auto split = dcn::split(beats_file.beats, cfg.split_ratios, cfg.seed);
      const auto backbone = backbone_from(cfg);
      const auto model = dcn::attach_exits(
          backbone, dcn::ExitPlacement::of(cfg.placement), cfg.bottleneck);
      dcn::TrainConfig tc = cfg.train;
      tc.seed = cfg.seed;
      const auto result = dcn::train(model, split, tc);
      dcn::write_exit_model_file(out_path, model, result.params);
      write_meta_sidecar(out_path, "train", cfg);
      if (history_path.empty()) history_path = out_path + ".history.csv";
      dcn::write_history_csv(history_path, model, result.history,
                             meta_lines("train", cfg));
      const auto& best = result.history[std::size_t(result.best_epoch - 1)];
      std::printf("best epoch %d: final-head val accuracy %s\n",
                  result.best_epoch,
                  dcn::format_g9(best.val_head_accuracy.back()).c_str());
    } else if (app.got_subcommand(sweep_cmd)) {
      auto [model, params] = dcn::read_exit_model_file(model_path);
      const auto beats_file = dcn::read_beats_file(beats_path);
      const auto beats = select_split(beats_file.beats, split_which, cfg);
      if (!thresholds_str.empty()) {
        const auto r = dcn::parse_threshold_range(thresholds_str);
        cfg.threshold_lo = r[0];
        cfg.threshold_hi = r[1];
        cfg.threshold_step = r[2];
      }
      const auto plan = dcn::partition(model, params, model.placement(),
                                       default_roles(model.exits.size()));
      const auto grid = dcn::threshold_grid(cfg.threshold_lo, cfg.threshold_hi,
                                            cfg.threshold_step);
      const auto report = dcn::sweep(plan, params, beats, grid);
      dcn::write_sweep_csv(out_path + ".csv", report, meta_lines("sweep", cfg));
      dcn::write_sweep_json(out_path + ".json", report,
                            artifact_meta("sweep", cfg));
      if (!trace_path.empty()) {
        const auto batch = dcn::classify_batch(
            plan, params,
            dcn::GateConfig::uniform(trace_threshold, model.exits.size()),
            beats);
        dcn::write_trace_csv(trace_path, batch.decisions,
                             meta_lines("sweep", cfg));
      }
      std::printf("swept %zu thresholds over %zu beats\n", grid.size(),
                  beats.size());
    } else if (app.got_subcommand(opt_cmd)) {
      std::vector<dcn::SweepReport> reports;
      for (const auto& p : dcn::detail::split_list(sweeps_str))
        reports.push_back(dcn::read_sweep_json(p));
      const auto table = dcn::MetricsTable::from_sweeps(reports);
      const auto universe = dcn::CandidateUniverse::over(table);
      const auto result = dcn::optimize(universe, cfg.weights, cfg.ga);
      dcn::write_ga_report_json(out_path, result, cfg.weights, cfg.ga, table,
                                artifact_meta("optimize", cfg));
      std::printf("winner: placement %s threshold %s of=%s\n",
                  result.best.placement.to_string().c_str(),
                  dcn::format_g9(table.thresholds[std::size_t(
                                     result.best.threshold_index)])
                      .c_str(),
                  dcn::format_g9(result.score.of_value).c_str());
    } else if (app.got_subcommand(part_cmd)) {
      auto [model, params] = dcn::read_exit_model_file(model_path);
      const auto roles = roles_str.empty() ? default_roles(model.exits.size())
                                           : parse_roles(roles_str);
      const auto plan = dcn::partition(model, params, model.placement(), roles);
      dcn::export_partition(plan, params, out_path,
                            artifact_meta("partition", cfg));
      const auto budget = dcn::check_memory_budget(plan, edge_budget);
      for (const auto& e : budget.entries)
        std::printf("stage %zu (%s): %llu bytes%s\n", e.stage,
                    dcn::to_string(e.role),
                    (unsigned long long)e.bytes,
                    e.over_budget ? " OVER BUDGET" : "");
    } else if (app.got_subcommand(sim_cmd)) {
      const auto report = dcn::read_sweep_json(model_path);
      const auto rates =
          edge_exit_rates_at(report, dcn::deployment_thresholds());
      dcn::PowerProfile profile = cfg.power;
      double scale = cfg.fraction_scale;
      if (!calibrate_broadcast.empty()) {
        const auto targets = dcn::parse_double_list(calibrate_broadcast);
        std::vector<double> fractions;
        for (double er : rates) fractions.push_back(1.0 - er);
        const auto cal = dcn::calibrate_transmission(profile, fractions,
                                                     targets, dcn::TxMode::Broadcast);
        profile = cal.profile;
        scale = cal.fraction_scale;
        std::printf("calibrated t_tx=%s fraction_scale=%s max_rel_error=%s\n",
                    dcn::format_g9(profile.t_tx_s).c_str(),
                    dcn::format_g9(scale).c_str(),
                    dcn::format_g9(cal.max_rel_error).c_str());
      }
      const auto inputs = dcn::model_energy_inputs(profile, rates, scale);
      const auto energy = dcn::savings_report(inputs);
      dcn::write_energy_csv(out_path, energy, meta_lines("simulate", cfg));
      if (!latency_path.empty()) {
        std::ofstream f(latency_path, std::ios::trunc);
        if (!f) throw dcn::InvalidInput("cannot open: " + latency_path);
        for (const auto& line : meta_lines("simulate", cfg))
          f << "# " << line << "\n";
        f << "threshold,avg_latency_s\n";
        for (const auto& p : report.points) {
          double crossings = p.dtc * double(p.exit_rate.size());
          for (std::size_t e = 0; e < p.exit_rate.size(); ++e)
            crossings += p.exit_rate[e] * double(e);
          const double latency = crossings * cfg.link.fixed_delay_s +
                                 p.bytes_per_beat / cfg.link.bandwidth_bytes_per_s;
          f << dcn::format_g9(p.threshold) << ',' << dcn::format_g9(latency)
            << "\n";
        }
      }
      std::printf("savings: connected %s%% broadcast %s%% overall %s%%\n",
                  dcn::format_g9(100.0 * energy.savings_connected).c_str(),
                  dcn::format_g9(100.0 * energy.savings_broadcast).c_str(),
                  dcn::format_g9(100.0 * energy.savings_overall).c_str());
    } else if (app.got_subcommand(verify_cmd)) {
      return run_verify(model_path, beats_path, plan_dir);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
