#pragma once

// Confidence-gated multistage inference: run a stage, take the head's max
// probability, exit when it clears the threshold (strict >), otherwise
// compress through the encoder and hand the bottleneck to the next stage.
// The final stage always exits. PassThrough mode forwards raw feature maps
// and bypasses the encoder/decoder pair; it exists for equivalence testing.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dcn/beatset.hpp"
#include "dcn/exit_graph.hpp"
#include "dcn/nn.hpp"

namespace dcn {

enum class GateMode : std::uint8_t { Gated = 0, PassThrough = 1 };

struct GateConfig {
  std::vector<double> thresholds;  // one per exit branch, each in [0,1]
  GateMode mode = GateMode::Gated;

  static GateConfig uniform(double threshold, std::size_t num_exits,
                            GateMode mode = GateMode::Gated) {
    GateConfig g;
    g.thresholds.assign(num_exits, threshold);
    g.mode = mode;
    return g;
  }
};

struct ExitDecision {
  std::string source_id;
  std::uint32_t beat_index = 0;
  AamiClass true_label = AamiClass::N;
  int exit_stage = 0;  // 0-based; last stage is the final exit point
  double pred = 0.0;   // max softmax probability of the emitting head
  AamiClass predicted_class = AamiClass::N;
  std::uint64_t flops_spent = 0;
  std::uint64_t bytes_transmitted = 0;
};

struct BatchTrace {
  std::vector<ExitDecision> decisions;
  std::vector<std::uint64_t> exits_per_stage;
};

// One beat as the (1, 260) network input tensor.
template <typename S = float>
Tensor1T<S> beat_input(const BeatRecord& beat) {
  Tensor1T<S> t(1, kBeatLength);
  for (int i = 0; i < kBeatLength; ++i) t.data[i] = S(beat.samples[i]);
  return t;
}

// First index of the maximum (ties resolve to the lowest class index).
template <typename S>
int argmax_index(const Tensor1T<S>& probs) {
  int best = 0;
  for (int i = 1; i < probs.elements(); ++i)
    if (probs.data[i] > probs.data[best]) best = i;
  return best;
}

namespace detail {

inline void validate_gate(const PartitionPlan& plan, const GateConfig& gate) {
  if (gate.thresholds.size() != plan.model.exits.size())
    throw InvalidInput("gate: need one threshold per exit branch (" +
                       std::to_string(plan.model.exits.size()) + ")");
  for (double t : gate.thresholds)
    if (!(t >= 0.0 && t <= 1.0))
      throw InvalidInput("gate: thresholds must lie in [0,1]");
}

template <typename S>
std::span<const LayerSpec> stage_layers(const PartitionPlan& plan,
                                        std::size_t s) {
  const auto& st = plan.stages[s];
  return std::span(plan.model.backbone.layers.data() + st.layer_begin,
                   st.layer_end - st.layer_begin);
}

}  // namespace detail

// Everything the gated path would compute for one beat, with no thresholds
// applied: per-stage head confidence and class, and the cumulative FLOPs /
// transmitted bytes a beat pays when it exits at each stage. Thresholded
// decisions are pure arithmetic over this trace, which is what makes dense
// threshold sweeps cheap.
struct CascadeBeatTrace {
  std::vector<double> preds;            // per stage (last = final head)
  std::vector<AamiClass> classes;       // per stage
  std::vector<std::uint64_t> cum_flops;  // cost if exiting at stage s
  std::vector<std::uint64_t> cum_bytes;  // bytes if exiting at stage s
};

inline CascadeBeatTrace compute_trace(const PartitionPlan& plan,
                                      const ExitParams& params,
                                      const BeatRecord& beat) {
  if (!all_finite(beat.samples))
    throw InvalidInput("classify: beat contains non-finite samples");
  const ExitModel& model = plan.model;
  CascadeBeatTrace trace;
  Tensor1 x = beat_input<float>(beat);
  std::uint64_t flops = 0;
  std::uint64_t bytes = 0;
  for (std::size_t s = 0; s < plan.stages.size(); ++s) {
    const auto& st = plan.stages[s];
    if (s > 0) {
      const auto& branch = model.exits[s - 1];
      const auto dec = branch.decoder_model(model.backbone.num_classes);
      ParamStore dec_params;
      dec_params.layers.push_back(params.branches[s - 1].decoder);
      dec_params.layers.emplace_back();
      x = run_chain<float>(dec.layers, dec_params.layers, std::move(x));
      flops += st.decoder_flops;
    }
    x = run_chain<float>(
        detail::stage_layers<float>(plan, s),
        std::span(params.backbone.layers.data() + st.layer_begin,
                  st.layer_end - st.layer_begin),
        std::move(x));
    flops += st.slice_flops;
    Tensor1 probs;
    if (s < model.exits.size()) {
      const auto& branch = model.exits[s];
      const auto head = branch.head_model(model.backbone.num_classes);
      probs = run_chain<float>(head.layers, params.branches[s].head.layers, x);
      flops += st.head_flops;
    } else {
      probs = x;  // backbone tail ends in softmax
    }
    const int cls = argmax_index(probs);
    trace.preds.push_back(double(probs.data[cls]));
    trace.classes.push_back(AamiClass(cls));
    trace.cum_flops.push_back(flops);
    trace.cum_bytes.push_back(bytes);
    if (s < model.exits.size()) {
      // cost of forwarding past this stage, paid only when not exiting
      const auto& branch = model.exits[s];
      const auto enc = branch.encoder_model(model.backbone.num_classes);
      ParamStore enc_params;
      enc_params.layers.push_back(params.branches[s].encoder);
      x = run_chain<float>(enc.layers, enc_params.layers, std::move(x));
      flops += st.encoder_flops;
      bytes += 4ull * std::uint64_t(branch.bottleneck_size);
    }
  }
  return trace;
}

// Exit stage for a trace under the given thresholds: first stage whose head
// clears its threshold strictly, else the final stage.
inline int decide_exit_stage(const CascadeBeatTrace& trace,
                             const std::vector<double>& thresholds) {
  for (std::size_t s = 0; s + 1 < trace.preds.size(); ++s)
    if (trace.preds[s] > thresholds[s]) return int(s);
  return int(trace.preds.size()) - 1;
}

inline ExitDecision decision_from_trace(const CascadeBeatTrace& trace,
                                        const std::vector<double>& thresholds,
                                        const BeatRecord& beat) {
  ExitDecision d;
  d.source_id = beat.source_id;
  d.beat_index = beat.beat_index;
  d.true_label = beat.label;
  d.exit_stage = decide_exit_stage(trace, thresholds);
  d.pred = trace.preds[std::size_t(d.exit_stage)];
  d.predicted_class = trace.classes[std::size_t(d.exit_stage)];
  d.flops_spent = trace.cum_flops[std::size_t(d.exit_stage)];
  d.bytes_transmitted = trace.cum_bytes[std::size_t(d.exit_stage)];
  return d;
}

// Literal staged executor: stages run in order and the beat stops at the
// first confident exit, so later stages are never computed. Matches
// decision_from_trace(compute_trace(...)) exactly.
inline ExitDecision classify(const PartitionPlan& plan, const ExitParams& params,
                             const GateConfig& gate, const BeatRecord& beat) {
  detail::validate_gate(plan, gate);
  if (!all_finite(beat.samples))
    throw InvalidInput("classify: beat contains non-finite samples");
  const ExitModel& model = plan.model;
  const bool gated = gate.mode == GateMode::Gated;

  ExitDecision d;
  d.source_id = beat.source_id;
  d.beat_index = beat.beat_index;
  d.true_label = beat.label;

  Tensor1 x = beat_input<float>(beat);
  std::uint64_t flops = 0;
  std::uint64_t bytes = 0;
  for (std::size_t s = 0; s < plan.stages.size(); ++s) {
    const auto& st = plan.stages[s];
    if (s > 0 && gated) {
      const auto& branch = model.exits[s - 1];
      const auto dec = branch.decoder_model(model.backbone.num_classes);
      ParamStore dec_params;
      dec_params.layers.push_back(params.branches[s - 1].decoder);
      dec_params.layers.emplace_back();
      x = run_chain<float>(dec.layers, dec_params.layers, std::move(x));
      flops += st.decoder_flops;
    }
    x = run_chain<float>(
        detail::stage_layers<float>(plan, s),
        std::span(params.backbone.layers.data() + st.layer_begin,
                  st.layer_end - st.layer_begin),
        std::move(x));
    flops += st.slice_flops;
    if (s < model.exits.size()) {
      const auto& branch = model.exits[s];
      const auto head = branch.head_model(model.backbone.num_classes);
      const Tensor1 probs =
          run_chain<float>(head.layers, params.branches[s].head.layers, x);
      flops += st.head_flops;
      const int cls = argmax_index(probs);
      const double pred = double(probs.data[cls]);
      if (pred > gate.thresholds[s]) {
        d.exit_stage = int(s);
        d.pred = pred;
        d.predicted_class = AamiClass(cls);
        d.flops_spent = flops;
        d.bytes_transmitted = bytes;
        return d;
      }
      if (gated) {
        const auto enc = branch.encoder_model(model.backbone.num_classes);
        ParamStore enc_params;
        enc_params.layers.push_back(params.branches[s].encoder);
        x = run_chain<float>(enc.layers, enc_params.layers, std::move(x));
        flops += st.encoder_flops;
        bytes += 4ull * std::uint64_t(branch.bottleneck_size);
      } else {
        bytes += 4ull * std::uint64_t(branch.feature_size());
      }
    } else {
      const int cls = argmax_index(x);
      d.exit_stage = int(s);
      d.pred = double(x.data[cls]);
      d.predicted_class = AamiClass(cls);
      d.flops_spent = flops;
      d.bytes_transmitted = bytes;
      return d;
    }
  }
  throw ShapeError("classify: plan has no stages");
}

// Run every stage in lossless pass-through (decoder bypassed, raw features
// forwarded, no gating) and return the final stage's probability vector,
// for equivalence checks against the monolithic backbone forward.
inline Tensor1 passthrough_forward(const PartitionPlan& plan,
                                   const ExitParams& params,
                                   const BeatRecord& beat) {
  Tensor1 x = beat_input<float>(beat);
  for (std::size_t s = 0; s < plan.stages.size(); ++s) {
    const auto& st = plan.stages[s];
    x = run_chain<float>(
        detail::stage_layers<float>(plan, s),
        std::span(params.backbone.layers.data() + st.layer_begin,
                  st.layer_end - st.layer_begin),
        std::move(x));
  }
  return x;
}

// Order-preserving map of classify plus per-stage exit counts.
inline BatchTrace classify_batch(const PartitionPlan& plan,
                                 const ExitParams& params,
                                 const GateConfig& gate,
                                 const std::vector<BeatRecord>& beats) {
  detail::validate_gate(plan, gate);
  BatchTrace out;
  out.exits_per_stage.assign(plan.stages.size(), 0);
  out.decisions.reserve(beats.size());
  for (const auto& beat : beats) {
    out.decisions.push_back(classify(plan, params, gate, beat));
    out.exits_per_stage[std::size_t(out.decisions.back().exit_stage)] += 1;
  }
  return out;
}

// Decision trace export:
// `beat_id,exit_stage,pred,predicted_class,true_class,flops,bytes`.
inline void write_trace_csv(const std::filesystem::path& path,
                            const std::vector<ExitDecision>& decisions,
                            const std::vector<std::string>& meta = {}) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw InvalidInput("cannot open for writing: " + path.string());
  for (const auto& line : meta) f << "# " << line << "\n";
  f << "beat_id,exit_stage,pred,predicted_class,true_class,flops,bytes\n";
  for (const auto& d : decisions) {
    f << d.source_id << '#' << d.beat_index << ',' << d.exit_stage << ','
      << format_g9(d.pred) << ',' << to_string(d.predicted_class) << ','
      << to_string(d.true_label) << ',' << d.flops_spent << ','
      << d.bytes_transmitted << "\n";
  }
}

}  // namespace dcn
