#pragma once

// Joint training of an exit-augmented model: weighted cross-entropy at every
// exit head plus the final head, plain mini-batch SGD, best-epoch selection
// by final-head validation accuracy. Single-threaded and bitwise
// reproducible for a fixed seed.

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dcn/beatset.hpp"
#include "dcn/cascade.hpp"
#include "dcn/exit_graph.hpp"
#include "dcn/nn.hpp"

namespace dcn {

struct TrainConfig {
  int epochs = 32;
  int batch_size = 8;
  double learning_rate = 0.05;
  // one weight per head (exits first, final last); empty = all ones
  std::vector<double> exit_loss_weights;
  std::uint64_t seed = 1;
};

struct EpochStats {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  std::vector<double> train_head_accuracy;
  std::vector<double> val_head_accuracy;
};

struct TrainResult {
  ExitParams params;  // parameters of the best validation epoch
  std::vector<EpochStats> history;
  int best_epoch = 0;
};

// ---------------------------------------------------------------------------
// Full forward/backward through the exit-augmented graph
// ---------------------------------------------------------------------------

// Activation caches for one beat along the training path: every stage slice,
// and each branch's head, encoder and decoder chains. The boundary feature
// map flows through encoder -> decoder into the next slice, so the backbone
// adapts to the bottleneck during training.
template <typename S>
struct ExitForward {
  std::vector<std::vector<Tensor1T<S>>> seg_acts;
  std::vector<std::vector<Tensor1T<S>>> head_acts;
  std::vector<std::vector<Tensor1T<S>>> enc_acts;
  std::vector<std::vector<Tensor1T<S>>> dec_acts;

  const Tensor1T<S>& head_probs(std::size_t h) const {
    return h < head_acts.size() ? head_acts[h].back() : seg_acts.back().back();
  }
  std::size_t num_heads() const { return head_acts.size() + 1; }
};

template <typename S>
ExitForward<S> exit_forward(const ExitModel& model,
                            const ExitParamsT<S>& params, Tensor1T<S> input) {
  const auto cuts = model.cuts();
  ExitForward<S> fwd;
  Tensor1T<S> x = std::move(input);
  for (std::size_t s = 0; s <= model.exits.size(); ++s) {
    const std::size_t begin = s == 0 ? 0 : cuts[s - 1];
    const std::size_t end =
        s == model.exits.size() ? model.backbone.layers.size() : cuts[s];
    fwd.seg_acts.push_back(run_chain_trace<S>(
        std::span(model.backbone.layers.data() + begin, end - begin),
        std::span(params.backbone.layers.data() + begin, end - begin),
        std::move(x)));
    if (s < model.exits.size()) {
      const auto& branch = model.exits[s];
      const auto& features = fwd.seg_acts.back().back();
      const auto head = branch.head_model(model.backbone.num_classes);
      fwd.head_acts.push_back(run_chain_trace<S>(
          head.layers, params.branches[s].head.layers, features));
      const auto enc = branch.encoder_model(model.backbone.num_classes);
      std::vector<LayerParamsT<S>> enc_params{params.branches[s].encoder};
      fwd.enc_acts.push_back(
          run_chain_trace<S>(enc.layers, enc_params, features));
      const auto dec = branch.decoder_model(model.backbone.num_classes);
      std::vector<LayerParamsT<S>> dec_params{params.branches[s].decoder,
                                              LayerParamsT<S>{}};
      fwd.dec_acts.push_back(run_chain_trace<S>(dec.layers, dec_params,
                                                fwd.enc_acts.back().back()));
      x = fwd.dec_acts.back().back();
    }
  }
  return fwd;
}

// Joint loss over all heads for one beat.
template <typename S>
double joint_loss(const ExitForward<S>& fwd, int target,
                  const std::vector<double>& weights) {
  double loss = 0.0;
  for (std::size_t h = 0; h < fwd.num_heads(); ++h)
    loss += weights[h] * cross_entropy(fwd.head_probs(h), target);
  return loss;
}

namespace detail {

template <typename S>
void add_layer_grads(LayerParamsT<S>& dst, const LayerParamsT<S>& src) {
  if (dst.weights.size() != src.weights.size())
    dst.weights.assign(src.weights.size(), S(0));
  if (dst.biases.size() != src.biases.size())
    dst.biases.assign(src.biases.size(), S(0));
  for (std::size_t i = 0; i < src.weights.size(); ++i)
    dst.weights[i] += src.weights[i];
  for (std::size_t i = 0; i < src.biases.size(); ++i)
    dst.biases[i] += src.biases[i];
}

// Fused softmax+CE delta at the softmax input, scaled by the head weight.
template <typename S>
Tensor1T<S> ce_delta(const Tensor1T<S>& probs, int target, double weight) {
  Tensor1T<S> d(probs.channels, probs.length);
  for (int i = 0; i < probs.elements(); ++i)
    d.data[i] = S(weight * (double(probs.data[i]) - (i == target ? 1.0 : 0.0)));
  return d;
}

}  // namespace detail

// Gradients of the joint loss w.r.t. every parameter (backbone + branches).
// Returned in the same container layout as ExitParamsT.
template <typename S>
ExitParamsT<S> joint_backward(const ExitModel& model,
                              const ExitParamsT<S>& params,
                              const ExitForward<S>& fwd, int target,
                              const std::vector<double>& weights) {
  const auto cuts = model.cuts();
  ExitParamsT<S> grads;
  grads.backbone.layers.resize(model.backbone.layers.size());
  grads.branches.resize(model.exits.size());

  Tensor1T<S> grad_from_next;  // gradient at the current segment's output
  for (std::size_t s = model.exits.size() + 1; s-- > 0;) {
    const std::size_t begin = s == 0 ? 0 : cuts[s - 1];
    const std::size_t end =
        s == model.exits.size() ? model.backbone.layers.size() : cuts[s];
    const auto& acts = fwd.seg_acts[s];
    Tensor1T<S> grad_out;

    if (s == model.exits.size()) {
      // final head: fused CE delta enters before the tail softmax
      const auto& probs = acts.back();
      Tensor1T<S> delta = detail::ce_delta(probs, target, weights[s]);
      auto chain = backward_chain<S>(
          std::span(model.backbone.layers.data() + begin, end - begin - 1),
          std::span(params.backbone.layers.data() + begin, end - begin - 1),
          std::span(acts.data(), end - begin),  // up to the softmax input
          std::move(delta));
      for (std::size_t i = 0; i < chain.layer_grads.size(); ++i)
        detail::add_layer_grads(grads.backbone.layers[begin + i],
                                chain.layer_grads[i]);
      grad_from_next = std::move(chain.input_grad);
      continue;
    }

    // gradient arriving from the next segment via decoder -> encoder
    const auto& branch = model.exits[s];
    const auto dec = branch.decoder_model(model.backbone.num_classes);
    std::vector<LayerParamsT<S>> dec_params{params.branches[s].decoder,
                                            LayerParamsT<S>{}};
    auto dec_chain =
        backward_chain<S>(dec.layers, dec_params, fwd.dec_acts[s],
                          std::move(grad_from_next));
    detail::add_layer_grads(grads.branches[s].decoder,
                            dec_chain.layer_grads[0]);

    const auto enc = branch.encoder_model(model.backbone.num_classes);
    std::vector<LayerParamsT<S>> enc_params{params.branches[s].encoder};
    auto enc_chain = backward_chain<S>(enc.layers, enc_params, fwd.enc_acts[s],
                                       std::move(dec_chain.input_grad));
    detail::add_layer_grads(grads.branches[s].encoder,
                            enc_chain.layer_grads[0]);

    // head branch at this boundary (fused CE, softmax excluded)
    const auto head = branch.head_model(model.backbone.num_classes);
    const auto& head_acts = fwd.head_acts[s];
    Tensor1T<S> delta = detail::ce_delta(head_acts.back(), target, weights[s]);
    auto head_chain = backward_chain<S>(
        std::span(head.layers.data(), head.layers.size() - 1),
        std::span(params.branches[s].head.layers.data(),
                  head.layers.size() - 1),
        std::span(head_acts.data(), head.layers.size()),
        std::move(delta));
    grads.branches[s].head.layers = std::move(head_chain.layer_grads);
    grads.branches[s].head.layers.emplace_back();  // softmax

    // boundary feature gradient: transmission path + head branch
    Tensor1T<S> boundary_grad = std::move(enc_chain.input_grad);
    for (std::size_t i = 0; i < boundary_grad.data.size(); ++i)
      boundary_grad.data[i] += head_chain.input_grad.data[i];

    auto chain = backward_chain<S>(
        std::span(model.backbone.layers.data() + begin, end - begin),
        std::span(params.backbone.layers.data() + begin, end - begin),
        std::span(acts.data(), acts.size()), std::move(boundary_grad));
    for (std::size_t i = 0; i < chain.layer_grads.size(); ++i)
      detail::add_layer_grads(grads.backbone.layers[begin + i],
                              chain.layer_grads[i]);
    grad_from_next = std::move(chain.input_grad);
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Gradient accumulation and SGD
// ---------------------------------------------------------------------------

inline ExitParamsT<double> zero_grads_like(const ExitModel& model) {
  ExitParamsT<double> z;
  z.backbone.layers.resize(model.backbone.layers.size());
  for (std::size_t i = 0; i < model.backbone.layers.size(); ++i) {
    z.backbone.layers[i].weights.assign(weight_count(model.backbone.layers[i]),
                                        0.0);
    z.backbone.layers[i].biases.assign(bias_count(model.backbone.layers[i]),
                                       0.0);
  }
  for (const auto& branch : model.exits) {
    ExitBranchParamsT<double> bp;
    for (const auto& l : branch.head) {
      LayerParamsT<double> lp;
      lp.weights.assign(weight_count(l), 0.0);
      lp.biases.assign(bias_count(l), 0.0);
      bp.head.layers.push_back(std::move(lp));
    }
    bp.encoder.weights.assign(weight_count(branch.encoder), 0.0);
    bp.encoder.biases.assign(bias_count(branch.encoder), 0.0);
    bp.decoder.weights.assign(weight_count(branch.decoder), 0.0);
    bp.decoder.biases.assign(bias_count(branch.decoder), 0.0);
    z.branches.push_back(std::move(bp));
  }
  return z;
}

namespace detail {

inline void add_into(LayerParamsT<double>& acc, const LayerParamsT<float>& g) {
  for (std::size_t i = 0; i < g.weights.size(); ++i)
    acc.weights[i] += double(g.weights[i]);
  for (std::size_t i = 0; i < g.biases.size(); ++i)
    acc.biases[i] += double(g.biases[i]);
}

inline void step_params(LayerParamsT<float>& p, const LayerParamsT<double>& g,
                        double scaled_lr) {
  for (std::size_t i = 0; i < p.weights.size(); ++i)
    p.weights[i] = float(double(p.weights[i]) - scaled_lr * g.weights[i]);
  for (std::size_t i = 0; i < p.biases.size(); ++i)
    p.biases[i] = float(double(p.biases[i]) - scaled_lr * g.biases[i]);
}

}  // namespace detail

// Per-batch gradients accumulate into 64-bit buffers in a fixed order.
inline void accumulate_grads(ExitParamsT<double>& acc,
                             const ExitParamsT<float>& g) {
  for (std::size_t i = 0; i < g.backbone.layers.size(); ++i)
    detail::add_into(acc.backbone.layers[i], g.backbone.layers[i]);
  for (std::size_t b = 0; b < g.branches.size(); ++b) {
    for (std::size_t i = 0; i < g.branches[b].head.layers.size(); ++i)
      detail::add_into(acc.branches[b].head.layers[i],
                       g.branches[b].head.layers[i]);
    detail::add_into(acc.branches[b].encoder, g.branches[b].encoder);
    detail::add_into(acc.branches[b].decoder, g.branches[b].decoder);
  }
}

inline void apply_sgd_update(ExitParams& params, const ExitParamsT<double>& g,
                             double scaled_lr) {
  for (std::size_t i = 0; i < params.backbone.layers.size(); ++i)
    detail::step_params(params.backbone.layers[i], g.backbone.layers[i],
                        scaled_lr);
  for (std::size_t b = 0; b < params.branches.size(); ++b) {
    for (std::size_t i = 0; i < params.branches[b].head.layers.size(); ++i)
      detail::step_params(params.branches[b].head.layers[i],
                          g.branches[b].head.layers[i], scaled_lr);
    detail::step_params(params.branches[b].encoder, g.branches[b].encoder,
                        scaled_lr);
    detail::step_params(params.branches[b].decoder, g.branches[b].decoder,
                        scaled_lr);
  }
}

// ---------------------------------------------------------------------------
// Head evaluation
// ---------------------------------------------------------------------------

struct HeadEvaluation {
  std::vector<double> accuracy;                      // per head
  std::vector<std::array<double, kNumClasses>> recall;  // per head, per class
};

inline HeadEvaluation evaluate_heads(const ExitModel& model,
                                     const ExitParams& params,
                                     const std::vector<BeatRecord>& beats) {
  if (beats.empty()) throw InvalidInput("evaluate_heads: empty beat set");
  const std::size_t heads = model.num_heads();
  std::vector<std::size_t> correct(heads, 0);
  std::vector<std::array<std::size_t, kNumClasses>> class_correct(
      heads, std::array<std::size_t, kNumClasses>{});
  std::array<std::size_t, kNumClasses> class_total{};
  for (const auto& beat : beats) {
    const auto fwd =
        exit_forward(model, params, beat_input<float>(beat));
    class_total[int(beat.label)] += 1;
    for (std::size_t h = 0; h < heads; ++h) {
      const int cls = argmax_index(fwd.head_probs(h));
      if (cls == int(beat.label)) {
        correct[h] += 1;
        class_correct[h][cls] += 1;
      }
    }
  }
  HeadEvaluation out;
  for (std::size_t h = 0; h < heads; ++h) {
    out.accuracy.push_back(double(correct[h]) / double(beats.size()));
    std::array<double, kNumClasses> rec{};
    for (int c = 0; c < kNumClasses; ++c)
      rec[c] = class_total[c] == 0
                   ? 0.0
                   : double(class_correct[h][c]) / double(class_total[c]);
    out.recall.push_back(rec);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

inline std::vector<double> resolve_head_weights(const ExitModel& model,
                                                const TrainConfig& config) {
  std::vector<double> w = config.exit_loss_weights;
  if (w.empty()) w.assign(model.num_heads(), 1.0);
  if (w.size() != model.num_heads())
    throw InvalidInput("train: need one loss weight per head");
  for (double v : w)
    if (!(v > 0.0)) throw InvalidInput("train: loss weights must be positive");
  return w;
}

inline TrainResult train(const ExitModel& model, const DatasetSplit& split,
                         const TrainConfig& config) {
  if (split.train.empty()) throw InvalidInput("train: empty training set");
  if (config.epochs < 1) throw InvalidInput("train: epochs must be >= 1");
  if (config.batch_size < 1 ||
      std::size_t(config.batch_size) > split.train.size())
    throw InvalidInput("train: batch size must be in [1, train size]");
  if (config.learning_rate < 0.0)
    throw InvalidInput("train: learning rate must be >= 0");
  const auto weights = resolve_head_weights(model, config);

  Rng rng(config.seed);
  ExitParams params =
      init_exit_params<float>(model, init_params<float>(model.backbone, rng),
                              config.seed ^ 0x5eedu);

  const std::size_t heads = model.num_heads();
  TrainResult result;
  // best epoch: highest final-head validation accuracy; ties prefer the
  // higher mean exit-head validation accuracy, then the earlier epoch
  // (earliest-only tie-breaking would freeze at the first epoch where the
  // final head saturates, discarding all later exit-head progress)
  double best_val = -1.0;
  double best_exit_val = -1.0;
  std::vector<std::size_t> order(split.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffle_in_place(order, rng);
    double loss_sum = 0.0;
    std::vector<std::size_t> train_correct(heads, 0);

    for (std::size_t batch_start = 0; batch_start < order.size();
         batch_start += std::size_t(config.batch_size)) {
      const std::size_t batch_end = std::min(
          batch_start + std::size_t(config.batch_size), order.size());
      const double batch_n = double(batch_end - batch_start);

      // double accumulators, reduced in batch order
      ExitParamsT<double> acc = zero_grads_like(model);
      for (std::size_t bi = batch_start; bi < batch_end; ++bi) {
        const BeatRecord& beat = split.train[order[bi]];
        const int target = int(beat.label);
        const auto fwd = exit_forward(model, params, beat_input<float>(beat));
        loss_sum += joint_loss(fwd, target, weights);
        for (std::size_t h = 0; h < heads; ++h)
          if (argmax_index(fwd.head_probs(h)) == target)
            train_correct[h] += 1;
        const auto grads = joint_backward(model, params, fwd, target, weights);
        accumulate_grads(acc, grads);
      }
      apply_sgd_update(params, acc, config.learning_rate / batch_n);
    }

    const double train_loss = loss_sum / double(order.size());
    if (!std::isfinite(train_loss))
      throw TrainingDiverged("train: loss is not finite", epoch);

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = train_loss;
    for (std::size_t h = 0; h < heads; ++h)
      stats.train_head_accuracy.push_back(double(train_correct[h]) /
                                          double(order.size()));
    if (!split.validation.empty()) {
      const auto val = evaluate_heads(model, params, split.validation);
      stats.val_head_accuracy = val.accuracy;
    } else {
      stats.val_head_accuracy.assign(heads, 0.0);
    }
    result.history.push_back(stats);

    if (!split.validation.empty()) {
      const double val_final = stats.val_head_accuracy.back();
      double exit_val = 0.0;
      for (std::size_t h = 0; h + 1 < heads; ++h)
        exit_val += stats.val_head_accuracy[h];
      if (heads > 1) exit_val /= double(heads - 1);
      if (val_final > best_val ||
          (val_final == best_val && exit_val > best_exit_val)) {
        best_val = val_final;
        best_exit_val = exit_val;
        result.best_epoch = epoch;
        result.params = params;
      }
    }
  }
  if (result.best_epoch == 0) {  // no validation set: keep final params
    result.best_epoch = config.epochs;
    result.params = std::move(params);
  }
  return result;
}

// Training history export: epoch, per-head train/val accuracy, joint loss.
inline void write_history_csv(const std::filesystem::path& path,
                              const ExitModel& model,
                              const std::vector<EpochStats>& history,
                              const std::vector<std::string>& meta = {}) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw InvalidInput("cannot open for writing: " + path.string());
  for (const auto& line : meta) f << "# " << line << "\n";
  std::vector<std::string> head_names;
  for (const auto& e : model.exits)
    head_names.push_back("eep" + std::to_string(e.at_boundary));
  head_names.push_back("final");
  f << "epoch";
  for (const auto& h : head_names) f << ",train_acc_" << h;
  for (const auto& h : head_names) f << ",val_acc_" << h;
  f << ",train_loss\n";
  for (const auto& s : history) {
    f << s.epoch;
    for (double a : s.train_head_accuracy) f << ',' << format_g9(a);
    for (double a : s.val_head_accuracy) f << ',' << format_g9(a);
    f << ',' << format_g9(s.train_loss) << "\n";
  }
}

}  // namespace dcn
