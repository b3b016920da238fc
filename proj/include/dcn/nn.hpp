#pragma once

// Minimal 1-D neural-network engine: layer specs with shape propagation,
// seeded initialization, forward/backward passes and per-layer FLOPs
// accounting. Kernels are templated on the scalar type; production code
// runs float32 with 64-bit accumulation, oracle tests instantiate double.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dcn/common.hpp"

namespace dcn {

// ---------------------------------------------------------------------------
// Layer and model specs
// ---------------------------------------------------------------------------

enum class LayerKind : std::uint8_t {
  Conv1d = 0,
  ReLU = 1,
  MaxPool1d = 2,
  Flatten = 3,
  Dense = 4,
  Softmax = 5,
  GlobalAvgPool = 6,
  Reshape = 7,
};

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::Conv1d: return "conv1d";
    case LayerKind::ReLU: return "relu";
    case LayerKind::MaxPool1d: return "max_pool1d";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::Dense: return "dense";
    case LayerKind::Softmax: return "softmax";
    case LayerKind::GlobalAvgPool: return "global_avg_pool";
    case LayerKind::Reshape: return "reshape";
  }
  return "?";
}

struct Shape1 {
  int channels = 0;
  int length = 0;
  int elements() const { return channels * length; }
  bool operator==(const Shape1&) const = default;
};

struct LayerSpec {
  LayerKind kind = LayerKind::ReLU;
  // Conv1d
  int in_channels = 0, out_channels = 0, kernel_size = 0, stride = 0,
      padding = 0;
  // MaxPool1d
  int window = 0, pool_stride = 0;
  // Dense
  int in_features = 0, out_features = 0;
  // Reshape target
  int reshape_channels = 0, reshape_length = 0;

  static LayerSpec conv1d(int in_c, int out_c, int kernel, int stride = 1,
                          int padding = 0) {
    if (in_c <= 0 || out_c <= 0 || kernel <= 0 || stride <= 0 || padding < 0)
      throw InvalidInput("conv1d: bad dimensions");
    LayerSpec l;
    l.kind = LayerKind::Conv1d;
    l.in_channels = in_c;
    l.out_channels = out_c;
    l.kernel_size = kernel;
    l.stride = stride;
    l.padding = padding;
    return l;
  }
  static LayerSpec relu() {
    LayerSpec l;
    l.kind = LayerKind::ReLU;
    return l;
  }
  static LayerSpec max_pool1d(int window, int stride) {
    if (window <= 0 || stride <= 0) throw InvalidInput("max_pool1d: bad dims");
    LayerSpec l;
    l.kind = LayerKind::MaxPool1d;
    l.window = window;
    l.pool_stride = stride;
    return l;
  }
  static LayerSpec flatten() {
    LayerSpec l;
    l.kind = LayerKind::Flatten;
    return l;
  }
  static LayerSpec dense(int in_features, int out_features) {
    if (in_features <= 0 || out_features <= 0)
      throw InvalidInput("dense: bad dimensions");
    LayerSpec l;
    l.kind = LayerKind::Dense;
    l.in_features = in_features;
    l.out_features = out_features;
    return l;
  }
  static LayerSpec softmax() {
    LayerSpec l;
    l.kind = LayerKind::Softmax;
    return l;
  }
  static LayerSpec global_avg_pool() {
    LayerSpec l;
    l.kind = LayerKind::GlobalAvgPool;
    return l;
  }
  static LayerSpec reshape(int channels, int length) {
    if (channels <= 0 || length <= 0) throw InvalidInput("reshape: bad dims");
    LayerSpec l;
    l.kind = LayerKind::Reshape;
    l.reshape_channels = channels;
    l.reshape_length = length;
    return l;
  }
};

inline Shape1 output_shape(const LayerSpec& l, Shape1 in) {
  switch (l.kind) {
    case LayerKind::Conv1d: {
      if (in.channels != l.in_channels)
        throw ShapeError("conv1d: expected " + std::to_string(l.in_channels) +
                         " input channels, got " + std::to_string(in.channels));
      const int padded = in.length + 2 * l.padding;
      if (padded < l.kernel_size) throw ShapeError("conv1d: input too short");
      return {l.out_channels, (padded - l.kernel_size) / l.stride + 1};
    }
    case LayerKind::ReLU:
      return in;
    case LayerKind::MaxPool1d: {
      if (in.length < l.window) throw ShapeError("max_pool1d: input too short");
      return {in.channels, (in.length - l.window) / l.pool_stride + 1};
    }
    case LayerKind::Flatten:
      return {1, in.elements()};
    case LayerKind::Dense:
      if (in.elements() != l.in_features)
        throw ShapeError("dense: expected " + std::to_string(l.in_features) +
                         " features, got " + std::to_string(in.elements()));
      return {1, l.out_features};
    case LayerKind::Softmax:
      return in;
    case LayerKind::GlobalAvgPool:
      return {in.channels, 1};
    case LayerKind::Reshape:
      if (in.elements() != l.reshape_channels * l.reshape_length)
        throw ShapeError("reshape: element count mismatch");
      return {l.reshape_channels, l.reshape_length};
  }
  throw ShapeError("unknown layer kind");
}

// FLOPs convention: one multiply-accumulate is 2 FLOPs; comparisons and
// activations are 1 FLOP per element; softmax is 3 per element (exp, sum,
// divide); global average pooling is 1 add per input element; pure
// reshapes are free. Applied uniformly so relative reductions are
// convention-independent.
inline std::uint64_t flops_of_layer(const LayerSpec& l, Shape1 in) {
  const Shape1 out = output_shape(l, in);
  switch (l.kind) {
    case LayerKind::Conv1d:
      return 2ull * std::uint64_t(l.out_channels) * std::uint64_t(out.length) *
             std::uint64_t(l.in_channels) * std::uint64_t(l.kernel_size);
    case LayerKind::Dense:
      return 2ull * std::uint64_t(l.in_features) * std::uint64_t(l.out_features);
    case LayerKind::ReLU:
    case LayerKind::MaxPool1d:
      return std::uint64_t(out.elements());
    case LayerKind::Softmax:
      return 3ull * std::uint64_t(out.elements());
    case LayerKind::GlobalAvgPool:
      return std::uint64_t(in.elements());
    case LayerKind::Flatten:
    case LayerKind::Reshape:
      return 0;
  }
  return 0;
}

struct ModelSpec {
  std::vector<LayerSpec> layers;
  Shape1 input_shape{1, kBeatLength};
  int num_classes = kNumClasses;

  // Validating factory. Models must have at least one layer and every
  // consecutive pair of layer shapes must be compatible.
  static ModelSpec chain(std::vector<LayerSpec> layers,
                         Shape1 input_shape = {1, kBeatLength},
                         int num_classes = kNumClasses) {
    if (layers.empty())
      throw FormatError("model must contain at least one layer", 0);
    ModelSpec m;
    m.layers = std::move(layers);
    m.input_shape = input_shape;
    m.num_classes = num_classes;
    (void)m.shapes();  // throws ShapeError on incompatibility
    return m;
  }

  // Per-layer output shapes; shapes()[i] is the output of layers[i].
  std::vector<Shape1> shapes() const {
    std::vector<Shape1> out;
    out.reserve(layers.size());
    Shape1 cur = input_shape;
    for (const auto& l : layers) {
      cur = output_shape(l, cur);
      out.push_back(cur);
    }
    return out;
  }

  Shape1 output() const { return shapes().back(); }

  int num_conv_layers() const {
    int n = 0;
    for (const auto& l : layers)
      if (l.kind == LayerKind::Conv1d) ++n;
    return n;
  }

  std::uint64_t total_flops() const {
    std::uint64_t sum = 0;
    Shape1 cur = input_shape;
    for (const auto& l : layers) {
      sum += flops_of_layer(l, cur);
      cur = output_shape(l, cur);
    }
    return sum;
  }
};

// Baseline classifier: six conv blocks (kernel 5, stride 1, padding 2,
// each followed by ReLU and 2x max pooling), channel progression
// 1-8-16-16-32-32-64, then Flatten, Dense(256->32), ReLU, Dense(32->5),
// Softmax, on a (1, 260) input.
inline ModelSpec default_backbone(
    const std::vector<int>& channels = {8, 16, 16, 32, 32, 64},
    int dense_hidden = 32) {
  if (channels.empty()) throw InvalidInput("default_backbone: no channels");
  std::vector<LayerSpec> layers;
  int in_c = 1;
  Shape1 cur{1, kBeatLength};
  for (int out_c : channels) {
    layers.push_back(LayerSpec::conv1d(in_c, out_c, 5, 1, 2));
    layers.push_back(LayerSpec::relu());
    layers.push_back(LayerSpec::max_pool1d(2, 2));
    cur = output_shape(layers[layers.size() - 3], cur);
    cur = output_shape(layers[layers.size() - 2], cur);
    cur = output_shape(layers.back(), cur);
    in_c = out_c;
  }
  layers.push_back(LayerSpec::flatten());
  layers.push_back(LayerSpec::dense(cur.elements(), dense_hidden));
  layers.push_back(LayerSpec::relu());
  layers.push_back(LayerSpec::dense(dense_hidden, kNumClasses));
  layers.push_back(LayerSpec::softmax());
  return ModelSpec::chain(std::move(layers));
}

// ---------------------------------------------------------------------------
// Tensors and parameters
// ---------------------------------------------------------------------------

template <typename S>
struct Tensor1T {
  int channels = 0;
  int length = 0;
  std::vector<S> data;  // row-major: data[c * length + i]

  Tensor1T() = default;
  Tensor1T(int c, int l) : channels(c), length(l), data(std::size_t(c) * l) {}

  S& at(int c, int i) { return data[std::size_t(c) * length + i]; }
  S at(int c, int i) const { return data[std::size_t(c) * length + i]; }
  Shape1 shape() const { return {channels, length}; }
  int elements() const { return channels * length; }
};

using Tensor1 = Tensor1T<float>;

template <typename S>
struct LayerParamsT {
  std::vector<S> weights;
  std::vector<S> biases;
};

// Per-layer weight/bias arrays, indexed like ModelSpec::layers.
template <typename S>
struct ParamStoreT {
  std::vector<LayerParamsT<S>> layers;

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weights.size() + l.biases.size();
    return n;
  }
};

using ParamStore = ParamStoreT<float>;

inline std::size_t weight_count(const LayerSpec& l) {
  switch (l.kind) {
    case LayerKind::Conv1d:
      return std::size_t(l.out_channels) * l.in_channels * l.kernel_size;
    case LayerKind::Dense:
      return std::size_t(l.out_features) * l.in_features;
    default:
      return 0;
  }
}

inline std::size_t bias_count(const LayerSpec& l) {
  switch (l.kind) {
    case LayerKind::Conv1d:
      return std::size_t(l.out_channels);
    case LayerKind::Dense:
      return std::size_t(l.out_features);
    default:
      return 0;
  }
}

// Glorot-uniform weights (+-sqrt(6/(fan_in+fan_out))), zero biases.
template <typename S = float>
ParamStoreT<S> init_params(const ModelSpec& model, Rng& rng) {
  ParamStoreT<S> store;
  store.layers.resize(model.layers.size());
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const LayerSpec& l = model.layers[i];
    auto& p = store.layers[i];
    p.weights.resize(weight_count(l));
    p.biases.assign(bias_count(l), S(0));
    if (p.weights.empty()) continue;
    double fan_in = 0, fan_out = 0;
    if (l.kind == LayerKind::Conv1d) {
      fan_in = double(l.in_channels) * l.kernel_size;
      fan_out = double(l.out_channels) * l.kernel_size;
    } else {
      fan_in = l.in_features;
      fan_out = l.out_features;
    }
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (auto& w : p.weights) w = S(rng.uniform(-limit, limit));
  }
  return store;
}

template <typename S = float>
ParamStoreT<S> init_params(const ModelSpec& model, std::uint64_t seed) {
  Rng rng(seed);
  return init_params<S>(model, rng);
}

template <typename S>
void check_params_match(const ModelSpec& model, const ParamStoreT<S>& params) {
  if (params.layers.size() != model.layers.size())
    throw ShapeError("param store: layer count mismatch");
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    if (params.layers[i].weights.size() != weight_count(model.layers[i]) ||
        params.layers[i].biases.size() != bias_count(model.layers[i]))
      throw ShapeError("param store: array size mismatch at layer " +
                       std::to_string(i));
  }
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

template <typename S>
Tensor1T<S> apply_layer(const LayerSpec& l, const LayerParamsT<S>& p,
                        const Tensor1T<S>& in) {
  const Shape1 out_shape = output_shape(l, in.shape());
  Tensor1T<S> out(out_shape.channels, out_shape.length);
  switch (l.kind) {
    case LayerKind::Conv1d: {
      for (int oc = 0; oc < l.out_channels; ++oc) {
        for (int oi = 0; oi < out.length; ++oi) {
          double acc = double(p.biases[oc]);
          const int base = oi * l.stride - l.padding;
          for (int ic = 0; ic < l.in_channels; ++ic) {
            const S* row = in.data.data() + std::size_t(ic) * in.length;
            const S* w = p.weights.data() +
                         (std::size_t(oc) * l.in_channels + ic) * l.kernel_size;
            for (int k = 0; k < l.kernel_size; ++k) {
              const int pos = base + k;
              if (pos >= 0 && pos < in.length)
                acc += double(w[k]) * double(row[pos]);
            }
          }
          out.at(oc, oi) = S(acc);
        }
      }
      break;
    }
    case LayerKind::ReLU: {
      for (std::size_t i = 0; i < in.data.size(); ++i)
        out.data[i] = in.data[i] > S(0) ? in.data[i] : S(0);
      break;
    }
    case LayerKind::MaxPool1d: {
      for (int c = 0; c < in.channels; ++c) {
        for (int oi = 0; oi < out.length; ++oi) {
          const int base = oi * l.pool_stride;
          S best = in.at(c, base);
          for (int k = 1; k < l.window; ++k) {
            const S v = in.at(c, base + k);
            if (v > best) best = v;
          }
          out.at(c, oi) = best;
        }
      }
      break;
    }
    case LayerKind::Flatten:
    case LayerKind::Reshape: {
      out.data = in.data;
      break;
    }
    case LayerKind::Dense: {
      for (int j = 0; j < l.out_features; ++j) {
        double acc = double(p.biases[j]);
        const S* w = p.weights.data() + std::size_t(j) * l.in_features;
        for (int i = 0; i < l.in_features; ++i)
          acc += double(w[i]) * double(in.data[i]);
        out.data[j] = S(acc);
      }
      break;
    }
    case LayerKind::Softmax: {
      double mx = double(in.data[0]);
      for (const S v : in.data) mx = std::max(mx, double(v));
      double sum = 0.0;
      std::vector<double> exps(in.data.size());
      for (std::size_t i = 0; i < in.data.size(); ++i) {
        exps[i] = std::exp(double(in.data[i]) - mx);
        sum += exps[i];
      }
      for (std::size_t i = 0; i < in.data.size(); ++i)
        out.data[i] = S(exps[i] / sum);
      break;
    }
    case LayerKind::GlobalAvgPool: {
      for (int c = 0; c < in.channels; ++c) {
        double acc = 0.0;
        for (int i = 0; i < in.length; ++i) acc += double(in.at(c, i));
        out.at(c, 0) = S(acc / in.length);
      }
      break;
    }
  }
  return out;
}

// Activations of every layer: acts[0] is the input, acts[i+1] the output of
// layers[i].
template <typename S>
std::vector<Tensor1T<S>> forward_trace(const ModelSpec& model,
                                       const ParamStoreT<S>& params,
                                       Tensor1T<S> input) {
  if (!(input.shape() == model.input_shape))
    throw ShapeError("forward: input shape mismatch");
  check_params_match(model, params);
  std::vector<Tensor1T<S>> acts;
  acts.reserve(model.layers.size() + 1);
  acts.push_back(std::move(input));
  for (std::size_t i = 0; i < model.layers.size(); ++i)
    acts.push_back(apply_layer(model.layers[i], params.layers[i], acts.back()));
  return acts;
}

// Full pass, or the activation of layers[upto_layer] when given.
template <typename S>
Tensor1T<S> forward(const ModelSpec& model, const ParamStoreT<S>& params,
                    const Tensor1T<S>& input,
                    std::optional<std::size_t> upto_layer = std::nullopt) {
  if (!(input.shape() == model.input_shape))
    throw ShapeError("forward: input shape mismatch");
  check_params_match(model, params);
  const std::size_t last =
      upto_layer ? *upto_layer : model.layers.size() - 1;
  if (last >= model.layers.size())
    throw InvalidInput("forward: layer index out of range");
  Tensor1T<S> cur = input;
  for (std::size_t i = 0; i <= last; ++i)
    cur = apply_layer(model.layers[i], params.layers[i], cur);
  return cur;
}

// Run a bare layer span (used by stage executors working on model slices).
template <typename S>
Tensor1T<S> run_chain(std::span<const LayerSpec> layers,
                      std::span<const LayerParamsT<S>> params, Tensor1T<S> x) {
  for (std::size_t i = 0; i < layers.size(); ++i)
    x = apply_layer(layers[i], params[i], x);
  return x;
}

template <typename S>
std::vector<Tensor1T<S>> run_chain_trace(
    std::span<const LayerSpec> layers,
    std::span<const LayerParamsT<S>> params, Tensor1T<S> x) {
  std::vector<Tensor1T<S>> acts;
  acts.reserve(layers.size() + 1);
  acts.push_back(std::move(x));
  for (std::size_t i = 0; i < layers.size(); ++i)
    acts.push_back(apply_layer(layers[i], params[i], acts.back()));
  return acts;
}

inline std::uint64_t flops_of_chain(std::span<const LayerSpec> layers,
                                    Shape1 in) {
  std::uint64_t sum = 0;
  for (const auto& l : layers) {
    sum += flops_of_layer(l, in);
    in = output_shape(l, in);
  }
  return sum;
}

template <typename S>
double cross_entropy(const Tensor1T<S>& probs, int target_class) {
  if (target_class < 0 || target_class >= probs.elements())
    throw InvalidInput("cross_entropy: target class out of range");
  const double p = std::max(double(probs.data[std::size_t(target_class)]),
                            1e-300);
  return -std::log(p);
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

template <typename S>
struct ChainGrads {
  std::vector<LayerParamsT<S>> layer_grads;  // same shapes as the params
  Tensor1T<S> input_grad;
};

template <typename S>
void backward_layer(const LayerSpec& l, const LayerParamsT<S>& p,
                    const Tensor1T<S>& in, const Tensor1T<S>& out,
                    const Tensor1T<S>& grad_out, LayerParamsT<S>& grads,
                    Tensor1T<S>& grad_in) {
  grad_in = Tensor1T<S>(in.channels, in.length);
  grads.weights.assign(p.weights.size(), S(0));
  grads.biases.assign(p.biases.size(), S(0));
  switch (l.kind) {
    case LayerKind::Conv1d: {
      for (int oc = 0; oc < l.out_channels; ++oc) {
        for (int oi = 0; oi < out.length; ++oi) {
          const S g = grad_out.at(oc, oi);
          if (g == S(0)) continue;
          grads.biases[oc] += g;
          const int base = oi * l.stride - l.padding;
          for (int ic = 0; ic < l.in_channels; ++ic) {
            const std::size_t w0 =
                (std::size_t(oc) * l.in_channels + ic) * l.kernel_size;
            for (int k = 0; k < l.kernel_size; ++k) {
              const int pos = base + k;
              if (pos < 0 || pos >= in.length) continue;
              grads.weights[w0 + k] += g * in.at(ic, pos);
              grad_in.at(ic, pos) += p.weights[w0 + k] * g;
            }
          }
        }
      }
      break;
    }
    case LayerKind::ReLU: {
      for (std::size_t i = 0; i < in.data.size(); ++i)
        grad_in.data[i] = in.data[i] > S(0) ? grad_out.data[i] : S(0);
      break;
    }
    case LayerKind::MaxPool1d: {
      // route to the first maximum in each window, matching forward
      for (int c = 0; c < in.channels; ++c) {
        for (int oi = 0; oi < out.length; ++oi) {
          const int base = oi * l.pool_stride;
          int arg = base;
          S best = in.at(c, base);
          for (int k = 1; k < l.window; ++k) {
            const S v = in.at(c, base + k);
            if (v > best) {
              best = v;
              arg = base + k;
            }
          }
          grad_in.at(c, arg) += grad_out.at(c, oi);
        }
      }
      break;
    }
    case LayerKind::Flatten:
    case LayerKind::Reshape: {
      grad_in.data = grad_out.data;
      break;
    }
    case LayerKind::Dense: {
      for (int j = 0; j < l.out_features; ++j) {
        const S g = grad_out.data[j];
        grads.biases[j] = g;
        const std::size_t w0 = std::size_t(j) * l.in_features;
        for (int i = 0; i < l.in_features; ++i) {
          grads.weights[w0 + i] = g * in.data[i];
          grad_in.data[i] += p.weights[w0 + i] * g;
        }
      }
      break;
    }
    case LayerKind::Softmax: {
      double dot = 0.0;
      for (std::size_t i = 0; i < out.data.size(); ++i)
        dot += double(grad_out.data[i]) * double(out.data[i]);
      for (std::size_t i = 0; i < out.data.size(); ++i)
        grad_in.data[i] =
            S(double(out.data[i]) * (double(grad_out.data[i]) - dot));
      break;
    }
    case LayerKind::GlobalAvgPool: {
      for (int c = 0; c < in.channels; ++c) {
        const S g = S(double(grad_out.at(c, 0)) / in.length);
        for (int i = 0; i < in.length; ++i) grad_in.at(c, i) = g;
      }
      break;
    }
  }
}

// Backprop through a layer chain given its forward activations
// (acts.size() == layers.size() + 1) and the gradient at the chain output.
template <typename S>
ChainGrads<S> backward_chain(std::span<const LayerSpec> layers,
                             std::span<const LayerParamsT<S>> params,
                             std::span<const Tensor1T<S>> acts,
                             Tensor1T<S> grad_out) {
  ChainGrads<S> out;
  out.layer_grads.resize(layers.size());
  Tensor1T<S> grad = std::move(grad_out);
  for (std::size_t i = layers.size(); i-- > 0;) {
    Tensor1T<S> grad_in;
    backward_layer(layers[i], params[i], acts[i], acts[i + 1], grad,
                   out.layer_grads[i], grad_in);
    grad = std::move(grad_in);
  }
  out.input_grad = std::move(grad);
  return out;
}

// Gradient of the cross-entropy loss w.r.t. every parameter, for a chain
// ending in Softmax. Uses the fused softmax+CE delta (p - onehot).
template <typename S>
ParamStoreT<S> backward(const ModelSpec& model, const ParamStoreT<S>& params,
                        const Tensor1T<S>& input, int target_class) {
  if (target_class < 0 || target_class >= model.num_classes)
    throw InvalidInput("backward: target class out of range");
  if (model.layers.back().kind != LayerKind::Softmax)
    throw InvalidInput("backward: model must end in softmax");
  const auto acts = forward_trace(model, params, input);
  const Tensor1T<S>& probs = acts.back();
  Tensor1T<S> delta(probs.channels, probs.length);
  for (int i = 0; i < probs.elements(); ++i)
    delta.data[i] = probs.data[i] - S(i == target_class ? 1 : 0);
  const std::size_t n = model.layers.size();
  auto chain = backward_chain<S>(
      std::span(model.layers.data(), n - 1),
      std::span(params.layers.data(), n - 1),
      std::span(acts.data(), n),  // acts[0..n-1]: up to the softmax input
      std::move(delta));
  ParamStoreT<S> grads;
  grads.layers = std::move(chain.layer_grads);
  grads.layers.emplace_back();  // softmax holds no parameters
  return grads;
}

}  // namespace dcn
