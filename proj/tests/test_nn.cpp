#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "dcn/nn.hpp"

using namespace dcn;

namespace {

// Independent naive convolution oracle: plain triple loop with explicit
// zero padding, no shared code with the engine.
template <typename S>
Tensor1T<S> conv_oracle(const LayerSpec& l, const Tensor1T<S>& in,
                        const LayerParamsT<S>& p) {
  const int out_len = (in.length + 2 * l.padding - l.kernel_size) / l.stride + 1;
  Tensor1T<S> out(l.out_channels, out_len);
  for (int oc = 0; oc < l.out_channels; ++oc)
    for (int oi = 0; oi < out_len; ++oi) {
      double acc = double(p.biases[oc]);
      for (int ic = 0; ic < l.in_channels; ++ic)
        for (int k = 0; k < l.kernel_size; ++k) {
          const int pos = oi * l.stride + k - l.padding;
          const double x =
              (pos < 0 || pos >= in.length) ? 0.0 : double(in.at(ic, pos));
          acc += x * double(p.weights[(std::size_t(oc) * l.in_channels + ic) *
                                          l.kernel_size +
                                      k]);
        }
      out.at(oc, oi) = S(acc);
    }
  return out;
}

// Brute-force multiply-add enumeration for the FLOPs convention: every
// (out_channel, out_pos, in_channel, tap) is one MAC = 2 FLOPs.
std::uint64_t conv_flops_oracle(const LayerSpec& l, Shape1 in) {
  const int out_len = (in.length + 2 * l.padding - l.kernel_size) / l.stride + 1;
  std::uint64_t flops = 0;
  for (int oc = 0; oc < l.out_channels; ++oc)
    for (int oi = 0; oi < out_len; ++oi)
      for (int ic = 0; ic < l.in_channels; ++ic)
        for (int k = 0; k < l.kernel_size; ++k) flops += 2;
  return flops;
}

template <typename S>
Tensor1T<S> random_tensor(int c, int l, Rng& rng) {
  Tensor1T<S> t(c, l);
  for (auto& v : t.data) v = S(rng.uniform(-1.0, 1.0));
  return t;
}

// Small models mixing every layer kind, for gradient checks.
ModelSpec micro_model(int variant) {
  switch (variant % 4) {
    case 0:
      return ModelSpec::chain(
          {LayerSpec::conv1d(1, 3, 3, 1, 1), LayerSpec::relu(),
           LayerSpec::max_pool1d(2, 2), LayerSpec::flatten(),
           LayerSpec::dense(18, 5), LayerSpec::softmax()},
          {1, 12});
    case 1:
      return ModelSpec::chain(
          {LayerSpec::conv1d(2, 4, 3, 2, 0), LayerSpec::relu(),
           LayerSpec::conv1d(4, 3, 3, 1, 1), LayerSpec::max_pool1d(2, 1),
           LayerSpec::flatten(), LayerSpec::dense(12, 5),
           LayerSpec::softmax()},
          {2, 11});
    case 2:
      return ModelSpec::chain(
          {LayerSpec::conv1d(1, 4, 5, 1, 2), LayerSpec::relu(),
           LayerSpec::global_avg_pool(), LayerSpec::dense(4, 5),
           LayerSpec::softmax()},
          {1, 10});
    default:
      return ModelSpec::chain(
          {LayerSpec::flatten(), LayerSpec::dense(9, 7), LayerSpec::relu(),
           LayerSpec::dense(7, 5), LayerSpec::softmax()},
          {3, 3});
  }
}

double rel_error(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-6});
  return std::abs(a - b) / scale;
}

}  // namespace

TEST_CASE("zero conv weights and biases give an all-zero activation") {
  const auto l = LayerSpec::conv1d(2, 3, 5, 1, 2);
  LayerParamsT<float> p;
  p.weights.assign(weight_count(l), 0.0f);
  p.biases.assign(bias_count(l), 0.0f);
  Rng rng(3);
  const auto in = random_tensor<float>(2, 20, rng);
  const auto out = apply_layer(l, p, in);
  for (float v : out.data) REQUIRE(v == 0.0f);
}

TEST_CASE("identity 1x1 conv reproduces the input") {
  const auto l = LayerSpec::conv1d(1, 1, 1, 1, 0);
  LayerParamsT<float> p;
  p.weights = {1.0f};
  p.biases = {0.0f};
  Rng rng(4);
  const auto in = random_tensor<float>(1, 30, rng);
  const auto out = apply_layer(l, p, in);
  REQUIRE(out.data == in.data);
}

TEST_CASE("forward matches the naive convolution oracle") {
  Rng rng(77);
  for (int trial = 0; trial < 10; ++trial) {
    const int in_c = int(rng.uniform_int(1, 3));
    const int out_c = int(rng.uniform_int(1, 4));
    const int kernel = int(rng.uniform_int(1, 5));
    const int stride = int(rng.uniform_int(1, 2));
    const int padding = int(rng.uniform_int(0, 3));
    const int length = int(rng.uniform_int(kernel + 2, 24));
    const auto l = LayerSpec::conv1d(in_c, out_c, kernel, stride, padding);
    LayerParamsT<float> p;
    p.weights.resize(weight_count(l));
    p.biases.resize(bias_count(l));
    for (auto& w : p.weights) w = float(rng.uniform(-1, 1));
    for (auto& b : p.biases) b = float(rng.uniform(-1, 1));
    const auto in = random_tensor<float>(in_c, length, rng);
    const auto got = apply_layer(l, p, in);
    const auto want = conv_oracle(l, in, p);
    REQUIRE(got.shape() == want.shape());
    for (std::size_t i = 0; i < got.data.size(); ++i)
      REQUIRE(rel_error(double(got.data[i]), double(want.data[i])) < 1e-6);
  }
}

TEST_CASE("random 3-layer micro model matches the loop-nest oracle end to end") {
  Rng rng(123);
  const auto m = ModelSpec::chain({LayerSpec::conv1d(1, 3, 3, 1, 1),
                                   LayerSpec::relu(),
                                   LayerSpec::conv1d(3, 2, 3, 1, 0)},
                                  {1, 16});
  const auto params = init_params<float>(m, 55);
  const auto in = random_tensor<float>(1, 16, rng);
  const auto got = forward(m, params, in);

  auto x = conv_oracle(m.layers[0], in, params.layers[0]);
  for (auto& v : x.data) v = std::max(v, 0.0f);
  const auto want = conv_oracle(m.layers[2], x, params.layers[2]);
  REQUIRE(got.shape() == want.shape());
  for (std::size_t i = 0; i < got.data.size(); ++i)
    REQUIRE(rel_error(double(got.data[i]), double(want.data[i])) < 1e-6);
}

TEST_CASE("flops follow the stated convention") {
  REQUIRE(flops_of_layer(LayerSpec::dense(10, 5), {1, 10}) == 100);
  const auto conv = LayerSpec::conv1d(1, 8, 5, 1, 2);
  REQUIRE(flops_of_layer(conv, {1, 260}) == 20800);
  REQUIRE(flops_of_layer(conv, {1, 260}) == conv_flops_oracle(conv, {1, 260}));
  REQUIRE(flops_of_layer(LayerSpec::relu(), {8, 260}) == 2080);
  REQUIRE(flops_of_layer(LayerSpec::softmax(), {1, 5}) == 15);
  REQUIRE(flops_of_layer(LayerSpec::flatten(), {8, 10}) == 0);
  Rng rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    const auto l = LayerSpec::conv1d(int(rng.uniform_int(1, 4)),
                                     int(rng.uniform_int(1, 6)),
                                     int(rng.uniform_int(1, 5)),
                                     int(rng.uniform_int(1, 2)),
                                     int(rng.uniform_int(0, 2)));
    const Shape1 in{l.in_channels, int(rng.uniform_int(l.kernel_size, 40))};
    REQUIRE(flops_of_layer(l, in) == conv_flops_oracle(l, in));
  }
}

TEST_CASE("softmax output is a probability vector and forward is pure") {
  const auto m = micro_model(0);
  const auto params = init_params<float>(m, 8);
  Rng rng(10);
  for (int trial = 0; trial < 5; ++trial) {
    const auto in = random_tensor<float>(1, 12, rng);
    const auto a = forward(m, params, in);
    const auto b = forward(m, params, in);
    REQUIRE(a.data == b.data);
    double sum = 0.0;
    for (float v : a.data) {
      REQUIRE(v > 0.0f);
      REQUIRE(v < 1.0f);
      sum += double(v);
    }
    REQUIRE(std::abs(sum - 1.0) < 1e-6);
  }
}

TEST_CASE("shape errors are rejected") {
  const auto m = micro_model(0);
  const auto params = init_params<float>(m, 8);
  Tensor1 wrong(1, 13);
  REQUIRE_THROWS_AS(forward(m, params, wrong), ShapeError);
  REQUIRE_THROWS_AS(output_shape(LayerSpec::dense(10, 5), Shape1{1, 9}),
                    ShapeError);
  REQUIRE_THROWS_AS(output_shape(LayerSpec::conv1d(2, 3, 3), Shape1{1, 9}),
                    ShapeError);
}

TEST_CASE("saturated softmax yields exactly zero output-layer gradients") {
  // logits so far apart that the softmax is exactly one-hot in double:
  // the fused CE delta (p - y) vanishes for every output parameter
  const auto m = ModelSpec::chain(
      {LayerSpec::dense(1, 5), LayerSpec::softmax()}, {1, 1});
  ParamStoreT<double> p;
  p.layers.resize(2);
  p.layers[0].weights = {0.0, -800.0, -800.0, -800.0, -800.0};
  p.layers[0].biases = {0.0, 0.0, 0.0, 0.0, 0.0};
  Tensor1T<double> in(1, 1);
  in.data[0] = 1.0;
  const auto grads = backward(m, p, in, 0);
  for (double g : grads.layers[0].biases) REQUIRE(g == 0.0);
  for (double g : grads.layers[0].weights) REQUIRE(g == 0.0);
}

TEST_CASE("dense-only gradient equals the outer-product closed form") {
  const auto m = ModelSpec::chain(
      {LayerSpec::flatten(), LayerSpec::dense(6, 5), LayerSpec::softmax()},
      {2, 3});
  const auto params = init_params<double>(m, 31);
  Rng rng(32);
  const auto in = random_tensor<double>(2, 3, rng);
  const int target = 2;
  const auto grads = backward(m, params, in, target);

  const auto acts = forward_trace(m, params, in);
  const auto& probs = acts.back();
  const auto& x = acts[1];  // flatten output
  for (int j = 0; j < 5; ++j) {
    const double delta = probs.data[j] - (j == target ? 1.0 : 0.0);
    REQUIRE(rel_error(grads.layers[1].biases[j], delta) < 1e-12);
    for (int i = 0; i < 6; ++i)
      REQUIRE(rel_error(grads.layers[1].weights[std::size_t(j) * 6 + i],
                        delta * x.data[i]) < 1e-12);
  }
}

TEST_CASE("gradients match central finite differences on seeded micro models") {
  for (int seed = 1; seed <= 20; ++seed) {
    const auto m = micro_model(seed);
    auto params = init_params<double>(m, std::uint64_t(seed) * 31 + 7);
    Rng rng(std::uint64_t(seed) * 101 + 3);
    const auto in =
        random_tensor<double>(m.input_shape.channels, m.input_shape.length, rng);
    const int target = int(rng.uniform_int(0, 4));
    const auto grads = backward(m, params, in, target);

    const double eps = 1e-4;
    for (std::size_t li = 0; li < m.layers.size(); ++li) {
      auto check_array = [&](std::vector<double>& arr,
                             const std::vector<double>& g) {
        for (std::size_t i = 0; i < arr.size(); ++i) {
          const double saved = arr[i];
          arr[i] = saved + eps;
          const double up = cross_entropy(forward(m, params, in), target);
          arr[i] = saved - eps;
          const double down = cross_entropy(forward(m, params, in), target);
          arr[i] = saved;
          const double fd = (up - down) / (2 * eps);
          INFO("layer " << li << " index " << i << " analytic " << g[i]
                        << " fd " << fd);
          REQUIRE(rel_error(g[i], fd) < 1e-4);
        }
      };
      check_array(params.layers[li].weights, grads.layers[li].weights);
      check_array(params.layers[li].biases, grads.layers[li].biases);
    }
  }
}

TEST_CASE("backward rejects an out-of-range target class") {
  const auto m = micro_model(0);
  const auto params = init_params<float>(m, 8);
  Rng rng(10);
  const auto in = random_tensor<float>(1, 12, rng);
  REQUIRE_THROWS_AS(backward(m, params, in, 5), InvalidInput);
  REQUIRE_THROWS_AS(backward(m, params, in, -1), InvalidInput);
}

TEST_CASE("default backbone has six conv layers and the documented flops") {
  const auto m = default_backbone();
  REQUIRE(m.num_conv_layers() == 6);
  REQUIRE(m.input_shape == Shape1{1, 260});
  REQUIRE(m.output() == Shape1{1, 5});
  REQUIRE(m.total_flops() == 872735);
}

TEST_CASE("finiteness is preserved through random forward passes") {
  Rng rng(21);
  for (int seed = 0; seed < 8; ++seed) {
    const auto m = micro_model(seed);
    const auto params = init_params<float>(m, std::uint64_t(seed) + 100);
    const auto in =
        random_tensor<float>(m.input_shape.channels, m.input_shape.length, rng);
    const auto acts = forward_trace(m, params, in);
    for (const auto& a : acts) REQUIRE(all_finite(a.data));
  }
}
