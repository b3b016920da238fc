#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "dcn/trainer.hpp"

using namespace dcn;

namespace {

// Small backbone over the standard 260-sample input, cheap enough for
// training loops in unit tests.
ModelSpec micro_backbone() {
  return default_backbone({2, 4, 4}, 8);
}

ExitModel micro_exit_model(const ExitPlacement& placement = ExitPlacement::of({1})) {
  return attach_exits(micro_backbone(), placement, 8);
}

DatasetSplit micro_split(int per_class, double noise, std::uint64_t seed) {
  const auto beats = generate_synthetic(per_class, seed, noise);
  return split(beats, {0.7, 0.15, 0.15}, seed + 1);
}

double rel_error(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-6});
  return std::abs(a - b) / scale;
}

double mean_joint_loss(const ExitModel& model, const ExitParams& params,
                       const std::vector<BeatRecord>& beats,
                       const std::vector<double>& weights) {
  double sum = 0.0;
  for (const auto& b : beats) {
    const auto fwd = exit_forward(model, params, beat_input<float>(b));
    sum += joint_loss(fwd, int(b.label), weights);
  }
  return sum / double(beats.size());
}

}  // namespace

TEST_CASE("zero learning rate leaves the parameters bitwise unchanged") {
  const auto model = micro_exit_model();
  const auto split = micro_split(10, 0.05, 3);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 8;
  cfg.learning_rate = 0.0;
  cfg.seed = 11;
  const auto result = train(model, split, cfg);

  // reconstruct the seeded initialization the trainer starts from
  Rng rng(cfg.seed);
  const auto init = init_exit_params<float>(
      model, init_params<float>(model.backbone, rng), cfg.seed ^ 0x5eedu);
  REQUIRE(serialize_exit_model(model, result.params) ==
          serialize_exit_model(model, init));
}

TEST_CASE("a single-class training set is learned within five epochs") {
  auto beats = generate_synthetic(30, 5, 0.05);
  std::erase_if(beats, [](const BeatRecord& b) { return b.label != AamiClass::VEB; });
  DatasetSplit s;
  s.train = beats;
  const auto model = micro_exit_model();
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 10;
  cfg.learning_rate = 0.1;
  cfg.seed = 4;
  const auto result = train(model, s, cfg);
  bool reached = false;
  for (const auto& e : result.history)
    reached = reached || e.train_head_accuracy.back() == 1.0;
  REQUIRE(reached);
}

TEST_CASE("joint gradients match finite differences on a dual-exit micro model") {
  // short input keeps the finite-difference sweep cheap
  const auto m = ModelSpec::chain(
      {LayerSpec::conv1d(1, 2, 3, 1, 1), LayerSpec::relu(),
       LayerSpec::max_pool1d(2, 2), LayerSpec::conv1d(2, 3, 3, 1, 1),
       LayerSpec::relu(), LayerSpec::max_pool1d(2, 2),
       LayerSpec::conv1d(3, 4, 3, 1, 1), LayerSpec::relu(),
       LayerSpec::max_pool1d(2, 2), LayerSpec::flatten(),
       LayerSpec::dense(12, 6), LayerSpec::relu(), LayerSpec::dense(6, 5),
       LayerSpec::softmax()},
      {1, 24});
  const auto model = attach_exits(m, ExitPlacement::of({1, 2}), 4);
  auto params = init_exit_params<double>(model, init_params<double>(m, 21), 22);
  const std::vector<double> weights = {0.7, 1.3, 1.0};

  Tensor1T<double> in(1, 24);
  Rng rng(9);
  for (auto& v : in.data) v = rng.uniform(-1, 1);
  const int target = 3;

  const auto fwd = exit_forward(model, params, in);
  const auto grads = joint_backward(model, params, fwd, target, weights);

  const double eps = 1e-4;
  const auto fd_loss = [&]() {
    const auto f = exit_forward(model, params, in);
    return joint_loss(f, target, weights);
  };
  const auto check = [&](std::vector<double>& arr, const std::vector<double>& g) {
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const double saved = arr[i];
      arr[i] = saved + eps;
      const double up = fd_loss();
      arr[i] = saved - eps;
      const double down = fd_loss();
      arr[i] = saved;
      const double fd = (up - down) / (2 * eps);
      INFO("index " << i << " analytic " << g[i] << " fd " << fd);
      REQUIRE(rel_error(g[i], fd) < 1e-4);
    }
  };
  for (std::size_t li = 0; li < m.layers.size(); ++li) {
    check(params.backbone.layers[li].weights, grads.backbone.layers[li].weights);
    check(params.backbone.layers[li].biases, grads.backbone.layers[li].biases);
  }
  for (std::size_t b = 0; b < model.exits.size(); ++b) {
    for (std::size_t li = 0; li < model.exits[b].head.size(); ++li) {
      check(params.branches[b].head.layers[li].weights,
            grads.branches[b].head.layers[li].weights);
      check(params.branches[b].head.layers[li].biases,
            grads.branches[b].head.layers[li].biases);
    }
    check(params.branches[b].encoder.weights, grads.branches[b].encoder.weights);
    check(params.branches[b].encoder.biases, grads.branches[b].encoder.biases);
    check(params.branches[b].decoder.weights, grads.branches[b].decoder.weights);
    check(params.branches[b].decoder.biases, grads.branches[b].decoder.biases);
  }
}

TEST_CASE("the joint gradient is the weight-scaled sum of per-head gradients") {
  const auto model = micro_exit_model(ExitPlacement::of({2}));
  const auto params = init_exit_params<double>(
      model, init_params<double>(model.backbone, 31), 32);
  const auto beats = generate_synthetic(1, 8, 0.05);
  const auto in = beat_input<double>(beats[0]);
  const int target = 0;
  const auto fwd = exit_forward(model, params, in);

  const double wa = 0.6, wb = 1.7;
  const auto joint = joint_backward(model, params, fwd, target, {wa, wb});
  const auto head0 = joint_backward(model, params, fwd, target, {1.0, 0.0});
  const auto head1 = joint_backward(model, params, fwd, target, {0.0, 1.0});

  for (std::size_t li = 0; li < model.backbone.layers.size(); ++li) {
    const auto& j = joint.backbone.layers[li].weights;
    const auto& a = head0.backbone.layers[li].weights;
    const auto& b = head1.backbone.layers[li].weights;
    for (std::size_t i = 0; i < j.size(); ++i)
      REQUIRE(rel_error(j[i], wa * a[i] + wb * b[i]) < 1e-9);
  }
}

TEST_CASE("training loss does not increase over the first epoch at tiny lr") {
  const auto model = micro_exit_model();
  const auto split = micro_split(20, 0.05, 13);
  const auto weights = std::vector<double>(model.num_heads(), 1.0);

  Rng rng(17);
  const auto init = init_exit_params<float>(
      model, init_params<float>(model.backbone, rng), 17 ^ 0x5eedu);
  const double before = mean_joint_loss(model, init, split.train, weights);

  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 8;
  cfg.learning_rate = 1e-4;
  cfg.seed = 17;
  const auto result = train(model, split, cfg);
  const double after = mean_joint_loss(model, result.params, split.train, weights);
  REQUIRE(after <= before + 1e-9);
}

TEST_CASE("training is reproducible for a fixed seed") {
  const auto model = micro_exit_model();
  const auto split = micro_split(8, 0.05, 23);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.learning_rate = 0.05;
  cfg.seed = 29;
  const auto a = train(model, split, cfg);
  const auto b = train(model, split, cfg);
  REQUIRE(serialize_exit_model(model, a.params) ==
          serialize_exit_model(model, b.params));
  REQUIRE(a.best_epoch == b.best_epoch);
}

TEST_CASE("a micro-set correct by construction scores 1.0 at every head") {
  // constant heads: zero weights with a bias favoring class N classify any
  // all-N beat set perfectly, so every head must report exactly 1.0
  const auto model = micro_exit_model(ExitPlacement::of({2}));
  auto params = init_exit_params<float>(
      model, init_params<float>(model.backbone, 61), 62);
  const auto favor_n = [](LayerParamsT<float>& dense) {
    for (auto& w : dense.weights) w = 0.0f;
    for (auto& b : dense.biases) b = 0.0f;
    dense.biases[0] = 1.0f;
  };
  favor_n(params.branches[0].head.layers[1]);
  favor_n(params.backbone.layers[model.backbone.layers.size() - 2]);

  auto beats = generate_synthetic(6, 2, 0.1);
  std::erase_if(beats, [](const BeatRecord& b) { return b.label != AamiClass::N; });
  const auto eval = evaluate_heads(model, params, beats);
  for (double acc : eval.accuracy) REQUIRE(acc == 1.0);
  for (const auto& rec : eval.recall) REQUIRE(rec[0] == 1.0);
}

TEST_CASE("random parameters sit at chance level on balanced data") {
  const auto model = micro_exit_model(ExitPlacement::of({1}));
  const auto params = init_exit_params<float>(
      model, init_params<float>(model.backbone, 2024), 2025);
  const auto beats = generate_synthetic(200, 77, 0.8);  // 1000 beats
  const auto eval = evaluate_heads(model, params, beats);
  for (double acc : eval.accuracy) {
    INFO("accuracy " << acc);
    REQUIRE(std::abs(acc - 0.2) <= 0.05);
  }
}

TEST_CASE("per-head accuracy recounts exactly from the decision trace CSV") {
  const auto model = micro_exit_model(ExitPlacement::of({2}));
  const auto beats = generate_synthetic(12, 51, 0.1);
  const auto params = init_exit_params<float>(
      model, init_params<float>(model.backbone, 52), 53);
  const auto plan = partition(model, params, model.placement(),
                              {NodeRole::Edge, NodeRole::Cloud});
  const auto eval = evaluate_heads(model, params, beats);

  const auto path =
      std::filesystem::temp_directory_path() / "dcn_test_recount.csv";
  for (const auto& [threshold, head] :
       std::map<double, std::size_t>{{0.0, 0}, {1.0, 1}}) {
    const auto batch = classify_batch(
        plan, params, GateConfig::uniform(threshold, 1), beats);
    write_trace_csv(path, batch.decisions);

    std::ifstream in(path);
    std::string line;
    std::getline(in, line);  // header
    std::size_t correct = 0, rows = 0;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      ++rows;
      std::vector<std::string> cols;
      std::stringstream ss(line);
      std::string col;
      while (std::getline(ss, col, ',')) cols.push_back(col);
      if (cols[3] == cols[4]) ++correct;
    }
    REQUIRE(rows == beats.size());
    REQUIRE(double(correct) / double(rows) == eval.accuracy[head]);
  }
  std::filesystem::remove(path);
}

TEST_CASE("training rejects invalid configurations") {
  const auto model = micro_exit_model();
  const auto split = micro_split(4, 0.05, 1);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 4;
  cfg.seed = 1;

  DatasetSplit empty;
  REQUIRE_THROWS_AS(train(model, empty, cfg), InvalidInput);

  TrainConfig big_batch = cfg;
  big_batch.batch_size = int(split.train.size()) + 1;
  REQUIRE_THROWS_AS(train(model, split, big_batch), InvalidInput);

  TrainConfig bad_weights = cfg;
  bad_weights.exit_loss_weights = {1.0};  // needs one per head (2)
  REQUIRE_THROWS_AS(train(model, split, bad_weights), InvalidInput);

  REQUIRE_THROWS_AS(evaluate_heads(model, init_exit_params<float>(
                                              model,
                                              init_params<float>(model.backbone, 1),
                                              2),
                                   {}),
                    InvalidInput);
}

TEST_CASE("exploding updates raise TrainingDiverged with the epoch") {
  const auto model = micro_exit_model();
  const auto split = micro_split(10, 0.05, 33);
  TrainConfig cfg;
  cfg.epochs = 6;
  cfg.batch_size = 8;
  cfg.learning_rate = 100.0;
  cfg.seed = 34;
  try {
    train(model, split, cfg);
    FAIL("expected TrainingDiverged");
  } catch (const TrainingDiverged& e) {
    REQUIRE(e.epoch() >= 1);
  }
}

TEST_CASE("reference configuration reaches the frozen accuracy thresholds",
          "[slow]") {
  // synthetic set (noise 0.05, 200/class), default config, single EEP at 2:
  // final-head test accuracy >= 0.95, every exit head >= 0.85
  const auto beats = generate_synthetic(200, 1, 0.05);
  const auto s = split(beats, {0.7, 0.15, 0.15}, 1);
  const auto model = attach_exits(default_backbone(), ExitPlacement::of({2}), 16);
  TrainConfig cfg;  // defaults are the reference configuration
  const auto result = train(model, s, cfg);
  const auto eval = evaluate_heads(model, result.params, s.test);
  INFO("exit head accuracy " << eval.accuracy[0] << ", final "
                             << eval.accuracy[1]);
  REQUIRE(eval.accuracy.back() >= 0.95);
  for (double acc : eval.accuracy) REQUIRE(acc >= 0.85);
}
