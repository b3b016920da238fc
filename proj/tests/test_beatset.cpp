#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "dcn/beatset.hpp"

using namespace dcn;

namespace {

// Independent scalar interpolation oracle, evaluated per output index.
double interp_oracle(std::span<const float> in, std::size_t m, std::size_t i) {
  const std::size_t n = in.size();
  const double pos = double(i) * double(n - 1) / double(m - 1);
  const auto lo = std::size_t(pos);
  if (lo >= n - 1) return double(in[n - 1]);
  const double frac = pos - double(lo);
  return double(in[lo]) + frac * (double(in[lo + 1]) - double(in[lo]));
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("resample at identical rates returns the input bitwise") {
  Rng rng(11);
  std::vector<float> sig;
  for (int i = 0; i < 360; ++i) sig.push_back(float(rng.uniform(-1, 1)));
  const auto out = resample(sig, 360.0, 360.0);
  REQUIRE(out.size() == sig.size());
  for (std::size_t i = 0; i < sig.size(); ++i) REQUIRE(out[i] == sig[i]);
}

TEST_CASE("resample preserves constant signals") {
  const std::vector<float> sig = {1.0f, 1.0f, 1.0f, 1.0f};
  const auto out = resample(sig, 4.0, 2.0);
  REQUIRE(out == std::vector<float>{1.0f, 1.0f});
}

TEST_CASE("resample matches the per-index interpolation oracle on a ramp") {
  std::vector<float> ramp;
  for (int i = 0; i < 360; ++i) ramp.push_back(float(i));
  const auto out = resample(ramp, 360.0, 260.0);
  REQUIRE(out.size() == 260);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double want = interp_oracle(ramp, out.size(), i);
    REQUIRE(std::abs(double(out[i]) - want) < 1e-4);
  }
  REQUIRE(out.front() == ramp.front());
  REQUIRE(out.back() == ramp.back());
}

TEST_CASE("resample output stays within the input range") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<float> sig;
    const int n = int(rng.uniform_int(2, 400));
    for (int i = 0; i < n; ++i) sig.push_back(float(rng.uniform(-3, 3)));
    float lo = sig[0], hi = sig[0];
    for (float v : sig) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    const double rate_out = rng.uniform(0.5, 3.0) * 100.0;
    for (float v : resample(sig, 100.0, rate_out)) {
      REQUIRE(v >= lo);
      REQUIRE(v <= hi);
    }
  }
}

TEST_CASE("resample rejects bad input") {
  REQUIRE_THROWS_AS(resample(std::vector<float>{}, 360, 260), InvalidInput);
  REQUIRE_THROWS_AS(resample(std::vector<float>{1.0f}, 0.0, 260), InvalidInput);
  REQUIRE_THROWS_AS(resample(std::vector<float>{1.0f}, 360, -1.0), InvalidInput);
  const std::vector<float> nan_sig = {1.0f, std::nanf("")};
  REQUIRE_THROWS_AS(resample(nan_sig, 360, 260), InvalidInput);
}

TEST_CASE("synthetic generation is bitwise deterministic per seed") {
  const auto a = generate_synthetic(20, 42, 0.05);
  const auto b = generate_synthetic(20, 42, 0.05);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i].samples == b[i].samples);
    REQUIRE(a[i].label == b[i].label);
    REQUIRE(a[i].source_id == b[i].source_id);
    REQUIRE(a[i].beat_index == b[i].beat_index);
  }
  const auto c = generate_synthetic(20, 43, 0.05);
  REQUIRE(a[0].samples != c[0].samples);
}

TEST_CASE("zero noise reproduces the class template exactly") {
  const auto beats = generate_synthetic(3, 7, 0.0);
  REQUIRE(beats.size() == 15);
  for (const auto& b : beats) {
    const auto tpl = class_template(b.label);
    REQUIRE(b.samples == tpl);
  }
}

TEST_CASE("class means stay far apart relative to within-class spread") {
  // noise 0.05, 200 per class: min pairwise distance between class means
  // must exceed 10x the pooled per-sample standard deviation
  const auto beats = generate_synthetic(200, 99, 0.05);
  std::array<std::array<double, kBeatLength>, kNumClasses> mean{};
  std::array<int, kNumClasses> count{};
  for (const auto& b : beats) {
    for (int i = 0; i < kBeatLength; ++i)
      mean[int(b.label)][i] += double(b.samples[i]);
    count[int(b.label)] += 1;
  }
  for (int c = 0; c < kNumClasses; ++c)
    for (auto& v : mean[c]) v /= count[c];

  double pooled_var = 0.0;
  std::size_t n_terms = 0;
  for (const auto& b : beats) {
    for (int i = 0; i < kBeatLength; ++i) {
      const double d = double(b.samples[i]) - mean[int(b.label)][i];
      pooled_var += d * d;
      ++n_terms;
    }
  }
  const double within_std = std::sqrt(pooled_var / double(n_terms));

  double min_dist = 1e300;
  for (int a = 0; a < kNumClasses; ++a) {
    for (int b = a + 1; b < kNumClasses; ++b) {
      double d2 = 0.0;
      for (int i = 0; i < kBeatLength; ++i) {
        const double d = mean[a][i] - mean[b][i];
        d2 += d * d;
      }
      min_dist = std::min(min_dist, std::sqrt(d2));
    }
  }
  INFO("min class-mean distance " << min_dist << ", within-class std "
                                  << within_std);
  REQUIRE(min_dist > 10.0 * within_std);
}

TEST_CASE("synthetic rejects bad arguments") {
  REQUIRE_THROWS_AS(generate_synthetic(0, 1, 0.05), InvalidInput);
  REQUIRE_THROWS_AS(generate_synthetic(5, 1, -0.1), InvalidInput);
}

TEST_CASE("split produces 70/15/15 per class on 100 beats per class") {
  const auto beats = generate_synthetic(100, 3, 0.05);
  const auto s = split(beats, {0.7, 0.15, 0.15}, 17);
  std::array<int, kNumClasses> train_count{}, val_count{}, test_count{};
  for (const auto& b : s.train) train_count[int(b.label)]++;
  for (const auto& b : s.validation) val_count[int(b.label)]++;
  for (const auto& b : s.test) test_count[int(b.label)]++;
  for (int c = 0; c < kNumClasses; ++c) {
    REQUIRE(train_count[c] == 70);
    REQUIRE(val_count[c] == 15);
    REQUIRE(test_count[c] == 15);
  }
}

TEST_CASE("split with ratios (1,0,0) puts everything in train") {
  const auto beats = generate_synthetic(10, 3, 0.05);
  const auto s = split(beats, {1.0, 0.0, 0.0}, 17);
  REQUIRE(s.train.size() == beats.size());
  REQUIRE(s.validation.empty());
  REQUIRE(s.test.empty());
}

TEST_CASE("split rounding on 7 beats of one class") {
  // round(7*0.7)=5, round(7*0.15)=1, rest 1; all within one beat of exact
  std::vector<BeatRecord> beats;
  for (int i = 0; i < 7; ++i) {
    BeatRecord b;
    b.label = AamiClass::VEB;
    b.source_id = "r1";
    b.beat_index = std::uint32_t(i);
    beats.push_back(b);
  }
  const auto s = split(beats, {0.7, 0.15, 0.15}, 2);
  REQUIRE(s.train.size() == 5);
  REQUIRE(s.validation.size() == 1);
  REQUIRE(s.test.size() == 1);
  REQUIRE(std::abs(double(s.train.size()) - 4.9) <= 1.0);
  REQUIRE(std::abs(double(s.validation.size()) - 1.05) <= 1.0);
  REQUIRE(std::abs(double(s.test.size()) - 1.05) <= 1.0);
}

TEST_CASE("split rejects ratios that do not sum to one") {
  const auto beats = generate_synthetic(4, 3, 0.0);
  REQUIRE_THROWS_AS(split(beats, {0.7, 0.2, 0.2}, 1), InvalidInput);
  REQUIRE_THROWS_AS(split(beats, {0.9, 0.2, -0.1}, 1), InvalidInput);
}

TEST_CASE("splits are reproducible and disjoint by (source_id, beat_index)") {
  const auto beats = generate_synthetic(33, 12, 0.05);
  const auto s1 = split(beats, {0.7, 0.15, 0.15}, 5);
  const auto s2 = split(beats, {0.7, 0.15, 0.15}, 5);
  REQUIRE(s1.train.size() == s2.train.size());
  for (std::size_t i = 0; i < s1.train.size(); ++i)
    REQUIRE(s1.train[i].beat_index == s2.train[i].beat_index);

  std::set<std::pair<std::string, std::uint32_t>> seen;
  const auto collect = [&seen](const std::vector<BeatRecord>& part) {
    for (const auto& b : part) {
      const auto key = std::make_pair(b.source_id, b.beat_index);
      REQUIRE(!seen.count(key));
      seen.insert(key);
    }
  };
  collect(s1.train);
  collect(s1.validation);
  collect(s1.test);
  REQUIRE(seen.size() == beats.size());
}

TEST_CASE("beats file round-trips bitwise") {
  const auto beats = generate_synthetic(8, 21, 0.05);
  const auto bytes = serialize_beats(beats);
  const auto file = deserialize_beats(bytes);
  REQUIRE(file.flags == kBeatsFlagZScored);
  REQUIRE(file.beats.size() == beats.size());
  for (std::size_t i = 0; i < beats.size(); ++i) {
    REQUIRE(file.beats[i].samples == beats[i].samples);
    REQUIRE(file.beats[i].label == beats[i].label);
    REQUIRE(file.beats[i].source_id == beats[i].source_id);
  }
  REQUIRE(serialize_beats(file.beats, file.flags) == bytes);

  const auto path = temp_file("dcn_test_roundtrip.beats");
  write_beats_file(path, beats);
  const auto back = read_beats_file(path);
  REQUIRE(serialize_beats(back.beats, back.flags) == bytes);
  std::filesystem::remove(path);
}

TEST_CASE("beats file rejects corruption") {
  const auto beats = generate_synthetic(2, 1, 0.0);
  auto bytes = serialize_beats(beats);

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  REQUIRE_THROWS_AS(deserialize_beats(bad_magic), FormatError);

  auto truncated = bytes;
  truncated.resize(truncated.size() - 7);
  try {
    deserialize_beats(truncated);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    REQUIRE(e.byte_offset() > 0);
  }

  auto trailing = bytes;
  trailing.push_back(0);
  REQUIRE_THROWS_AS(deserialize_beats(trailing), FormatError);

  auto bad_class = bytes;
  bad_class[20] = 9;  // first class byte: 16B header + u32 count
  REQUIRE_THROWS_AS(deserialize_beats(bad_class), FormatError);
}

TEST_CASE("beats CSV export writes one row per beat") {
  const auto beats = generate_synthetic(2, 4, 0.0);
  const auto path = temp_file("dcn_test_beats.csv");
  write_beats_csv(path, beats, {"tool: test"});
  std::ifstream f(path);
  std::string line;
  std::getline(f, line);
  REQUIRE(line == "# tool: test");
  std::getline(f, line);
  REQUIRE(line.starts_with("source_id,beat_index,label,s0,"));
  int rows = 0;
  while (std::getline(f, line))
    if (!line.empty()) ++rows;
  REQUIRE(rows == int(beats.size()));
  std::filesystem::remove(path);
}
