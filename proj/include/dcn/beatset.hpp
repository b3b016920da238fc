#pragma once

// Beat-level dataset handling: fixed 260-sample R-peak-centred windows with
// AAMI labels, linear resampling, deterministic synthetic beat generation,
// stratified splitting, and the `.beats` binary container plus CSV export.

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "dcn/common.hpp"

namespace dcn {

inline constexpr int kRawBeatBytes = kBeatLength * 4;  // float32 window

enum class AamiClass : std::uint8_t { N = 0, SVEB = 1, VEB = 2, F = 3, Q = 4 };

inline const char* to_string(AamiClass c) {
  switch (c) {
    case AamiClass::N: return "N";
    case AamiClass::SVEB: return "SVEB";
    case AamiClass::VEB: return "VEB";
    case AamiClass::F: return "F";
    case AamiClass::Q: return "Q";
  }
  return "?";
}

inline AamiClass aami_from_string(const std::string& s) {
  for (int i = 0; i < kNumClasses; ++i) {
    const auto c = AamiClass(i);
    if (s == to_string(c)) return c;
  }
  throw InvalidInput("unknown AAMI class: " + s);
}

// One labelled heartbeat window, 260 samples centred on the R peak.
struct BeatRecord {
  std::array<float, kBeatLength> samples{};
  AamiClass label = AamiClass::N;
  std::string source_id;
  std::uint32_t beat_index = 0;
};

struct DatasetSplit {
  std::vector<BeatRecord> train;
  std::vector<BeatRecord> validation;
  std::vector<BeatRecord> test;
  std::uint64_t seed = 0;
};

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

// Linear-interpolation resampler. Output length = round(n * rate_out /
// rate_in); endpoints are preserved exactly. Output values never leave
// [min(input), max(input)].
inline std::vector<float> resample(std::span<const float> signal,
                                   double rate_in, double rate_out) {
  if (signal.empty()) throw InvalidInput("resample: empty signal");
  if (!(rate_in > 0.0) || !(rate_out > 0.0))
    throw InvalidInput("resample: rates must be positive");
  if (!all_finite(signal))
    throw InvalidInput("resample: non-finite sample");

  const std::size_t n = signal.size();
  const auto m = std::size_t(std::llround(double(n) * rate_out / rate_in));
  std::vector<float> out;
  out.reserve(m);
  if (m == 0) return out;
  if (m == 1 || n == 1) {
    out.push_back(signal[0]);
    for (std::size_t i = 1; i < m; ++i) out.push_back(signal[0]);
    return out;
  }
  for (std::size_t i = 0; i < m; ++i) {
    const double pos = double(i) * double(n - 1) / double(m - 1);
    const auto lo = std::size_t(pos);
    if (lo >= n - 1) {
      out.push_back(signal[n - 1]);
      continue;
    }
    const double frac = pos - double(lo);
    const double a = signal[lo];
    const double b = signal[lo + 1];
    out.push_back(float(a + frac * (b - a)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic beats
// ---------------------------------------------------------------------------

// Fixed per-class morphology templates (raw, before per-beat z-scoring).
// Each class is a sum of Gaussian bumps with class-specific R-peak width,
// T-wave shape and RR-prefix content; constants are documented in
// docs/synthetic_beats.md and must not change, since frozen test fixtures
// depend on them.
namespace detail {

struct Bump {
  double center, sigma, amp;
};

inline const std::array<std::vector<Bump>, kNumClasses>& class_bumps() {
  static const std::array<std::vector<Bump>, kNumClasses> bumps = {{
      // N: P wave, narrow R, S dip, upright T
      {{85, 7, 0.15}, {124, 2.5, -0.12}, {130, 4, 1.0}, {137, 3, -0.22},
       {185, 14, 0.32}},
      // SVEB: early beat, previous T visible in the prefix, no P
      {{25, 12, 0.28}, {130, 3.5, 0.92}, {136, 3, -0.18}, {178, 11, 0.26}},
      // VEB: wide R, deep S, inverted T
      {{130, 12, 1.25}, {155, 9, -0.55}, {200, 16, -0.40}},
      // F: fusion of normal and ventricular morphology
      {{92, 6, 0.08}, {130, 8, 0.80}, {142, 5, -0.30}, {188, 15, 0.22}},
      // Q: pacing spike plus double-humped wide complex
      {{112, 1.5, 0.55}, {124, 9, 0.65}, {140, 9, 0.70}, {205, 20, 0.12}},
  }};
  return bumps;
}

inline void zscore_in_place(std::array<double, kBeatLength>& xs) {
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= kBeatLength;
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= kBeatLength;
  const double sd = std::sqrt(var);
  if (sd < 1e-12) {
    xs.fill(0.0);
    return;
  }
  for (double& x : xs) x = (x - mean) / sd;
}

}  // namespace detail

// Raw (un-normalized) morphology template for one class.
inline std::array<double, kBeatLength> raw_class_template(AamiClass c) {
  std::array<double, kBeatLength> t{};
  for (const auto& b : detail::class_bumps()[int(c)]) {
    for (int i = 0; i < kBeatLength; ++i) {
      const double z = (double(i) - b.center) / b.sigma;
      t[i] += b.amp * std::exp(-0.5 * z * z);
    }
  }
  return t;
}

// The z-scored template a zero-noise synthetic beat reproduces exactly.
inline std::array<float, kBeatLength> class_template(AamiClass c) {
  auto t = raw_class_template(c);
  detail::zscore_in_place(t);
  std::array<float, kBeatLength> out{};
  for (int i = 0; i < kBeatLength; ++i) out[i] = float(t[i]);
  return out;
}

// count_per_class beats for each of the 5 classes, template + additive
// Gaussian noise, then per-beat z-score. Bitwise deterministic per seed.
inline std::vector<BeatRecord> generate_synthetic(int count_per_class,
                                                  std::uint64_t seed,
                                                  double noise_sigma) {
  if (count_per_class < 1)
    throw InvalidInput("generate_synthetic: count_per_class must be >= 1");
  if (noise_sigma < 0.0)
    throw InvalidInput("generate_synthetic: noise_sigma must be >= 0");

  Rng rng(seed);
  std::vector<BeatRecord> beats;
  beats.reserve(std::size_t(count_per_class) * kNumClasses);
  for (int c = 0; c < kNumClasses; ++c) {
    const auto tpl = raw_class_template(AamiClass(c));
    for (int b = 0; b < count_per_class; ++b) {
      std::array<double, kBeatLength> xs = tpl;
      if (noise_sigma > 0.0) {
        for (double& x : xs) x += noise_sigma * rng.gaussian();
      }
      detail::zscore_in_place(xs);
      BeatRecord rec;
      for (int i = 0; i < kBeatLength; ++i) rec.samples[i] = float(xs[i]);
      rec.label = AamiClass(c);
      rec.source_id = std::string("syn-") + to_string(AamiClass(c));
      rec.beat_index = std::uint32_t(b);
      beats.push_back(std::move(rec));
    }
  }
  return beats;
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

// Stratified train/validation/test split. Per class: shuffle, then
// n_train = round(n*r0), n_val = round(n*r1), rest test, so per-class
// counts sit within one beat of the exact proportions.
inline DatasetSplit split(const std::vector<BeatRecord>& beats,
                          std::array<double, 3> ratios, std::uint64_t seed) {
  double sum = 0.0;
  for (double r : ratios) {
    if (r < 0.0) throw InvalidInput("split: ratios must be non-negative");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw InvalidInput("split: ratios must sum to 1");

  std::array<std::vector<std::size_t>, kNumClasses> by_class;
  for (std::size_t i = 0; i < beats.size(); ++i)
    by_class[int(beats[i].label)].push_back(i);

  DatasetSplit out;
  out.seed = seed;
  Rng rng(seed);
  for (auto& idxs : by_class) {
    shuffle_in_place(idxs, rng);
    const auto n = std::int64_t(idxs.size());
    auto n_train = std::int64_t(std::llround(double(n) * ratios[0]));
    auto n_val = std::int64_t(std::llround(double(n) * ratios[1]));
    n_train = std::clamp<std::int64_t>(n_train, 0, n);
    n_val = std::clamp<std::int64_t>(n_val, 0, n - n_train);
    for (std::int64_t i = 0; i < n; ++i) {
      const BeatRecord& rec = beats[idxs[std::size_t(i)]];
      if (i < n_train)
        out.train.push_back(rec);
      else if (i < n_train + n_val)
        out.validation.push_back(rec);
      else
        out.test.push_back(rec);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// `.beats` container
// ---------------------------------------------------------------------------
//
// Fixed 16-byte header: magic "DCNBEATS", u32 format version, u32 flags
// (bit0: samples are per-beat z-scored). Then u32 beat count and per beat:
// class byte, length-prefixed source id, u32 beat_index, 260 LE f32.

inline constexpr char kBeatsMagic[8] = {'D', 'C', 'N', 'B', 'E', 'A', 'T', 'S'};
inline constexpr std::uint32_t kBeatsVersion = 1;
inline constexpr std::uint32_t kBeatsFlagZScored = 1u;

struct BeatsFile {
  std::uint32_t flags = kBeatsFlagZScored;
  std::vector<BeatRecord> beats;
};

inline std::vector<std::uint8_t> serialize_beats(
    const std::vector<BeatRecord>& beats,
    std::uint32_t flags = kBeatsFlagZScored) {
  ByteWriter w;
  w.raw(kBeatsMagic, sizeof kBeatsMagic);
  w.u32(kBeatsVersion);
  w.u32(flags);
  w.u32(std::uint32_t(beats.size()));
  for (const auto& b : beats) {
    w.u8(std::uint8_t(b.label));
    w.str(b.source_id);
    w.u32(b.beat_index);
    for (float s : b.samples) w.f32(s);
  }
  return w.take();
}

inline BeatsFile deserialize_beats(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  char magic[8];
  for (char& c : magic) c = char(r.u8());
  if (std::memcmp(magic, kBeatsMagic, 8) != 0)
    throw FormatError("not a .beats file (bad magic)", 0);
  const std::uint32_t version = r.u32();
  if (version != kBeatsVersion)
    throw FormatError("unsupported .beats version", 8);
  BeatsFile out;
  out.flags = r.u32();
  const std::uint32_t count = r.u32();
  out.beats.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    BeatRecord b;
    const std::size_t class_at = r.pos();
    const std::uint8_t cls = r.u8();
    if (cls >= kNumClasses) throw FormatError("invalid class byte", class_at);
    b.label = AamiClass(cls);
    b.source_id = r.str();
    b.beat_index = r.u32();
    const std::size_t samples_at = r.pos();
    for (float& s : b.samples) s = r.f32();
    if (!all_finite(b.samples))
      throw FormatError("non-finite sample", samples_at);
    out.beats.push_back(std::move(b));
  }
  r.expect_end(".beats");
  return out;
}

inline void write_file_bytes(const std::filesystem::path& path,
                             std::span<const std::uint8_t> bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw InvalidInput("cannot open for writing: " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()),
          std::streamsize(bytes.size()));
  if (!f) throw InvalidInput("write failed: " + path.string());
}

inline std::vector<std::uint8_t> read_file_bytes(
    const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InvalidInput("cannot open: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

inline void write_beats_file(const std::filesystem::path& path,
                             const std::vector<BeatRecord>& beats,
                             std::uint32_t flags = kBeatsFlagZScored) {
  const auto bytes = serialize_beats(beats, flags);
  write_file_bytes(path, bytes);
}

inline BeatsFile read_beats_file(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return deserialize_beats(bytes);
}

// CSV export: one row per beat, `source_id,beat_index,label,s0..s259`.
// Leading '#' lines carry provenance.
inline void write_beats_csv(const std::filesystem::path& path,
                            const std::vector<BeatRecord>& beats,
                            const std::vector<std::string>& meta = {}) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw InvalidInput("cannot open for writing: " + path.string());
  for (const auto& line : meta) f << "# " << line << "\n";
  f << "source_id,beat_index,label";
  for (int i = 0; i < kBeatLength; ++i) f << ",s" << i;
  f << "\n";
  for (const auto& b : beats) {
    f << b.source_id << ',' << b.beat_index << ',' << to_string(b.label);
    for (float s : b.samples) f << ',' << format_g9(s);
    f << "\n";
  }
}

}  // namespace dcn
