#pragma once

// Bit-exact binary model container (`.dcn`): magic "DCN1", little-endian
// header (layer count, input shape, class count, per-layer kind byte +
// parameter integers), then per-layer weight and bias arrays as LE f32 in
// declaration order.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dcn/beatset.hpp"  // file byte helpers
#include "dcn/nn.hpp"

namespace dcn {

inline constexpr char kModelMagic[4] = {'D', 'C', 'N', '1'};

namespace detail {

inline void write_layer_spec(ByteWriter& w, const LayerSpec& l) {
  w.u8(std::uint8_t(l.kind));
  switch (l.kind) {
    case LayerKind::Conv1d:
      w.u32(std::uint32_t(l.in_channels));
      w.u32(std::uint32_t(l.out_channels));
      w.u32(std::uint32_t(l.kernel_size));
      w.u32(std::uint32_t(l.stride));
      w.u32(std::uint32_t(l.padding));
      break;
    case LayerKind::MaxPool1d:
      w.u32(std::uint32_t(l.window));
      w.u32(std::uint32_t(l.pool_stride));
      break;
    case LayerKind::Dense:
      w.u32(std::uint32_t(l.in_features));
      w.u32(std::uint32_t(l.out_features));
      break;
    case LayerKind::Reshape:
      w.u32(std::uint32_t(l.reshape_channels));
      w.u32(std::uint32_t(l.reshape_length));
      break;
    default:
      break;
  }
}

inline LayerSpec read_layer_spec(ByteReader& r) {
  const std::size_t at = r.pos();
  const std::uint8_t kind = r.u8();
  if (kind > std::uint8_t(LayerKind::Reshape))
    throw FormatError("unknown layer kind", at);
  try {
    switch (LayerKind(kind)) {
      case LayerKind::Conv1d: {
        const int in_c = int(r.u32()), out_c = int(r.u32()),
                  kernel = int(r.u32()), stride = int(r.u32()),
                  padding = int(r.u32());
        return LayerSpec::conv1d(in_c, out_c, kernel, stride, padding);
      }
      case LayerKind::MaxPool1d: {
        const int window = int(r.u32()), stride = int(r.u32());
        return LayerSpec::max_pool1d(window, stride);
      }
      case LayerKind::Dense: {
        const int in_f = int(r.u32()), out_f = int(r.u32());
        return LayerSpec::dense(in_f, out_f);
      }
      case LayerKind::Reshape: {
        const int c = int(r.u32()), l = int(r.u32());
        return LayerSpec::reshape(c, l);
      }
      case LayerKind::ReLU:
        return LayerSpec::relu();
      case LayerKind::Flatten:
        return LayerSpec::flatten();
      case LayerKind::Softmax:
        return LayerSpec::softmax();
      case LayerKind::GlobalAvgPool:
        return LayerSpec::global_avg_pool();
    }
  } catch (const InvalidInput& e) {
    throw FormatError(std::string("bad layer parameters: ") + e.what(), at);
  }
  throw FormatError("unknown layer kind", at);
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize_model(const ModelSpec& model,
                                                 const ParamStore& params) {
  check_params_match(model, params);
  ByteWriter w;
  w.raw(kModelMagic, sizeof kModelMagic);
  w.u32(std::uint32_t(model.layers.size()));
  w.u32(std::uint32_t(model.input_shape.channels));
  w.u32(std::uint32_t(model.input_shape.length));
  w.u32(std::uint32_t(model.num_classes));
  for (const auto& l : model.layers) detail::write_layer_spec(w, l);
  for (const auto& p : params.layers) {
    for (float v : p.weights) w.f32(v);
    for (float v : p.biases) w.f32(v);
  }
  return w.take();
}

inline std::pair<ModelSpec, ParamStore> deserialize_model(
    std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  char magic[4];
  for (char& c : magic) c = char(r.u8());
  if (std::memcmp(magic, kModelMagic, 4) != 0)
    throw FormatError("not a .dcn model (bad magic)", 0);
  const std::uint32_t layer_count = r.u32();
  if (layer_count == 0)
    throw FormatError("model must contain at least one layer", 4);
  const int in_c = int(r.u32());
  const int in_l = int(r.u32());
  const int classes = int(r.u32());
  if (in_c <= 0 || in_l <= 0 || classes <= 0)
    throw FormatError("bad input shape", 8);
  const std::size_t table_at = r.pos();
  std::vector<LayerSpec> layers;
  layers.reserve(layer_count);
  for (std::uint32_t i = 0; i < layer_count; ++i)
    layers.push_back(detail::read_layer_spec(r));
  ModelSpec model;
  try {
    model = ModelSpec::chain(std::move(layers), {in_c, in_l}, classes);
  } catch (const ShapeError& e) {
    throw FormatError(std::string("incompatible layer chain: ") + e.what(),
                      table_at);
  }
  ParamStore params;
  params.layers.resize(model.layers.size());
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    auto& p = params.layers[i];
    p.weights.resize(weight_count(model.layers[i]));
    p.biases.resize(bias_count(model.layers[i]));
    for (float& v : p.weights) v = r.f32();
    for (float& v : p.biases) v = r.f32();
  }
  r.expect_end(".dcn");
  return {std::move(model), std::move(params)};
}

inline void write_model_file(const std::filesystem::path& path,
                             const ModelSpec& model,
                             const ParamStore& params) {
  write_file_bytes(path, serialize_model(model, params));
}

inline std::pair<ModelSpec, ParamStore> read_model_file(
    const std::filesystem::path& path) {
  return deserialize_model(read_file_bytes(path));
}

// Serialized size in bytes, used by the deployment memory-budget check.
inline std::uint64_t serialized_size(const ModelSpec& model,
                                     const ParamStore& params) {
  return serialize_model(model, params).size();
}

}  // namespace dcn
