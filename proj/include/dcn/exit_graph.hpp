#pragma once

// Early-exit graph machinery: enumerate legal exit placements, attach exit
// branches (classifier head + encoder/decoder pair) at conv-block
// boundaries, cut the augmented model into a node-assigned PartitionPlan,
// and serialize the pieces.
//
// Boundary k (1 <= k <= L-1) sits after conv block k, i.e. immediately
// before the (k+1)-th Conv1d layer of the backbone.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dcn/model_io.hpp"
#include "dcn/nn.hpp"

namespace dcn {

// ---------------------------------------------------------------------------
// Placements
// ---------------------------------------------------------------------------

struct ExitPlacement {
  std::vector<int> boundaries;  // strictly increasing, 1 or 2 entries

  static ExitPlacement of(std::vector<int> boundaries) {
    ExitPlacement p;
    p.boundaries = std::move(boundaries);
    if (p.boundaries.empty() || p.boundaries.size() > 2)
      throw InvalidInput("placement: need 1 or 2 exit boundaries");
    for (std::size_t i = 1; i < p.boundaries.size(); ++i)
      if (p.boundaries[i] <= p.boundaries[i - 1])
        throw InvalidInput("placement: boundaries must be strictly increasing");
    return p;
  }

  void validate_for(int num_conv_layers) const {
    for (int b : boundaries)
      if (b < 1 || b > num_conv_layers - 1)
        throw InvalidInput("placement: boundary " + std::to_string(b) +
                           " outside [1, L-1] for L=" +
                           std::to_string(num_conv_layers));
  }

  std::size_t num_exits() const { return boundaries.size(); }
  bool operator==(const ExitPlacement&) const = default;

  std::string to_string() const {
    std::string s;
    for (std::size_t i = 0; i < boundaries.size(); ++i) {
      if (i) s += ',';
      s += std::to_string(boundaries[i]);
    }
    return s;
  }
};

// All legal placements for a backbone of L conv layers: L-1 single
// positions, (L-1)(L-2)/2 ordered pairs.
inline std::vector<ExitPlacement> enumerate_placements(int num_conv_layers,
                                                       int num_exits) {
  if (num_exits != 1 && num_exits != 2)
    throw InvalidInput("enumerate_placements: 1 or 2 exits supported");
  if (num_exits == 1 && num_conv_layers < 2)
    throw InvalidInput("enumerate_placements: need L >= 2 for one exit");
  if (num_exits == 2 && num_conv_layers < 3)
    throw InvalidInput("enumerate_placements: need L >= 3 for two exits");
  std::vector<ExitPlacement> out;
  if (num_exits == 1) {
    for (int k = 1; k <= num_conv_layers - 1; ++k)
      out.push_back(ExitPlacement::of({k}));
  } else {
    for (int i = 1; i <= num_conv_layers - 1; ++i)
      for (int j = i + 1; j <= num_conv_layers - 1; ++j)
        out.push_back(ExitPlacement::of({i, j}));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Exit branches
// ---------------------------------------------------------------------------

struct ExitBranch {
  int at_boundary = 0;
  Shape1 boundary_shape{};          // feature map entering the boundary
  std::vector<LayerSpec> head;      // global avg pool -> dense -> softmax
  LayerSpec encoder;                // dense(feature_size -> bottleneck)
  LayerSpec decoder;                // dense(bottleneck -> feature_size)
  int bottleneck_size = 0;

  int feature_size() const { return boundary_shape.elements(); }

  ModelSpec head_model(int num_classes) const {
    return ModelSpec::chain(head, boundary_shape, num_classes);
  }
  ModelSpec encoder_model(int num_classes) const {
    return ModelSpec::chain({encoder}, boundary_shape, num_classes);
  }
  // Decoder followed by a reshape back to the boundary feature map; runs
  // as the first operation of the receiving stage.
  ModelSpec decoder_model(int num_classes) const {
    return ModelSpec::chain(
        {decoder,
         LayerSpec::reshape(boundary_shape.channels, boundary_shape.length)},
        {1, bottleneck_size}, num_classes);
  }
};

struct ExitModel {
  ModelSpec backbone;
  std::vector<ExitBranch> exits;  // sorted by boundary

  std::size_t num_stages() const { return exits.size() + 1; }
  std::size_t num_heads() const { return exits.size() + 1; }

  ExitPlacement placement() const {
    std::vector<int> bs;
    for (const auto& e : exits) bs.push_back(e.at_boundary);
    return ExitPlacement::of(std::move(bs));
  }

  // Backbone layer index right after conv block k (= index of the
  // (k+1)-th Conv1d layer).
  std::size_t cut_layer(int boundary) const {
    int seen = 0;
    for (std::size_t i = 0; i < backbone.layers.size(); ++i) {
      if (backbone.layers[i].kind == LayerKind::Conv1d) {
        if (seen == boundary) return i;
        ++seen;
      }
    }
    throw InvalidInput("cut_layer: boundary beyond last conv layer");
  }

  std::vector<std::size_t> cuts() const {
    std::vector<std::size_t> out;
    for (const auto& e : exits) out.push_back(cut_layer(e.at_boundary));
    return out;
  }
};

template <typename S>
struct ExitBranchParamsT {
  ParamStoreT<S> head;
  LayerParamsT<S> encoder;
  LayerParamsT<S> decoder;
};

template <typename S>
struct ExitParamsT {
  ParamStoreT<S> backbone;
  std::vector<ExitBranchParamsT<S>> branches;
};

using ExitParams = ExitParamsT<float>;

// Attach exit branches at the placement's boundaries. The backbone spec is
// embedded unchanged; heads are global-average-pool -> dense -> softmax and
// the encoder/decoder pair is a single dense layer each.
inline ExitModel attach_exits(const ModelSpec& backbone,
                              const ExitPlacement& placement,
                              int bottleneck_size) {
  const int L = backbone.num_conv_layers();
  placement.validate_for(L);
  if (bottleneck_size < 1)
    throw InvalidInput("attach_exits: bottleneck must be positive");

  ExitModel m;
  m.backbone = backbone;
  const auto shapes = backbone.shapes();
  for (int b : placement.boundaries) {
    ExitBranch branch;
    branch.at_boundary = b;
    const std::size_t cut = m.cut_layer(b);
    branch.boundary_shape = shapes[cut - 1];
    const int feature_size = branch.boundary_shape.elements();
    if (bottleneck_size > feature_size)
      throw InvalidInput("attach_exits: bottleneck larger than feature size");
    branch.bottleneck_size = bottleneck_size;
    branch.head = {LayerSpec::global_avg_pool(),
                   LayerSpec::dense(branch.boundary_shape.channels,
                                    backbone.num_classes),
                   LayerSpec::softmax()};
    branch.encoder = LayerSpec::dense(feature_size, bottleneck_size);
    branch.decoder = LayerSpec::dense(bottleneck_size, feature_size);
    m.exits.push_back(std::move(branch));
  }
  return m;
}

inline ModelSpec strip_exits(const ExitModel& m) { return m.backbone; }

// Branch parameters are seeded deterministically; the backbone parameters
// are carried over byte-for-byte.
template <typename S = float>
ExitParamsT<S> init_exit_params(const ExitModel& model,
                                const ParamStoreT<S>& backbone_params,
                                std::uint64_t seed) {
  check_params_match(model.backbone, backbone_params);
  ExitParamsT<S> out;
  out.backbone = backbone_params;
  Rng rng(seed);
  for (const auto& branch : model.exits) {
    ExitBranchParamsT<S> bp;
    bp.head = init_params<S>(branch.head_model(model.backbone.num_classes), rng);
    bp.encoder = std::move(
        init_params<S>(branch.encoder_model(model.backbone.num_classes), rng)
            .layers[0]);
    bp.decoder = std::move(
        init_params<S>(branch.decoder_model(model.backbone.num_classes), rng)
            .layers[0]);
    out.branches.push_back(std::move(bp));
  }
  return out;
}

template <typename S>
void check_exit_params_match(const ExitModel& model,
                             const ExitParamsT<S>& params) {
  check_params_match(model.backbone, params.backbone);
  if (params.branches.size() != model.exits.size())
    throw ShapeError("exit params: branch count mismatch");
  for (std::size_t i = 0; i < model.exits.size(); ++i) {
    const auto& branch = model.exits[i];
    const auto& bp = params.branches[i];
    check_params_match(branch.head_model(model.backbone.num_classes), bp.head);
    if (bp.encoder.weights.size() != weight_count(branch.encoder) ||
        bp.encoder.biases.size() != bias_count(branch.encoder) ||
        bp.decoder.weights.size() != weight_count(branch.decoder) ||
        bp.decoder.biases.size() != bias_count(branch.decoder))
      throw ShapeError("exit params: encoder/decoder size mismatch");
  }
}

// ---------------------------------------------------------------------------
// Partitioning
// ---------------------------------------------------------------------------

enum class NodeRole : std::uint8_t { Edge = 0, Fog = 1, Cloud = 2 };

inline const char* to_string(NodeRole r) {
  switch (r) {
    case NodeRole::Edge: return "edge";
    case NodeRole::Fog: return "fog";
    case NodeRole::Cloud: return "cloud";
  }
  return "?";
}

inline NodeRole role_from_string(const std::string& s) {
  if (s == "edge") return NodeRole::Edge;
  if (s == "fog") return NodeRole::Fog;
  if (s == "cloud") return NodeRole::Cloud;
  throw InvalidInput("unknown node role: " + s);
}

struct PlanStage {
  NodeRole role = NodeRole::Edge;
  std::size_t layer_begin = 0;  // backbone layer range [begin, end)
  std::size_t layer_end = 0;
  std::optional<std::size_t> exit_index;  // branch gating this stage's end
  std::uint64_t slice_flops = 0;    // backbone layers of this stage
  std::uint64_t decoder_flops = 0;  // reconstruction at stage entry
  std::uint64_t head_flops = 0;     // exit head at stage end
  std::uint64_t encoder_flops = 0;  // charged only when forwarding
  std::uint64_t trunk_bytes = 0;
  std::uint64_t head_bytes = 0;
  std::uint64_t encoder_bytes = 0;

  // Everything a beat pays for reaching the end of this stage (gated mode).
  std::uint64_t stage_flops() const {
    return decoder_flops + slice_flops + head_flops;
  }
  std::uint64_t total_bytes() const {
    return trunk_bytes + head_bytes + encoder_bytes;
  }
};

// Immutable description of how the exit-augmented model maps onto nodes;
// stage layer ranges tile the backbone with no gaps or overlaps.
struct PartitionPlan {
  ExitModel model;
  std::vector<NodeRole> roles;
  std::vector<PlanStage> stages;

  std::size_t num_stages() const { return stages.size(); }
};

namespace detail {

// Trunk chain of one stage: decoder + reshape prefix for stages after the
// first, then the backbone slice.
inline std::pair<ModelSpec, ParamStore> stage_trunk(
    const ExitModel& model, const ExitParams& params, std::size_t stage,
    const std::vector<std::size_t>& cuts) {
  const std::size_t begin = stage == 0 ? 0 : cuts[stage - 1];
  const std::size_t end =
      stage == model.exits.size() ? model.backbone.layers.size() : cuts[stage];
  std::vector<LayerSpec> layers;
  ParamStore trunk_params;
  Shape1 input_shape = model.backbone.input_shape;
  if (stage > 0) {
    const auto& branch = model.exits[stage - 1];
    const auto dec = branch.decoder_model(model.backbone.num_classes);
    layers.insert(layers.end(), dec.layers.begin(), dec.layers.end());
    trunk_params.layers.push_back(params.branches[stage - 1].decoder);
    trunk_params.layers.emplace_back();  // reshape
    input_shape = {1, branch.bottleneck_size};
  }
  for (std::size_t i = begin; i < end; ++i) {
    layers.push_back(model.backbone.layers[i]);
    trunk_params.layers.push_back(params.backbone.layers[i]);
  }
  return {ModelSpec::chain(std::move(layers), input_shape,
                           model.backbone.num_classes),
          std::move(trunk_params)};
}

}  // namespace detail

// Cut the exit-augmented model into stages assigned to the given roles.
// Stage counts must be exits+1 and roles must be strictly ordered
// Edge < Fog < Cloud.
inline PartitionPlan partition(const ExitModel& model, const ExitParams& params,
                               const ExitPlacement& placement,
                               const std::vector<NodeRole>& roles) {
  if (!(model.placement() == placement))
    throw InvalidInput("partition: placement does not match the model's exits");
  if (roles.size() != model.num_stages())
    throw InvalidInput("partition: need " + std::to_string(model.num_stages()) +
                       " roles, got " + std::to_string(roles.size()));
  for (std::size_t i = 1; i < roles.size(); ++i)
    if (!(int(roles[i - 1]) < int(roles[i])))
      throw InvalidInput("partition: roles must be ordered edge < fog < cloud");
  check_exit_params_match(model, params);

  const auto cuts = model.cuts();
  const auto shapes = model.backbone.shapes();
  PartitionPlan plan;
  plan.model = model;
  plan.roles = roles;
  for (std::size_t s = 0; s < model.num_stages(); ++s) {
    PlanStage st;
    st.role = roles[s];
    st.layer_begin = s == 0 ? 0 : cuts[s - 1];
    st.layer_end =
        s == model.exits.size() ? model.backbone.layers.size() : cuts[s];

    auto [trunk_model, trunk_params] =
        detail::stage_trunk(model, params, s, cuts);
    st.trunk_bytes = serialized_size(trunk_model, trunk_params);
    st.slice_flops = flops_of_chain(
        std::span(model.backbone.layers.data() + st.layer_begin,
                  st.layer_end - st.layer_begin),
        st.layer_begin == 0 ? model.backbone.input_shape
                            : shapes[st.layer_begin - 1]);
    if (s > 0) {
      const auto& prev = model.exits[s - 1];
      st.decoder_flops =
          prev.decoder_model(model.backbone.num_classes).total_flops();
    }

    if (s < model.exits.size()) {
      st.exit_index = s;
      const auto& branch = model.exits[s];
      const auto head = branch.head_model(model.backbone.num_classes);
      const auto enc = branch.encoder_model(model.backbone.num_classes);
      st.head_flops = head.total_flops();
      st.encoder_flops = enc.total_flops();
      st.head_bytes = serialized_size(head, params.branches[s].head);
      ParamStore enc_params;
      enc_params.layers.push_back(params.branches[s].encoder);
      st.encoder_bytes = serialized_size(enc, enc_params);
    }
    plan.stages.push_back(st);
  }

  // tiling invariant
  std::size_t expect = 0;
  for (const auto& st : plan.stages) {
    if (st.layer_begin != expect) throw ShapeError("partition: gap in tiling");
    expect = st.layer_end;
  }
  if (expect != model.backbone.layers.size())
    throw ShapeError("partition: stages do not cover the backbone");
  return plan;
}

// ---------------------------------------------------------------------------
// Memory budget
// ---------------------------------------------------------------------------

inline constexpr std::uint64_t kDefaultEdgeBudgetBytes = 256 * 1024;

struct MemoryBudgetEntry {
  std::size_t stage = 0;
  NodeRole role = NodeRole::Edge;
  std::uint64_t bytes = 0;
  bool over_budget = false;
};

struct MemoryBudgetReport {
  std::uint64_t budget_bytes = kDefaultEdgeBudgetBytes;
  std::vector<MemoryBudgetEntry> entries;
  bool any_over = false;
};

inline MemoryBudgetReport check_memory_budget(
    const PartitionPlan& plan,
    std::uint64_t edge_budget_bytes = kDefaultEdgeBudgetBytes) {
  MemoryBudgetReport report;
  report.budget_bytes = edge_budget_bytes;
  for (std::size_t s = 0; s < plan.stages.size(); ++s) {
    MemoryBudgetEntry e;
    e.stage = s;
    e.role = plan.stages[s].role;
    e.bytes = plan.stages[s].total_bytes();
    e.over_budget = e.bytes > edge_budget_bytes;
    report.any_over = report.any_over || e.over_budget;
    report.entries.push_back(e);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Exit-model container ("DCX1"): a trained exit-augmented model in one
// file. Embeds the backbone and each branch piece as length-prefixed,
// spec-exact DCN1 blocks, so round-trips are bitwise.
// ---------------------------------------------------------------------------

inline constexpr char kExitModelMagic[4] = {'D', 'C', 'X', '1'};

inline std::vector<std::uint8_t> serialize_exit_model(const ExitModel& model,
                                                      const ExitParams& params) {
  check_exit_params_match(model, params);
  ByteWriter w;
  w.raw(kExitModelMagic, sizeof kExitModelMagic);
  w.u32(std::uint32_t(model.exits.size()));
  for (const auto& e : model.exits) {
    w.u32(std::uint32_t(e.at_boundary));
    w.u32(std::uint32_t(e.bottleneck_size));
  }
  auto block = [&w](const std::vector<std::uint8_t>& b) {
    w.u64(b.size());
    w.raw(b.data(), b.size());
  };
  block(serialize_model(model.backbone, params.backbone));
  for (std::size_t i = 0; i < model.exits.size(); ++i) {
    const auto& branch = model.exits[i];
    const auto& bp = params.branches[i];
    block(serialize_model(branch.head_model(model.backbone.num_classes),
                          bp.head));
    ParamStore enc;
    enc.layers.push_back(bp.encoder);
    block(serialize_model(branch.encoder_model(model.backbone.num_classes),
                          enc));
    ParamStore dec;
    dec.layers.push_back(bp.decoder);
    dec.layers.emplace_back();  // reshape
    block(serialize_model(branch.decoder_model(model.backbone.num_classes),
                          dec));
  }
  return w.take();
}

inline std::pair<ExitModel, ExitParams> deserialize_exit_model(
    std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  char magic[4];
  for (char& c : magic) c = char(r.u8());
  if (std::memcmp(magic, kExitModelMagic, 4) != 0)
    throw FormatError("not an exit-model container (bad magic)", 0);
  const std::uint32_t num_exits = r.u32();
  if (num_exits < 1 || num_exits > 2)
    throw FormatError("exit count must be 1 or 2", 4);
  std::vector<int> boundaries;
  std::vector<int> bottlenecks;
  for (std::uint32_t i = 0; i < num_exits; ++i) {
    boundaries.push_back(int(r.u32()));
    bottlenecks.push_back(int(r.u32()));
  }
  auto block = [&r]() {
    const std::uint64_t n = r.u64();
    const std::size_t at = r.pos();
    if (r.remaining() < n) throw FormatError("truncated block", at);
    std::vector<std::uint8_t> b(n);
    for (auto& x : b) x = r.u8();
    return b;
  };

  auto [backbone, backbone_params] = deserialize_model(block());
  for (int b : bottlenecks)
    if (b != bottlenecks[0])
      throw FormatError("mixed bottleneck sizes are not supported", 8);
  ExitModel model;
  try {
    model = attach_exits(backbone, ExitPlacement::of(boundaries),
                         bottlenecks.empty() ? 1 : bottlenecks[0]);
  } catch (const InvalidInput& e) {
    throw FormatError(std::string("invalid exit table: ") + e.what(), 8);
  }
  ExitParams params;
  params.backbone = std::move(backbone_params);
  for (std::size_t i = 0; i < model.exits.size(); ++i) {
    ExitBranchParamsT<float> bp;
    auto [head_model, head_params] = deserialize_model(block());
    auto [enc_model, enc_params] = deserialize_model(block());
    auto [dec_model, dec_params] = deserialize_model(block());
    bp.head = std::move(head_params);
    bp.encoder = std::move(enc_params.layers.at(0));
    bp.decoder = std::move(dec_params.layers.at(0));
    params.branches.push_back(std::move(bp));
  }
  r.expect_end("exit model");
  check_exit_params_match(model, params);
  return {std::move(model), std::move(params)};
}

inline void write_exit_model_file(const std::filesystem::path& path,
                                  const ExitModel& model,
                                  const ExitParams& params) {
  write_file_bytes(path, serialize_exit_model(model, params));
}

inline std::pair<ExitModel, ExitParams> read_exit_model_file(
    const std::filesystem::path& path) {
  return deserialize_exit_model(read_file_bytes(path));
}

}  // namespace dcn
