#pragma once

// Partition export: one spec-exact `.dcn` chain per stage piece (trunk,
// exit head, encoder), plus a human-readable `.plan.json` manifest with
// roles, layer indices, file paths, byte sizes and boundary payloads.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dcn/exit_graph.hpp"

namespace dcn {

struct StageFiles {
  std::filesystem::path trunk;
  std::filesystem::path head;     // empty for the final stage
  std::filesystem::path encoder;  // empty for the final stage
};

// In-memory serialization of every piece of one stage.
struct StageBlobs {
  std::vector<std::uint8_t> trunk;
  std::vector<std::uint8_t> head;
  std::vector<std::uint8_t> encoder;
};

inline StageBlobs serialize_stage(const PartitionPlan& plan,
                                  const ExitParams& params, std::size_t s) {
  const ExitModel& model = plan.model;
  const auto cuts = model.cuts();
  StageBlobs out;
  auto [trunk_model, trunk_params] =
      detail::stage_trunk(model, params, s, cuts);
  out.trunk = serialize_model(trunk_model, trunk_params);
  if (s < model.exits.size()) {
    const auto& branch = model.exits[s];
    out.head = serialize_model(branch.head_model(model.backbone.num_classes),
                               params.branches[s].head);
    ParamStore enc;
    enc.layers.push_back(params.branches[s].encoder);
    out.encoder = serialize_model(
        branch.encoder_model(model.backbone.num_classes), enc);
  }
  return out;
}

inline nlohmann::json plan_to_json(const PartitionPlan& plan,
                                   const std::vector<StageFiles>& files,
                                   const nlohmann::json& meta = {}) {
  nlohmann::json j;
  if (!meta.is_null()) j["meta"] = meta;
  j["placement"] = plan.model.placement().boundaries;
  j["bottleneck_size"] =
      plan.model.exits.empty() ? 0 : plan.model.exits.front().bottleneck_size;
  j["stages"] = nlohmann::json::array();
  for (std::size_t s = 0; s < plan.stages.size(); ++s) {
    const auto& st = plan.stages[s];
    nlohmann::json q;
    q["role"] = to_string(st.role);
    q["layers"] = {st.layer_begin, st.layer_end};
    q["flops"] = st.stage_flops();
    q["forward_flops"] = st.encoder_flops;
    q["bytes"] = {{"trunk", st.trunk_bytes},
                  {"head", st.head_bytes},
                  {"encoder", st.encoder_bytes},
                  {"total", st.total_bytes()}};
    nlohmann::json fj;
    fj["trunk"] = files[s].trunk.filename().string();
    if (!files[s].head.empty()) fj["head"] = files[s].head.filename().string();
    if (!files[s].encoder.empty())
      fj["encoder"] = files[s].encoder.filename().string();
    q["files"] = fj;
    if (st.exit_index) {
      const auto& branch = plan.model.exits[*st.exit_index];
      q["exit_boundary"] = branch.at_boundary;
      q["boundary_payload_bytes"] = 4 * branch.bottleneck_size;
    }
    j["stages"].push_back(std::move(q));
  }
  return j;
}

// Writes stage files and the manifest into `dir`; returns the file layout.
inline std::vector<StageFiles> export_partition(
    const PartitionPlan& plan, const ExitParams& params,
    const std::filesystem::path& dir, const nlohmann::json& meta = {}) {
  std::filesystem::create_directories(dir);
  std::vector<StageFiles> files;
  for (std::size_t s = 0; s < plan.stages.size(); ++s) {
    const auto blobs = serialize_stage(plan, params, s);
    StageFiles sf;
    const std::string base = "stage" + std::to_string(s);
    sf.trunk = dir / (base + ".dcn");
    write_file_bytes(sf.trunk, blobs.trunk);
    if (!blobs.head.empty()) {
      sf.head = dir / (base + ".head.dcn");
      write_file_bytes(sf.head, blobs.head);
      sf.encoder = dir / (base + ".encoder.dcn");
      write_file_bytes(sf.encoder, blobs.encoder);
    }
    files.push_back(sf);
  }
  std::ofstream f(dir / "plan.json", std::ios::trunc);
  if (!f)
    throw InvalidInput("cannot open for writing: " +
                       (dir / "plan.json").string());
  f << plan_to_json(plan, files, meta).dump(2) << "\n";
  return files;
}

// Re-serializes each stage and compares bytes against the files a previous
// export left on disk. Returns the first mismatch description, empty on
// success.
inline std::string check_exported_partition(const PartitionPlan& plan,
                                            const ExitParams& params,
                                            const std::filesystem::path& dir) {
  for (std::size_t s = 0; s < plan.stages.size(); ++s) {
    const auto blobs = serialize_stage(plan, params, s);
    const std::string base = "stage" + std::to_string(s);
    const auto check = [&](const std::filesystem::path& p,
                           const std::vector<std::uint8_t>& want) {
      if (want.empty()) return std::string();
      if (!std::filesystem::exists(p)) return "missing file: " + p.string();
      if (read_file_bytes(p) != want) return "byte mismatch: " + p.string();
      return std::string();
    };
    for (const auto& err :
         {check(dir / (base + ".dcn"), blobs.trunk),
          check(dir / (base + ".head.dcn"), blobs.head),
          check(dir / (base + ".encoder.dcn"), blobs.encoder)}) {
      if (!err.empty()) return err;
    }
  }
  return {};
}

}  // namespace dcn
