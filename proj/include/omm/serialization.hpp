#pragma once

#include <filesystem>

#include <nlohmann/json.hpp>

#include "omm/calibration.hpp"
#include "omm/mesh_model.hpp"
#include "omm/neural.hpp"

namespace omm {

/// Version written into every JSON document this library produces.
inline constexpr int kSchemaVersion = 1;

using Json = nlohmann::ordered_json;

Json to_json(const MeshTopology& topology);
MeshTopology topology_from_json(const Json& j);

Json to_json(const AnalyticalParams& params);
AnalyticalParams analytical_from_json(const Json& j);

Json to_json(const VirtualChipParams& chip);
VirtualChipParams chip_from_json(const Json& j);

Json to_json(const FitReport& report);
FitReport fit_report_from_json(const Json& j);

struct Checkpoint {
  MlpSpec spec;
  MlpParams params;
  Json metadata = Json::object();
};

Json to_json(const Checkpoint& checkpoint);
Checkpoint checkpoint_from_json(const Json& j);

Json read_json(const std::filesystem::path& path);
void write_json(const Json& j, const std::filesystem::path& path);

/// Read a chip fixture; a bare analytical-params document becomes a mismatch-free chip.
VirtualChipParams load_chip(const std::filesystem::path& path);

}  // namespace omm
