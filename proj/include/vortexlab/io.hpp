#pragma once

#include "vortexlab/core.hpp"
#include "vortexlab/diagnostics.hpp"
#include "vortexlab/patch_sim.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace vortexlab {

inline constexpr int kSnapshotFormatVersion = 1;
inline constexpr int kConfigSchemaVersion = 1;

enum class SnapshotFormat { csv, binary };

/// CSV: a "# {json metadata}" line, a "cloud_id,gamma,x,y" header, then one row per
/// particle with 17 significant digits. Binary: "VLABSNAP", u32 version, f64 time,
/// u32 clouds, per cloud i32 sign, f64 blob radius, u64 count, count x (gamma, x, y).
void write_snapshot(const std::filesystem::path& path, const SimulationState& state,
                    SnapshotFormat format);
SimulationState read_snapshot(const std::filesystem::path& path);

/// {"circulations": [...], "positions": [[x, y], ...]}
std::string system_to_json(const PointVortexSystemd& system, int indent = 2);
PointVortexSystemd system_from_json(const std::string& text);
PointVortexSystemd read_system(const std::filesystem::path& path);

struct ExperimentConfig {
    int schema_version = kConfigSchemaVersion;
    RunConfig run;
    std::string backend = "direct";
    TreeParams tree;
    int threads = 1;
    BootstrapOptions diagnostics{{2, 4}, true, 0.0};
    std::optional<std::pair<double, double>> fit_window;
    int energy_stride = 1;
    int checkpoint_every = 10;
    SnapshotFormat snapshot_format = SnapshotFormat::csv;
    std::string output_dir = "run";
    std::optional<std::uint64_t> seed;
};

/// Parses a config document; missing fields keep their defaults. "reference_file"
/// paths are resolved relative to base_dir.
ExperimentConfig config_from_json(const std::string& text,
                                  const std::filesystem::path& base_dir = {});
ExperimentConfig read_config(const std::filesystem::path& path);

/// Fully resolved echo: defaults that depend on the reference (dt, blob radius) are
/// written out explicitly, so re-reading the echo reproduces the run.
std::string config_to_json(const ExperimentConfig& config);
ExperimentConfig resolve(ExperimentConfig config);

std::string read_text(const std::filesystem::path& path);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace vortexlab
