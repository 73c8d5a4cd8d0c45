#pragma once

// Run configuration and the file-level pipeline steps behind each CLI
// subcommand: gen, corrupt, train, audit, eval, heatmap.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "csl/detect.hpp"
#include "csl/metrics.hpp"
#include "csl/model.hpp"
#include "csl/seqdata.hpp"
#include "csl/trainer.hpp"

namespace csl {

struct RunConfig {
    std::uint64_t seed = 0;
    int workers = 1;
    std::filesystem::path data_dir = "data";
    std::filesystem::path store_dir = "store";
    std::filesystem::path out_dir = "out";

    PhaseGrammar grammar;
    int n_train = 40;
    int n_val = 10;
    int n_test = 20;

    CorruptionSpec corruption;
    ModelConfig model;
    TrainConfig train;
    DetectionConfig detection;
    /// Quantile of clean validation CSL used as tau when the threshold rule
    /// has no explicit tau.
    double tau_quantile = 0.95;
    bool tau_explicit = false;

    double eval_k_percent = 10.0;
    EdaPooling eda_pooling = EdaPooling::PerVideo;
};

/// Independent sub-seed for a named pipeline stage.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stage);

/// Parses a config document. Missing sections take defaults; seeds not given
/// explicitly are derived from the global seed. Throws ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
/// Fully resolved configuration, including every derived seed.
nlohmann::json to_json(const RunConfig& c);

struct GenResult {
    std::filesystem::path train, val, test;
};
GenResult cmd_gen(const RunConfig& cfg, std::ostream& log);

std::filesystem::path cmd_corrupt(const RunConfig& cfg, const std::filesystem::path& input,
                                  const std::filesystem::path& output, std::ostream& log);

CheckpointStore cmd_train(const RunConfig& cfg, const std::filesystem::path& train_file, std::ostream& log);

struct AuditResult {
    std::filesystem::path csv;
    std::filesystem::path profiles;
    std::vector<CslProfile> profiles_data;
    std::vector<LossTrajectory> trajectories;
};

/// Audits `dataset_file` against the store. `val_file` supplies clean
/// validation sequences for tau calibration under the threshold rule.
AuditResult cmd_audit(const RunConfig& cfg, const std::filesystem::path& dataset_file,
                      const std::optional<std::filesystem::path>& val_file, std::ostream& log);

MetricsReport cmd_eval(const RunConfig& cfg, const std::filesystem::path& profiles_file,
                       const std::filesystem::path& dataset_file, std::ostream& log);

/// Writes heatmap_<id>.pgm for one video, or every video when `video` is empty.
std::vector<std::filesystem::path> cmd_heatmap(const std::filesystem::path& profiles_file,
                                               const std::optional<std::string>& video,
                                               const std::filesystem::path& out_dir);

/// Binary PGM (P5), width T, height E, pixel = round(255 * loss / max).
std::string encode_heatmap(const LossTrajectory& traj);

/// Profiles JSON written by cmd_audit.
struct ProfilesFile {
    nlohmann::json header;
    std::vector<CslProfile> profiles;
    std::vector<LossTrajectory> trajectories;
};
ProfilesFile read_profiles(const std::filesystem::path& path);

/// Shortest round-trip decimal representation.
std::string format_double(double v);

}  // namespace csl
