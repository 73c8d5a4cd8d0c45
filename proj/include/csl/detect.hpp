#pragma once

// Auditing: loss trajectories across checkpoints, cumulative sample loss,
// smoothing, flagging and segment extraction.

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "csl/matrix.hpp"
#include "csl/seqdata.hpp"
#include "csl/trainer.hpp"

namespace csl {

/// Row e, column t holds the audit loss of frame t under snapshot e.
struct LossTrajectory {
    std::string video_id;
    Matrix losses;  // E x T
    std::vector<int> epochs;
};

struct ThresholdRule {
    double tau = 0.0;
};
struct PercentileRule {
    double k_percent = 10.0;
};
using FlagRule = std::variant<ThresholdRule, PercentileRule>;

enum class AuditLoss { Unweighted, TrainWeighted };

struct DetectionConfig {
    FlagRule rule = PercentileRule{10.0};
    int window = 5;
    AuditLoss audit_loss = AuditLoss::Unweighted;
    int min_segment_len = 1;

    void validate() const;
};

nlohmann::json to_json(const DetectionConfig& c);
DetectionConfig detection_config_from_json(const nlohmann::json& j);

using Segment = std::pair<int, int>;  // [start, end)

struct CslProfile {
    std::string video_id;
    std::vector<double> csl;
    std::vector<double> smoothed;
    int window = 0;
    std::vector<std::uint8_t> flags;
    std::vector<Segment> segments;
    FlagRule rule;
};

/// Throws AuditCompatibilityError when the sample cannot be scored by the store.
void check_audit_compatible(const CheckpointStore& store, const SequenceSample& sample);

/// One eval-mode forward per snapshot over the full sequence.
LossTrajectory eval_loss_trajectory(const CheckpointStore& store, const SequenceSample& sample,
                                    const DetectionConfig& cfg);

/// Column means of the trajectory.
std::vector<double> compute_csl(const LossTrajectory& traj);

/// Mean over [t-w, t+w] clipped to the sequence; divisor is the in-range count.
std::vector<double> smooth_csl(std::span<const double> csl, int window);

/// flags[t] = smoothed[t] > tau.
std::vector<std::uint8_t> flag_threshold(std::span<const double> smoothed, double tau);

/// Flags the ceil(k/100 * T) highest values; ties go to the lower index.
std::vector<std::uint8_t> flag_percentile(std::span<const double> smoothed, double k_percent);

/// Linear-interpolation q-quantile of the smoothed values pooled over profiles.
double calibrate_tau(std::span<const CslProfile> validation_profiles, double q = 0.95);
double interpolated_quantile(std::vector<double> values, double q);

/// Maximal runs of ones; runs shorter than min_segment_len are not listed.
std::vector<Segment> frames_to_segments(std::span<const std::uint8_t> flags, int min_segment_len = 1);

/// Mean |second difference| over epochs, per frame. Needs E >= 3.
std::vector<double> trajectory_curvature(const LossTrajectory& traj);

/// trajectory -> CSL -> smoothing -> flags -> segments.
CslProfile audit_sequence(const CheckpointStore& store, const SequenceSample& sample, const DetectionConfig& cfg);
/// Same as audit_sequence, starting from a computed trajectory.
CslProfile profile_from_trajectory(const LossTrajectory& traj, const DetectionConfig& cfg);

/// Trajectories for every sample, evaluated over (snapshot x video) work
/// items by up to `workers` threads. Output order matches ds.samples.
std::vector<LossTrajectory> eval_trajectories(const CheckpointStore& store, const Dataset& ds,
                                              const DetectionConfig& cfg, int workers = 1);

}  // namespace csl
