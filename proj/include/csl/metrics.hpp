#pragma once

// Segment-level Error Detection Accuracy and frame-level micro-AUC.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "csl/detect.hpp"
#include "csl/seqdata.hpp"

namespace csl {

/// Probability that a random positive outscores a random negative, ties
/// counted 1/2. O(n log n). Throws UndefinedMetricError without both classes.
double micro_auc(std::span<const double> scores, std::span<const std::uint8_t> gt_mask);

/// O(n^2) pair enumeration of the same quantity; test oracle for micro_auc.
double auc_bruteforce(std::span<const double> scores, std::span<const std::uint8_t> gt_mask);

/// Scores and ground truth for one audited video.
struct ScoredVideo {
    std::string id;
    std::vector<double> scores;
    std::vector<std::uint8_t> gt_mask;
};

enum class EdaPooling { PerVideo, Global };

struct EdaResult {
    double eda = 0.0;
    std::vector<std::size_t> n_gt_segments;  // per video
    std::vector<std::size_t> n_detected;     // per video
};

/// Top-k% flagging (per video or over the pooled frames), then the fraction
/// of ground-truth error segments with at least one flagged frame. Throws
/// UndefinedMetricError when no ground-truth segment exists.
EdaResult eda_breakdown(std::span<const ScoredVideo> videos, double k_percent,
                        EdaPooling pooling = EdaPooling::PerVideo);
double eda(std::span<const ScoredVideo> videos, double k_percent, EdaPooling pooling = EdaPooling::PerVideo);

struct VideoMetrics {
    std::string id;
    std::optional<double> auc;
    std::size_t n_gt_segments = 0;
    std::size_t n_detected = 0;
    bool operator==(const VideoMetrics&) const = default;
};

struct MetricsReport {
    std::optional<double> eda;
    std::optional<double> micro_auc;
    double k_percent = 10.0;
    std::vector<VideoMetrics> per_video;
    std::size_t n_videos = 0;
    std::size_t n_frames = 0;
    std::size_t n_corrupted_frames = 0;
    nlohmann::json config;
    std::vector<std::string> warnings;
    bool operator==(const MetricsReport&) const = default;
};

/// Joins profiles to the test set by id (throws LookupError on mismatch) and
/// scores the smoothed CSL against each sample's error_mask.
MetricsReport build_report(std::span<const CslProfile> profiles, const Dataset& test, double k_percent,
                           EdaPooling pooling = EdaPooling::PerVideo, const nlohmann::json& config = {});

nlohmann::json to_json(const MetricsReport& r);
MetricsReport report_from_json(const nlohmann::json& j);

}  // namespace csl
