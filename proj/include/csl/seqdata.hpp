#pragma once

// Synthetic phase-annotated sequences, annotation corruption and the JSON
// Lines dataset format.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "csl/matrix.hpp"

namespace csl {

using Rng = std::mt19937_64;

/// Generative description of one procedure: C phases visited in a fixed
/// order, each emitting noisy features around its class mean.
struct PhaseGrammar {
    int num_classes = 0;
    int feature_dim = 0;
    Matrix class_means;  // num_classes x feature_dim
    double feature_noise_sigma = 0.0;
    std::vector<int> phase_order;
    int duration_min = 1;
    int duration_max = 1;
    int boundary_blend = 3;

    /// Throws ConfigError describing the first violated invariant.
    void validate() const;

    bool operator==(const PhaseGrammar&) const = default;
};

/// Grammar with random class means rescaled so the closest pair sits exactly
/// `min_separation` apart (Euclidean), canonical order 0..C-1.
PhaseGrammar make_separated_grammar(int num_classes, int feature_dim, double min_separation,
                                    double noise_sigma, int duration_min, int duration_max,
                                    int boundary_blend, std::uint64_t seed);

/// Grammar whose class means sit on scaled coordinate axes, so every pair of
/// classes is exactly `separation` apart. Needs feature_dim >= num_classes.
PhaseGrammar make_equidistant_grammar(int num_classes, int feature_dim, double separation, double noise_sigma,
                                      int duration_min, int duration_max, int boundary_blend);

/// Smallest pairwise Euclidean distance between class means.
double min_class_separation(const PhaseGrammar& g);

struct NoCorruption {
    bool operator==(const NoCorruption&) const = default;
};

struct MislabelInfo {
    int start = 0;
    int end = 0;
    int from_class = 0;
    int to_class = 0;
    bool operator==(const MislabelInfo&) const = default;
};

struct DisorderInfo {
    int start_a = 0;
    int end_a = 0;
    int start_b = 0;
    int end_b = 0;
    bool operator==(const DisorderInfo&) const = default;
};

using Corruption = std::variant<NoCorruption, MislabelInfo, DisorderInfo>;

struct SequenceSample {
    std::string id;
    Matrix frames;  // T x d
    std::vector<int> labels;
    std::vector<std::uint8_t> error_mask;
    Corruption corruption;

    std::size_t length() const { return labels.size(); }
    bool corrupted() const { return !std::holds_alternative<NoCorruption>(corruption); }

    bool operator==(const SequenceSample&) const = default;
};

enum class Split { Train, Val, Test };

const char* to_string(Split s);
Split split_from_string(const std::string& s);

enum class CorruptionKind { Mislabel, Disorder };

/// How a disordering is realised on the sequence. SwapContent moves frame
/// blocks together with their labels (labels stay correct per frame, only the
/// phase order is wrong). SwapLabels exchanges the annotation blocks over
/// unchanged frames.
enum class DisorderSwap { SwapContent, SwapLabels };

struct CorruptionSpec {
    CorruptionKind kind = CorruptionKind::Mislabel;
    double video_fraction = 0.5;
    int segment_len_min = 20;
    int segment_len_max = 60;
    std::uint64_t seed = 0;
    DisorderSwap disorder_swap = DisorderSwap::SwapContent;

    void validate() const;
    bool operator==(const CorruptionSpec&) const = default;
};

struct Dataset {
    PhaseGrammar grammar;
    std::vector<SequenceSample> samples;
    Split split = Split::Train;
    std::uint64_t seed = 0;
    /// Set by corrupt_dataset; recorded in the file header.
    std::optional<CorruptionSpec> corruption_spec;

    /// Throws SchemaError if any sample disagrees with the grammar or ids repeat.
    void validate() const;
    const SequenceSample& find(const std::string& id) const;

    bool operator==(const Dataset&) const = default;
};

Dataset generate_dataset(const PhaseGrammar& grammar, int n_videos, Split split, std::uint64_t seed);

/// Maximal runs of equal labels as (label, start, end) with end exclusive.
struct LabelRun {
    int label;
    int start;
    int end;
    bool operator==(const LabelRun&) const = default;
};
std::vector<LabelRun> label_runs(const std::vector<int>& labels);

/// True if the run sequence visits classes in non-decreasing phase_order rank.
bool follows_phase_order(const std::vector<int>& labels, const std::vector<int>& phase_order);

/// Relabels [start, end) to `to_class`. Deterministic core of inject_mislabeling.
SequenceSample apply_mislabel(const SequenceSample& sample, int start, int end, int to_class);

/// Swaps label runs `run_index` and `run_index + 1`.
SequenceSample apply_disorder(const SequenceSample& sample, int run_index, DisorderSwap swap);

/// Mislabels one random segment with a class drawn from 0..num_classes-1
/// excluding the original class at the segment start.
SequenceSample inject_mislabeling(const SequenceSample& sample, int num_classes, const CorruptionSpec& spec,
                                  Rng& rng);
SequenceSample inject_disordering(const SequenceSample& sample, const CorruptionSpec& spec, Rng& rng);

/// Corrupts exactly round(video_fraction * N) samples chosen by spec.seed.
Dataset corrupt_dataset(const Dataset& ds, const CorruptionSpec& spec);

void write_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);

/// Content hash (FNV-1a 64, hex) over grammar and every sample.
std::string dataset_fingerprint(const Dataset& ds);
/// Hash over the grammar only; equal for every split drawn from one grammar.
std::string grammar_fingerprint(const PhaseGrammar& g);

nlohmann::json to_json(const PhaseGrammar& g);
PhaseGrammar grammar_from_json(const nlohmann::json& j);
nlohmann::json to_json(const CorruptionSpec& s);
CorruptionSpec corruption_spec_from_json(const nlohmann::json& j);

}  // namespace csl
