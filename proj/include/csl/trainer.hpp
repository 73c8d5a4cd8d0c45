#pragma once

// Class weighting, AdamW, the epoch loop and the on-disk checkpoint store.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "csl/model.hpp"
#include "csl/seqdata.hpp"

namespace csl {

/// alpha_c proportional to 1 / count_c, rescaled to mean 1. Throws
/// CoverageError naming the first class with no frames.
ClassWeights compute_class_weights(const Dataset& ds);
ClassWeights class_weights_from_counts(const std::vector<std::size_t>& counts);

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    bool operator==(const AdamWConfig&) const = default;
};

struct TrainConfig {
    int epochs = 50;
    double learning_rate = 1e-4;
    AdamWConfig adamw;
    std::uint64_t shuffle_seed = 0;
    int checkpoint_stride = 1;
    bool dropout = true;
    /// Class-weighted training loss; false trains with unit weights.
    bool class_weighted = true;

    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct AdamWState {
    ModelParams m;
    ModelParams v;
    long step = 0;
};

AdamWState make_adamw_state(const ModelParams& params);

/// One decoupled-weight-decay Adam update with step counter t = state.step + 1.
/// Decay applies to weight matrices only. Throws NumericError on non-finite
/// gradients; `context` is prepended to the message.
void adamw_step(ModelParams& params, const ModelParams& grads, AdamWState& state, double learning_rate,
                const AdamWConfig& cfg, const std::string& context = {});

struct Snapshot {
    int epoch = 0;
    ModelParams params;
    double train_loss = 0.0;
};

struct StoreManifest {
    ModelConfig model;
    TrainConfig train;
    ClassWeights weights;
    std::string dataset_fingerprint;
    std::string grammar_fingerprint;
    std::vector<int> epochs;
    std::vector<double> train_losses;
};

/// Ordered snapshots theta^(1..E) plus the manifest describing how they were made.
struct CheckpointStore {
    StoreManifest manifest;
    std::vector<Snapshot> snapshots;

    std::size_t size() const { return snapshots.size(); }
};

/// Rounds every value through float32, the precision stored on disk.
ModelParams quantize_to_float(const ModelParams& p);

std::string snapshot_filename(int epoch);

/// Writes manifest.json and one ckpt_NNNN.bin per snapshot.
void save_store(const CheckpointStore& store, const std::filesystem::path& dir);
CheckpointStore load_store(const std::filesystem::path& dir);

/// Serialises one snapshot in the binary checkpoint layout.
std::string encode_snapshot(const ModelParams& params);
/// Parses a snapshot and checks it against the manifest's model config.
ModelParams decode_snapshot(const std::string& bytes, const ModelConfig& cfg, int epoch);

using EpochCallback = std::function<void(int epoch, double mean_loss)>;

/// Trains with AdamW, one sequence per step, and snapshots every
/// checkpoint_stride epochs. When `store_dir` is non-empty each snapshot and
/// the manifest are written as soon as they exist.
CheckpointStore train(const Dataset& ds_train, const ModelConfig& cfg_model, const TrainConfig& cfg_train,
                      const std::filesystem::path& store_dir = {}, const EpochCallback& on_epoch = {});

}  // namespace csl
