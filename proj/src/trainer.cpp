#include "csl/trainer.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "csl/errors.hpp"

namespace csl {

using nlohmann::json;

ClassWeights class_weights_from_counts(const std::vector<std::size_t>& counts) {
    for (std::size_t c = 0; c < counts.size(); ++c)
        if (counts[c] == 0)
            throw CoverageError("class " + std::to_string(c) + " never occurs in the training labels",
                                static_cast<int>(c));
    ClassWeights w;
    w.alpha.resize(counts.size());
    double sum = 0.0;
    for (std::size_t c = 0; c < counts.size(); ++c) {
        w.alpha[c] = 1.0 / static_cast<double>(counts[c]);
        sum += w.alpha[c];
    }
    const double scale = static_cast<double>(counts.size()) / sum;
    for (double& a : w.alpha) a *= scale;
    return w;
}

ClassWeights compute_class_weights(const Dataset& ds) {
    std::vector<std::size_t> counts(ds.grammar.num_classes, 0);
    for (const auto& s : ds.samples)
        for (int y : s.labels) ++counts.at(y);
    return class_weights_from_counts(counts);
}

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("train: learning_rate must be > 0");
    if (checkpoint_stride < 1) throw ConfigError("train: checkpoint_stride must be >= 1");
    if (!(adamw.beta1 >= 0.0 && adamw.beta1 < 1.0) || !(adamw.beta2 >= 0.0 && adamw.beta2 < 1.0))
        throw ConfigError("train: AdamW betas must lie in [0, 1)");
    if (!(adamw.eps > 0.0) || !(adamw.weight_decay >= 0.0)) throw ConfigError("train: bad AdamW eps/decay");
}

json to_json(const TrainConfig& c) {
    return json{{"epochs", c.epochs},
                {"learning_rate", c.learning_rate},
                {"adamw",
                 {{"beta1", c.adamw.beta1},
                  {"beta2", c.adamw.beta2},
                  {"eps", c.adamw.eps},
                  {"weight_decay", c.adamw.weight_decay}}},
                {"shuffle_seed", c.shuffle_seed},
                {"checkpoint_stride", c.checkpoint_stride},
                {"dropout", c.dropout},
                {"class_weighted", c.class_weighted}};
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig c;
    c.epochs = j.value("epochs", c.epochs);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    if (j.contains("adamw")) {
        const auto& a = j["adamw"];
        c.adamw.beta1 = a.value("beta1", c.adamw.beta1);
        c.adamw.beta2 = a.value("beta2", c.adamw.beta2);
        c.adamw.eps = a.value("eps", c.adamw.eps);
        c.adamw.weight_decay = a.value("weight_decay", c.adamw.weight_decay);
    }
    c.shuffle_seed = j.value("shuffle_seed", c.shuffle_seed);
    c.checkpoint_stride = j.value("checkpoint_stride", c.checkpoint_stride);
    c.dropout = j.value("dropout", c.dropout);
    c.class_weighted = j.value("class_weighted", c.class_weighted);
    return c;
}

AdamWState make_adamw_state(const ModelParams& params) {
    return AdamWState{params.zeros_like(), params.zeros_like(), 0};
}

void adamw_step(ModelParams& params, const ModelParams& grads, AdamWState& state, double learning_rate,
                const AdamWConfig& cfg, const std::string& context) {
    std::vector<std::span<const double>> g;
    grads.for_each([&](std::string_view name, const auto&, std::span<const double> v, bool) {
        for (double x : v)
            if (!std::isfinite(x))
                throw NumericError((context.empty() ? "" : context + ": ") + "non-finite gradient in " +
                                   std::string(name));
        g.push_back(v);
    });
    std::vector<std::span<double>> m, v;
    state.m.for_each([&](std::string_view, const auto&, std::span<double> x, bool) { m.push_back(x); });
    state.v.for_each([&](std::string_view, const auto&, std::span<double> x, bool) { v.push_back(x); });
    if (g.size() != m.size()) throw ShapeError("adamw_step: gradient layout differs from parameters");

    const long t = ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    std::size_t k = 0;
    params.for_each([&](std::string_view, const auto&, std::span<double> p, bool decays) {
        auto gk = g[k];
        auto mk = m[k];
        auto vk = v[k];
        if (gk.size() != p.size()) throw ShapeError("adamw_step: tensor size mismatch");
        for (std::size_t i = 0; i < p.size(); ++i) {
            if (decays) p[i] -= learning_rate * cfg.weight_decay * p[i];
            mk[i] = cfg.beta1 * mk[i] + (1.0 - cfg.beta1) * gk[i];
            vk[i] = cfg.beta2 * vk[i] + (1.0 - cfg.beta2) * gk[i] * gk[i];
            const double mhat = mk[i] / bc1;
            const double vhat = vk[i] / bc2;
            p[i] -= learning_rate * mhat / (std::sqrt(vhat) + cfg.eps);
        }
        ++k;
    });
}

ModelParams quantize_to_float(const ModelParams& p) {
    ModelParams q = p;
    q.for_each([](std::string_view, const auto&, std::span<double> v, bool) {
        for (double& x : v) x = static_cast<double>(static_cast<float>(x));
    });
    return q;
}

std::string snapshot_filename(int epoch) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "ckpt_%04d.bin", epoch);
    return buf;
}

namespace {

constexpr char kMagic[8] = {'C', 'S', 'L', 'C', 'K', 'P', 'T', '1'};
constexpr const char* kManifestFormat = "csl-ckpt/1";

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(const std::string& in, std::size_t& pos, std::size_t end) {
    if (pos + 4 > end) throw std::out_of_range("truncated");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    pos += 4;
    return v;
}

std::uint32_t crc_of(const std::string& bytes, std::size_t begin, std::size_t end) {
    uLong crc = crc32(0L, Z_NULL, 0);
    return static_cast<std::uint32_t>(
        crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + begin), static_cast<uInt>(end - begin)));
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot open '" + tmp.string() + "' for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) throw DataError("write failure on '" + tmp.string() + "'");
    }
    std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json manifest_json(const StoreManifest& m) {
    json snaps = json::array();
    for (std::size_t i = 0; i < m.epochs.size(); ++i)
        snaps.push_back({{"epoch", m.epochs[i]},
                         {"file", snapshot_filename(m.epochs[i])},
                         {"train_loss", m.train_losses[i]}});
    return json{{"format", kManifestFormat},
                {"model", to_json(m.model)},
                {"train", to_json(m.train)},
                {"class_weights", m.weights.alpha},
                {"dataset_fingerprint", m.dataset_fingerprint},
                {"grammar_fingerprint", m.grammar_fingerprint},
                {"snapshots", snaps}};
}

void write_manifest(const StoreManifest& m, const std::filesystem::path& dir) {
    write_file_atomic(dir / "manifest.json", manifest_json(m).dump(2) + "\n");
}

}  // namespace

std::string encode_snapshot(const ModelParams& params) {
    std::string out(kMagic, sizeof kMagic);
    params.for_each([&](std::string_view name, const std::vector<std::uint32_t>& shape, std::span<const double> v,
                        bool) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.append(name);
        put_u32(out, static_cast<std::uint32_t>(shape.size()));
        for (auto d : shape) put_u32(out, d);
        for (double x : v) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(x)));
    });
    put_u32(out, crc_of(out, sizeof kMagic, out.size()));
    return out;
}

ModelParams decode_snapshot(const std::string& bytes, const ModelConfig& cfg, int epoch) {
    if (bytes.size() < sizeof kMagic + 4) throw CorruptionError("file too short", epoch);
    if (!std::equal(kMagic, kMagic + sizeof kMagic, bytes.begin())) throw FormatError("bad checkpoint magic");
    const std::size_t end = bytes.size() - 4;
    std::size_t crc_pos = end;
    const std::uint32_t stored = get_u32(bytes, crc_pos, bytes.size());
    if (stored != crc_of(bytes, sizeof kMagic, end)) throw CorruptionError("CRC mismatch (truncated or damaged)", epoch);

    ModelParams params = init_params(cfg);
    std::size_t pos = sizeof kMagic;
    try {
        params.for_each([&](std::string_view name, const std::vector<std::uint32_t>& shape, std::span<double> v,
                            bool) {
            const std::uint32_t len = get_u32(bytes, pos, end);
            if (pos + len > end) throw std::out_of_range("truncated");
            const std::string_view got(bytes.data() + pos, len);
            pos += len;
            if (got != name)
                throw CorruptionError("expected tensor '" + std::string(name) + "', found '" + std::string(got) + "'",
                                      epoch);
            const std::uint32_t rank = get_u32(bytes, pos, end);
            std::vector<std::uint32_t> dims(rank);
            for (auto& d : dims) d = get_u32(bytes, pos, end);
            if (dims != shape) throw CorruptionError("shape of '" + std::string(name) + "' differs from manifest", epoch);
            for (double& x : v) x = static_cast<double>(std::bit_cast<float>(get_u32(bytes, pos, end)));
        });
    } catch (const std::out_of_range&) {
        throw CorruptionError("truncated tensor payload", epoch);
    }
    if (pos != end) throw CorruptionError("trailing bytes after last tensor", epoch);
    return params;
}

void save_store(const CheckpointStore& store, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    for (const auto& s : store.snapshots) write_file_atomic(dir / snapshot_filename(s.epoch), encode_snapshot(s.params));
    write_manifest(store.manifest, dir);
}

CheckpointStore load_store(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    if (!std::filesystem::exists(manifest_path)) throw MissingSnapshotError("no manifest.json in '" + dir.string() + "'");
    json j;
    try {
        j = json::parse(read_file(manifest_path));
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("manifest.json: ") + e.what());
    }
    if (j.value("format", std::string()) != kManifestFormat) throw FormatError("manifest.json: unsupported format");
    CheckpointStore store;
    auto& m = store.manifest;
    try {
        m.model = model_config_from_json(j.at("model"));
        m.train = train_config_from_json(j.at("train"));
        m.weights.alpha = j.at("class_weights").get<std::vector<double>>();
        m.dataset_fingerprint = j.at("dataset_fingerprint").get<std::string>();
        m.grammar_fingerprint = j.at("grammar_fingerprint").get<std::string>();
        for (const auto& s : j.at("snapshots")) {
            m.epochs.push_back(s.at("epoch").get<int>());
            m.train_losses.push_back(s.at("train_loss").get<double>());
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("manifest.json: ") + e.what());
    }
    for (std::size_t i = 1; i < m.epochs.size(); ++i)
        if (m.epochs[i] <= m.epochs[i - 1]) throw FormatError("manifest.json: epochs not strictly increasing");

    for (std::size_t i = 0; i < m.epochs.size(); ++i) {
        const int epoch = m.epochs[i];
        const auto path = dir / snapshot_filename(epoch);
        if (!std::filesystem::exists(path))
            throw MissingSnapshotError("manifest lists epoch " + std::to_string(epoch) + " but " + path.string() +
                                       " is missing");
        store.snapshots.push_back({epoch, decode_snapshot(read_file(path), m.model, epoch), m.train_losses[i]});
    }
    return store;
}

CheckpointStore train(const Dataset& ds_train, const ModelConfig& cfg_model, const TrainConfig& cfg_train,
                      const std::filesystem::path& store_dir, const EpochCallback& on_epoch) {
    cfg_model.validate();
    cfg_train.validate();
    if (ds_train.samples.empty()) throw DataError("train: empty training set");
    if (cfg_model.feature_dim != ds_train.grammar.feature_dim || cfg_model.num_classes != ds_train.grammar.num_classes)
        throw ConfigError("train: model dimensions do not match the dataset grammar");

    CheckpointStore store;
    auto& m = store.manifest;
    m.model = cfg_model;
    m.train = cfg_train;
    m.weights = compute_class_weights(ds_train);
    m.dataset_fingerprint = dataset_fingerprint(ds_train);
    m.grammar_fingerprint = grammar_fingerprint(ds_train.grammar);
    const ClassWeights train_weights =
        cfg_train.class_weighted ? m.weights : ClassWeights::uniform(cfg_model.num_classes);

    if (!store_dir.empty()) {
        std::filesystem::create_directories(store_dir);
        write_manifest(m, store_dir);
    }

    ModelParams params = init_params(cfg_model);
    AdamWState opt = make_adamw_state(params);
    Rng order_rng(cfg_train.shuffle_seed);
    Rng dropout_rng(cfg_train.shuffle_seed ^ 0x9e3779b97f4a7c15ULL);
    const RunMode mode = cfg_train.dropout ? RunMode::Train : RunMode::Eval;
    std::vector<std::size_t> order(ds_train.samples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (int epoch = 1; epoch <= cfg_train.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), order_rng);
        double total = 0.0;
        for (std::size_t step = 0; step < order.size(); ++step) {
            const auto& s = ds_train.samples[order[step]];
            auto lg = backward(params, cfg_model, s.frames, s.labels, train_weights.alpha, mode, &dropout_rng);
            if (!std::isfinite(lg.loss))
                throw NumericError("epoch " + std::to_string(epoch) + " step " + std::to_string(step + 1) +
                                   ": non-finite loss on '" + s.id + "'");
            adamw_step(params, lg.grad, opt, cfg_train.learning_rate, cfg_train.adamw,
                       "epoch " + std::to_string(epoch) + " step " + std::to_string(step + 1));
            total += lg.loss;
        }
        const double mean_loss = total / static_cast<double>(order.size());
        if (on_epoch) on_epoch(epoch, mean_loss);
        if (epoch % cfg_train.checkpoint_stride != 0) continue;

        Snapshot snap{epoch, quantize_to_float(params), mean_loss};
        if (!store_dir.empty()) {
            write_file_atomic(store_dir / snapshot_filename(epoch), encode_snapshot(snap.params));
            m.epochs.push_back(epoch);
            m.train_losses.push_back(mean_loss);
            write_manifest(m, store_dir);
        } else {
            m.epochs.push_back(epoch);
            m.train_losses.push_back(mean_loss);
        }
        store.snapshots.push_back(std::move(snap));
    }
    return store;
}

}  // namespace csl
