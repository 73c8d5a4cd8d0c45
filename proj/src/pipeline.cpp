#include "csl/pipeline.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

#include "csl/errors.hpp"
#include "csl/hash.hpp"

namespace csl {

namespace fs = std::filesystem;
using nlohmann::json;

std::uint64_t derive_seed(std::uint64_t seed, std::string_view stage) {
    Fnv1a h;
    h.update_value(seed);
    h.update(stage);
    // splitmix64 finaliser to spread the FNV state.
    std::uint64_t z = h.digest() + 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::string format_double(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    if (ec != std::errc()) throw NumericError("cannot format value");
    return std::string(buf, end);
}

namespace {

PhaseGrammar grammar_section(const json& g, std::uint64_t seed) {
    if (g.contains("class_means")) return grammar_from_json(g);
    const auto layout = g.value("layout", std::string("equidistant"));
    if (layout == "equidistant")
        return make_equidistant_grammar(g.value("num_classes", 6), g.value("feature_dim", 16),
                                        g.value("min_separation", 4.0), g.value("feature_noise_sigma", 1.0),
                                        g.value("duration_min", 40), g.value("duration_max", 80),
                                        g.value("boundary_blend", 3));
    if (layout != "random") throw ConfigError("grammar: unknown layout '" + layout + "'");
    return make_separated_grammar(g.value("num_classes", 6), g.value("feature_dim", 16), g.value("min_separation", 4.0),
                                  g.value("feature_noise_sigma", 1.0), g.value("duration_min", 40),
                                  g.value("duration_max", 80), g.value("boundary_blend", 3),
                                  g.value("seed", derive_seed(seed, "grammar")));
}

void write_text_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw DataError("write failure on '" + path.string() + "'");
}

json read_json_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path.string() + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what(), 0);
    }
}

}  // namespace

RunConfig run_config_from_json(const json& j) {
    RunConfig c;
    try {
        c.seed = j.value("seed", std::uint64_t{0});
        c.workers = j.value("workers", 1);
        if (c.workers < 1) throw ConfigError("workers must be >= 1");
        if (j.contains("paths")) {
            const auto& p = j["paths"];
            c.data_dir = p.value("data_dir", c.data_dir.string());
            c.store_dir = p.value("store", c.store_dir.string());
            c.out_dir = p.value("out", c.out_dir.string());
        }
        c.grammar = grammar_section(j.value("grammar", json::object()), c.seed);
        if (j.contains("n_videos")) {
            const auto& n = j["n_videos"];
            c.n_train = n.value("train", c.n_train);
            c.n_val = n.value("val", c.n_val);
            c.n_test = n.value("test", c.n_test);
        }
        const json corr = j.value("corruption", json::object());
        c.corruption = corruption_spec_from_json(corr);
        if (!corr.contains("seed")) c.corruption.seed = derive_seed(c.seed, "corrupt");

        json model = j.value("model", json::object());
        if (!model.contains("feature_dim")) model["feature_dim"] = c.grammar.feature_dim;
        if (!model.contains("num_classes")) model["num_classes"] = c.grammar.num_classes;
        if (!model.contains("init_seed")) model["init_seed"] = derive_seed(c.seed, "init");
        c.model = model_config_from_json(model);

        json train = j.value("train", json::object());
        if (!train.contains("shuffle_seed")) train["shuffle_seed"] = derive_seed(c.seed, "shuffle");
        c.train = train_config_from_json(train);

        const json det = j.value("detection", json::object());
        c.detection = detection_config_from_json(det);
        c.tau_explicit = det.contains("tau");
        c.tau_quantile = det.value("tau_quantile", c.tau_quantile);

        if (j.contains("eval")) {
            const auto& e = j["eval"];
            c.eval_k_percent = e.value("k_percent", c.eval_k_percent);
            const auto pooling = e.value("pooling", std::string("per_video"));
            if (pooling == "per_video")
                c.eda_pooling = EdaPooling::PerVideo;
            else if (pooling == "global")
                c.eda_pooling = EdaPooling::Global;
            else
                throw ConfigError("eval: unknown pooling '" + pooling + "'");
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    c.grammar.validate();
    c.corruption.validate();
    c.model.validate();
    if (c.model.feature_dim != c.grammar.feature_dim || c.model.num_classes != c.grammar.num_classes)
        throw ConfigError("model: feature_dim/num_classes must match the grammar");
    c.train.validate();
    c.detection.validate();
    if (!(c.tau_quantile > 0.0 && c.tau_quantile < 1.0)) throw ConfigError("detection: tau_quantile must lie in (0, 1)");
    if (!(c.eval_k_percent > 0.0 && c.eval_k_percent <= 100.0)) throw ConfigError("eval: k_percent must lie in (0, 100]");
    if (c.n_train < 1 || c.n_val < 1 || c.n_test < 1) throw ConfigError("n_videos entries must be >= 1");
    return c;
}

RunConfig load_run_config(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
    try {
        return run_config_from_json(json::parse(in));
    } catch (const json::parse_error& e) {
        throw ConfigError("config '" + path.string() + "': " + e.what());
    }
}

json to_json(const RunConfig& c) {
    json det = to_json(c.detection);
    det["tau_quantile"] = c.tau_quantile;
    if (!c.tau_explicit && std::holds_alternative<ThresholdRule>(c.detection.rule)) det.erase("tau");
    return json{{"seed", c.seed},
                {"workers", c.workers},
                {"paths", {{"data_dir", c.data_dir.string()}, {"store", c.store_dir.string()}, {"out", c.out_dir.string()}}},
                {"grammar", to_json(c.grammar)},
                {"n_videos", {{"train", c.n_train}, {"val", c.n_val}, {"test", c.n_test}}},
                {"corruption", to_json(c.corruption)},
                {"model", to_json(c.model)},
                {"train", to_json(c.train)},
                {"detection", det},
                {"eval",
                 {{"k_percent", c.eval_k_percent},
                  {"pooling", c.eda_pooling == EdaPooling::PerVideo ? "per_video" : "global"}}}};
}

GenResult cmd_gen(const RunConfig& cfg, std::ostream& log) {
    fs::create_directories(cfg.data_dir);
    GenResult r{cfg.data_dir / "train.jsonl", cfg.data_dir / "val.jsonl", cfg.data_dir / "test.jsonl"};
    const struct {
        Split split;
        int n;
        const fs::path& path;
    } parts[] = {{Split::Train, cfg.n_train, r.train}, {Split::Val, cfg.n_val, r.val}, {Split::Test, cfg.n_test, r.test}};
    for (const auto& p : parts) {
        const auto ds = generate_dataset(cfg.grammar, p.n, p.split,
                                         derive_seed(cfg.seed, std::string("gen-") + to_string(p.split)));
        write_dataset(ds, p.path);
        log << to_string(p.split) << ": " << ds.samples.size() << " samples -> " << p.path.string() << "\n";
    }
    return r;
}

fs::path cmd_corrupt(const RunConfig& cfg, const fs::path& input, const fs::path& output, std::ostream& log) {
    const Dataset ds = read_dataset(input);
    const Dataset out = corrupt_dataset(ds, cfg.corruption);
    write_dataset(out, output);
    std::size_t n = 0;
    for (const auto& s : out.samples) n += s.corrupted() ? 1 : 0;
    log << "corrupted " << n << " of " << out.samples.size() << " samples ("
        << (cfg.corruption.kind == CorruptionKind::Mislabel ? "mislabel" : "disorder") << ") -> " << output.string()
        << "\n";
    return output;
}

CheckpointStore cmd_train(const RunConfig& cfg, const fs::path& train_file, std::ostream& log) {
    const Dataset ds = read_dataset(train_file);
    if (ds.split != Split::Train) log << "warning: training on a '" << to_string(ds.split) << "' split\n";
    return train(ds, cfg.model, cfg.train, cfg.store_dir, [&](int epoch, double loss) {
        log << "epoch " << epoch << " loss " << format_double(loss) << "\n";
        log.flush();
    });
}

namespace {

json profile_json(const CslProfile& p, const LossTrajectory& traj, const std::optional<std::vector<double>>& curvature) {
    json segs = json::array();
    for (const auto& [s, e] : p.segments) segs.push_back({s, e});
    json rows = json::array();
    for (std::size_t e = 0; e < traj.losses.rows; ++e) {
        auto r = traj.losses.row(e);
        rows.push_back(std::vector<double>(r.begin(), r.end()));
    }
    std::vector<int> flags(p.flags.begin(), p.flags.end());
    return json{{"id", p.video_id},
                {"csl", p.csl},
                {"smoothed", p.smoothed},
                {"flags", flags},
                {"segments", segs},
                {"curvature", curvature ? json(*curvature) : json(nullptr)},
                {"epochs", traj.epochs},
                {"trajectory", rows}};
}

}  // namespace

AuditResult cmd_audit(const RunConfig& cfg, const fs::path& dataset_file, const std::optional<fs::path>& val_file,
                      std::ostream& log) {
    const CheckpointStore store = load_store(cfg.store_dir);
    const Dataset ds = read_dataset(dataset_file);
    const auto& m = store.manifest;
    const auto fp = grammar_fingerprint(ds.grammar);
    if (fp != m.grammar_fingerprint)
        throw AuditCompatibilityError("dataset grammar fingerprint " + fp + " does not match store grammar fingerprint " +
                                      m.grammar_fingerprint + " (store dataset " + m.dataset_fingerprint + ")");

    DetectionConfig det = cfg.detection;
    bool calibrated = false;
    if (std::holds_alternative<ThresholdRule>(det.rule) && !cfg.tau_explicit) {
        if (!val_file) throw ConfigError("audit: threshold rule without tau needs a validation set");
        const Dataset val = read_dataset(*val_file);
        if (grammar_fingerprint(val.grammar) != m.grammar_fingerprint)
            throw AuditCompatibilityError("validation grammar fingerprint does not match store grammar fingerprint " +
                                          m.grammar_fingerprint);
        DetectionConfig probe = det;
        probe.rule = PercentileRule{100.0};
        std::vector<CslProfile> val_profiles;
        for (const auto& traj : eval_trajectories(store, val, probe, cfg.workers))
            val_profiles.push_back(profile_from_trajectory(traj, probe));
        det.rule = ThresholdRule{calibrate_tau(val_profiles, cfg.tau_quantile)};
        calibrated = true;
        log << "calibrated tau " << format_double(std::get<ThresholdRule>(det.rule).tau) << " at quantile "
            << format_double(cfg.tau_quantile) << " over " << val.samples.size()
            << " validation videos (assumed free of annotation errors)\n";
    }

    AuditResult r;
    r.trajectories = eval_trajectories(store, ds, det, cfg.workers);
    fs::create_directories(cfg.out_dir);
    r.csv = cfg.out_dir / "audit.csv";
    r.profiles = cfg.out_dir / "profiles.json";

    std::string csv = "video_id,frame,label,csl,csl_smoothed,curvature,flag,gt_error\n";
    json videos = json::array();
    for (std::size_t v = 0; v < ds.samples.size(); ++v) {
        const auto& s = ds.samples[v];
        const auto& traj = r.trajectories[v];
        CslProfile p = profile_from_trajectory(traj, det);
        std::optional<std::vector<double>> curv;
        if (traj.losses.rows >= 3) curv = trajectory_curvature(traj);
        for (std::size_t t = 0; t < s.length(); ++t) {
            csv += s.id;
            csv += ',' + std::to_string(t) + ',' + std::to_string(s.labels[t]) + ',' + format_double(p.csl[t]) + ',' +
                   format_double(p.smoothed[t]) + ',' + (curv ? format_double((*curv)[t]) : std::string()) + ',' +
                   std::to_string(int{p.flags[t]}) + ',' + std::to_string(int{s.error_mask[t]}) + '\n';
        }
        videos.push_back(profile_json(p, traj, curv));
        r.profiles_data.push_back(std::move(p));
    }
    write_text_file(r.csv, csv);

    json header{{"format", "csl-profiles/1"},
                {"config", to_json(cfg)},
                {"detection", to_json(det)},
                {"tau_calibrated", calibrated},
                {"store",
                 {{"dataset_fingerprint", m.dataset_fingerprint},
                  {"grammar_fingerprint", m.grammar_fingerprint},
                  {"epochs", m.epochs}}},
                {"dataset", {{"file", dataset_file.filename().string()}, {"fingerprint", dataset_fingerprint(ds)}}},
                {"csv", r.csv.filename().string()}};
    json doc = header;
    doc["videos"] = videos;
    write_text_file(r.profiles, doc.dump() + "\n");
    log << "audited " << ds.samples.size() << " videos over " << store.snapshots.size() << " checkpoints -> "
        << r.csv.string() << "\n";
    return r;
}

ProfilesFile read_profiles(const fs::path& path) {
    json doc = read_json_file(path);
    if (doc.value("format", std::string()) != "csl-profiles/1") throw FormatError("profiles: unsupported format");
    ProfilesFile f;
    try {
        const DetectionConfig det = detection_config_from_json(doc.at("detection"));
        for (const auto& v : doc.at("videos")) {
            CslProfile p;
            p.video_id = v.at("id").get<std::string>();
            p.csl = v.at("csl").get<std::vector<double>>();
            p.smoothed = v.at("smoothed").get<std::vector<double>>();
            for (int x : v.at("flags").get<std::vector<int>>()) p.flags.push_back(static_cast<std::uint8_t>(x));
            for (const auto& s : v.at("segments")) p.segments.emplace_back(s.at(0).get<int>(), s.at(1).get<int>());
            p.window = det.window;
            p.rule = det.rule;
            LossTrajectory traj;
            traj.video_id = p.video_id;
            traj.epochs = v.at("epochs").get<std::vector<int>>();
            const auto& rows = v.at("trajectory");
            traj.losses = Matrix(rows.size(), p.csl.size());
            for (std::size_t e = 0; e < rows.size(); ++e) {
                auto row = rows[e].get<std::vector<double>>();
                if (row.size() != p.csl.size()) throw SchemaError("profiles: ragged trajectory for '" + p.video_id + "'");
                std::copy(row.begin(), row.end(), traj.losses.row(e).begin());
            }
            f.profiles.push_back(std::move(p));
            f.trajectories.push_back(std::move(traj));
        }
        doc.erase("videos");
        f.header = std::move(doc);
    } catch (const json::exception& e) {
        throw SchemaError(std::string("profiles: ") + e.what());
    }
    return f;
}

MetricsReport cmd_eval(const RunConfig& cfg, const fs::path& profiles_file, const fs::path& dataset_file,
                       std::ostream& log) {
    const ProfilesFile pf = read_profiles(profiles_file);
    const Dataset ds = read_dataset(dataset_file);
    json provenance{{"run", to_json(cfg)},
                    {"audit", pf.header},
                    {"dataset", {{"file", dataset_file.filename().string()}, {"fingerprint", dataset_fingerprint(ds)}}}};
    MetricsReport r = build_report(pf.profiles, ds, cfg.eval_k_percent, cfg.eda_pooling, provenance);
    for (const auto& w : r.warnings) log << "warning: " << w << "\n";
    fs::create_directories(cfg.out_dir);
    write_text_file(cfg.out_dir / "report.json", to_json(r).dump(2) + "\n");
    log << "eda " << (r.eda ? format_double(*r.eda) : "null") << " micro_auc "
        << (r.micro_auc ? format_double(*r.micro_auc) : "null") << "\n";
    return r;
}

std::string encode_heatmap(const LossTrajectory& traj) {
    const std::size_t E = traj.losses.rows;
    const std::size_t T = traj.losses.cols;
    double mx = 0.0;
    for (double v : traj.losses.data) mx = std::max(mx, v);
    std::string out = "P5\n# csl loss heatmap " + traj.video_id + "\n" + std::to_string(T) + " " + std::to_string(E) + "\n255\n";
    out.reserve(out.size() + E * T);
    for (double v : traj.losses.data) {
        const long px = mx > 0.0 ? std::lround(255.0 * v / mx) : 0;
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::clamp(px, 0L, 255L))));
    }
    return out;
}

std::vector<fs::path> cmd_heatmap(const fs::path& profiles_file, const std::optional<std::string>& video,
                                  const fs::path& out_dir) {
    const ProfilesFile pf = read_profiles(profiles_file);
    std::vector<fs::path> written;
    bool found = false;
    for (const auto& traj : pf.trajectories) {
        if (video && traj.video_id != *video) continue;
        found = true;
        const auto path = out_dir / ("heatmap_" + traj.video_id + ".pgm");
        write_text_file(path, encode_heatmap(traj));
        written.push_back(path);
    }
    if (video && !found) throw LookupError("heatmap: no video with id '" + *video + "' in " + profiles_file.string());
    return written;
}

}  // namespace csl
