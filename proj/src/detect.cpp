#include "csl/detect.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <thread>

#include "csl/errors.hpp"

namespace csl {

using nlohmann::json;

void DetectionConfig::validate() const {
    if (auto* t = std::get_if<ThresholdRule>(&rule); t && !std::isfinite(t->tau))
        throw ConfigError("detection: tau must be finite");
    if (auto* p = std::get_if<PercentileRule>(&rule); p && !(p->k_percent > 0.0 && p->k_percent <= 100.0))
        throw ConfigError("detection: k_percent must lie in (0, 100]");
    if (window < 0) throw ConfigError("detection: window must be >= 0");
    if (min_segment_len < 1) throw ConfigError("detection: min_segment_len must be >= 1");
}

json to_json(const DetectionConfig& c) {
    json j{{"window", c.window},
           {"audit_loss", c.audit_loss == AuditLoss::Unweighted ? "unweighted" : "train_weighted"},
           {"min_segment_len", c.min_segment_len}};
    if (auto* t = std::get_if<ThresholdRule>(&c.rule)) {
        j["mode"] = "threshold";
        j["tau"] = t->tau;
    } else {
        j["mode"] = "percentile";
        j["k_percent"] = std::get<PercentileRule>(c.rule).k_percent;
    }
    return j;
}

DetectionConfig detection_config_from_json(const json& j) {
    DetectionConfig c;
    const auto mode = j.value("mode", std::string("percentile"));
    if (mode == "threshold")
        c.rule = ThresholdRule{j.value("tau", 0.0)};
    else if (mode == "percentile")
        c.rule = PercentileRule{j.value("k_percent", 10.0)};
    else
        throw ConfigError("detection: unknown mode '" + mode + "'");
    c.window = j.value("window", c.window);
    const auto loss = j.value("audit_loss", std::string("unweighted"));
    if (loss == "unweighted")
        c.audit_loss = AuditLoss::Unweighted;
    else if (loss == "train_weighted")
        c.audit_loss = AuditLoss::TrainWeighted;
    else
        throw ConfigError("detection: unknown audit_loss '" + loss + "'");
    c.min_segment_len = j.value("min_segment_len", c.min_segment_len);
    return c;
}

void check_audit_compatible(const CheckpointStore& store, const SequenceSample& sample) {
    const auto& m = store.manifest;
    const auto cite = " (store trained on dataset " + m.dataset_fingerprint + ", grammar " + m.grammar_fingerprint + ")";
    if (store.snapshots.empty()) throw AuditCompatibilityError("checkpoint store is empty" + cite);
    if (sample.frames.cols != static_cast<std::size_t>(m.model.feature_dim))
        throw AuditCompatibilityError("sample '" + sample.id + "' has feature dimension " +
                                      std::to_string(sample.frames.cols) + ", store expects " +
                                      std::to_string(m.model.feature_dim) + cite);
    for (int y : sample.labels)
        if (y < 0 || y >= m.model.num_classes)
            throw AuditCompatibilityError("sample '" + sample.id + "' has label " + std::to_string(y) +
                                          " outside the store's " + std::to_string(m.model.num_classes) +
                                          " classes" + cite);
}

namespace {

std::vector<double> audit_alpha(const CheckpointStore& store, const DetectionConfig& cfg) {
    if (cfg.audit_loss == AuditLoss::TrainWeighted) return store.manifest.weights.alpha;
    return std::vector<double>(static_cast<std::size_t>(store.manifest.model.num_classes), 1.0);
}

void fill_row(const CheckpointStore& store, std::size_t e, const SequenceSample& sample,
              std::span<const double> alpha, LossTrajectory& traj) {
    const auto tr = forward(store.snapshots[e].params, store.manifest.model, sample.frames, RunMode::Eval);
    const auto losses = frame_losses(tr, sample.labels, alpha);
    std::copy(losses.begin(), losses.end(), traj.losses.row(e).begin());
}

LossTrajectory empty_trajectory(const CheckpointStore& store, const SequenceSample& sample) {
    LossTrajectory traj;
    traj.video_id = sample.id;
    traj.losses = Matrix(store.snapshots.size(), sample.length());
    for (const auto& s : store.snapshots) traj.epochs.push_back(s.epoch);
    return traj;
}

}  // namespace

LossTrajectory eval_loss_trajectory(const CheckpointStore& store, const SequenceSample& sample,
                                    const DetectionConfig& cfg) {
    check_audit_compatible(store, sample);
    const auto alpha = audit_alpha(store, cfg);
    LossTrajectory traj = empty_trajectory(store, sample);
    for (std::size_t e = 0; e < store.snapshots.size(); ++e) fill_row(store, e, sample, alpha, traj);
    return traj;
}

std::vector<LossTrajectory> eval_trajectories(const CheckpointStore& store, const Dataset& ds,
                                              const DetectionConfig& cfg, int workers) {
    for (const auto& s : ds.samples) check_audit_compatible(store, s);
    const auto alpha = audit_alpha(store, cfg);
    std::vector<LossTrajectory> out;
    out.reserve(ds.samples.size());
    for (const auto& s : ds.samples) out.push_back(empty_trajectory(store, s));

    const std::size_t n_snap = store.snapshots.size();
    const std::size_t total = n_snap * ds.samples.size();
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        for (std::size_t item = next++; item < total; item = next++) {
            const std::size_t video = item / n_snap;
            const std::size_t e = item % n_snap;
            try {
                fill_row(store, e, ds.samples[video], alpha, out[video]);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    const int n_threads = std::max(1, std::min<int>(workers, static_cast<int>(total)));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    }
    if (failure) std::rethrow_exception(failure);
    return out;
}

std::vector<double> compute_csl(const LossTrajectory& traj) {
    const std::size_t E = traj.losses.rows;
    const std::size_t T = traj.losses.cols;
    std::vector<double> csl(T, 0.0);
    if (E == 0) return csl;
    for (std::size_t e = 0; e < E; ++e)
        for (std::size_t t = 0; t < T; ++t) csl[t] += traj.losses(e, t);
    for (double& v : csl) v /= static_cast<double>(E);
    return csl;
}

std::vector<double> smooth_csl(std::span<const double> csl, int window) {
    if (window < 0) throw ConfigError("smooth_csl: window must be >= 0");
    const auto T = static_cast<std::ptrdiff_t>(csl.size());
    std::vector<double> out(csl.size());
    for (std::ptrdiff_t t = 0; t < T; ++t) {
        const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, t - window);
        const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(T - 1, t + window);
        double s = 0.0;
        for (std::ptrdiff_t i = lo; i <= hi; ++i) s += csl[i];
        out[t] = s / static_cast<double>(hi - lo + 1);
    }
    return out;
}

std::vector<std::uint8_t> flag_threshold(std::span<const double> smoothed, double tau) {
    if (std::isnan(tau)) throw ConfigError("threshold tau is NaN");
    std::vector<std::uint8_t> flags(smoothed.size());
    for (std::size_t t = 0; t < smoothed.size(); ++t) flags[t] = smoothed[t] > tau ? 1 : 0;
    return flags;
}

std::vector<std::uint8_t> flag_percentile(std::span<const double> smoothed, double k_percent) {
    if (!(k_percent > 0.0 && k_percent <= 100.0)) throw ConfigError("flag_percentile: k must lie in (0, 100]");
    const std::size_t T = smoothed.size();
    // k * T / 100 is exact for integral k and T; the tolerance absorbs
    // rounding for fractional k.
    auto m = static_cast<std::size_t>(std::ceil(k_percent * static_cast<double>(T) / 100.0 - 1e-9));
    m = std::min(m, T);
    std::vector<std::size_t> idx(T);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return smoothed[a] > smoothed[b]; });
    std::vector<std::uint8_t> flags(T, 0);
    for (std::size_t i = 0; i < m; ++i) flags[idx[i]] = 1;
    return flags;
}

double interpolated_quantile(std::vector<double> values, double q) {
    if (values.empty()) throw CalibrationError("quantile of an empty pool");
    if (!(q > 0.0 && q < 1.0)) throw ConfigError("quantile level must lie in (0, 1)");
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

double calibrate_tau(std::span<const CslProfile> validation_profiles, double q) {
    std::vector<double> pool;
    for (const auto& p : validation_profiles) pool.insert(pool.end(), p.smoothed.begin(), p.smoothed.end());
    if (pool.empty()) throw CalibrationError("calibrate_tau: no validation frames");
    return interpolated_quantile(std::move(pool), q);
}

std::vector<Segment> frames_to_segments(std::span<const std::uint8_t> flags, int min_segment_len) {
    std::vector<Segment> out;
    const int T = static_cast<int>(flags.size());
    int t = 0;
    while (t < T) {
        if (!flags[t]) {
            ++t;
            continue;
        }
        int end = t;
        while (end < T && flags[end]) ++end;
        if (end - t >= min_segment_len) out.emplace_back(t, end);
        t = end;
    }
    return out;
}

std::vector<double> trajectory_curvature(const LossTrajectory& traj) {
    const std::size_t E = traj.losses.rows;
    if (E < 3) throw InsufficientEpochsError("trajectory_curvature needs at least 3 snapshots, got " + std::to_string(E));
    const std::size_t T = traj.losses.cols;
    std::vector<double> out(T, 0.0);
    for (std::size_t e = 1; e + 1 < E; ++e)
        for (std::size_t t = 0; t < T; ++t)
            out[t] += std::abs(traj.losses(e + 1, t) - 2.0 * traj.losses(e, t) + traj.losses(e - 1, t));
    for (double& v : out) v /= static_cast<double>(E - 2);
    return out;
}

CslProfile profile_from_trajectory(const LossTrajectory& traj, const DetectionConfig& cfg) {
    cfg.validate();
    CslProfile p;
    p.video_id = traj.video_id;
    p.csl = compute_csl(traj);
    p.smoothed = smooth_csl(p.csl, cfg.window);
    p.window = cfg.window;
    p.rule = cfg.rule;
    if (auto* t = std::get_if<ThresholdRule>(&cfg.rule))
        p.flags = flag_threshold(p.smoothed, t->tau);
    else
        p.flags = flag_percentile(p.smoothed, std::get<PercentileRule>(cfg.rule).k_percent);
    p.segments = frames_to_segments(p.flags, cfg.min_segment_len);
    return p;
}

CslProfile audit_sequence(const CheckpointStore& store, const SequenceSample& sample, const DetectionConfig& cfg) {
    cfg.validate();
    return profile_from_trajectory(eval_loss_trajectory(store, sample, cfg), cfg);
}

}  // namespace csl
