#include "csl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "csl/errors.hpp"

namespace csl {

using nlohmann::json;

namespace {

void check_auc_input(std::span<const double> scores, std::span<const std::uint8_t> gt, std::size_t& pos,
                     std::size_t& neg) {
    if (scores.size() != gt.size()) throw ShapeError("auc: scores and ground truth lengths differ");
    pos = 0;
    neg = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (std::isnan(scores[i])) throw NumericError("auc: NaN score");
        (gt[i] ? pos : neg) += 1;
    }
    if (pos == 0 || neg == 0)
        throw UndefinedMetricError("auc undefined: need at least one positive and one negative frame");
}

}  // namespace

double micro_auc(std::span<const double> scores, std::span<const std::uint8_t> gt_mask) {
    std::size_t pos = 0, neg = 0;
    check_auc_input(scores, gt_mask, pos, neg);
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // Walk tie groups in ascending score order; every positive beats all
    // negatives in lower groups and half of the negatives in its own group.
    double wins = 0.0;
    std::size_t neg_below = 0;
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        std::size_t p = 0, n = 0;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
            (gt_mask[idx[j]] ? p : n) += 1;
            ++j;
        }
        wins += static_cast<double>(p) * static_cast<double>(neg_below) + 0.5 * static_cast<double>(p) * static_cast<double>(n);
        neg_below += n;
        i = j;
    }
    return wins / (static_cast<double>(pos) * static_cast<double>(neg));
}

double auc_bruteforce(std::span<const double> scores, std::span<const std::uint8_t> gt_mask) {
    std::size_t pos = 0, neg = 0;
    check_auc_input(scores, gt_mask, pos, neg);
    double wins = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!gt_mask[i]) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (gt_mask[j]) continue;
            if (scores[i] > scores[j])
                wins += 1.0;
            else if (scores[i] == scores[j])
                wins += 0.5;
        }
    }
    return wins / (static_cast<double>(pos) * static_cast<double>(neg));
}

EdaResult eda_breakdown(std::span<const ScoredVideo> videos, double k_percent, EdaPooling pooling) {
    EdaResult r;
    std::vector<std::vector<std::uint8_t>> flags(videos.size());
    if (pooling == EdaPooling::PerVideo) {
        for (std::size_t v = 0; v < videos.size(); ++v) flags[v] = flag_percentile(videos[v].scores, k_percent);
    } else {
        std::vector<double> pooled;
        for (const auto& v : videos) pooled.insert(pooled.end(), v.scores.begin(), v.scores.end());
        const auto all = flag_percentile(pooled, k_percent);
        std::size_t offset = 0;
        for (std::size_t v = 0; v < videos.size(); ++v) {
            flags[v].assign(all.begin() + static_cast<std::ptrdiff_t>(offset),
                            all.begin() + static_cast<std::ptrdiff_t>(offset + videos[v].scores.size()));
            offset += videos[v].scores.size();
        }
    }
    std::size_t total = 0, detected = 0;
    for (std::size_t v = 0; v < videos.size(); ++v) {
        if (videos[v].gt_mask.size() != videos[v].scores.size())
            throw ShapeError("eda: video '" + videos[v].id + "' has mismatched score/mask lengths");
        const auto gt = frames_to_segments(videos[v].gt_mask, 1);
        std::size_t hit = 0;
        for (const auto& [start, end] : gt)
            if (std::any_of(flags[v].begin() + start, flags[v].begin() + end, [](auto f) { return f != 0; })) ++hit;
        r.n_gt_segments.push_back(gt.size());
        r.n_detected.push_back(hit);
        total += gt.size();
        detected += hit;
    }
    if (total == 0) throw UndefinedMetricError("eda undefined: no ground-truth error segments");
    r.eda = static_cast<double>(detected) / static_cast<double>(total);
    return r;
}

double eda(std::span<const ScoredVideo> videos, double k_percent, EdaPooling pooling) {
    return eda_breakdown(videos, k_percent, pooling).eda;
}

MetricsReport build_report(std::span<const CslProfile> profiles, const Dataset& test, double k_percent,
                           EdaPooling pooling, const json& config) {
    std::map<std::string, const CslProfile*> by_id;
    for (const auto& p : profiles) by_id[p.video_id] = &p;
    if (by_id.size() != profiles.size()) throw LookupError("report: duplicate profile ids");

    MetricsReport r;
    r.k_percent = k_percent;
    r.config = config;
    std::vector<ScoredVideo> videos;
    std::vector<double> all_scores;
    std::vector<std::uint8_t> all_gt;
    for (const auto& s : test.samples) {
        auto it = by_id.find(s.id);
        if (it == by_id.end()) throw LookupError("report: no profile for test sample '" + s.id + "'");
        const auto& p = *it->second;
        if (p.smoothed.size() != s.length())
            throw LookupError("report: profile '" + s.id + "' length differs from the test sample");
        videos.push_back({s.id, p.smoothed, s.error_mask});
        all_scores.insert(all_scores.end(), p.smoothed.begin(), p.smoothed.end());
        all_gt.insert(all_gt.end(), s.error_mask.begin(), s.error_mask.end());
        r.n_frames += s.length();
        r.n_corrupted_frames += static_cast<std::size_t>(std::count(s.error_mask.begin(), s.error_mask.end(), 1));
    }
    if (by_id.size() != test.samples.size()) throw LookupError("report: profiles reference ids absent from the test set");
    r.n_videos = videos.size();

    try {
        r.micro_auc = micro_auc(all_scores, all_gt);
    } catch (const UndefinedMetricError& e) {
        r.warnings.emplace_back(e.what());
    }
    std::optional<EdaResult> er;
    try {
        er = eda_breakdown(videos, k_percent, pooling);
        r.eda = er->eda;
    } catch (const UndefinedMetricError& e) {
        r.warnings.emplace_back(e.what());
    }
    for (std::size_t v = 0; v < videos.size(); ++v) {
        VideoMetrics vm;
        vm.id = videos[v].id;
        try {
            vm.auc = micro_auc(videos[v].scores, videos[v].gt_mask);
        } catch (const UndefinedMetricError&) {
        }
        if (er) {
            vm.n_gt_segments = er->n_gt_segments[v];
            vm.n_detected = er->n_detected[v];
        }
        r.per_video.push_back(std::move(vm));
    }
    return r;
}

namespace {

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> opt_from(const json& j) {
    if (j.is_null()) return std::nullopt;
    return j.get<double>();
}

}  // namespace

json to_json(const MetricsReport& r) {
    json per = json::array();
    for (const auto& v : r.per_video)
        per.push_back({{"id", v.id}, {"auc", opt(v.auc)}, {"n_gt_segments", v.n_gt_segments}, {"n_detected", v.n_detected}});
    return json{{"format", "csl-report/1"},
                {"eda", opt(r.eda)},
                {"micro_auc", opt(r.micro_auc)},
                {"k_percent", r.k_percent},
                {"per_video", per},
                {"counts", {{"videos", r.n_videos}, {"frames", r.n_frames}, {"corrupted_frames", r.n_corrupted_frames}}},
                {"warnings", r.warnings},
                {"config", r.config}};
}

MetricsReport report_from_json(const json& j) {
    if (j.value("format", std::string()) != "csl-report/1") throw FormatError("report: unsupported format");
    MetricsReport r;
    try {
        r.eda = opt_from(j.at("eda"));
        r.micro_auc = opt_from(j.at("micro_auc"));
        r.k_percent = j.at("k_percent").get<double>();
        for (const auto& v : j.at("per_video"))
            r.per_video.push_back({v.at("id").get<std::string>(), opt_from(v.at("auc")),
                                   v.at("n_gt_segments").get<std::size_t>(), v.at("n_detected").get<std::size_t>()});
        const auto& c = j.at("counts");
        r.n_videos = c.at("videos").get<std::size_t>();
        r.n_frames = c.at("frames").get<std::size_t>();
        r.n_corrupted_frames = c.at("corrupted_frames").get<std::size_t>();
        r.warnings = j.value("warnings", std::vector<std::string>{});
        r.config = j.value("config", json());
    } catch (const json::exception& e) {
        throw SchemaError(std::string("report: ") + e.what());
    }
    return r;
}

}  // namespace csl
