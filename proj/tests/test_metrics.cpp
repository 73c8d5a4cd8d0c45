#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "csl/errors.hpp"
#include "csl/metrics.hpp"
#include "test_util.hpp"

using namespace csl;
using Mask = std::vector<std::uint8_t>;

TEST_CASE("AUC examples") {
    const std::vector<double> s = {0.1, 0.4, 0.35, 0.8};
    const Mask g = {0, 0, 1, 1};
    CHECK(micro_auc(s, g) == doctest::Approx(0.75));
    CHECK(auc_bruteforce(s, g) == doctest::Approx(0.75));
    CHECK(micro_auc(std::vector<double>{1, 0}, Mask{1, 0}) == 1.0);
    CHECK(micro_auc(std::vector<double>{0, 1}, Mask{1, 0}) == 0.0);
    CHECK(micro_auc(std::vector<double>(6, 0.3), Mask{1, 0, 1, 0, 0, 0}) == 0.5);
    CHECK(micro_auc(std::vector<double>{5, 6, 1, 2}, Mask{1, 1, 0, 0}) == 1.0);
}

TEST_CASE("AUC errors") {
    CHECK_THROWS_AS(micro_auc(std::vector<double>{1, 2}, Mask{1, 1}), UndefinedMetricError);
    CHECK_THROWS_AS(micro_auc(std::vector<double>{1, 2}, Mask{0, 0}), UndefinedMetricError);
    CHECK_THROWS_AS(auc_bruteforce(std::vector<double>{1, 2}, Mask{0, 0}), UndefinedMetricError);
    CHECK_THROWS_AS(micro_auc(std::vector<double>{1, 2}, Mask{0}), ShapeError);
    CHECK_THROWS_AS(micro_auc(std::vector<double>{std::nan(""), 2}, Mask{0, 1}), NumericError);
}

TEST_CASE("fast AUC matches the brute-force oracle") {
    Rng rng(1);
    for (int i = 0; i < 200; ++i) {
        const int n = 2 + static_cast<int>(rng() % 499);
        std::vector<double> s(n);
        Mask g(n);
        const bool ties = i % 3 == 0;
        for (int t = 0; t < n; ++t) {
            s[t] = ties ? static_cast<double>(rng() % 7) : std::uniform_real_distribution<double>(0, 1)(rng);
            g[t] = rng() % 4 == 0;
        }
        g[0] = 1;
        g[1] = 0;
        CHECK(std::abs(micro_auc(s, g) - auc_bruteforce(s, g)) <= 1e-12);
    }
}

TEST_CASE("AUC transform properties") {
    Rng rng(2);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int i = 0; i < 50; ++i) {
        const int n = 10 + i * 7;
        std::vector<double> s(n);
        Mask g(n);
        for (int t = 0; t < n; ++t) s[t] = u(rng), g[t] = t % 3 == 0;
        const double a = micro_auc(s, g);
        std::vector<double> neg(n), mono(n), rev(s.rbegin(), s.rend());
        Mask grev(g.rbegin(), g.rend());
        std::transform(s.begin(), s.end(), neg.begin(), [](double v) { return -v; });
        std::transform(s.begin(), s.end(), mono.begin(), [](double v) { return std::atan(5 * v) + 2; });
        CHECK(micro_auc(neg, g) == doctest::Approx(1.0 - a).epsilon(1e-12));
        CHECK(micro_auc(mono, g) == doctest::Approx(a).epsilon(1e-12));
        CHECK(micro_auc(rev, grev) == doctest::Approx(a).epsilon(1e-12));
    }
}

namespace {

ScoredVideo video(std::string id, std::vector<double> scores, Mask gt) {
    return {std::move(id), std::move(scores), std::move(gt)};
}

}  // namespace

TEST_CASE("EDA examples") {
    // GT (0,5) and (10,15); only frame 2 scores high, k such that one frame is flagged.
    std::vector<double> s(20, 0.0);
    s[2] = 1.0;
    Mask g(20, 0);
    for (int t = 0; t < 5; ++t) g[t] = 1;
    for (int t = 10; t < 15; ++t) g[t] = 1;
    std::vector<ScoredVideo> vs = {video("a", s, g)};
    CHECK(eda(vs, 5.0) == doctest::Approx(0.5));
    const auto br = eda_breakdown(vs, 5.0);
    CHECK(br.n_gt_segments == std::vector<std::size_t>{2});
    CHECK(br.n_detected == std::vector<std::size_t>{1});
    CHECK(eda(vs, 100.0) == 1.0);

    std::vector<double> far(20, 0.0);
    far[19] = 1.0;
    std::vector<ScoredVideo> miss = {video("b", far, g)};
    CHECK(eda(miss, 5.0) == 0.0);

    std::vector<ScoredVideo> none = {video("c", s, Mask(20, 0))};
    CHECK_THROWS_AS(eda(none, 10.0), UndefinedMetricError);
}

TEST_CASE("EDA pooling") {
    // Video a has much larger scores; global pooling spends every flag there.
    std::vector<ScoredVideo> vs = {video("a", {9, 9, 9, 9}, {1, 0, 0, 0}), video("b", {1, 0, 0, 0}, {1, 0, 0, 0})};
    CHECK(eda(vs, 25.0, EdaPooling::PerVideo) == 1.0);
    CHECK(eda(vs, 25.0, EdaPooling::Global) == 0.5);
}

TEST_CASE("EDA is in [0,1] and monotone in k") {
    Rng rng(3);
    std::uniform_real_distribution<double> u(0, 1);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<ScoredVideo> vs;
        for (int v = 0; v < 3; ++v) {
            const int T = 20 + static_cast<int>(rng() % 40);
            ScoredVideo sv{"v" + std::to_string(v), std::vector<double>(T), Mask(T, 0)};
            for (auto& x : sv.scores) x = u(rng);
            const int a = static_cast<int>(rng() % (T - 5));
            for (int t = a; t < a + 5; ++t) sv.gt_mask[t] = 1;
            vs.push_back(sv);
        }
        for (auto pooling : {EdaPooling::PerVideo, EdaPooling::Global}) {
            double prev = 0.0;
            for (double k = 1; k <= 100; k += 3) {
                const double e = eda(vs, k, pooling);
                CHECK(e >= 0.0);
                CHECK(e <= 1.0);
                CHECK(e >= prev);
                prev = e;
            }
        }
    }
}

namespace {

Dataset toy_test() {
    Dataset ds;
    ds.grammar = make_equidistant_grammar(2, 2, 1.0, 0.0, 2, 3, 0);
    ds.split = Split::Test;
    for (int v = 0; v < 2; ++v) {
        SequenceSample s;
        s.id = "t" + std::to_string(v);
        s.frames = Matrix(6, 2);
        s.labels = {0, 0, 0, 1, 1, 1};
        s.error_mask = {0, 1, 1, 0, 0, 0};
        ds.samples.push_back(s);
    }
    return ds;
}

CslProfile toy_profile(std::string id, std::vector<double> sm) {
    CslProfile p;
    p.video_id = std::move(id);
    p.csl = sm;
    p.smoothed = std::move(sm);
    p.flags.assign(p.smoothed.size(), 0);
    return p;
}

}  // namespace

TEST_CASE("report on identical videos") {
    const auto ds = toy_test();
    const std::vector<double> sc = {0.1, 0.9, 0.3, 0.5, 0.2, 0.0};
    const std::vector<CslProfile> ps = {toy_profile("t0", sc), toy_profile("t1", sc)};
    const auto r = build_report(ps, ds, 20.0);
    REQUIRE(r.micro_auc);
    REQUIRE(r.per_video.size() == 2);
    CHECK(*r.micro_auc == doctest::Approx(*r.per_video[0].auc));
    CHECK(r.n_videos == 2);
    CHECK(r.n_frames == 12);
    CHECK(r.n_corrupted_frames == 4);
    CHECK(r.eda);
    CHECK(*r.eda == 1.0);
    CHECK(r.warnings.empty());

    const auto back = report_from_json(to_json(r));
    CHECK(back == r);
    CHECK(to_json(r)["format"] == "csl-report/1");
}

TEST_CASE("undefined metrics surface as null with a warning") {
    auto ds = toy_test();
    for (auto& s : ds.samples) std::fill(s.error_mask.begin(), s.error_mask.end(), 0);
    const std::vector<CslProfile> ps = {toy_profile("t0", {1, 2, 3, 4, 5, 6}), toy_profile("t1", {1, 2, 3, 4, 5, 6})};
    const auto r = build_report(ps, ds, 10.0);
    CHECK_FALSE(r.micro_auc);
    CHECK_FALSE(r.eda);
    CHECK_FALSE(r.per_video[0].auc);
    CHECK(r.warnings.size() >= 2);
    const auto j = to_json(r);
    CHECK(j["micro_auc"].is_null());
    CHECK(j["eda"].is_null());
    CHECK(report_from_json(j) == r);
}

TEST_CASE("report join errors") {
    const auto ds = toy_test();
    const std::vector<double> sc(6, 0.0);
    CHECK_THROWS_AS(build_report(std::vector<CslProfile>{toy_profile("t0", sc)}, ds, 10.0), LookupError);
    CHECK_THROWS_AS(build_report(std::vector<CslProfile>{toy_profile("t0", sc), toy_profile("zz", sc)}, ds, 10.0),
                    LookupError);
    CHECK_THROWS_AS(
        build_report(std::vector<CslProfile>{toy_profile("t0", sc), toy_profile("t1", {1.0})}, ds, 10.0), DataError);
}
