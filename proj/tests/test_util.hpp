#pragma once

// Shared helpers for the unit and acceptance tests: temp dirs, file io and
// the finite-difference gradient oracle.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "csl/model.hpp"

namespace test_util {

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        static std::random_device rd;
        path = std::filesystem::temp_directory_path() /
               ("csl-test-" + std::to_string(rd()) + "-" + std::to_string(rd()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
};

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << s;
}

inline std::vector<std::string> split_lines(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    for (std::string line; std::getline(in, line);) out.push_back(line);
    return out;
}

inline std::string join_lines(const std::vector<std::string>& lines) {
    std::string s;
    for (const auto& l : lines) s += l + "\n";
    return s;
}

// Finite-difference oracle ---------------------------------------------------

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t skipped = 0;  // coordinates whose +-h probes straddle a ReLU kink or the prob floor
    std::size_t refined = 0;  // coordinates judged at h/10 (refine mode only)
    std::string worst;        // tensor[index] of the worst coordinate
};

// Relative error |a - n| / max(|a|, |n|, floor). The floor keeps coordinates
// with vanishing gradient from turning roundoff into huge relative errors.
inline constexpr double kGradRelFloor = 1e-6;

namespace detail {

inline double mean_loss(const csl::ModelParams& p, const csl::ModelConfig& cfg, const csl::Matrix& x,
                        const std::vector<int>& y, const std::vector<double>& alpha, csl::RunMode mode,
                        std::uint64_t dropout_seed, std::vector<std::uint8_t>* pattern) {
    csl::Rng rng(dropout_seed);
    const auto tr = csl::forward(p, cfg, x, mode, &rng);
    const auto l = csl::frame_losses(tr, y, alpha);
    if (pattern) {
        pattern->clear();
        for (const auto* m : {&tr.enc_pre, &tr.n1, &tr.n2})
            for (double v : m->data) pattern->push_back(v > 0.0);
        for (std::size_t t = 0; t < y.size(); ++t) pattern->push_back(tr.probs(t, y[t]) < csl::kProbabilityFloor);
    }
    double s = 0.0;
    for (double v : l) s += v;
    return s / static_cast<double>(l.size());
}

}  // namespace detail

// Central differences with step h over every parameter, against backward().
inline GradCheckResult grad_check(const csl::ModelParams& params, const csl::ModelConfig& cfg, const csl::Matrix& x,
                                  const std::vector<int>& y, const std::vector<double>& alpha, csl::RunMode mode,
                                  std::uint64_t dropout_seed = 7, double h = 1e-4, bool refine = false) {
    csl::Rng rng(dropout_seed);
    const auto analytic = csl::backward(params, cfg, x, y, alpha, mode, &rng);

    std::vector<std::vector<double>> grads;
    analytic.grad.for_each([&](std::string_view, const auto&, auto values, bool) {
        grads.emplace_back(values.begin(), values.end());
    });

    GradCheckResult res;
    csl::ModelParams probe = params;
    std::size_t tensor = 0;
    std::vector<std::uint8_t> pat_plus, pat_minus;
    probe.for_each([&](std::string_view name, const auto&, auto values, bool) {
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double orig = values[i];
            values[i] = orig + h;
            const double lp = detail::mean_loss(probe, cfg, x, y, alpha, mode, dropout_seed, &pat_plus);
            values[i] = orig - h;
            const double lm = detail::mean_loss(probe, cfg, x, y, alpha, mode, dropout_seed, &pat_minus);
            values[i] = orig;
            if (pat_plus != pat_minus) {
                ++res.skipped;
                continue;
            }
            const double num = (lp - lm) / (2.0 * h);
            const double ana = grads[tensor][i];
            double rel = std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), kGradRelFloor});
            if (refine && rel > 1e-4) {
                // Truncation error of central differences falls as h^2; an
                // analytic bug does not. Accept the h/10 probe if it shows that.
                const double h2 = h / 10.0;
                values[i] = orig + h2;
                const double lp2 = detail::mean_loss(probe, cfg, x, y, alpha, mode, dropout_seed, nullptr);
                values[i] = orig - h2;
                const double lm2 = detail::mean_loss(probe, cfg, x, y, alpha, mode, dropout_seed, nullptr);
                values[i] = orig;
                const double num2 = (lp2 - lm2) / (2.0 * h2);
                const double rel2 = std::abs(ana - num2) / std::max({std::abs(ana), std::abs(num2), kGradRelFloor});
                if (std::abs(ana - num2) * 20.0 < std::abs(ana - num)) {
                    rel = rel2;
                    ++res.refined;
                }
            }
            ++res.checked;
            if (rel > res.max_rel_error) {
                res.max_rel_error = rel;
                res.worst = std::string(name) + "[" + std::to_string(i) + "]";
            }
        }
        ++tensor;
    });
    return res;
}

// Tiny model for gradient checks: d=3, h=4, C=3, T=5.
inline csl::ModelConfig tiny_config(csl::TemporalMode mode, std::uint64_t seed) {
    csl::ModelConfig c;
    c.feature_dim = 3;
    c.hidden_dim = 4;
    c.head_dim1 = 4;
    c.head_dim2 = 4;
    c.num_classes = 3;
    c.attention_dim = 4;
    c.temporal_mode = mode;
    c.init_seed = seed;
    return c;
}

struct TinyProblem {
    csl::ModelConfig cfg;
    csl::ModelParams params;
    csl::Matrix x;
    std::vector<int> y;
    std::vector<double> alpha;
};

// Random draw: parameters perturbed off init (non-unit LN gains, non-zero
// biases), random frames, labels and class weights.
inline TinyProblem tiny_problem(csl::TemporalMode mode, std::uint64_t seed, int T = 5) {
    TinyProblem p;
    p.cfg = tiny_config(mode, seed);
    p.params = csl::init_params(p.cfg);
    csl::Rng rng(seed * 7919 + 13);
    std::normal_distribution<double> n01(0.0, 1.0);
    p.params.for_each([&](std::string_view, const auto&, auto values, bool) {
        for (auto& v : values) v += 0.3 * n01(rng);
    });
    p.x = csl::Matrix(T, p.cfg.feature_dim);
    for (auto& v : p.x.data) v = n01(rng);
    std::uniform_int_distribution<int> cls(0, p.cfg.num_classes - 1);
    for (int t = 0; t < T; ++t) p.y.push_back(cls(rng));
    std::uniform_real_distribution<double> a(0.5, 2.0);
    for (int c = 0; c < p.cfg.num_classes; ++c) p.alpha.push_back(a(rng));
    return p;
}

}  // namespace test_util
