#pragma once

// Frame classifier: encoder, optional single-head self-attention mixer with
// sinusoidal positions, and a 3-layer head with LayerNorm and dropout.
// Gradients are computed analytically; no autograd.

#include <cstdint>
#include <cstring>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "csl/matrix.hpp"

namespace csl {

using Rng = std::mt19937_64;

enum class TemporalMode { ContextFree, Attention };
enum class RunMode { Train, Eval };

const char* to_string(TemporalMode m);
TemporalMode temporal_mode_from_string(const std::string& s);

struct ModelConfig {
    int feature_dim = 16;
    int hidden_dim = 32;
    int head_dim1 = 16;
    int head_dim2 = 8;
    int num_classes = 6;
    TemporalMode temporal_mode = TemporalMode::Attention;
    int attention_dim = 16;
    double dropout1 = 0.5;
    double dropout2 = 0.3;
    std::uint64_t init_seed = 0;
    double init_scale = 1.0;

    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Per-class loss multipliers, normalised to mean 1.
struct ClassWeights {
    std::vector<double> alpha;

    static ClassWeights uniform(int num_classes) { return {std::vector<double>(num_classes, 1.0)}; }
    bool operator==(const ClassWeights&) const = default;
};

/// Every trainable tensor. Weight matrices are stored (out x in).
struct ModelParams {
    Matrix enc_w;
    std::vector<double> enc_b;

    // Attention block; empty in ContextFree mode.
    std::vector<double> attn_ln_g, attn_ln_b;
    Matrix attn_q, attn_k, attn_v;  // attention_dim x hidden_dim
    Matrix attn_o;                  // hidden_dim x attention_dim

    Matrix w1;
    std::vector<double> b1, ln1_g, ln1_b;
    Matrix w2;
    std::vector<double> b2, ln2_g, ln2_b;
    Matrix w3;
    std::vector<double> b3;

    bool has_attention() const { return !attn_q.data.empty(); }

    /// Visits tensors in canonical order as f(name, shape, values, decays).
    /// `decays` is true for weight matrices, false for biases and LayerNorm.
    template <class F>
    void for_each(F&& f) {
        visit(*this, f);
    }
    template <class F>
    void for_each(F&& f) const {
        visit(*this, f);
    }

    /// Same shapes, all zeros.
    ModelParams zeros_like() const;
    std::size_t parameter_count() const;

    bool operator==(const ModelParams&) const = default;

private:
    template <class Self, class F>
    static void visit(Self& p, F& f) {
        using Shape = std::vector<std::uint32_t>;
        auto mat = [&](std::string_view name, auto& m) {
            f(name, Shape{static_cast<std::uint32_t>(m.rows), static_cast<std::uint32_t>(m.cols)},
              std::span(m.data), true);
        };
        auto vec = [&](std::string_view name, auto& v) {
            f(name, Shape{static_cast<std::uint32_t>(v.size())}, std::span(v), false);
        };
        mat("enc.w", p.enc_w);
        vec("enc.b", p.enc_b);
        if (p.has_attention()) {
            vec("attn.ln.gain", p.attn_ln_g);
            vec("attn.ln.bias", p.attn_ln_b);
            mat("attn.q", p.attn_q);
            mat("attn.k", p.attn_k);
            mat("attn.v", p.attn_v);
            mat("attn.o", p.attn_o);
        }
        mat("head.w1", p.w1);
        vec("head.b1", p.b1);
        vec("head.ln1.gain", p.ln1_g);
        vec("head.ln1.bias", p.ln1_b);
        mat("head.w2", p.w2);
        vec("head.b2", p.b2);
        vec("head.ln2.gain", p.ln2_g);
        vec("head.ln2.bias", p.ln2_b);
        mat("head.w3", p.w3);
        vec("head.b3", p.b3);
    }
};

/// Uniform(+-init_scale/sqrt(fan_in)) weights, zero biases, unit LN gains.
ModelParams init_params(const ModelConfig& cfg);

/// Throws ShapeError if params do not match the config.
void check_shapes(const ModelParams& params, const ModelConfig& cfg);

struct LayerNormCache {
    Matrix xhat;
    std::vector<double> inv_std;
};

/// Activations of one forward pass, enough to run the exact backward pass.
struct ForwardTrace {
    RunMode mode = RunMode::Eval;
    Matrix enc_pre;  // W_enc x + b
    Matrix hidden;   // after encoder ReLU, plus positions in Attention mode
    // Attention only.
    LayerNormCache attn_ln;
    Matrix attn_in, q, k, v, attn, context;
    Matrix contextual;  // h'
    // Head.
    Matrix a1;
    LayerNormCache ln1;
    Matrix n1, d1, mask1;
    Matrix a2;
    LayerNormCache ln2;
    Matrix n2, d2, mask2;
    Matrix logits;
    Matrix probs;  // T x C
};

/// Sinusoidal position table, T x dim.
Matrix positional_encoding(std::size_t length, std::size_t dim);

/// `rng` is required in Train mode (dropout) and ignored in Eval mode.
ForwardTrace forward(const ModelParams& params, const ModelConfig& cfg, const Matrix& frames, RunMode mode,
                     Rng* rng = nullptr);

inline constexpr double kProbabilityFloor = 1e-12;
inline constexpr double kLayerNormEps = 1e-5;

/// alpha[label] * -log(max(p[label], 1e-12)).
double weighted_ce(std::span<const double> probs_row, int label, std::span<const double> alpha);

/// Per-frame weighted cross-entropy of a finished forward pass.
std::vector<double> frame_losses(const ForwardTrace& trace, const std::vector<int>& labels,
                                 std::span<const double> alpha);

struct LossAndGradient {
    double loss = 0.0;
    ModelParams grad;
};

/// Mean weighted cross-entropy over frames and its exact gradient. In Train
/// mode the dropout masks come from `rng`, and gradients are exact for them.
LossAndGradient backward(const ModelParams& params, const ModelConfig& cfg, const Matrix& frames,
                         const std::vector<int>& labels, std::span<const double> alpha, RunMode mode,
                         Rng* rng = nullptr);

}  // namespace csl
