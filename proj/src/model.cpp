#include "csl/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "csl/errors.hpp"

namespace csl {

using nlohmann::json;

const char* to_string(TemporalMode m) { return m == TemporalMode::Attention ? "attention" : "context_free"; }

TemporalMode temporal_mode_from_string(const std::string& s) {
    if (s == "attention") return TemporalMode::Attention;
    if (s == "context_free") return TemporalMode::ContextFree;
    throw ConfigError("unknown temporal_mode '" + s + "'");
}

void ModelConfig::validate() const {
    if (feature_dim < 1 || hidden_dim < 1 || head_dim1 < 1 || head_dim2 < 1 || attention_dim < 1)
        throw ConfigError("model: all dimensions must be >= 1");
    if (num_classes < 2) throw ConfigError("model: num_classes must be >= 2");
    if (!(dropout1 >= 0.0 && dropout1 < 1.0) || !(dropout2 >= 0.0 && dropout2 < 1.0))
        throw ConfigError("model: dropout rates must lie in [0, 1)");
    if (!(init_scale > 0.0) || !std::isfinite(init_scale)) throw ConfigError("model: init_scale must be > 0");
}

json to_json(const ModelConfig& c) {
    return json{{"feature_dim", c.feature_dim},     {"hidden_dim", c.hidden_dim},
                {"head_dim1", c.head_dim1},         {"head_dim2", c.head_dim2},
                {"num_classes", c.num_classes},     {"temporal_mode", to_string(c.temporal_mode)},
                {"attention_dim", c.attention_dim}, {"dropout", {c.dropout1, c.dropout2}},
                {"init_seed", c.init_seed},         {"init_scale", c.init_scale}};
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig c;
    c.feature_dim = j.value("feature_dim", c.feature_dim);
    c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
    c.head_dim1 = j.value("head_dim1", c.head_dim1);
    c.head_dim2 = j.value("head_dim2", c.head_dim2);
    c.num_classes = j.value("num_classes", c.num_classes);
    if (j.contains("temporal_mode")) c.temporal_mode = temporal_mode_from_string(j["temporal_mode"].get<std::string>());
    c.attention_dim = j.value("attention_dim", c.attention_dim);
    if (j.contains("dropout")) {
        auto d = j["dropout"].get<std::vector<double>>();
        if (d.size() != 2) throw ConfigError("model: dropout must hold two rates");
        c.dropout1 = d[0];
        c.dropout2 = d[1];
    }
    c.init_seed = j.value("init_seed", c.init_seed);
    c.init_scale = j.value("init_scale", c.init_scale);
    return c;
}

ModelParams ModelParams::zeros_like() const {
    ModelParams z = *this;
    z.for_each([](std::string_view, const auto&, std::span<double> v, bool) { std::fill(v.begin(), v.end(), 0.0); });
    return z;
}

std::size_t ModelParams::parameter_count() const {
    std::size_t n = 0;
    for_each([&](std::string_view, const auto&, std::span<const double> v, bool) { n += v.size(); });
    return n;
}

ModelParams init_params(const ModelConfig& cfg) {
    cfg.validate();
    const auto d = static_cast<std::size_t>(cfg.feature_dim);
    const auto h = static_cast<std::size_t>(cfg.hidden_dim);
    const auto a = static_cast<std::size_t>(cfg.attention_dim);
    const auto h1 = static_cast<std::size_t>(cfg.head_dim1);
    const auto h2 = static_cast<std::size_t>(cfg.head_dim2);
    const auto c = static_cast<std::size_t>(cfg.num_classes);

    ModelParams p;
    p.enc_w = Matrix(h, d);
    p.enc_b.assign(h, 0.0);
    if (cfg.temporal_mode == TemporalMode::Attention) {
        p.attn_ln_g.assign(h, 1.0);
        p.attn_ln_b.assign(h, 0.0);
        p.attn_q = Matrix(a, h);
        p.attn_k = Matrix(a, h);
        p.attn_v = Matrix(a, h);
        p.attn_o = Matrix(h, a);
    }
    p.w1 = Matrix(h1, h);
    p.b1.assign(h1, 0.0);
    p.ln1_g.assign(h1, 1.0);
    p.ln1_b.assign(h1, 0.0);
    p.w2 = Matrix(h2, h1);
    p.b2.assign(h2, 0.0);
    p.ln2_g.assign(h2, 1.0);
    p.ln2_b.assign(h2, 0.0);
    p.w3 = Matrix(c, h2);
    p.b3.assign(c, 0.0);

    Rng rng(cfg.init_seed);
    p.for_each([&](std::string_view, const std::vector<std::uint32_t>& shape, std::span<double> v, bool decays) {
        if (!decays) return;
        const double bound = cfg.init_scale / std::sqrt(static_cast<double>(shape[1]));
        std::uniform_real_distribution<double> u(-bound, bound);
        for (double& x : v) x = u(rng);
    });
    return p;
}

void check_shapes(const ModelParams& params, const ModelConfig& cfg) {
    ModelConfig probe = cfg;
    const ModelParams expected = init_params(probe);
    std::vector<std::pair<std::string, std::vector<std::uint32_t>>> want, got;
    expected.for_each([&](std::string_view n, const auto& s, auto, bool) { want.emplace_back(n, s); });
    params.for_each([&](std::string_view n, const auto& s, auto, bool) { got.emplace_back(n, s); });
    if (want != got) throw ShapeError("model parameters do not match the model configuration");
}

namespace {

// Y = X W^T + b, X: T x in, W: out x in.
Matrix linear(const Matrix& x, const Matrix& w, std::span<const double> b) {
    Matrix y(x.rows, w.rows);
    for (std::size_t t = 0; t < x.rows; ++t) {
        const double* xr = &x.data[t * x.cols];
        for (std::size_t o = 0; o < w.rows; ++o) {
            const double* wr = &w.data[o * w.cols];
            double s = b.empty() ? 0.0 : b[o];
            for (std::size_t i = 0; i < w.cols; ++i) s += wr[i] * xr[i];
            y(t, o) = s;
        }
    }
    return y;
}

// dW += dY^T X, db += column sums of dY.
void accumulate_linear_grad(const Matrix& dy, const Matrix& x, Matrix& dw, std::span<double> db) {
    for (std::size_t t = 0; t < dy.rows; ++t) {
        const double* xr = &x.data[t * x.cols];
        for (std::size_t o = 0; o < dy.cols; ++o) {
            const double g = dy(t, o);
            if (g == 0.0) continue;
            double* wr = &dw.data[o * dw.cols];
            for (std::size_t i = 0; i < dw.cols; ++i) wr[i] += g * xr[i];
            if (!db.empty()) db[o] += g;
        }
    }
}

// dX = dY W.
Matrix linear_input_grad(const Matrix& dy, const Matrix& w) {
    Matrix dx(dy.rows, w.cols);
    for (std::size_t t = 0; t < dy.rows; ++t) {
        double* dxr = &dx.data[t * dx.cols];
        for (std::size_t o = 0; o < dy.cols; ++o) {
            const double g = dy(t, o);
            if (g == 0.0) continue;
            const double* wr = &w.data[o * w.cols];
            for (std::size_t i = 0; i < w.cols; ++i) dxr[i] += g * wr[i];
        }
    }
    return dx;
}

Matrix layer_norm(const Matrix& x, std::span<const double> gain, std::span<const double> bias,
                  LayerNormCache& cache) {
    const std::size_t n = x.cols;
    Matrix y(x.rows, n);
    cache.xhat = Matrix(x.rows, n);
    cache.inv_std.assign(x.rows, 0.0);
    for (std::size_t t = 0; t < x.rows; ++t) {
        auto r = x.row(t);
        double mean = 0.0;
        for (double v : r) mean += v;
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (double v : r) var += (v - mean) * (v - mean);
        var /= static_cast<double>(n);
        const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
        cache.inv_std[t] = inv;
        for (std::size_t i = 0; i < n; ++i) {
            const double xh = (r[i] - mean) * inv;
            cache.xhat(t, i) = xh;
            y(t, i) = gain[i] * xh + bias[i];
        }
    }
    return y;
}

Matrix layer_norm_backward(const Matrix& dy, std::span<const double> gain, const LayerNormCache& cache,
                           std::span<double> dgain, std::span<double> dbias) {
    const std::size_t n = dy.cols;
    Matrix dx(dy.rows, n);
    std::vector<double> dxhat(n);
    for (std::size_t t = 0; t < dy.rows; ++t) {
        double mean_d = 0.0;
        double mean_dx = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double g = dy(t, i);
            const double xh = cache.xhat(t, i);
            dgain[i] += g * xh;
            dbias[i] += g;
            dxhat[i] = g * gain[i];
            mean_d += dxhat[i];
            mean_dx += dxhat[i] * xh;
        }
        mean_d /= static_cast<double>(n);
        mean_dx /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i)
            dx(t, i) = cache.inv_std[t] * (dxhat[i] - mean_d - cache.xhat(t, i) * mean_dx);
    }
    return dx;
}

void relu_inplace(Matrix& m) {
    for (double& v : m.data) v = v > 0.0 ? v : 0.0;
}

// ReLU followed by inverted dropout; `mask` holds the realised scale per unit.
Matrix relu_dropout(const Matrix& pre, double rate, RunMode mode, Rng* rng, Matrix& mask) {
    Matrix out = pre;
    relu_inplace(out);
    mask = Matrix(pre.rows, pre.cols, 1.0);
    if (mode == RunMode::Train && rate > 0.0) {
        std::bernoulli_distribution keep(1.0 - rate);
        const double scale = 1.0 / (1.0 - rate);
        for (std::size_t i = 0; i < out.data.size(); ++i) {
            mask.data[i] = keep(*rng) ? scale : 0.0;
            out.data[i] *= mask.data[i];
        }
    }
    return out;
}

void softmax_rows(Matrix& m) {
    for (std::size_t t = 0; t < m.rows; ++t) {
        auto r = m.row(t);
        const double mx = *std::max_element(r.begin(), r.end());
        double s = 0.0;
        for (double& v : r) {
            v = std::exp(v - mx);
            s += v;
        }
        for (double& v : r) v /= s;
    }
}

void check_input(const ModelConfig& cfg, const Matrix& frames) {
    if (frames.rows < 1) throw ShapeError("forward: sequence has no frames");
    if (frames.cols != static_cast<std::size_t>(cfg.feature_dim))
        throw ShapeError("forward: frames have " + std::to_string(frames.cols) + " columns, model expects " +
                         std::to_string(cfg.feature_dim));
    for (double v : frames.data)
        if (!std::isfinite(v)) throw NumericError("forward: non-finite input feature");
}

}  // namespace

Matrix positional_encoding(std::size_t length, std::size_t dim) {
    Matrix pe(length, dim);
    for (std::size_t t = 0; t < length; ++t)
        for (std::size_t i = 0; i < dim; ++i) {
            const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
            const double angle = static_cast<double>(t) * freq;
            pe(t, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    return pe;
}

ForwardTrace forward(const ModelParams& params, const ModelConfig& cfg, const Matrix& frames, RunMode mode,
                     Rng* rng) {
    check_input(cfg, frames);
    if (mode == RunMode::Train && rng == nullptr) throw ConfigError("forward: train mode needs an rng");
    const bool attention = cfg.temporal_mode == TemporalMode::Attention;
    if (attention != params.has_attention()) throw ShapeError("forward: params do not match temporal_mode");

    ForwardTrace tr;
    tr.mode = mode;
    tr.enc_pre = linear(frames, params.enc_w, params.enc_b);
    tr.hidden = tr.enc_pre;
    relu_inplace(tr.hidden);

    if (attention) {
        const std::size_t T = frames.rows;
        const Matrix pe = positional_encoding(T, tr.hidden.cols);
        for (std::size_t i = 0; i < pe.data.size(); ++i) tr.hidden.data[i] += pe.data[i];
        tr.attn_in = layer_norm(tr.hidden, params.attn_ln_g, params.attn_ln_b, tr.attn_ln);
        tr.q = linear(tr.attn_in, params.attn_q, {});
        tr.k = linear(tr.attn_in, params.attn_k, {});
        tr.v = linear(tr.attn_in, params.attn_v, {});
        const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.attention_dim));
        tr.attn = linear(tr.q, tr.k, {});
        for (double& s : tr.attn.data) s *= scale;
        softmax_rows(tr.attn);
        // context = attn * v
        tr.context = Matrix(T, tr.v.cols);
        for (std::size_t t = 0; t < T; ++t) {
            double* cr = &tr.context.data[t * tr.context.cols];
            for (std::size_t s = 0; s < T; ++s) {
                const double w = tr.attn(t, s);
                const double* vr = &tr.v.data[s * tr.v.cols];
                for (std::size_t j = 0; j < tr.v.cols; ++j) cr[j] += w * vr[j];
            }
        }
        tr.contextual = linear(tr.context, params.attn_o, {});
        for (std::size_t i = 0; i < tr.contextual.data.size(); ++i) tr.contextual.data[i] += tr.hidden.data[i];
    } else {
        tr.contextual = tr.hidden;
    }

    tr.a1 = linear(tr.contextual, params.w1, params.b1);
    tr.n1 = layer_norm(tr.a1, params.ln1_g, params.ln1_b, tr.ln1);
    tr.d1 = relu_dropout(tr.n1, cfg.dropout1, mode, rng, tr.mask1);
    tr.a2 = linear(tr.d1, params.w2, params.b2);
    tr.n2 = layer_norm(tr.a2, params.ln2_g, params.ln2_b, tr.ln2);
    tr.d2 = relu_dropout(tr.n2, cfg.dropout2, mode, rng, tr.mask2);
    tr.logits = linear(tr.d2, params.w3, params.b3);
    tr.probs = tr.logits;
    softmax_rows(tr.probs);
    return tr;
}

double weighted_ce(std::span<const double> probs_row, int label, std::span<const double> alpha) {
    if (label < 0 || static_cast<std::size_t>(label) >= probs_row.size() ||
        static_cast<std::size_t>(label) >= alpha.size())
        throw IndexError("weighted_ce: label " + std::to_string(label) + " out of range");
    return alpha[label] * -std::log(std::max(probs_row[label], kProbabilityFloor));
}

std::vector<double> frame_losses(const ForwardTrace& trace, const std::vector<int>& labels,
                                 std::span<const double> alpha) {
    if (labels.size() != trace.probs.rows) throw ShapeError("frame_losses: label count differs from frames");
    std::vector<double> out(labels.size());
    for (std::size_t t = 0; t < labels.size(); ++t) out[t] = weighted_ce(trace.probs.row(t), labels[t], alpha);
    return out;
}

LossAndGradient backward(const ModelParams& params, const ModelConfig& cfg, const Matrix& frames,
                         const std::vector<int>& labels, std::span<const double> alpha, RunMode mode, Rng* rng) {
    if (labels.size() != frames.rows) throw ShapeError("backward: label count differs from frame count");
    if (alpha.size() != static_cast<std::size_t>(cfg.num_classes))
        throw ShapeError("backward: class weight count differs from num_classes");
    const ForwardTrace tr = forward(params, cfg, frames, mode, rng);
    const std::size_t T = frames.rows;
    const double inv_t = 1.0 / static_cast<double>(T);

    LossAndGradient out;
    out.grad = params.zeros_like();
    ModelParams& g = out.grad;

    // dL/dz = alpha_y / T * (p - onehot(y)), zero where the probability floor is active.
    Matrix dz(T, tr.probs.cols);
    for (std::size_t t = 0; t < T; ++t) {
        const int y = labels[t];
        out.loss += weighted_ce(tr.probs.row(t), y, alpha);
        if (tr.probs(t, y) < kProbabilityFloor) continue;
        const double s = alpha[y] * inv_t;
        for (std::size_t c = 0; c < dz.cols; ++c) dz(t, c) = s * tr.probs(t, c);
        dz(t, y) -= s;
    }
    out.loss *= inv_t;

    accumulate_linear_grad(dz, tr.d2, g.w3, g.b3);
    Matrix dd2 = linear_input_grad(dz, params.w3);
    for (std::size_t i = 0; i < dd2.data.size(); ++i)
        dd2.data[i] *= tr.n2.data[i] > 0.0 ? tr.mask2.data[i] : 0.0;
    Matrix da2 = layer_norm_backward(dd2, params.ln2_g, tr.ln2, g.ln2_g, g.ln2_b);

    accumulate_linear_grad(da2, tr.d1, g.w2, g.b2);
    Matrix dd1 = linear_input_grad(da2, params.w2);
    for (std::size_t i = 0; i < dd1.data.size(); ++i)
        dd1.data[i] *= tr.n1.data[i] > 0.0 ? tr.mask1.data[i] : 0.0;
    Matrix da1 = layer_norm_backward(dd1, params.ln1_g, tr.ln1, g.ln1_g, g.ln1_b);

    accumulate_linear_grad(da1, tr.contextual, g.w1, g.b1);
    Matrix dhidden = linear_input_grad(da1, params.w1);

    if (params.has_attention()) {
        // h' = h + context W_o^T; dhidden already carries the residual path.
        const Matrix& dctx_out = dhidden;
        accumulate_linear_grad(dctx_out, tr.context, g.attn_o, {});
        const Matrix dcontext = linear_input_grad(dctx_out, params.attn_o);

        // context = A v
        Matrix dattn(T, T);
        Matrix dv(T, tr.v.cols);
        for (std::size_t t = 0; t < T; ++t) {
            const double* dcr = &dcontext.data[t * dcontext.cols];
            for (std::size_t s = 0; s < T; ++s) {
                const double* vr = &tr.v.data[s * tr.v.cols];
                double* dvr = &dv.data[s * dv.cols];
                const double w = tr.attn(t, s);
                double acc = 0.0;
                for (std::size_t j = 0; j < tr.v.cols; ++j) {
                    acc += dcr[j] * vr[j];
                    dvr[j] += w * dcr[j];
                }
                dattn(t, s) = acc;
            }
        }
        // Row softmax, then the 1/sqrt(a) scale.
        const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.attention_dim));
        Matrix dscores(T, T);
        for (std::size_t t = 0; t < T; ++t) {
            double dot = 0.0;
            for (std::size_t s = 0; s < T; ++s) dot += dattn(t, s) * tr.attn(t, s);
            for (std::size_t s = 0; s < T; ++s) dscores(t, s) = tr.attn(t, s) * (dattn(t, s) - dot) * scale;
        }
        // scores = q k^T
        Matrix dq = linear_input_grad(dscores, tr.k);
        Matrix dk(T, tr.q.cols);
        for (std::size_t t = 0; t < T; ++t) {
            const double* qr = &tr.q.data[t * tr.q.cols];
            for (std::size_t s = 0; s < T; ++s) {
                const double gts = dscores(t, s);
                if (gts == 0.0) continue;
                double* dkr = &dk.data[s * dk.cols];
                for (std::size_t j = 0; j < dk.cols; ++j) dkr[j] += gts * qr[j];
            }
        }
        accumulate_linear_grad(dq, tr.attn_in, g.attn_q, {});
        accumulate_linear_grad(dk, tr.attn_in, g.attn_k, {});
        accumulate_linear_grad(dv, tr.attn_in, g.attn_v, {});
        Matrix dnorm = linear_input_grad(dq, params.attn_q);
        const Matrix dnk = linear_input_grad(dk, params.attn_k);
        const Matrix dnv = linear_input_grad(dv, params.attn_v);
        for (std::size_t i = 0; i < dnorm.data.size(); ++i) dnorm.data[i] += dnk.data[i] + dnv.data[i];
        const Matrix dln = layer_norm_backward(dnorm, params.attn_ln_g, tr.attn_ln, g.attn_ln_g, g.attn_ln_b);
        for (std::size_t i = 0; i < dhidden.data.size(); ++i) dhidden.data[i] += dln.data[i];
    }

    // Encoder ReLU; positions are constants.
    for (std::size_t i = 0; i < dhidden.data.size(); ++i)
        if (tr.enc_pre.data[i] <= 0.0) dhidden.data[i] = 0.0;
    accumulate_linear_grad(dhidden, frames, g.enc_w, g.enc_b);
    return out;
}

}  // namespace csl
