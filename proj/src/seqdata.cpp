#include "csl/seqdata.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "csl/errors.hpp"
#include "csl/hash.hpp"

namespace csl {

using nlohmann::json;

void PhaseGrammar::validate() const {
    if (num_classes < 2) throw ConfigError("grammar: num_classes must be >= 2");
    if (feature_dim < 1) throw ConfigError("grammar: feature_dim must be >= 1");
    if (duration_min < 1) throw ConfigError("grammar: duration_min must be >= 1");
    if (duration_min > duration_max) throw ConfigError("grammar: duration_min > duration_max");
    if (boundary_blend < 0 || boundary_blend >= duration_min)
        throw ConfigError("grammar: boundary_blend must lie in [0, duration_min)");
    if (!(feature_noise_sigma >= 0.0) || !std::isfinite(feature_noise_sigma))
        throw ConfigError("grammar: feature_noise_sigma must be finite and >= 0");
    if (class_means.rows != static_cast<std::size_t>(num_classes) ||
        class_means.cols != static_cast<std::size_t>(feature_dim))
        throw ConfigError("grammar: class_means must be num_classes x feature_dim");
    for (double v : class_means.data)
        if (!std::isfinite(v)) throw ConfigError("grammar: class_means must be finite");
    if (phase_order.size() != static_cast<std::size_t>(num_classes))
        throw ConfigError("grammar: phase_order must list every class once");
    std::vector<int> sorted = phase_order;
    std::sort(sorted.begin(), sorted.end());
    for (int c = 0; c < num_classes; ++c)
        if (sorted[c] != c) throw ConfigError("grammar: phase_order is not a permutation of 0..C-1");
    for (int a = 0; a < num_classes; ++a)
        for (int b = a + 1; b < num_classes; ++b) {
            auto ra = class_means.row(a);
            auto rb = class_means.row(b);
            if (std::equal(ra.begin(), ra.end(), rb.begin()))
                throw ConfigError("grammar: class means " + std::to_string(a) + " and " +
                                  std::to_string(b) + " coincide");
        }
}

double min_class_separation(const PhaseGrammar& g) {
    double best = std::numeric_limits<double>::infinity();
    for (int a = 0; a < g.num_classes; ++a)
        for (int b = a + 1; b < g.num_classes; ++b) {
            double s = 0.0;
            for (int k = 0; k < g.feature_dim; ++k) {
                double diff = g.class_means(a, k) - g.class_means(b, k);
                s += diff * diff;
            }
            best = std::min(best, std::sqrt(s));
        }
    return best;
}

PhaseGrammar make_separated_grammar(int num_classes, int feature_dim, double min_separation,
                                    double noise_sigma, int duration_min, int duration_max,
                                    int boundary_blend, std::uint64_t seed) {
    if (num_classes < 2 || feature_dim < 1) throw ConfigError("grammar: bad dimensions");
    if (!(min_separation > 0.0)) throw ConfigError("grammar: min_separation must be > 0");
    PhaseGrammar g;
    g.num_classes = num_classes;
    g.feature_dim = feature_dim;
    g.feature_noise_sigma = noise_sigma;
    g.duration_min = duration_min;
    g.duration_max = duration_max;
    g.boundary_blend = boundary_blend;
    g.phase_order.resize(num_classes);
    std::iota(g.phase_order.begin(), g.phase_order.end(), 0);
    g.class_means = Matrix(num_classes, feature_dim);
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& v : g.class_means.data) v = normal(rng);
    double current = min_class_separation(g);
    if (!(current > 0.0)) throw ConfigError("grammar: degenerate class means");
    for (double& v : g.class_means.data) v *= min_separation / current;
    g.validate();
    return g;
}

PhaseGrammar make_equidistant_grammar(int num_classes, int feature_dim, double separation, double noise_sigma,
                                      int duration_min, int duration_max, int boundary_blend) {
    if (num_classes < 2 || feature_dim < num_classes)
        throw ConfigError("grammar: equidistant layout needs feature_dim >= num_classes >= 2");
    if (!(separation > 0.0)) throw ConfigError("grammar: separation must be > 0");
    PhaseGrammar g;
    g.num_classes = num_classes;
    g.feature_dim = feature_dim;
    g.feature_noise_sigma = noise_sigma;
    g.duration_min = duration_min;
    g.duration_max = duration_max;
    g.boundary_blend = boundary_blend;
    g.phase_order.resize(num_classes);
    std::iota(g.phase_order.begin(), g.phase_order.end(), 0);
    g.class_means = Matrix(num_classes, feature_dim);
    for (int c = 0; c < num_classes; ++c) g.class_means(c, c) = separation / std::sqrt(2.0);
    g.validate();
    return g;
}

const char* to_string(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "train";
}

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    if (s == "test") return Split::Test;
    throw ConfigError("unknown split '" + s + "'");
}

void CorruptionSpec::validate() const {
    if (!(video_fraction > 0.0 && video_fraction <= 1.0))
        throw ConfigError("corruption: video_fraction must lie in (0, 1]");
    if (kind == CorruptionKind::Mislabel) {
        if (segment_len_min < 1) throw ConfigError("corruption: segment_len_min must be >= 1");
        if (segment_len_min > segment_len_max)
            throw ConfigError("corruption: segment_len_min > segment_len_max");
    }
}

void Dataset::validate() const {
    std::set<std::string> ids;
    for (const auto& s : samples) {
        if (!ids.insert(s.id).second) throw SchemaError("duplicate sample id '" + s.id + "'");
        if (s.frames.rows != s.labels.size() || s.error_mask.size() != s.labels.size())
            throw SchemaError("sample '" + s.id + "': frames, labels and error_mask lengths differ");
        if (s.frames.cols != static_cast<std::size_t>(grammar.feature_dim))
            throw SchemaError("sample '" + s.id + "': feature dimension does not match grammar");
        for (int y : s.labels)
            if (y < 0 || y >= grammar.num_classes)
                throw SchemaError("sample '" + s.id + "': label out of range");
        for (auto m : s.error_mask)
            if (m > 1) throw SchemaError("sample '" + s.id + "': error_mask must be binary");
        if (!s.corrupted() && std::any_of(s.error_mask.begin(), s.error_mask.end(), [](auto m) { return m; }))
            throw SchemaError("sample '" + s.id + "': uncorrupted sample has nonzero error_mask");
    }
}

const SequenceSample& Dataset::find(const std::string& id) const {
    for (const auto& s : samples)
        if (s.id == id) return s;
    throw LookupError("no sample with id '" + id + "'");
}

namespace {

std::string sample_id(Split split, int index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s-%04d", to_string(split), index);
    return buf;
}

// Mean feature vector for the frame at `offset` within phase `k` of length
// `len`, blending linearly across each boundary over 2 * blend frames.
void frame_mean(const PhaseGrammar& g, const std::vector<int>& phases, std::size_t k, int offset, int len,
                std::span<double> out) {
    int blend = g.boundary_blend;
    int cls = phases[k];
    int other = cls;
    double lambda = 0.0;
    if (blend > 0 && k > 0 && offset < blend) {
        // Second half of the window opened by the previous boundary.
        int j = blend + offset;
        other = phases[k - 1];
        lambda = 1.0 - static_cast<double>(j + 1) / (2 * blend + 1);
    } else if (blend > 0 && k + 1 < phases.size() && len - offset <= blend) {
        int j = blend - (len - offset);
        other = phases[k + 1];
        lambda = static_cast<double>(j + 1) / (2 * blend + 1);
    }
    for (int c = 0; c < g.feature_dim; ++c)
        out[c] = (1.0 - lambda) * g.class_means(cls, c) + lambda * g.class_means(other, c);
}

}  // namespace

Dataset generate_dataset(const PhaseGrammar& grammar, int n_videos, Split split, std::uint64_t seed) {
    grammar.validate();
    if (n_videos < 1) throw ConfigError("n_videos must be >= 1");
    Dataset ds;
    ds.grammar = grammar;
    ds.split = split;
    ds.seed = seed;
    Rng rng(seed);
    std::uniform_int_distribution<int> duration(grammar.duration_min, grammar.duration_max);
    std::normal_distribution<double> noise(0.0, grammar.feature_noise_sigma > 0 ? grammar.feature_noise_sigma : 1.0);
    const bool noisy = grammar.feature_noise_sigma > 0.0;
    const auto& phases = grammar.phase_order;
    for (int v = 0; v < n_videos; ++v) {
        std::vector<int> lengths(phases.size());
        for (auto& l : lengths) l = duration(rng);
        int total = std::accumulate(lengths.begin(), lengths.end(), 0);
        SequenceSample s;
        s.id = sample_id(split, v);
        s.frames = Matrix(total, grammar.feature_dim);
        s.labels.resize(total);
        s.error_mask.assign(total, 0);
        int t = 0;
        for (std::size_t k = 0; k < phases.size(); ++k) {
            for (int o = 0; o < lengths[k]; ++o, ++t) {
                s.labels[t] = phases[k];
                auto row = s.frames.row(t);
                frame_mean(grammar, phases, k, o, lengths[k], row);
                if (noisy)
                    for (double& x : row) x += noise(rng);
            }
        }
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

std::vector<LabelRun> label_runs(const std::vector<int>& labels) {
    std::vector<LabelRun> runs;
    for (std::size_t t = 0; t < labels.size(); ++t) {
        if (runs.empty() || runs.back().label != labels[t])
            runs.push_back({labels[t], static_cast<int>(t), static_cast<int>(t) + 1});
        else
            runs.back().end = static_cast<int>(t) + 1;
    }
    return runs;
}

bool follows_phase_order(const std::vector<int>& labels, const std::vector<int>& phase_order) {
    std::vector<int> rank(phase_order.size());
    for (std::size_t i = 0; i < phase_order.size(); ++i) rank[phase_order[i]] = static_cast<int>(i);
    auto runs = label_runs(labels);
    for (std::size_t i = 1; i < runs.size(); ++i)
        if (rank[runs[i].label] < rank[runs[i - 1].label]) return false;
    return true;
}

SequenceSample apply_mislabel(const SequenceSample& sample, int start, int end, int to_class) {
    if (sample.corrupted()) throw UsageError("sample '" + sample.id + "' is already corrupted");
    const int T = static_cast<int>(sample.length());
    if (start < 0 || end > T || start >= end)
        throw ConfigError("mislabel segment [" + std::to_string(start) + ", " + std::to_string(end) +
                          ") outside sequence of length " + std::to_string(T));
    SequenceSample out = sample;
    const int from = sample.labels[start];
    if (to_class == from) throw ConfigError("mislabel target equals the original class");
    for (int t = start; t < end; ++t) {
        out.labels[t] = to_class;
        out.error_mask[t] = 1;
    }
    out.corruption = MislabelInfo{start, end, from, to_class};
    return out;
}

SequenceSample apply_disorder(const SequenceSample& sample, int run_index, DisorderSwap swap) {
    if (sample.corrupted()) throw UsageError("sample '" + sample.id + "' is already corrupted");
    auto runs = label_runs(sample.labels);
    if (runs.size() < 2)
        throw SequenceTooShortError("sample '" + sample.id + "' has fewer than 2 label runs");
    if (run_index < 0 || run_index + 1 >= static_cast<int>(runs.size()))
        throw ConfigError("disorder run index out of range");
    const LabelRun a = runs[run_index];
    const LabelRun b = runs[run_index + 1];
    SequenceSample out = sample;
    // New block layout over [a.start, b.end): B first, then A.
    int t = a.start;
    for (int src = b.start; src < b.end; ++src, ++t) out.labels[t] = sample.labels[src];
    for (int src = a.start; src < a.end; ++src, ++t) out.labels[t] = sample.labels[src];
    if (swap == DisorderSwap::SwapContent) {
        const std::size_t d = sample.frames.cols;
        auto dst = out.frames.data.begin() + static_cast<std::ptrdiff_t>(a.start * d);
        auto first_b = sample.frames.data.begin() + static_cast<std::ptrdiff_t>(b.start * d);
        auto end_b = sample.frames.data.begin() + static_cast<std::ptrdiff_t>(b.end * d);
        auto first_a = sample.frames.data.begin() + static_cast<std::ptrdiff_t>(a.start * d);
        dst = std::copy(first_b, end_b, dst);
        std::copy(first_a, first_b, dst);
    }
    for (int i = a.start; i < b.end; ++i) out.error_mask[i] = 1;
    out.corruption = DisorderInfo{a.start, a.end, b.start, b.end};
    return out;
}

SequenceSample inject_mislabeling(const SequenceSample& sample, int num_classes, const CorruptionSpec& spec,
                                  Rng& rng) {
    if (spec.kind != CorruptionKind::Mislabel) throw UsageError("inject_mislabeling needs kind = mislabel");
    if (sample.corrupted()) throw UsageError("sample '" + sample.id + "' is already corrupted");
    if (num_classes < 2) throw ConfigError("mislabeling needs at least 2 classes");
    const int T = static_cast<int>(sample.length());
    if (T < spec.segment_len_min)
        throw SequenceTooShortError("sample '" + sample.id + "' has " + std::to_string(T) +
                                    " frames, fewer than segment_len_min");
    int len = std::uniform_int_distribution<int>(spec.segment_len_min, spec.segment_len_max)(rng);
    len = std::min(len, T);
    const int start = std::uniform_int_distribution<int>(0, T - len)(rng);
    const int from = sample.labels[start];
    // Uniform over the C-1 classes other than `from`.
    int to = std::uniform_int_distribution<int>(0, num_classes - 2)(rng);
    if (to >= from) ++to;
    return apply_mislabel(sample, start, start + len, to);
}

SequenceSample inject_disordering(const SequenceSample& sample, const CorruptionSpec& spec, Rng& rng) {
    if (spec.kind != CorruptionKind::Disorder) throw UsageError("inject_disordering needs kind = disorder");
    if (sample.corrupted()) throw UsageError("sample '" + sample.id + "' is already corrupted");
    const auto runs = label_runs(sample.labels);
    if (runs.size() < 2)
        throw SequenceTooShortError("sample '" + sample.id + "' has fewer than 2 label runs");
    const int pair = std::uniform_int_distribution<int>(0, static_cast<int>(runs.size()) - 2)(rng);
    return apply_disorder(sample, pair, spec.disorder_swap);
}

Dataset corrupt_dataset(const Dataset& ds, const CorruptionSpec& spec) {
    spec.validate();
    if (ds.split == Split::Val) throw ConfigError("corruption applies to train or test splits only");
    if (ds.corruption_spec) throw UsageError("dataset is already corrupted");
    const std::size_t n = ds.samples.size();
    const auto count = static_cast<std::size_t>(std::llround(spec.video_fraction * static_cast<double>(n)));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(spec.seed);
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(count);
    std::sort(order.begin(), order.end());

    Dataset out = ds;
    out.corruption_spec = spec;
    for (std::size_t idx : order) {
        auto& s = out.samples[idx];
        s = spec.kind == CorruptionKind::Mislabel ? inject_mislabeling(s, ds.grammar.num_classes, spec, rng)
                                                  : inject_disordering(s, spec, rng);
    }
    return out;
}

// ---------------------------------------------------------------------------
// JSON conversions

json to_json(const PhaseGrammar& g) {
    json means = json::array();
    for (std::size_t c = 0; c < g.class_means.rows; ++c) {
        auto r = g.class_means.row(c);
        means.push_back(std::vector<double>(r.begin(), r.end()));
    }
    return json{{"num_classes", g.num_classes},
                {"feature_dim", g.feature_dim},
                {"class_means", means},
                {"feature_noise_sigma", g.feature_noise_sigma},
                {"phase_order", g.phase_order},
                {"duration_min", g.duration_min},
                {"duration_max", g.duration_max},
                {"boundary_blend", g.boundary_blend}};
}

PhaseGrammar grammar_from_json(const json& j) {
    PhaseGrammar g;
    g.num_classes = j.at("num_classes").get<int>();
    g.feature_dim = j.at("feature_dim").get<int>();
    g.feature_noise_sigma = j.at("feature_noise_sigma").get<double>();
    g.phase_order = j.at("phase_order").get<std::vector<int>>();
    g.duration_min = j.at("duration_min").get<int>();
    g.duration_max = j.at("duration_max").get<int>();
    g.boundary_blend = j.value("boundary_blend", 3);
    const auto& means = j.at("class_means");
    g.class_means = Matrix(means.size(), means.empty() ? 0 : means[0].size());
    for (std::size_t c = 0; c < means.size(); ++c) {
        auto row = means[c].get<std::vector<double>>();
        if (row.size() != g.class_means.cols) throw ConfigError("grammar: ragged class_means");
        std::copy(row.begin(), row.end(), g.class_means.row(c).begin());
    }
    return g;
}

namespace {

const char* kind_name(CorruptionKind k) { return k == CorruptionKind::Mislabel ? "mislabel" : "disorder"; }

CorruptionKind kind_from_name(const std::string& s) {
    if (s == "mislabel") return CorruptionKind::Mislabel;
    if (s == "disorder") return CorruptionKind::Disorder;
    throw ConfigError("unknown corruption kind '" + s + "'");
}

json corruption_to_json(const Corruption& c) {
    if (auto* m = std::get_if<MislabelInfo>(&c))
        return json{{"type", "mislabel"},
                    {"start", m->start},
                    {"end", m->end},
                    {"from_class", m->from_class},
                    {"to_class", m->to_class}};
    if (auto* d = std::get_if<DisorderInfo>(&c))
        return json{{"type", "disorder"},
                    {"start_a", d->start_a},
                    {"end_a", d->end_a},
                    {"start_b", d->start_b},
                    {"end_b", d->end_b}};
    return nullptr;
}

Corruption corruption_from_json(const json& j) {
    if (j.is_null()) return NoCorruption{};
    const auto type = j.at("type").get<std::string>();
    if (type == "mislabel")
        return MislabelInfo{j.at("start").get<int>(), j.at("end").get<int>(), j.at("from_class").get<int>(),
                            j.at("to_class").get<int>()};
    if (type == "disorder")
        return DisorderInfo{j.at("start_a").get<int>(), j.at("end_a").get<int>(), j.at("start_b").get<int>(),
                            j.at("end_b").get<int>()};
    throw SchemaError("unknown corruption type '" + type + "'");
}

json sample_to_json(const SequenceSample& s) {
    json frames = json::array();
    for (std::size_t t = 0; t < s.frames.rows; ++t) {
        auto r = s.frames.row(t);
        frames.push_back(std::vector<double>(r.begin(), r.end()));
    }
    std::vector<int> mask(s.error_mask.begin(), s.error_mask.end());
    return json{{"id", s.id},
                {"frames", frames},
                {"labels", s.labels},
                {"error_mask", mask},
                {"corruption", corruption_to_json(s.corruption)}};
}

SequenceSample sample_from_json(const json& j, std::size_t feature_dim) {
    SequenceSample s;
    s.id = j.at("id").get<std::string>();
    const auto& frames = j.at("frames");
    s.labels = j.at("labels").get<std::vector<int>>();
    auto mask = j.at("error_mask").get<std::vector<int>>();
    if (frames.size() != s.labels.size() || mask.size() != s.labels.size())
        throw SchemaError("sample '" + s.id + "': frames has " + std::to_string(frames.size()) +
                          " rows, labels " + std::to_string(s.labels.size()) + ", error_mask " +
                          std::to_string(mask.size()));
    s.frames = Matrix(frames.size(), feature_dim);
    for (std::size_t t = 0; t < frames.size(); ++t) {
        const auto& row = frames[t];
        if (!row.is_array() || row.size() != feature_dim)
            throw SchemaError("sample '" + s.id + "': frame " + std::to_string(t) + " has wrong dimension");
        for (std::size_t c = 0; c < feature_dim; ++c) s.frames(t, c) = row[c].get<double>();
    }
    s.error_mask.reserve(mask.size());
    for (int m : mask) {
        if (m != 0 && m != 1) throw SchemaError("sample '" + s.id + "': error_mask must be 0/1");
        s.error_mask.push_back(static_cast<std::uint8_t>(m));
    }
    s.corruption = corruption_from_json(j.contains("corruption") ? j.at("corruption") : json(nullptr));
    return s;
}

bool is_gzip_path(const std::filesystem::path& p) { return p.extension() == ".gz"; }

// Reads every line through zlib, which passes plain files through unchanged.
std::vector<std::string> read_lines(const std::filesystem::path& path) {
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) throw DataError("cannot open '" + path.string() + "' for reading");
    std::vector<std::string> lines;
    std::string current;
    char buf[1 << 16];
    int n;
    while ((n = gzread(f, buf, sizeof buf)) > 0) {
        for (int i = 0; i < n; ++i) {
            if (buf[i] == '\n') {
                lines.push_back(std::move(current));
                current.clear();
            } else {
                current.push_back(buf[i]);
            }
        }
    }
    int err = 0;
    const char* msg = gzerror(f, &err);
    std::string message = msg ? msg : "";
    gzclose(f);
    if (n < 0 || (err != Z_OK && err != Z_BUF_ERROR))
        throw ParseError("read failure: " + message, lines.size() + 1);
    if (!current.empty()) lines.push_back(std::move(current));
    return lines;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    if (is_gzip_path(path)) {
        gzFile f = gzopen(tmp.c_str(), "wb");
        if (!f) throw DataError("cannot open '" + tmp.string() + "' for writing");
        const bool ok = text.empty() || gzwrite(f, text.data(), static_cast<unsigned>(text.size())) > 0;
        if (gzclose(f) != Z_OK || !ok) throw DataError("write failure on '" + path.string() + "'");
    } else {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot open '" + tmp.string() + "' for writing");
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        out.close();
        if (!out) throw DataError("write failure on '" + path.string() + "'");
    }
    std::filesystem::rename(tmp, path);
}

constexpr const char* kDatasetFormat = "csl-seqdata/1";

}  // namespace

json to_json(const CorruptionSpec& s) {
    return json{{"kind", kind_name(s.kind)},
                {"video_fraction", s.video_fraction},
                {"segment_len_min", s.segment_len_min},
                {"segment_len_max", s.segment_len_max},
                {"seed", s.seed},
                {"disorder_swap", s.disorder_swap == DisorderSwap::SwapContent ? "content" : "labels"}};
}

CorruptionSpec corruption_spec_from_json(const json& j) {
    CorruptionSpec s;
    s.kind = kind_from_name(j.value("kind", std::string("mislabel")));
    s.video_fraction = j.value("video_fraction", s.video_fraction);
    s.segment_len_min = j.value("segment_len_min", s.segment_len_min);
    s.segment_len_max = j.value("segment_len_max", s.segment_len_max);
    s.seed = j.value("seed", s.seed);
    const auto swap = j.value("disorder_swap", std::string("content"));
    if (swap == "content")
        s.disorder_swap = DisorderSwap::SwapContent;
    else if (swap == "labels")
        s.disorder_swap = DisorderSwap::SwapLabels;
    else
        throw ConfigError("unknown disorder_swap '" + swap + "'");
    return s;
}

void write_dataset(const Dataset& ds, const std::filesystem::path& path) {
    ds.validate();
    json header{{"format", kDatasetFormat},
                {"grammar", to_json(ds.grammar)},
                {"split", to_string(ds.split)},
                {"seed", ds.seed},
                {"n_samples", ds.samples.size()},
                {"corruption_spec", ds.corruption_spec ? to_json(*ds.corruption_spec) : json(nullptr)}};
    std::string text = header.dump();
    text.push_back('\n');
    for (const auto& s : ds.samples) {
        text += sample_to_json(s).dump();
        text.push_back('\n');
    }
    write_text(path, text);
}

Dataset read_dataset(const std::filesystem::path& path) {
    const auto lines = read_lines(path);
    if (lines.empty()) throw ParseError("empty dataset file", 1);
    Dataset ds;
    std::size_t expected = 0;
    std::size_t lineno = 1;
    try {
        const json header = json::parse(lines[0]);
        if (header.value("format", std::string()) != kDatasetFormat)
            throw ParseError("unsupported format tag", 1);
        ds.grammar = grammar_from_json(header.at("grammar"));
        ds.split = split_from_string(header.at("split").get<std::string>());
        ds.seed = header.at("seed").get<std::uint64_t>();
        expected = header.value("n_samples", lines.size() - 1);
        if (header.contains("corruption_spec") && !header["corruption_spec"].is_null())
            ds.corruption_spec = corruption_spec_from_json(header["corruption_spec"]);
        for (lineno = 2; lineno <= lines.size(); ++lineno) {
            const auto& line = lines[lineno - 1];
            if (line.empty()) continue;
            ds.samples.push_back(sample_from_json(json::parse(line), ds.grammar.feature_dim));
        }
    } catch (const json::parse_error& e) {
        throw ParseError(e.what(), lineno);
    } catch (const json::exception& e) {
        throw SchemaError("line " + std::to_string(lineno) + ": " + e.what());
    } catch (const ConfigError& e) {
        throw SchemaError("line " + std::to_string(lineno) + ": " + e.what());
    }
    if (ds.samples.size() != expected)
        throw ParseError("header announces " + std::to_string(expected) + " samples, file holds " +
                             std::to_string(ds.samples.size()),
                         lines.size());
    try {
        ds.grammar.validate();
    } catch (const ConfigError& e) {
        throw SchemaError(e.what());
    }
    ds.validate();
    return ds;
}

std::string grammar_fingerprint(const PhaseGrammar& g) {
    Fnv1a h;
    h.update(to_json(g).dump());
    return h.hex();
}

std::string dataset_fingerprint(const Dataset& ds) {
    Fnv1a h;
    h.update(to_json(ds.grammar).dump());
    h.update(std::string_view(to_string(ds.split)));
    h.update_value(ds.seed);
    for (const auto& s : ds.samples) {
        h.update(s.id);
        h.update_values(std::span<const double>(s.frames.data));
        h.update_values(std::span<const int>(s.labels));
        h.update_values(std::span<const std::uint8_t>(s.error_mask));
    }
    return h.hex();
}

}  // namespace csl
