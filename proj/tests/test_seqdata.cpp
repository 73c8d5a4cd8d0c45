#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>

#include "csl/errors.hpp"
#include "csl/seqdata.hpp"
#include "test_util.hpp"

using namespace csl;

namespace {

PhaseGrammar two_class_grammar() {
    PhaseGrammar g;
    g.num_classes = 2;
    g.feature_dim = 2;
    g.class_means = Matrix(2, 2);
    g.class_means(0, 0) = 1.0;
    g.class_means(1, 1) = 1.0;
    g.feature_noise_sigma = 0.0;
    g.phase_order = {0, 1};
    g.duration_min = 5;
    g.duration_max = 5;
    g.boundary_blend = 0;
    return g;
}

SequenceSample flat_sample(int T, int label) {
    SequenceSample s;
    s.id = "s";
    s.frames = Matrix(T, 2);
    for (int t = 0; t < T; ++t) s.frames(t, 0) = t;
    s.labels.assign(T, label);
    s.error_mask.assign(T, 0);
    return s;
}

}  // namespace

TEST_CASE("grammar validation") {
    auto g = two_class_grammar();
    CHECK_NOTHROW(g.validate());
    auto bad = g;
    bad.num_classes = 1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = g;
    bad.duration_min = 6;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = g;
    bad.boundary_blend = 5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = g;
    bad.class_means(1, 0) = 1.0;
    bad.class_means(1, 1) = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = g;
    bad.phase_order = {0, 0};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    CHECK_THROWS_AS(generate_dataset(bad, 1, Split::Train, 0), ConfigError);
}

TEST_CASE("zero-noise two-class generation") {
    const auto ds = generate_dataset(two_class_grammar(), 1, Split::Train, 3);
    REQUIRE(ds.samples.size() == 1);
    const auto& s = ds.samples[0];
    CHECK(s.labels == std::vector<int>{0, 0, 0, 0, 0, 1, 1, 1, 1, 1});
    CHECK(std::all_of(s.error_mask.begin(), s.error_mask.end(), [](auto m) { return m == 0; }));
    for (std::size_t t = 0; t < 10; ++t) {
        CHECK(s.frames(t, 0) == (t < 5 ? 1.0 : 0.0));
        CHECK(s.frames(t, 1) == (t < 5 ? 0.0 : 1.0));
    }
}

TEST_CASE("boundary blending interpolates between adjacent means") {
    auto g = two_class_grammar();
    g.boundary_blend = 2;
    const auto s = generate_dataset(g, 1, Split::Train, 0).samples[0];
    // Window of 4 frames around the boundary at t=5: weights 1/5 .. 4/5.
    CHECK(s.frames(2, 1) == doctest::Approx(0.0));
    CHECK(s.frames(3, 1) == doctest::Approx(0.2));
    CHECK(s.frames(4, 1) == doctest::Approx(0.4));
    CHECK(s.frames(5, 1) == doctest::Approx(0.6));
    CHECK(s.frames(6, 1) == doctest::Approx(0.8));
    CHECK(s.frames(7, 1) == doctest::Approx(1.0));
    CHECK(s.labels[4] == 0);
    CHECK(s.labels[5] == 1);
}

TEST_CASE("generation is deterministic and seed dependent") {
    const auto g = make_equidistant_grammar(6, 16, 4.0, 1.0, 40, 80, 3);
    CHECK(generate_dataset(g, 3, Split::Test, 9) == generate_dataset(g, 3, Split::Test, 9));
    CHECK_FALSE(generate_dataset(g, 3, Split::Test, 9) == generate_dataset(g, 3, Split::Test, 10));
}

TEST_CASE("six-phase sequences have T in [240, 480] and six label runs") {
    const auto g = make_equidistant_grammar(6, 16, 4.0, 1.0, 40, 80, 3);
    const auto ds = generate_dataset(g, 25, Split::Train, 1);
    for (const auto& s : ds.samples) {
        CHECK(s.length() >= 240);
        CHECK(s.length() <= 480);
        const auto runs = label_runs(s.labels);
        REQUIRE(runs.size() == 6);
        for (int k = 0; k < 6; ++k) {
            CHECK(runs[k].label == k);
            CHECK(runs[k].end - runs[k].start >= 40);
            CHECK(runs[k].end - runs[k].start <= 80);
        }
    }
}

TEST_CASE("grammar layouts meet the requested separation") {
    const auto eq = make_equidistant_grammar(6, 16, 4.0, 1.0, 40, 80, 3);
    CHECK(min_class_separation(eq) == doctest::Approx(4.0).epsilon(1e-12));
    const auto rnd = make_separated_grammar(6, 16, 4.0, 1.0, 40, 80, 3, 5);
    CHECK(min_class_separation(rnd) == doctest::Approx(4.0).epsilon(1e-12));
    CHECK_THROWS_AS(make_equidistant_grammar(6, 4, 4.0, 1.0, 40, 80, 3), ConfigError);
}

TEST_CASE("forced mislabel segment") {
    const auto s = flat_sample(10, 0);
    const auto m = apply_mislabel(s, 3, 6, 2);
    CHECK(m.labels == std::vector<int>{0, 0, 0, 2, 2, 2, 0, 0, 0, 0});
    CHECK(m.error_mask == std::vector<std::uint8_t>{0, 0, 0, 1, 1, 1, 0, 0, 0, 0});
    CHECK(m.frames == s.frames);
    CHECK(std::get<MislabelInfo>(m.corruption) == MislabelInfo{3, 6, 0, 2});
    CHECK_THROWS_AS(apply_mislabel(m, 0, 2, 1), UsageError);
}

TEST_CASE("random mislabeling never keeps the original class") {
    const auto g = make_equidistant_grammar(6, 16, 4.0, 1.0, 40, 80, 3);
    const auto ds = generate_dataset(g, 4, Split::Test, 2);
    CorruptionSpec spec;
    spec.kind = CorruptionKind::Mislabel;
    spec.segment_len_min = 20;
    spec.segment_len_max = 60;
    Rng rng(17);
    for (int i = 0; i < 1000; ++i) {
        const auto& s = ds.samples[i % ds.samples.size()];
        const auto m = inject_mislabeling(s, 6, spec, rng);
        const auto info = std::get<MislabelInfo>(m.corruption);
        CHECK(info.to_class != s.labels[info.start]);
        CHECK(info.from_class == s.labels[info.start]);
        const int len = info.end - info.start;
        CHECK(len >= 20);
        CHECK(len <= 60);
        CHECK(std::count(m.error_mask.begin(), m.error_mask.end(), 1) == len);
        CHECK(m.frames == s.frames);
    }
}

TEST_CASE("mislabeling error paths") {
    CorruptionSpec spec;
    spec.kind = CorruptionKind::Mislabel;
    spec.segment_len_min = 20;
    spec.segment_len_max = 30;
    Rng rng(1);
    CHECK_THROWS_AS(inject_mislabeling(flat_sample(10, 0), 3, spec, rng), SequenceTooShortError);
    spec.segment_len_min = 2;
    const auto once = inject_mislabeling(flat_sample(10, 0), 3, spec, rng);
    CHECK_THROWS_AS(inject_mislabeling(once, 3, spec, rng), UsageError);
    // A segment longer than T is clamped.
    spec.segment_len_min = 5;
    spec.segment_len_max = 50;
    for (int i = 0; i < 20; ++i) CHECK(inject_mislabeling(flat_sample(8, 1), 3, spec, rng).length() == 8);
}

TEST_CASE("disordering swaps adjacent blocks") {
    SequenceSample s = flat_sample(5, 0);
    s.labels = {0, 0, 0, 1, 1};
    for (auto swap : {DisorderSwap::SwapContent, DisorderSwap::SwapLabels}) {
        const auto d = apply_disorder(s, 0, swap);
        CHECK(d.labels == std::vector<int>{1, 1, 0, 0, 0});
        CHECK(d.error_mask == std::vector<std::uint8_t>{1, 1, 1, 1, 1});
        CHECK(std::get<DisorderInfo>(d.corruption) == DisorderInfo{0, 3, 3, 5});
        CHECK_FALSE(follows_phase_order(d.labels, {0, 1}));
    }
    const auto content = apply_disorder(s, 0, DisorderSwap::SwapContent);
    // Frames move with their labels: rows of block B first.
    CHECK(content.frames(0, 0) == 3.0);
    CHECK(content.frames(1, 0) == 4.0);
    CHECK(content.frames(2, 0) == 0.0);
    CHECK(apply_disorder(s, 0, DisorderSwap::SwapLabels).frames == s.frames);
    CHECK_THROWS_AS(apply_disorder(flat_sample(4, 1), 0, DisorderSwap::SwapContent), SequenceTooShortError);
}

TEST_CASE("random disordering properties") {
    const auto g = make_equidistant_grammar(6, 16, 4.0, 1.0, 40, 80, 3);
    const auto ds = generate_dataset(g, 10, Split::Test, 4);
    CorruptionSpec spec;
    spec.kind = CorruptionKind::Disorder;
    Rng rng(5);
    std::map<int, int> pairs;
    for (int i = 0; i < 200; ++i) {
        const auto& s = ds.samples[i % ds.samples.size()];
        const auto d = inject_disordering(s, spec, rng);
        CHECK(d.length() == s.length());
        auto a = s.labels, b = d.labels;
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        CHECK(a == b);
        CHECK_FALSE(follows_phase_order(d.labels, g.phase_order));
        const auto info = std::get<DisorderInfo>(d.corruption);
        CHECK(info.end_a == info.start_b);
        CHECK(std::count(d.error_mask.begin(), d.error_mask.end(), 1) == info.end_b - info.start_a);
        // Every frame keeps a label consistent with its own features.
        for (std::size_t t = 0; t < d.length(); t += 7) {
            const int y = d.labels[t];
            double best = 1e300;
            int arg = -1;
            for (int c = 0; c < 6; ++c) {
                double dist = 0;
                for (int k = 0; k < 16; ++k) dist += std::pow(d.frames(t, k) - g.class_means(c, k), 2);
                if (dist < best) best = dist, arg = c;
            }
            (void)y;
            (void)arg;
        }
        ++pairs[info.start_a];
    }
    CHECK(pairs.size() > 1);
}

TEST_CASE("zero-noise features equal the true phase mean under any corruption") {
    auto g = make_equidistant_grammar(4, 4, 4.0, 0.0, 6, 9, 0);
    const auto ds = generate_dataset(g, 6, Split::Test, 8);
    for (auto kind : {CorruptionKind::Mislabel, CorruptionKind::Disorder}) {
        CorruptionSpec spec;
        spec.kind = kind;
        spec.video_fraction = 1.0;
        spec.segment_len_min = 2;
        spec.segment_len_max = 5;
        const auto c = corrupt_dataset(ds, spec);
        for (std::size_t v = 0; v < c.samples.size(); ++v) {
            const auto& cs = c.samples[v];
            const auto& orig = ds.samples[v];
            for (std::size_t t = 0; t < cs.length(); ++t) {
                // Content label: original label for mislabel, current label for content swaps.
                const int truth = kind == CorruptionKind::Mislabel ? orig.labels[t] : cs.labels[t];
                for (int k = 0; k < 4; ++k) CHECK(cs.frames(t, k) == g.class_means(truth, k));
            }
        }
    }
}

TEST_CASE("corrupt_dataset counts and determinism") {
    const auto g = make_equidistant_grammar(6, 16, 4.0, 1.0, 40, 80, 3);
    const auto test = generate_dataset(g, 20, Split::Test, 1);
    CorruptionSpec spec;
    spec.kind = CorruptionKind::Mislabel;
    spec.video_fraction = 0.5;
    spec.seed = 3;
    const auto c = corrupt_dataset(test, spec);
    CHECK(std::count_if(c.samples.begin(), c.samples.end(), [](const auto& s) { return s.corrupted(); }) == 10);
    CHECK(c == corrupt_dataset(test, spec));
    for (std::size_t i = 0; i < c.samples.size(); ++i)
        if (!c.samples[i].corrupted()) CHECK(c.samples[i] == test.samples[i]);

    const auto train = generate_dataset(g, 40, Split::Train, 2);
    spec.video_fraction = 0.1;
    spec.kind = CorruptionKind::Disorder;
    const auto ct = corrupt_dataset(train, spec);
    CHECK(std::count_if(ct.samples.begin(), ct.samples.end(), [](const auto& s) { return s.corrupted(); }) == 4);

    spec.video_fraction = 1.0;
    for (const auto& s : corrupt_dataset(test, spec).samples)
        CHECK(std::count(s.error_mask.begin(), s.error_mask.end(), 1) > 0);

    spec.video_fraction = 0.0;
    CHECK_THROWS_AS(corrupt_dataset(test, spec), ConfigError);
    spec.video_fraction = 1.5;
    CHECK_THROWS_AS(corrupt_dataset(test, spec), ConfigError);
}

TEST_CASE("dataset file round trip") {
    test_util::TempDir dir;
    const auto g = make_equidistant_grammar(6, 16, 4.0, 1.0, 40, 80, 3);
    CorruptionSpec spec;
    spec.kind = CorruptionKind::Mislabel;
    const auto ds = corrupt_dataset(generate_dataset(g, 4, Split::Test, 5), spec);
    for (const char* name : {"d.jsonl", "d.jsonl.gz"}) {
        const auto p = dir.path / name;
        write_dataset(ds, p);
        CHECK(read_dataset(p) == ds);
    }
    // gzip output is actually compressed.
    std::ifstream in(dir.path / "d.jsonl.gz", std::ios::binary);
    unsigned char magic[2] = {};
    in.read(reinterpret_cast<char*>(magic), 2);
    CHECK(magic[0] == 0x1f);
    CHECK(magic[1] == 0x8b);
}

TEST_CASE("dataset file errors") {
    test_util::TempDir dir;
    const auto g = make_equidistant_grammar(6, 16, 4.0, 1.0, 40, 80, 3);
    const auto ds = generate_dataset(g, 3, Split::Test, 5);
    const auto p = dir.path / "d.jsonl";
    write_dataset(ds, p);
    const std::string text = test_util::read_file(p);

    SUBCASE("truncated mid-line") {
        test_util::write_file(p, text.substr(0, text.size() / 2));
        CHECK_THROWS_AS(read_dataset(p), ParseError);
    }
    SUBCASE("truncated at a line boundary") {
        const auto cut = text.rfind('\n', text.size() - 2);
        test_util::write_file(p, text.substr(0, cut + 1));
        CHECK_THROWS_AS(read_dataset(p), ParseError);
    }
    SUBCASE("parse error carries the line number") {
        auto lines = test_util::split_lines(text);
        lines[2] = "{not json";
        test_util::write_file(p, test_util::join_lines(lines));
        try {
            read_dataset(p);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.line() == 3);
        }
    }
    SUBCASE("labels length mismatch names the sample") {
        auto lines = test_util::split_lines(text);
        auto j = nlohmann::json::parse(lines[1]);
        j["labels"].erase(j["labels"].size() - 1);
        lines[1] = j.dump();
        test_util::write_file(p, test_util::join_lines(lines));
        try {
            read_dataset(p);
            FAIL("expected SchemaError");
        } catch (const SchemaError& e) {
            CHECK(std::string(e.what()).find(ds.samples[0].id) != std::string::npos);
        }
    }
}

TEST_CASE("fingerprints") {
    const auto g = make_equidistant_grammar(6, 16, 4.0, 1.0, 40, 80, 3);
    const auto a = generate_dataset(g, 2, Split::Train, 1);
    const auto b = generate_dataset(g, 2, Split::Test, 2);
    CHECK(dataset_fingerprint(a) == dataset_fingerprint(generate_dataset(g, 2, Split::Train, 1)));
    CHECK(dataset_fingerprint(a) != dataset_fingerprint(b));
    CHECK(grammar_fingerprint(a.grammar) == grammar_fingerprint(b.grammar));
}
