// csl_audit: generate synthetic phase datasets, inject annotation errors,
// train with per-epoch checkpoints, audit by cumulative sample loss, score,
// and export loss heatmaps.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "csl/errors.hpp"
#include "csl/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<int> workers;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--seed", f.seed, "Override the global seed");
    cmd->add_option("--out", f.out, "Override the output directory");
    cmd->add_option("--workers", f.workers, "Worker threads for auditing")->check(CLI::PositiveNumber);
}

csl::RunConfig resolve(const CommonFlags& f) {
    nlohmann::json j;
    {
        std::ifstream in(f.config);
        try {
            j = nlohmann::json::parse(in);
        } catch (const nlohmann::json::parse_error& e) {
            throw csl::ConfigError("config '" + f.config + "': " + e.what());
        }
    }
    if (f.seed) j["seed"] = *f.seed;
    if (f.workers) j["workers"] = *f.workers;
    if (f.out) j["paths"]["out"] = *f.out;
    return csl::run_config_from_json(j);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Annotation error detection by cumulative sample loss"};
    app.require_subcommand(1);
    CommonFlags flags;

    auto* gen = app.add_subcommand("gen", "Generate train/val/test datasets");
    add_common(gen, flags);

    auto* corrupt = app.add_subcommand("corrupt", "Inject mislabeling or disordering");
    add_common(corrupt, flags);
    std::string kind;
    std::optional<double> fraction;
    std::string split = "test";
    std::optional<std::string> input, output;
    corrupt->add_option("--kind", kind, "mislabel | disorder")->required()->check(CLI::IsMember({"mislabel", "disorder"}));
    corrupt->add_option("--fraction", fraction, "Fraction of videos to corrupt");
    corrupt->add_option("--split", split, "Split to corrupt when --input is absent")->check(CLI::IsMember({"train", "test"}));
    corrupt->add_option("--input", input, "Dataset to corrupt");
    corrupt->add_option("--output", output, "Corrupted dataset path");

    auto* train = app.add_subcommand("train", "Train and save one checkpoint per epoch");
    add_common(train, flags);
    std::optional<std::string> train_input;
    train->add_option("--input", train_input, "Training dataset (default <data_dir>/train.jsonl)");

    auto* audit = app.add_subcommand("audit", "Per-frame CSL audit against the checkpoint store");
    add_common(audit, flags);
    std::optional<std::string> audit_input, audit_val;
    audit->add_option("--input", audit_input, "Dataset to audit (default <data_dir>/test.jsonl)");
    audit->add_option("--val", audit_val, "Clean validation set for tau calibration (default <data_dir>/val.jsonl)");

    auto* eval = app.add_subcommand("eval", "EDA and micro-AUC report");
    add_common(eval, flags);
    std::optional<std::string> eval_input, eval_profiles;
    eval->add_option("--input", eval_input, "Audited dataset (default <data_dir>/test.jsonl)");
    eval->add_option("--profiles", eval_profiles, "Profiles from audit (default <out>/profiles.json)");

    auto* heatmap = app.add_subcommand("heatmap", "Loss trajectory heatmap (PGM) per video");
    add_common(heatmap, flags);
    std::optional<std::string> video, heat_profiles;
    heatmap->add_option("--video", video, "Video id (default: every audited video)");
    heatmap->add_option("--profiles", heat_profiles, "Profiles from audit (default <out>/profiles.json)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : static_cast<int>(csl::ExitCode::kConfig);
    }

    try {
        csl::RunConfig cfg = resolve(flags);
        if (gen->parsed()) {
            csl::cmd_gen(cfg, std::cout);
        } else if (corrupt->parsed()) {
            cfg.corruption.kind = kind == "mislabel" ? csl::CorruptionKind::Mislabel : csl::CorruptionKind::Disorder;
            if (fraction) cfg.corruption.video_fraction = *fraction;
            cfg.corruption.validate();
            const fs::path in = input ? fs::path(*input) : cfg.data_dir / (split + ".jsonl");
            const fs::path out = output ? fs::path(*output) : cfg.data_dir / (split + "_" + kind + ".jsonl");
            csl::cmd_corrupt(cfg, in, out, std::cout);
        } else if (train->parsed()) {
            csl::cmd_train(cfg, train_input ? fs::path(*train_input) : cfg.data_dir / "train.jsonl", std::cout);
        } else if (audit->parsed()) {
            std::optional<fs::path> val;
            if (audit_val)
                val = *audit_val;
            else if (fs::exists(cfg.data_dir / "val.jsonl"))
                val = cfg.data_dir / "val.jsonl";
            csl::cmd_audit(cfg, audit_input ? fs::path(*audit_input) : cfg.data_dir / "test.jsonl", val, std::cout);
        } else if (eval->parsed()) {
            csl::cmd_eval(cfg, eval_profiles ? fs::path(*eval_profiles) : cfg.out_dir / "profiles.json",
                          eval_input ? fs::path(*eval_input) : cfg.data_dir / "test.jsonl", std::cout);
        } else if (heatmap->parsed()) {
            for (const auto& p : csl::cmd_heatmap(heat_profiles ? fs::path(*heat_profiles) : cfg.out_dir / "profiles.json",
                                                  video, cfg.out_dir))
                std::cout << p.string() << "\n";
        }
    } catch (const csl::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(e.code());
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(csl::ExitCode::kData);
    }
    return 0;
}
