// Command-line front end: one subcommand per pipeline stage plus `experiment`
// for the whole chain. All subcommands share --config, --seed and --out.

#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "synthaug/errors.hpp"
#include "synthaug/pipeline.hpp"

namespace pl = synthaug::pipeline;

namespace {

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    bool quiet = false;
};

pl::ExperimentConfig resolve(const Options& o) {
    auto cfg = pl::load_config(o.config);
    if (o.seed) cfg.master_seed = *o.seed;
    if (o.out) cfg.output_dir = *o.out;
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Synthetic-augmentation experiments: corpus, generators, FID and classifier protocol"};
    app.require_subcommand(1);
    Options opt;

    struct Command {
        const char* name;
        const char* help;
        void (*run)(const pl::ExperimentConfig&);
    };
    const Command commands[] = {
        {"gen-corpus", "Generate the procedural corpus (or check a corpus directory)", pl::stage_corpus},
        {"scenario", "Build the train/test split and write id lists", pl::stage_scenario},
        {"train-ddpm", "Train one DDPM per class", pl::stage_train_ddpm},
        {"train-pggan", "Train one progressive GAN per class", pl::stage_train_pggan},
        {"synth", "Sample synthetic images from the trained generators", pl::stage_synth},
        {"fid", "Train the expert classifier, score FID and expert agreement", pl::stage_fid},
        {"train-classifier", "Train classifiers on original and mixed sets", pl::stage_classifiers},
        {"report", "Aggregate stage outputs into summary files", [](const pl::ExperimentConfig& c) { pl::stage_report(c); }},
        {"experiment", "Run every stage in order", [](const pl::ExperimentConfig& c) { pl::run_experiment(c); }},
    };

    void (*selected)(const pl::ExperimentConfig&) = nullptr;
    for (const auto& c : commands) {
        auto* sub = app.add_subcommand(c.name, c.help);
        sub->add_option("--config", opt.config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
        sub->add_option("--seed", opt.seed, "Override master_seed");
        sub->add_option("--out", opt.out, "Override output_dir");
        sub->add_flag("-q,--quiet", opt.quiet, "Suppress progress lines");
        sub->callback([&selected, run = c.run] { selected = run; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    pl::ExperimentConfig cfg;
    try {
        cfg = resolve(opt);
    } catch (const std::exception& e) {
        std::cerr << "synthaug: [config] " << e.what() << "\n";
        return 2;
    }
    if (!opt.quiet) pl::set_log_stream(&std::clog);
    try {
        selected(cfg);
    } catch (const pl::StageError& e) {
        std::cerr << "synthaug: [" << e.stage() << "] " << e.cause() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "synthaug: [" << app.get_subcommands().front()->get_name() << "] " << e.what() << "\n";
        return 1;
    }
    if (app.got_subcommand("experiment") || app.got_subcommand("report")) {
        std::ifstream summary(pl::Layout{cfg.output_dir}.report() / "summary.txt");
        std::cout << summary.rdbuf();
    }
    return 0;
}
