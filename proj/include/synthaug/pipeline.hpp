#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "synthaug/classify.hpp"
#include "synthaug/dataset.hpp"
#include "synthaug/denoiser.hpp"
#include "synthaug/metrics.hpp"
#include "synthaug/pggan.hpp"
#include "synthaug/selection.hpp"

namespace synthaug::pipeline {

struct CorpusSource {
    // Load a PGM tree instead of generating one.
    std::optional<std::filesystem::path> directory;
    int n_per_class = 1800;
    int size = 32;
    // Falls back to a stream derived from the master seed.
    std::optional<std::uint64_t> seed;
};

struct DdpmSettings {
    int timesteps = 200;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    int epochs = 50;
    // Overrides epochs when positive.
    int steps = 0;
    int batch_size = 16;
    double lr = 1e-4;
    int base_channels = 32;
    int depth = 2;
    int time_dim = 64;

    int training_steps(std::size_t class_size) const;
    UNetConfig unet(int size) const;
};

struct ClassifierSettings {
    int input_size = 32;
    int batch_size = 32;
    double lr = 1e-4;
    std::map<classify::ModelKind, int> epochs{{classify::ModelKind::custom_cnn, 20}, {classify::ModelKind::vgg16, 10}};
    bool save_checkpoints = false;

    int epochs_for(classify::ModelKind kind) const;
};

struct ExpertSettings {
    classify::ModelKind model = classify::ModelKind::custom_cnn;
    int epochs = 20;
};

struct ExperimentConfig {
    std::uint64_t master_seed = 2024;
    std::filesystem::path output_dir = "synthaug-out";
    CorpusSource corpus;
    selection::ScenarioSpec scenario;
    DdpmSettings ddpm;
    // target_resolution follows the corpus image size at run time.
    pggan::GanConfig pggan;
    // Defaults to 2,000 scaled by the scenario factor.
    std::optional<int> synth_per_class;
    std::vector<classify::ModelKind> models{classify::ModelKind::custom_cnn, classify::ModelKind::vgg16};
    ClassifierSettings classifier;
    ExpertSettings expert;
    std::vector<metrics::Extractor> fid_extractors{metrics::Extractor::pixels_8x8,
                                                   metrics::Extractor::expert_penultimate};
    int runs = 5;

    int synth_count() const;
    void validate() const;
};

// Strict JSON reader: absent keys keep their defaults, unknown keys and type
// mismatches raise ConfigError carrying the dotted key path.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const ExperimentConfig& cfg);

inline const std::vector<std::string> kVariants{"original", "ddpm", "pggan"};

struct RunRow {
    std::string model;
    std::string scenario;
    std::string sampling;
    std::string variant;
    int run = 0;
    double accuracy = 0;
    double precision = 0;
    double recall = 0;
    double f1 = 0;

    bool operator==(const RunRow&) const = default;
};

struct FidRow {
    std::string generator;
    std::string class_name;
    std::string extractor;
    double fid = 0;

    bool operator==(const FidRow&) const = default;
};

struct ExpertRow {
    std::string generator;
    std::string class_name;
    double agreement = 0;

    bool operator==(const ExpertRow&) const = default;
};

struct AggregateRow {
    std::string model;
    std::string variant;
    std::string metric;
    metrics::RunAggregate stats;
};

struct ExperimentReport {
    std::vector<RunRow> rows;
    std::vector<FidRow> fid_rows;
    std::vector<ExpertRow> expert_rows;

    // Throws std::invalid_argument unless every model carries all three
    // variants with the same run count (at least 2).
    void validate() const;
    // mean/std per (model, variant, metric), in row order of first appearance.
    std::vector<AggregateRow> aggregates() const;
};

// "0.91 ± 0.016": mean to 2 decimals, std to 3.
std::string format_cell(const metrics::RunAggregate& a);

std::string runs_csv(const std::vector<RunRow>& rows);
std::vector<RunRow> parse_runs_csv(const std::string& text);
std::string fid_csv(const std::vector<FidRow>& rows);
std::vector<FidRow> parse_fid_csv(const std::string& text);
std::string expert_csv(const std::vector<ExpertRow>& rows);
std::vector<ExpertRow> parse_expert_csv(const std::string& text);

// Writes runs.csv, fid.csv, expert.csv, summary.json and summary.txt. The
// report is validated first so a bad report never leaves partial files.
void emit_report(const ExperimentReport& report, const std::filesystem::path& dir);
// Reads the CSVs written by emit_report (or by the individual stages).
ExperimentReport read_report(const std::filesystem::path& dir);

// Failure inside a named stage. what() is "<stage>: <cause>".
class StageError : public std::runtime_error {
public:
    StageError(std::string stage, const std::string& cause)
        : std::runtime_error(stage + ": " + cause), stage_(std::move(stage)), cause_(cause) {}
    const std::string& stage() const noexcept { return stage_; }
    const std::string& cause() const noexcept { return cause_; }

private:
    std::string stage_;
    std::string cause_;
};

// On-disk layout below the output directory.
struct Layout {
    std::filesystem::path root;

    std::filesystem::path corpus() const { return root / "corpus"; }
    std::filesystem::path scenario() const { return root / "scenario"; }
    std::filesystem::path train_ids() const { return scenario() / "train.txt"; }
    std::filesystem::path test_ids(std::size_t k) const;
    std::filesystem::path generator_dir(const std::string& generator) const { return root / generator; }
    std::filesystem::path checkpoint(const std::string& generator, const std::string& class_name) const;
    std::filesystem::path loss_trace(const std::string& generator, const std::string& class_name) const;
    std::filesystem::path synthetic(const std::string& generator) const { return root / "synthetic" / generator; }
    std::filesystem::path expert_checkpoint() const { return root / "expert" / "expert.agb1"; }
    std::filesystem::path classifiers() const { return root / "classifiers"; }
    std::filesystem::path report() const { return root / "report"; }
};

// Stages. Each reads its inputs from disk and persists its outputs, so any
// stage can be rerun on its own. Errors surface as StageError.
void stage_corpus(const ExperimentConfig& cfg);
void stage_scenario(const ExperimentConfig& cfg);
void stage_train_ddpm(const ExperimentConfig& cfg);
void stage_train_pggan(const ExperimentConfig& cfg);
void stage_synth(const ExperimentConfig& cfg);
// Trains the expert classifier, then writes fid.csv and expert.csv.
void stage_fid(const ExperimentConfig& cfg);
// Writes runs.csv.
void stage_classifiers(const ExperimentConfig& cfg);
// Reads the stage CSVs and writes the summaries.
ExperimentReport stage_report(const ExperimentConfig& cfg);

// All stages in order.
ExperimentReport run_experiment(const ExperimentConfig& cfg);

// Progress lines go here; nullptr (the default) silences them.
void set_log_stream(std::ostream* out);

// Persisted scenario reloaded against the persisted corpus.
struct LoadedScenario {
    LabeledDataset corpus;
    LabeledDataset train;
    std::vector<LabeledDataset> tests;
};
LoadedScenario load_scenario(const ExperimentConfig& cfg);

// Nearest-neighbour upsampling or block averaging between power-of-two sizes.
Tensor resize_images(const Tensor& images, int size);

struct DdpmResult {
    std::vector<NamedTensor> weights;
    std::vector<double> losses; // one per step
};
// Trains the U-Net noise predictor on [N, 1, S, S] images in [-1, 1].
DdpmResult train_ddpm(const Tensor& images, const DdpmSettings& settings, RngStream& rng);

} // namespace synthaug::pipeline
