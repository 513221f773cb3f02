#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "manydg/data.hpp"
#include "manydg/metrics.hpp"
#include "manydg/model.hpp"
#include "manydg/probe.hpp"

namespace manydg {

struct ExperimentConfig {
    // experiment cell
    ShiftScenario scenario = ShiftScenario::stepped;
    std::string model = "manydg";  // "base" or "manydg"
    std::uint64_t seed = 0;

    // optimization
    int epochs = 15;
    std::size_t batch_size = 128;
    double lr = 5e-4;
    double weight_decay = 1e-5;

    // model
    std::size_t hidden_dim = 64;
    std::size_t backbone_depth = 2;
    double tau = 0.5;
    double lambda1 = 1.0, lambda2 = 1.0, lambda3 = 1.0;

    // data source: IDX paths win when set, otherwise the synthetic corpus
    std::string idx_train_images, idx_train_labels, idx_train_domains;
    std::string idx_test_images, idx_test_labels, idx_test_domains;
    std::size_t train_size = 10000, test_size = 2000;
    std::size_t image_height = 16, image_width = 16;

    // covariate shift
    std::size_t num_waves = 32;
    double alpha = 0.5;

    // splitters
    double val_fraction = 0.1;
    std::size_t domain_limit = 0;  // 0 keeps every training domain

    // continual learning
    std::size_t pretrain_domains = 8;
    std::size_t step_domains = 2;
    std::size_t continual_steps = 10;
    std::size_t replay_k = 4;
    int finetune_epochs = 3;

    // io
    std::string out_dir;
    std::string checkpoint_out, checkpoint_in;
    std::size_t eval_batch = 256;

    void validate() const;
};

// Line-oriented key=value file; keys use the CLI's long option names.
ExperimentConfig load_config_file(const std::string& path);

struct EvalRow {
    std::string model, scenario;
    std::uint64_t seed = 0;
    std::string split;
    double accuracy = 0, kappa = 0, macro_f1 = 0;
    std::string tag_name;  // optional extra column: domain count or step
    long tag_value = 0;
};

struct EpochRow {
    std::string model, scenario;
    std::uint64_t seed = 0;
    int epoch = 0;
    LossBreakdown losses;
    double val_accuracy = 0;
};

struct MetricsReport {
    std::vector<EvalRow> evals;
    std::vector<EpochRow> curve;

    void append(const MetricsReport& other);
};

// Per-(model,scenario,split) mean and std over the seeds present in a report.
struct AggregateRow {
    std::string model, scenario, split;
    std::string tag_name;
    long tag_value = 0;
    std::size_t seeds = 0;
    double accuracy_mean = 0, accuracy_std = 0;
    double kappa_mean = 0, kappa_std = 0;
    double macro_f1_mean = 0, macro_f1_std = 0;
};
std::vector<AggregateRow> aggregate(const MetricsReport& report);

// ---- experiment drivers -------------------------------------------------------

// Builds the scenario data, trains the configured model with validation-based
// selection, and evaluates val and test. Deterministic per (config, seed).
MetricsReport run_experiment(const ExperimentConfig& config);

// As run_experiment, but also hands back the trained model and the data so
// callers can export embeddings or probe reports without re-running.
struct RunOutput {
    MetricsReport report;
    ManyDgModel manydg;
    BaseModel base;
    DataBundle data;
};
RunOutput run_experiment_full(const ExperimentConfig& config);

// One run per domain count (descending), sharing the val/test splits.
MetricsReport run_small_data_sweep(const ExperimentConfig& config,
                                   const std::vector<std::size_t>& domain_counts);

// Pretrain on the first domains, then fine-tune step by step on new domains
// plus replay, evaluating the fixed test split after every phase.
MetricsReport run_continual(const ExperimentConfig& config);

// ---- embeddings -----------------------------------------------------------------

EmbeddingDump make_embedding_dump(const ManyDgModel& model, const DataBundle& data,
                                  const std::vector<Split>& splits, std::size_t eval_batch);

// Rebuilds the configured data, loads the checkpoint, dumps the splits.
void export_embeddings(const ExperimentConfig& config, const std::string& checkpoint_path,
                       const std::vector<Split>& splits, const std::string& out_path);

// ---- report files -----------------------------------------------------------------

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};
void write_csv(const std::string& path, const Table& table);
Table read_csv(const std::string& path);

Table metrics_table(const MetricsReport& report);
Table curve_table(const MetricsReport& report);
Table aggregate_table(const std::vector<AggregateRow>& rows);

// Writes report.csv, curve.csv, aggregate.csv, and summary.json (config echo
// plus aggregates) under the directory.
void write_report_files(const std::string& dir, const ExperimentConfig& config,
                        const MetricsReport& report);

// Evaluation helper shared by drivers and tools.
ConfusionMatrix evaluate_manydg(const ManyDgModel& model, const DomainDataset& ds,
                                std::size_t eval_batch);
ConfusionMatrix evaluate_base(const BaseModel& model, const DomainDataset& ds,
                              std::size_t eval_batch);

}  // namespace manydg
