#include "manydg/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "manydg/metrics.hpp"
#include "manydg/nn.hpp"
#include "manydg/rng.hpp"

namespace manydg {

namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

// seed stream tags
constexpr std::uint64_t kSeedData = 101, kSeedBank = 102, kSeedScenario = 103, kSeedVal = 104,
                        kSeedModel = 105, kSeedEpoch = 106, kSeedLimit = 107, kSeedContinual = 108;

std::string fmt(double x) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

}  // namespace

// ---- config --------------------------------------------------------------------

void ExperimentConfig::validate() const {
    require(model == "base" || model == "manydg", "config: model must be 'base' or 'manydg'");
    require(epochs >= 1, "config: epochs must be >= 1");
    require(batch_size >= 1, "config: batch-size must be >= 1");
    require(lr > 0.0, "config: lr must be > 0");
    require(weight_decay >= 0.0, "config: weight-decay must be >= 0");
    require(hidden_dim >= 1, "config: hidden-dim must be >= 1");
    require(backbone_depth >= 1, "config: backbone-depth must be >= 1");
    require(tau > 0.0, "config: tau must be > 0");
    require(lambda1 >= 0.0 && lambda2 >= 0.0 && lambda3 >= 0.0, "config: lambdas must be >= 0");
    require(train_size >= 10 && test_size >= 1, "config: synthetic sizes too small");
    require(image_height >= 12 && image_width >= 12, "config: image must be at least 12x12");
    require(num_waves >= 1, "config: num-waves must be >= 1");
    require(alpha > 0.0 && alpha <= 1.0, "config: alpha must be in (0,1]");
    require(val_fraction > 0.0 && val_fraction < 1.0, "config: val-fraction must be in (0,1)");
    require(pretrain_domains >= 1 && step_domains >= 1, "config: continual sizes must be >= 1");
    require(finetune_epochs >= 1, "config: finetune-epochs must be >= 1");
    require(eval_batch >= 1, "config: eval-batch must be >= 1");
    const bool any_idx = !idx_train_images.empty() || !idx_train_labels.empty() ||
                         !idx_test_images.empty() || !idx_test_labels.empty();
    if (any_idx) {
        require(!idx_train_images.empty() && !idx_train_labels.empty() &&
                    !idx_test_images.empty() && !idx_test_labels.empty(),
                "config: idx mode needs train and test image+label paths");
    }
}

ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    ExperimentConfig config;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const std::size_t first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        const std::size_t last = line.find_last_not_of(" \t\r");
        line = line.substr(first, last - first + 1);
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error("config: " + path + ":" + std::to_string(line_no) +
                                     " is not key=value");
        }
        auto trim = [](std::string s) {
            const std::size_t a = s.find_first_not_of(" \t");
            if (a == std::string::npos) return std::string();
            const std::size_t b = s.find_last_not_of(" \t");
            return s.substr(a, b - a + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        try {
            if (key == "scenario") config.scenario = parse_scenario(value);
            else if (key == "model") config.model = value;
            else if (key == "seed") config.seed = std::stoull(value);
            else if (key == "epochs") config.epochs = std::stoi(value);
            else if (key == "batch-size") config.batch_size = std::stoul(value);
            else if (key == "lr") config.lr = std::stod(value);
            else if (key == "weight-decay") config.weight_decay = std::stod(value);
            else if (key == "hidden-dim") config.hidden_dim = std::stoul(value);
            else if (key == "backbone-depth") config.backbone_depth = std::stoul(value);
            else if (key == "tau") config.tau = std::stod(value);
            else if (key == "lambda1") config.lambda1 = std::stod(value);
            else if (key == "lambda2") config.lambda2 = std::stod(value);
            else if (key == "lambda3") config.lambda3 = std::stod(value);
            else if (key == "idx-train-images") config.idx_train_images = value;
            else if (key == "idx-train-labels") config.idx_train_labels = value;
            else if (key == "idx-train-domains") config.idx_train_domains = value;
            else if (key == "idx-test-images") config.idx_test_images = value;
            else if (key == "idx-test-labels") config.idx_test_labels = value;
            else if (key == "idx-test-domains") config.idx_test_domains = value;
            else if (key == "train-size") config.train_size = std::stoul(value);
            else if (key == "test-size") config.test_size = std::stoul(value);
            else if (key == "image-height") config.image_height = std::stoul(value);
            else if (key == "image-width") config.image_width = std::stoul(value);
            else if (key == "num-waves") config.num_waves = std::stoul(value);
            else if (key == "alpha") config.alpha = std::stod(value);
            else if (key == "val-fraction") config.val_fraction = std::stod(value);
            else if (key == "domain-limit") config.domain_limit = std::stoul(value);
            else if (key == "pretrain-domains") config.pretrain_domains = std::stoul(value);
            else if (key == "step-domains") config.step_domains = std::stoul(value);
            else if (key == "continual-steps") config.continual_steps = std::stoul(value);
            else if (key == "replay-k") config.replay_k = std::stoul(value);
            else if (key == "finetune-epochs") config.finetune_epochs = std::stoi(value);
            else if (key == "out") config.out_dir = value;
            else if (key == "checkpoint-out") config.checkpoint_out = value;
            else if (key == "checkpoint-in") config.checkpoint_in = value;
            else if (key == "eval-batch") config.eval_batch = std::stoul(value);
            else throw std::runtime_error("config: unknown key '" + key + "' in " + path);
        } catch (const std::invalid_argument&) {
            throw std::runtime_error("config: bad value for '" + key + "' in " + path);
        }
    }
    return config;
}

// ---- data ----------------------------------------------------------------------

namespace {

DataBundle build_data(const ExperimentConfig& config) {
    DataBundle clean;
    if (!config.idx_train_images.empty()) {
        clean.train = load_idx(config.idx_train_images, config.idx_train_labels);
        clean.train.tag = Split::train;
        if (!config.idx_train_domains.empty()) {
            load_domain_sidecar(clean.train, config.idx_train_domains);
        }
        clean.test = load_idx(config.idx_test_images, config.idx_test_labels);
        clean.test.tag = Split::test;
        if (!config.idx_test_domains.empty()) {
            load_domain_sidecar(clean.test, config.idx_test_domains);
        }
        require(clean.train.height == clean.test.height && clean.train.width == clean.test.width,
                "idx train and test image sizes differ");
        const std::size_t k = std::max(clean.train.num_classes, clean.test.num_classes);
        clean.train.num_classes = clean.test.num_classes = k;
        clean.val = clean.train;
        clean.val.samples.clear();
        clean.val.tag = Split::val;
    } else {
        clean = make_synthetic_digits(config.train_size, config.test_size, config.image_height,
                                      config.image_width, mix_seed(config.seed, kSeedData));
    }
    NoiseBank bank = make_noise_bank(clean.train.height, clean.train.width, config.num_waves,
                                     config.alpha, mix_seed(config.seed, kSeedBank));
    DataBundle shifted =
        apply_scenario(clean, config.scenario, bank, mix_seed(config.seed, kSeedScenario));
    return split_validation(shifted, config.val_fraction, mix_seed(config.seed, kSeedVal));
}

ModelConfig model_config_for(const ExperimentConfig& config, const DataBundle& data) {
    ModelConfig mc;
    mc.input_dim = data.train.input_dim();
    mc.hidden_dim = config.hidden_dim;
    mc.num_classes = data.train.num_classes;
    mc.backbone_depth = config.backbone_depth;
    mc.tau = config.tau;
    mc.lambda1 = config.lambda1;
    mc.lambda2 = config.lambda2;
    mc.lambda3 = config.lambda3;
    return mc;
}

template <typename Model>
ConfusionMatrix evaluate_model(const Model& model, const DomainDataset& ds,
                               std::size_t eval_batch) {
    require(!ds.samples.empty(), "evaluate: empty dataset");
    ConfusionMatrix cm(ds.num_classes);
    std::vector<std::size_t> indices;
    for (std::size_t start = 0; start < ds.samples.size(); start += eval_batch) {
        const std::size_t stop = std::min(start + eval_batch, ds.samples.size());
        indices.clear();
        for (std::size_t i = start; i < stop; ++i) indices.push_back(i);
        Tensor probs = predict(model, gather_pixels(ds, indices));
        for (std::size_t r = 0; r < indices.size(); ++r) {
            int best = 0;
            for (std::size_t k = 1; k < probs.cols(); ++k) {
                if (probs.at(r, k) > probs.at(r, best)) best = static_cast<int>(k);
            }
            cm.add(ds.samples[indices[r]].label.primary_class(), best);
        }
    }
    return cm;
}

struct EpochStats {
    LossBreakdown losses;
    double val_accuracy = 0;
};

// Snapshot/restore for validation-based model selection.
template <typename Model>
std::vector<Tensor> snapshot(Model& model) {
    std::vector<Tensor> values;
    for (auto& [name, p] : named_params(model)) values.push_back(*p);
    return values;
}

template <typename Model>
void restore(Model& model, const std::vector<Tensor>& values) {
    std::vector<NamedParam> params = named_params(model);
    for (std::size_t i = 0; i < params.size(); ++i) *params[i].second = values[i];
}

std::vector<EpochStats> train_manydg_loop(ManyDgModel& model, const DomainDataset& train,
                                          const DomainDataset& val,
                                          const ExperimentConfig& config, int epochs) {
    Adam opt(config.lr, config.weight_decay);
    std::vector<EpochStats> stats;
    std::vector<Tensor> best;
    double best_acc = -1.0;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        EpochPairing pairing = build_double_loader(
            train, config.batch_size, mix_seed(mix_seed(config.seed, kSeedEpoch), epoch));
        LossBreakdown sums;
        for (std::size_t b = 0; b < pairing.num_batches(); ++b) {
            auto [first, last] = pairing.batch_range(b);
            std::vector<std::size_t> ia(pairing.a.begin() + first, pairing.a.begin() + last);
            std::vector<std::size_t> ib(pairing.b.begin() + first, pairing.b.begin() + last);
            PairedBatch batch;
            batch.xs = gather_pixels(train, ia);
            batch.xs_prime = gather_pixels(train, ib);
            batch.ys = gather_labels(train, ia);
            batch.ys_prime = gather_labels(train, ib);
            batch.domains = gather_domains(train, ia);
            batch.domains_prime = gather_domains(train, ib);
            LossBreakdown part = manydg_train_step(model, batch, opt);
            sums.sup += part.sup;
            sums.mmd += part.mmd;
            sums.rec += part.rec;
            sums.sim += part.sim;
            sums.total += part.total;
        }
        const double n = static_cast<double>(pairing.num_batches());
        EpochStats s;
        s.losses = {sums.sup / n, sums.mmd / n, sums.rec / n, sums.sim / n, sums.total / n};
        if (!val.samples.empty()) {
            s.val_accuracy = accuracy(evaluate_model(model, val, config.eval_batch));
            if (s.val_accuracy > best_acc) {
                best_acc = s.val_accuracy;
                best = snapshot(model);
            }
        }
        stats.push_back(s);
    }
    if (!best.empty()) restore(model, best);
    return stats;
}

std::vector<EpochStats> train_base_loop(BaseModel& model, const DomainDataset& train,
                                        const DomainDataset& val, const ExperimentConfig& config,
                                        int epochs) {
    Adam opt(config.lr, config.weight_decay);
    std::vector<EpochStats> stats;
    std::vector<Tensor> best;
    double best_acc = -1.0;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        std::vector<std::size_t> order(train.samples.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng rng(mix_seed(mix_seed(config.seed, kSeedEpoch), epoch));
        rng.shuffle(order);

        double sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t stop = std::min(start + config.batch_size, order.size());
            std::vector<std::size_t> idx(order.begin() + start, order.begin() + stop);
            sum += base_train_step(model, gather_pixels(train, idx), gather_labels(train, idx),
                                   opt);
            ++batches;
        }
        EpochStats s;
        s.losses.sup = sum / static_cast<double>(batches);
        s.losses.total = s.losses.sup;
        if (!val.samples.empty()) {
            s.val_accuracy = accuracy(evaluate_model(model, val, config.eval_batch));
            if (s.val_accuracy > best_acc) {
                best_acc = s.val_accuracy;
                best = snapshot(model);
            }
        }
        stats.push_back(s);
    }
    if (!best.empty()) restore(model, best);
    return stats;
}

EvalRow eval_row(const ExperimentConfig& config, const char* split, const ConfusionMatrix& cm) {
    EvalRow row;
    row.model = config.model;
    row.scenario = scenario_name(config.scenario);
    row.seed = config.seed;
    row.split = split;
    row.accuracy = accuracy(cm);
    row.kappa = cohens_kappa(cm);
    row.macro_f1 = macro_f1(cm);
    return row;
}

void push_curve(MetricsReport& report, const ExperimentConfig& config,
                const std::vector<EpochStats>& stats, int epoch_offset = 0) {
    for (std::size_t e = 0; e < stats.size(); ++e) {
        EpochRow row;
        row.model = config.model;
        row.scenario = scenario_name(config.scenario);
        row.seed = config.seed;
        row.epoch = epoch_offset + static_cast<int>(e);
        row.losses = stats[e].losses;
        row.val_accuracy = stats[e].val_accuracy;
        report.curve.push_back(row);
    }
}

}  // namespace

void MetricsReport::append(const MetricsReport& other) {
    evals.insert(evals.end(), other.evals.begin(), other.evals.end());
    curve.insert(curve.end(), other.curve.begin(), other.curve.end());
}

// ---- drivers -------------------------------------------------------------------

RunOutput run_experiment_full(const ExperimentConfig& config) {
    config.validate();
    RunOutput out;
    out.data = build_data(config);
    if (config.domain_limit > 0) {
        out.data.train =
            limit_domains(out.data.train, config.domain_limit, mix_seed(config.seed, kSeedLimit));
    }
    const ModelConfig mc = model_config_for(config, out.data);

    if (config.model == "manydg") {
        out.manydg = make_manydg_model(mc, mix_seed(config.seed, kSeedModel));
        if (!config.checkpoint_in.empty()) {
            std::vector<NamedParam> params = named_params(out.manydg);
            load_params(config.checkpoint_in, params);
        }
        std::vector<EpochStats> stats =
            train_manydg_loop(out.manydg, out.data.train, out.data.val, config, config.epochs);
        push_curve(out.report, config, stats);
        out.report.evals.push_back(eval_row(
            config, "val", evaluate_model(out.manydg, out.data.val, config.eval_batch)));
        out.report.evals.push_back(eval_row(
            config, "test", evaluate_model(out.manydg, out.data.test, config.eval_batch)));
        if (!config.checkpoint_out.empty()) {
            std::vector<NamedParam> params = named_params(out.manydg);
            save_params(config.checkpoint_out, params);
        }
    } else {
        out.base = make_base_model(mc, mix_seed(config.seed, kSeedModel));
        if (!config.checkpoint_in.empty()) {
            std::vector<NamedParam> params = named_params(out.base);
            load_params(config.checkpoint_in, params);
        }
        std::vector<EpochStats> stats =
            train_base_loop(out.base, out.data.train, out.data.val, config, config.epochs);
        push_curve(out.report, config, stats);
        out.report.evals.push_back(
            eval_row(config, "val", evaluate_model(out.base, out.data.val, config.eval_batch)));
        out.report.evals.push_back(
            eval_row(config, "test", evaluate_model(out.base, out.data.test, config.eval_batch)));
        if (!config.checkpoint_out.empty()) {
            std::vector<NamedParam> params = named_params(out.base);
            save_params(config.checkpoint_out, params);
        }
    }

    if (!config.out_dir.empty()) write_report_files(config.out_dir, config, out.report);
    return out;
}

MetricsReport run_experiment(const ExperimentConfig& config) {
    return run_experiment_full(config).report;
}

MetricsReport run_small_data_sweep(const ExperimentConfig& config,
                                   const std::vector<std::size_t>& domain_counts) {
    config.validate();
    require(!domain_counts.empty(), "sweep: no domain counts");
    for (std::size_t i = 1; i < domain_counts.size(); ++i) {
        require(domain_counts[i] < domain_counts[i - 1], "sweep: counts must be descending");
    }
    DataBundle data = build_data(config);
    const std::size_t available = data.train.distinct_domains().size();
    require(domain_counts.front() <= available,
            "sweep: largest count exceeds " + std::to_string(available) + " train domains");
    const ModelConfig mc = model_config_for(config, data);

    MetricsReport report;
    for (std::size_t count : domain_counts) {
        DataBundle cell = data;  // val and test stay fixed across the sweep
        cell.train = limit_domains(data.train, count, mix_seed(config.seed, kSeedLimit));
        MetricsReport one;
        if (config.model == "manydg") {
            ManyDgModel model = make_manydg_model(mc, mix_seed(config.seed, kSeedModel));
            std::vector<EpochStats> stats =
                train_manydg_loop(model, cell.train, cell.val, config, config.epochs);
            push_curve(one, config, stats);
            one.evals.push_back(
                eval_row(config, "val", evaluate_model(model, cell.val, config.eval_batch)));
            one.evals.push_back(
                eval_row(config, "test", evaluate_model(model, cell.test, config.eval_batch)));
        } else {
            BaseModel model = make_base_model(mc, mix_seed(config.seed, kSeedModel));
            std::vector<EpochStats> stats =
                train_base_loop(model, cell.train, cell.val, config, config.epochs);
            push_curve(one, config, stats);
            one.evals.push_back(
                eval_row(config, "val", evaluate_model(model, cell.val, config.eval_batch)));
            one.evals.push_back(
                eval_row(config, "test", evaluate_model(model, cell.test, config.eval_batch)));
        }
        for (EvalRow& row : one.evals) {
            row.tag_name = "domains";
            row.tag_value = static_cast<long>(count);
        }
        report.append(one);
    }
    if (!config.out_dir.empty()) write_report_files(config.out_dir, config, report);
    return report;
}

MetricsReport run_continual(const ExperimentConfig& config) {
    config.validate();
    DataBundle data = build_data(config);
    std::vector<DomainDataset> schedule =
        continual_splits(data.train, config.pretrain_domains, config.step_domains,
                         config.continual_steps, config.replay_k,
                         mix_seed(config.seed, kSeedContinual));
    const ModelConfig mc = model_config_for(config, data);
    const DomainDataset no_val = [&] {
        DomainDataset d = data.val;
        d.samples.clear();
        return d;
    }();

    MetricsReport report;
    auto eval_step = [&](auto& model, long step) {
        EvalRow row =
            eval_row(config, "test", evaluate_model(model, data.test, config.eval_batch));
        row.tag_name = "step";
        row.tag_value = step;
        report.evals.push_back(row);
    };

    if (config.model == "manydg") {
        ManyDgModel model = make_manydg_model(mc, mix_seed(config.seed, kSeedModel));
        push_curve(report, config,
                   train_manydg_loop(model, schedule[0], no_val, config, config.epochs));
        eval_step(model, 0);
        for (std::size_t s = 1; s < schedule.size(); ++s) {
            push_curve(report, config,
                       train_manydg_loop(model, schedule[s], no_val, config,
                                         config.finetune_epochs),
                       config.epochs + static_cast<int>(s - 1) * config.finetune_epochs);
            eval_step(model, static_cast<long>(s));
        }
    } else {
        BaseModel model = make_base_model(mc, mix_seed(config.seed, kSeedModel));
        push_curve(report, config,
                   train_base_loop(model, schedule[0], no_val, config, config.epochs));
        eval_step(model, 0);
        for (std::size_t s = 1; s < schedule.size(); ++s) {
            push_curve(report, config,
                       train_base_loop(model, schedule[s], no_val, config,
                                       config.finetune_epochs),
                       config.epochs + static_cast<int>(s - 1) * config.finetune_epochs);
            eval_step(model, static_cast<long>(s));
        }
    }
    if (!config.out_dir.empty()) write_report_files(config.out_dir, config, report);
    return report;
}

// ---- embeddings -------------------------------------------------------------------

EmbeddingDump make_embedding_dump(const ManyDgModel& model, const DataBundle& data,
                                  const std::vector<Split>& splits, std::size_t eval_batch) {
    EmbeddingDump dump;
    dump.dim = model.config.hidden_dim;
    int id = 0;
    for (Split split : splits) {
        const DomainDataset& ds = split == Split::train ? data.train
                                  : split == Split::val ? data.val
                                                        : data.test;
        std::vector<std::size_t> indices;
        for (std::size_t start = 0; start < ds.samples.size(); start += eval_batch) {
            const std::size_t stop = std::min(start + eval_batch, ds.samples.size());
            indices.clear();
            for (std::size_t i = start; i < stop; ++i) indices.push_back(i);
            EmbeddingBatch batch = embed(model, gather_pixels(ds, indices));
            for (std::size_t r = 0; r < indices.size(); ++r) {
                const Sample& sample = ds.samples[indices[r]];
                EmbeddingRow row;
                row.id = id++;
                row.domain = sample.domain;
                row.label = sample.label.primary_class();
                row.split = split;
                row.v.resize(dump.dim);
                row.z.resize(dump.dim);
                row.v_par.resize(dump.dim);
                row.v_perp.resize(dump.dim);
                for (std::size_t j = 0; j < dump.dim; ++j) {
                    row.v[j] = batch.v.at(r, j);
                    row.z[j] = batch.z.at(r, j);
                    row.v_par[j] = batch.v_par.at(r, j);
                    row.v_perp[j] = batch.v_perp.at(r, j);
                }
                dump.rows.push_back(std::move(row));
            }
        }
    }
    return dump;
}

void export_embeddings(const ExperimentConfig& config, const std::string& checkpoint_path,
                       const std::vector<Split>& splits, const std::string& out_path) {
    config.validate();
    require(config.model == "manydg", "export-embeddings: only the manydg model has embeddings");
    DataBundle data = build_data(config);
    if (config.domain_limit > 0) {
        data.train = limit_domains(data.train, config.domain_limit,
                                   mix_seed(config.seed, kSeedLimit));
    }
    ManyDgModel model =
        make_manydg_model(model_config_for(config, data), mix_seed(config.seed, kSeedModel));
    std::vector<NamedParam> params = named_params(model);
    load_params(checkpoint_path, params);
    save_dump(out_path, make_embedding_dump(model, data, splits, config.eval_batch));
}

// ---- report files -------------------------------------------------------------------

void write_csv(const std::string& path, const Table& table) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_csv: cannot open " + path);
    for (std::size_t i = 0; i < table.header.size(); ++i) {
        if (i) out << ",";
        out << table.header[i];
    }
    out << "\n";
    for (const auto& row : table.rows) {
        if (row.size() != table.header.size()) {
            throw std::invalid_argument("write_csv: row width differs from header");
        }
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out << ",";
            out << row[i];
        }
        out << "\n";
    }
    if (!out) throw std::runtime_error("write_csv: write failed for " + path);
}

Table read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_csv: cannot open " + path);
    Table table;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string tok;
        while (std::getline(ss, tok, ',')) cells.push_back(tok);
        if (line.back() == ',') cells.push_back("");
        if (first) {
            table.header = std::move(cells);
            first = false;
        } else {
            if (cells.size() != table.header.size()) {
                throw std::runtime_error("read_csv: ragged row in " + path);
            }
            table.rows.push_back(std::move(cells));
        }
    }
    return table;
}

Table metrics_table(const MetricsReport& report) {
    std::string tag;
    for (const EvalRow& row : report.evals) {
        if (!row.tag_name.empty()) tag = row.tag_name;
    }
    Table table;
    table.header = {"model", "scenario", "seed", "split", "accuracy", "kappa", "macro_f1"};
    if (!tag.empty()) table.header.push_back(tag);
    for (const EvalRow& row : report.evals) {
        std::vector<std::string> cells = {row.model,          row.scenario,
                                          std::to_string(row.seed), row.split,
                                          fmt(row.accuracy),  fmt(row.kappa),
                                          fmt(row.macro_f1)};
        if (!tag.empty()) {
            cells.push_back(row.tag_name.empty() ? "" : std::to_string(row.tag_value));
        }
        table.rows.push_back(std::move(cells));
    }
    return table;
}

Table curve_table(const MetricsReport& report) {
    Table table;
    table.header = {"model", "scenario", "seed",  "epoch",        "sup", "mmd",
                    "rec",   "sim",      "total", "val_accuracy"};
    for (const EpochRow& row : report.curve) {
        table.rows.push_back({row.model, row.scenario, std::to_string(row.seed),
                              std::to_string(row.epoch), fmt(row.losses.sup), fmt(row.losses.mmd),
                              fmt(row.losses.rec), fmt(row.losses.sim), fmt(row.losses.total),
                              fmt(row.val_accuracy)});
    }
    return table;
}

std::vector<AggregateRow> aggregate(const MetricsReport& report) {
    struct Bucket {
        std::vector<const EvalRow*> rows;
    };
    std::map<std::string, Bucket> buckets;
    for (const EvalRow& row : report.evals) {
        std::string key = row.model + "|" + row.scenario + "|" + row.split + "|" + row.tag_name +
                          "|" + std::to_string(row.tag_value);
        buckets[key].rows.push_back(&row);
    }
    std::vector<AggregateRow> out;
    for (auto& [key, bucket] : buckets) {
        AggregateRow agg;
        const EvalRow* first = bucket.rows.front();
        agg.model = first->model;
        agg.scenario = first->scenario;
        agg.split = first->split;
        agg.tag_name = first->tag_name;
        agg.tag_value = first->tag_value;
        agg.seeds = bucket.rows.size();
        auto mean_std = [&](double EvalRow::*field, double& mean, double& sd) {
            for (const EvalRow* r : bucket.rows) mean += r->*field;
            mean /= static_cast<double>(bucket.rows.size());
            for (const EvalRow* r : bucket.rows) sd += (r->*field - mean) * (r->*field - mean);
            sd = std::sqrt(sd / static_cast<double>(bucket.rows.size()));
        };
        mean_std(&EvalRow::accuracy, agg.accuracy_mean, agg.accuracy_std);
        mean_std(&EvalRow::kappa, agg.kappa_mean, agg.kappa_std);
        mean_std(&EvalRow::macro_f1, agg.macro_f1_mean, agg.macro_f1_std);
        out.push_back(std::move(agg));
    }
    return out;
}

Table aggregate_table(const std::vector<AggregateRow>& rows) {
    Table table;
    table.header = {"model",         "scenario",  "split",      "tag",        "tag_value",
                    "seeds",         "accuracy",  "accuracy_std", "kappa",    "kappa_std",
                    "macro_f1",      "macro_f1_std"};
    for (const AggregateRow& r : rows) {
        table.rows.push_back({r.model, r.scenario, r.split, r.tag_name,
                              std::to_string(r.tag_value), std::to_string(r.seeds),
                              fmt(r.accuracy_mean), fmt(r.accuracy_std), fmt(r.kappa_mean),
                              fmt(r.kappa_std), fmt(r.macro_f1_mean), fmt(r.macro_f1_std)});
    }
    return table;
}

void write_report_files(const std::string& dir, const ExperimentConfig& config,
                        const MetricsReport& report) {
    std::filesystem::create_directories(dir);
    write_csv(dir + "/report.csv", metrics_table(report));
    write_csv(dir + "/curve.csv", curve_table(report));
    std::vector<AggregateRow> aggregates = aggregate(report);
    write_csv(dir + "/aggregate.csv", aggregate_table(aggregates));

    nlohmann::json summary;
    summary["config"] = {
        {"scenario", scenario_name(config.scenario)},
        {"model", config.model},
        {"seed", config.seed},
        {"epochs", config.epochs},
        {"batch-size", config.batch_size},
        {"lr", config.lr},
        {"weight-decay", config.weight_decay},
        {"hidden-dim", config.hidden_dim},
        {"backbone-depth", config.backbone_depth},
        {"tau", config.tau},
        {"lambda1", config.lambda1},
        {"lambda2", config.lambda2},
        {"lambda3", config.lambda3},
        {"train-size", config.train_size},
        {"test-size", config.test_size},
        {"image-height", config.image_height},
        {"image-width", config.image_width},
        {"num-waves", config.num_waves},
        {"alpha", config.alpha},
        {"val-fraction", config.val_fraction},
        {"domain-limit", config.domain_limit},
        {"pretrain-domains", config.pretrain_domains},
        {"step-domains", config.step_domains},
        {"continual-steps", config.continual_steps},
        {"replay-k", config.replay_k},
        {"finetune-epochs", config.finetune_epochs},
    };
    std::set<std::uint64_t> seeds;
    for (const EvalRow& row : report.evals) seeds.insert(row.seed);
    summary["seeds"] = seeds;
    summary["aggregates"] = nlohmann::json::array();
    for (const AggregateRow& r : aggregates) {
        nlohmann::json j = {{"model", r.model},
                            {"scenario", r.scenario},
                            {"split", r.split},
                            {"seeds", r.seeds},
                            {"accuracy", r.accuracy_mean},
                            {"accuracy_std", r.accuracy_std},
                            {"kappa", r.kappa_mean},
                            {"kappa_std", r.kappa_std},
                            {"macro_f1", r.macro_f1_mean},
                            {"macro_f1_std", r.macro_f1_std}};
        if (!r.tag_name.empty()) j[r.tag_name] = r.tag_value;
        summary["aggregates"].push_back(j);
    }
    std::ofstream out(dir + "/summary.json");
    if (!out) throw std::runtime_error("write_report_files: cannot open " + dir + "/summary.json");
    out << summary.dump(2) << "\n";
}

ConfusionMatrix evaluate_manydg(const ManyDgModel& model, const DomainDataset& ds,
                                std::size_t eval_batch) {
    return evaluate_model(model, ds, eval_batch);
}

ConfusionMatrix evaluate_base(const BaseModel& model, const DomainDataset& ds,
                              std::size_t eval_batch) {
    return evaluate_model(model, ds, eval_batch);
}

}  // namespace manydg
