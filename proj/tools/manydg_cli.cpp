#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "manydg/experiment.hpp"
#include "manydg/probe.hpp"

using namespace manydg;

namespace {

std::vector<std::uint64_t> parse_u64_list(const std::string& csv) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (!tok.empty()) out.push_back(std::stoull(tok));
    }
    return out;
}

std::vector<std::size_t> parse_size_list(const std::string& csv) {
    std::vector<std::size_t> out;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (!tok.empty()) out.push_back(std::stoul(tok));
    }
    return out;
}

std::vector<Split> parse_splits(const std::string& csv) {
    std::vector<Split> out;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok == "train") out.push_back(Split::train);
        else if (tok == "val") out.push_back(Split::val);
        else if (tok == "test") out.push_back(Split::test);
        else throw CLI::ValidationError("--splits", "unknown split '" + tok + "'");
    }
    return out;
}

void add_config_options(CLI::App* cmd, ExperimentConfig& config, std::string& scenario) {
    cmd->set_config("--config")->description("key=value config file");
    cmd->add_option("--scenario", scenario,
                    "original|all-shift|stepped|opposite-stepped|half-all|random|train-only|"
                    "test-only")
        ->default_val(scenario_name(config.scenario));
    cmd->add_option("--model", config.model, "base|manydg")->default_val(config.model);
    cmd->add_option("--seed", config.seed)->default_val(config.seed);
    cmd->add_option("--epochs", config.epochs)->default_val(config.epochs);
    cmd->add_option("--batch-size", config.batch_size)->default_val(config.batch_size);
    cmd->add_option("--lr", config.lr)->default_val(config.lr);
    cmd->add_option("--weight-decay", config.weight_decay)->default_val(config.weight_decay);
    cmd->add_option("--hidden-dim", config.hidden_dim)->default_val(config.hidden_dim);
    cmd->add_option("--backbone-depth", config.backbone_depth)
        ->default_val(config.backbone_depth);
    cmd->add_option("--tau", config.tau)->default_val(config.tau);
    cmd->add_option("--lambda1", config.lambda1)->default_val(config.lambda1);
    cmd->add_option("--lambda2", config.lambda2)->default_val(config.lambda2);
    cmd->add_option("--lambda3", config.lambda3)->default_val(config.lambda3);
    cmd->add_option("--idx-train-images", config.idx_train_images);
    cmd->add_option("--idx-train-labels", config.idx_train_labels);
    cmd->add_option("--idx-train-domains", config.idx_train_domains);
    cmd->add_option("--idx-test-images", config.idx_test_images);
    cmd->add_option("--idx-test-labels", config.idx_test_labels);
    cmd->add_option("--idx-test-domains", config.idx_test_domains);
    cmd->add_option("--train-size", config.train_size)->default_val(config.train_size);
    cmd->add_option("--test-size", config.test_size)->default_val(config.test_size);
    cmd->add_option("--image-height", config.image_height)->default_val(config.image_height);
    cmd->add_option("--image-width", config.image_width)->default_val(config.image_width);
    cmd->add_option("--num-waves", config.num_waves)->default_val(config.num_waves);
    cmd->add_option("--alpha", config.alpha)->default_val(config.alpha);
    cmd->add_option("--val-fraction", config.val_fraction)->default_val(config.val_fraction);
    cmd->add_option("--domain-limit", config.domain_limit)->default_val(config.domain_limit);
    cmd->add_option("--pretrain-domains", config.pretrain_domains)
        ->default_val(config.pretrain_domains);
    cmd->add_option("--step-domains", config.step_domains)->default_val(config.step_domains);
    cmd->add_option("--continual-steps", config.continual_steps)
        ->default_val(config.continual_steps);
    cmd->add_option("--replay-k", config.replay_k)->default_val(config.replay_k);
    cmd->add_option("--finetune-epochs", config.finetune_epochs)
        ->default_val(config.finetune_epochs);
    cmd->add_option("--out", config.out_dir, "report output directory");
    cmd->add_option("--checkpoint-out", config.checkpoint_out);
    cmd->add_option("--checkpoint-in", config.checkpoint_in);
    cmd->add_option("--eval-batch", config.eval_batch)->default_val(config.eval_batch);
}

void print_aggregates(const MetricsReport& report) {
    for (const AggregateRow& row : aggregate(report)) {
        std::printf("%-7s %-17s %-5s", row.model.c_str(), row.scenario.c_str(),
                    row.split.c_str());
        if (!row.tag_name.empty()) {
            std::printf(" %s=%-6ld", row.tag_name.c_str(), row.tag_value);
        }
        std::printf(" acc %.4f +/- %.4f  kappa %.4f  f1 %.4f  (%zu seed%s)\n",
                    row.accuracy_mean, row.accuracy_std, row.kappa_mean, row.macro_f1_mean,
                    row.seeds, row.seeds == 1 ? "" : "s");
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Many-domain generalization lab: Siamese paired training with mutual "
                 "reconstruction, domain-factor similarity, normalized MMD alignment, and "
                 "orthogonal-projection prediction"};
    app.require_subcommand(1);

    ExperimentConfig config;
    std::string scenario = scenario_name(config.scenario);
    std::string seeds_csv, counts_csv, splits_csv = "train,test";
    std::string checkpoint, dump_path, dump_out;
    std::size_t probe_max_rows = 4000;
    int probe_steps = 500;

    CLI::App* run = app.add_subcommand("run", "train one model on one scenario");
    add_config_options(run, config, scenario);
    run->add_option("--seeds", seeds_csv, "comma-separated seed list (overrides --seed)");

    CLI::App* sweep = app.add_subcommand("sweep", "small-data sweep over domain counts");
    add_config_options(sweep, config, scenario);
    sweep->add_option("--domain-counts", counts_csv, "descending comma-separated counts")
        ->required();
    sweep->add_option("--seeds", seeds_csv, "comma-separated seed list (overrides --seed)");

    CLI::App* continual = app.add_subcommand("continual", "pretrain then fine-tune on new domains");
    add_config_options(continual, config, scenario);
    continual->add_option("--seeds", seeds_csv, "comma-separated seed list (overrides --seed)");

    CLI::App* export_cmd = app.add_subcommand("export-embeddings",
                                              "dump v, z, v_par, v_perp from a checkpoint");
    add_config_options(export_cmd, config, scenario);
    export_cmd->add_option("--checkpoint", checkpoint, "trained manydg checkpoint")->required();
    export_cmd->add_option("--splits", splits_csv, "comma-separated splits")
        ->default_val(splits_csv);
    export_cmd->add_option("--dump-out", dump_out, "embedding dump path")->required();

    CLI::App* probe = app.add_subcommand("probe-report",
                                         "weight-cosine and z-similarity analysis of a dump");
    probe->add_option("--dump", dump_path, "embedding dump file")->required();
    probe->add_option("--out", config.out_dir, "report output directory");
    probe->add_option("--max-rows", probe_max_rows)->default_val(probe_max_rows);
    probe->add_option("--probe-steps", probe_steps)->default_val(probe_steps);
    probe->add_option("--seed", config.seed)->default_val(config.seed);

    CLI11_PARSE(app, argc, argv);

    try {
        config.scenario = parse_scenario(scenario);
        std::vector<std::uint64_t> seeds =
            seeds_csv.empty() ? std::vector<std::uint64_t>{config.seed} : parse_u64_list(seeds_csv);

        if (run->parsed() || sweep->parsed() || continual->parsed()) {
            const std::string out_dir = config.out_dir;
            config.out_dir.clear();  // write once after merging seeds
            MetricsReport merged;
            for (std::uint64_t seed : seeds) {
                config.seed = seed;
                if (run->parsed()) {
                    merged.append(run_experiment(config));
                } else if (sweep->parsed()) {
                    merged.append(run_small_data_sweep(config, parse_size_list(counts_csv)));
                } else {
                    merged.append(run_continual(config));
                }
            }
            config.out_dir = out_dir;
            if (!config.out_dir.empty()) write_report_files(config.out_dir, config, merged);
            print_aggregates(merged);
        } else if (export_cmd->parsed()) {
            export_embeddings(config, checkpoint, parse_splits(splits_csv), dump_out);
            std::printf("wrote %s\n", dump_out.c_str());
        } else if (probe->parsed()) {
            EmbeddingDump dump = load_dump(dump_path);
            ProbeConfig pc;
            pc.max_rows = probe_max_rows;
            pc.steps = probe_steps;
            pc.seed = config.seed;
            ProbeReport report = weight_cosine_report(dump, pc);
            auto [within, cross] = z_similarity(dump, 200000, config.seed);
            std::printf("weight cosine, v->labels vs v_perp->labels : %+.4f\n",
                        report.labels_v_vs_vperp);
            std::printf("weight cosine, v->domains vs v_par->domains: %+.4f\n",
                        report.domains_v_vs_vpar);
            std::printf("weight cosine, v->labels vs v->domains     : %+.4f\n",
                        report.labels_vs_domains);
            std::printf("weight cosine, v->labels vs v_par->labels  : %+.4f\n",
                        report.labels_v_vs_vpar);
            std::printf("z similarity, within-domain %.4f vs cross-domain %.4f\n", within, cross);
            if (!config.out_dir.empty()) {
                std::filesystem::create_directories(config.out_dir);
                Table probe_table;
                probe_table.header = {"row", "cosine"};
                probe_table.rows = {
                    {"labels_v_vs_vperp", std::to_string(report.labels_v_vs_vperp)},
                    {"domains_v_vs_vpar", std::to_string(report.domains_v_vs_vpar)},
                    {"labels_vs_domains", std::to_string(report.labels_vs_domains)},
                    {"labels_v_vs_vpar", std::to_string(report.labels_v_vs_vpar)},
                };
                write_csv(config.out_dir + "/probe_report.csv", probe_table);
                Table zsim;
                zsim.header = {"within_domain", "cross_domain"};
                zsim.rows = {{std::to_string(within), std::to_string(cross)}};
                write_csv(config.out_dir + "/z_similarity.csv", zsim);
                Table scatter;
                scatter.header = {"perp_norm", "par_norm", "split"};
                for (const NormRow& row : norm_scatter(dump)) {
                    scatter.rows.push_back({std::to_string(row.perp_norm),
                                            std::to_string(row.par_norm),
                                            split_name(row.split)});
                }
                write_csv(config.out_dir + "/norm_scatter.csv", scatter);
            }
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
