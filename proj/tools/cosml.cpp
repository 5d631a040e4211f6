// Command-line front end: pretrain / train / eval / suite / plot.
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cosml/checkpoint.hpp"
#include "cosml/harness.hpp"
#include "cosml/plot.hpp"

namespace fs = std::filesystem;
using namespace cosml;

namespace {

struct CommonOpts {
    std::string config_path;
    std::string out_dir = ".";
    std::string checkpoint_path;
    std::string method;
    int holdout = -1;
    std::uint64_t seed = 0;
    bool seed_set = false;
};

ExperimentConfig load_with_overrides(const CommonOpts& opts) {
    ExperimentConfig cfg = load_config_file(opts.config_path);
    if (!opts.method.empty()) cfg.method = opts.method;
    if (opts.holdout >= 0) cfg.holdout_id = opts.holdout;
    cfg.validate();
    return cfg;
}

std::uint64_t pick_seed(const CommonOpts& opts, const ExperimentConfig& cfg) {
    return opts.seed_set ? opts.seed : cfg.seeds.front();
}

void print_result_line(const RunResult& r) {
    std::cout << "method=" << r.method << " holdout=" << r.holdout_id << " seed=" << r.seed
              << " mean_accuracy=" << format_double(r.mean_accuracy)
              << " ci95=" << format_double(r.ci95_halfwidth)
              << " wall_time_s=" << format_double(r.wall_time_seconds) << "\n";
}

int cmd_pretrain(const CommonOpts& opts) {
    ExperimentConfig cfg = load_with_overrides(opts);
    std::uint64_t seed = pick_seed(opts, cfg);

    const DomainSpec* pre_spec = cfg.find_spec(cfg.pretrain_domain_id);
    DomainGenerator gen(*pre_spec);
    RngStream root(seed);
    RngStream corpus_rng = root.child("pretrain/corpus");
    Corpus corpus = pretrain_corpus(gen, cfg.pretrain_per_class, corpus_rng);
    ShapeManifest manifest =
        mlp_manifest(static_cast<std::size_t>(pre_spec->input_dim), cfg.hidden_widths,
                     static_cast<std::size_t>(gen.n_classes()), cfg.split_index);
    RngStream pre_rng = root.child("pretrain");
    PretrainResult pre = pretrain(corpus, manifest, cfg.pretrain_epochs, cfg.pretrain_batch_size,
                                  pre_rng);

    Checkpoint ck;
    ck.method = cfg.method;
    ck.manifest = manifest;
    ck.phi = pre.phi;
    nlohmann::json echo = cfg;
    echo["seeds"] = std::vector<std::uint64_t>{seed};
    ck.config_echo = echo.dump();

    fs::create_directories(opts.out_dir);
    std::string path = opts.checkpoint_path.empty()
                           ? (fs::path(opts.out_dir) / "pretrain.ckpt").string()
                           : opts.checkpoint_path;
    save_checkpoint_file(path, ck);
    std::cout << "pretrain domain=" << cfg.pretrain_domain_id
              << " train_accuracy=" << format_double(pre.train_accuracy) << " checkpoint=" << path
              << "\n";
    return 0;
}

int cmd_train(const CommonOpts& opts) {
    ExperimentConfig cfg = load_with_overrides(opts);
    std::uint64_t seed = pick_seed(opts, cfg);
    RunArtifacts art = run_method_full(cfg, seed, /*evaluate=*/false);

    fs::create_directories(opts.out_dir);
    std::string path = opts.checkpoint_path.empty()
                           ? (fs::path(opts.out_dir) / (cfg.method + ".ckpt")).string()
                           : opts.checkpoint_path;
    save_checkpoint_file(path, art.checkpoint);
    std::cout << "trained method=" << cfg.method << " holdout=" << cfg.holdout_id << " seed=" << seed
              << " iterations=" << art.checkpoint.iteration
              << " pretrain_accuracy=" << format_double(art.result.pretrain_accuracy)
              << " wall_time_s=" << format_double(art.result.wall_time_seconds)
              << " checkpoint=" << path << "\n";
    return 0;
}

int cmd_eval(const CommonOpts& opts) {
    if (opts.checkpoint_path.empty()) throw ConfigError("eval requires --checkpoint");
    Checkpoint ck = load_checkpoint_file(opts.checkpoint_path);

    ExperimentConfig cfg;
    if (!opts.config_path.empty()) {
        cfg = load_config_file(opts.config_path);
    } else {
        cfg = parse_config(nlohmann::json::parse(ck.config_echo));
    }
    if (opts.holdout >= 0) cfg.holdout_id = opts.holdout;
    std::uint64_t seed = pick_seed(opts, cfg);

    RunResult r;
    r.method = ck.method;
    r.holdout_id = cfg.holdout_id;
    r.seed = seed;
    r.n_way = cfg.n_way;
    r.k_shot = cfg.k_shot;
    r.eval_tasks = cfg.eval_tasks;
    r.per_task_accuracies = evaluate_checkpoint(ck, cfg, seed);
    r.mean_accuracy = mean_of(r.per_task_accuracies);
    r.ci95_halfwidth = ci95_halfwidth_of(r.per_task_accuracies);
    print_result_line(r);

    if (opts.out_dir != ".") {
        fs::create_directories(opts.out_dir);
        std::ofstream os(fs::path(opts.out_dir) / "eval.csv");
        write_results_csv(os, {r});
    }
    return 0;
}

int cmd_suite(const CommonOpts& opts) {
    ExperimentConfig cfg = load_config_file(opts.config_path);
    std::vector<RunResult> results = run_suite(cfg);
    fs::create_directories(opts.out_dir);
    fs::path csv_path = fs::path(opts.out_dir) / "results.csv";
    {
        std::ofstream os(csv_path);
        write_results_csv(os, results);
    }
    plot_results(csv_path.string(), (fs::path(opts.out_dir) / "results.svg").string());
    int failures = 0;
    for (const RunResult& r : results) {
        if (!r.error.empty()) {
            ++failures;
            std::cerr << "failed: method=" << r.method << " holdout=" << r.holdout_id
                      << " seed=" << r.seed << " error=" << r.error << "\n";
        } else {
            print_result_line(r);
        }
    }
    std::cout << "suite rows=" << results.size() << " failures=" << failures << " csv=" << csv_path
              << "\n";
    return failures == 0 ? 0 : 2;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"CosML: cross-domain few-shot classification lab"};
    app.require_subcommand(1);

    CommonOpts opts;
    std::string plot_input;

    auto add_common = [&](CLI::App* sub, bool need_config) {
        CLI::Option* c = sub->add_option("--config", opts.config_path, "experiment config (json)");
        if (need_config) c->required();
        sub->add_option("--seed", opts.seed, "root seed")->each([&](const std::string&) {
            opts.seed_set = true;
        });
        sub->add_option("--out", opts.out_dir, "output directory");
        sub->add_option("--checkpoint", opts.checkpoint_path, "checkpoint path");
        sub->add_option("--method", opts.method, "method override");
        sub->add_option("--holdout", opts.holdout, "holdout domain id override");
    };

    CLI::App* pre = app.add_subcommand("pretrain", "non-episodic pre-training of the feature extractor");
    add_common(pre, true);
    CLI::App* train = app.add_subcommand("train", "pretrain + meta-train, save a checkpoint");
    add_common(train, true);
    CLI::App* eval = app.add_subcommand("eval", "score a checkpoint on novel holdout tasks");
    add_common(eval, false);
    CLI::App* suite = app.add_subcommand("suite", "leave-one-out grid over holdouts x methods x seeds");
    add_common(suite, true);
    CLI::App* plot = app.add_subcommand("plot", "render a results csv as an svg bar chart");
    plot->add_option("csv", plot_input, "results csv path")->required();
    plot->add_option("--out", opts.out_dir, "output directory or .svg path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (pre->parsed()) return cmd_pretrain(opts);
        if (train->parsed()) return cmd_train(opts);
        if (eval->parsed()) return cmd_eval(opts);
        if (suite->parsed()) return cmd_suite(opts);
        if (plot->parsed()) {
            fs::path out = opts.out_dir;
            if (out.extension() != ".svg") {
                fs::create_directories(out);
                out /= fs::path(plot_input).stem().string() + ".svg";
            }
            plot_results(plot_input, out.string());
            std::cout << "plot=" << out << "\n";
            return 0;
        }
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
