#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "cosml/checkpoint.hpp"
#include "cosml/domains.hpp"
#include "cosml/errors.hpp"
#include "cosml/metalearn.hpp"
#include "cosml/ndcore.hpp"
#include "cosml/prototypes.hpp"
#include "cosml/rng.hpp"

namespace cosml {

enum class Method { Cosml, CosmlUniform, CosmlNoMixed, MamlPooled, NearestPrototype };

inline const char* method_name(Method m) {
    switch (m) {
        case Method::Cosml: return "cosml";
        case Method::CosmlUniform: return "cosml_uniform";
        case Method::CosmlNoMixed: return "cosml_no_mixed";
        case Method::MamlPooled: return "maml_pooled";
        case Method::NearestPrototype: return "nearest_prototype";
    }
    return "cosml";
}

inline Method parse_method(const std::string& s) {
    if (s == "cosml") return Method::Cosml;
    if (s == "cosml_uniform") return Method::CosmlUniform;
    if (s == "cosml_no_mixed") return Method::CosmlNoMixed;
    if (s == "maml_pooled") return Method::MamlPooled;
    if (s == "nearest_prototype") return Method::NearestPrototype;
    throw ConfigError("unknown method: " + s);
}

// Everything one experiment needs; mirrors the JSON config file field for
// field. domain_specs lists all M+1 domains; the holdout is named by id and
// used exclusively at meta-test.
struct ExperimentConfig {
    std::vector<DomainSpec> domain_specs;
    int holdout_id = 0;
    int pretrain_domain_id = 0;
    int n_way = 5;
    int k_shot = 5;
    int q_queries = 16;
    std::vector<std::size_t> hidden_widths{64, 64, 64, 64};
    std::size_t split_index = 2;
    TrainLoopConfig train;
    int pretrain_epochs = 40;
    int pretrain_batch_size = 32;
    int pretrain_per_class = 50;
    int eval_tasks = 1000;
    std::vector<std::uint64_t> seeds{1};
    std::string method = "cosml";
    std::vector<std::string> methods{"cosml", "maml_pooled"};

    const DomainSpec* find_spec(int id) const {
        for (const DomainSpec& s : domain_specs) {
            if (s.domain_id == id) return &s;
        }
        return nullptr;
    }

    std::vector<DomainSpec> seen_specs() const {
        std::vector<DomainSpec> out;
        for (const DomainSpec& s : domain_specs) {
            if (s.domain_id != holdout_id) out.push_back(s);
        }
        return out;
    }

    void validate() const {
        if (domain_specs.size() < 2) throw ConfigError("need at least two domains (seen + holdout)");
        for (const DomainSpec& s : domain_specs) {
            s.validate();
            if (s.input_dim != domain_specs.front().input_dim) {
                throw ConfigError("all domains must share input_dim");
            }
            int dup = 0;
            for (const DomainSpec& t : domain_specs) {
                if (t.domain_id == s.domain_id) ++dup;
            }
            if (dup != 1) throw ConfigError("duplicate domain_id " + std::to_string(s.domain_id));
        }
        if (!find_spec(holdout_id)) throw ConfigError("holdout_id is not a configured domain");
        if (pretrain_domain_id == holdout_id) {
            throw ConfigError("pretrain_domain_id must be a seen domain, not the holdout");
        }
        if (!find_spec(pretrain_domain_id)) throw ConfigError("pretrain_domain_id is not a configured domain");
        if (n_way < 1 || k_shot < 1 || q_queries < 1) throw ConfigError("n_way/k_shot/q_queries must be >= 1");
        if (hidden_widths.empty()) throw ConfigError("hidden_widths must be nonempty");
        if (split_index == 0 || split_index > hidden_widths.size()) {
            throw ConfigError("split_index must select a nonempty prefix of the hidden layers");
        }
        train.validate();
        if (pretrain_epochs < 0 || pretrain_batch_size < 1 || pretrain_per_class < 2) {
            throw ConfigError("bad pretrain settings");
        }
        if (eval_tasks < 1) throw ConfigError("eval_tasks must be >= 1");
        if (seeds.empty()) throw ConfigError("seeds must be nonempty");
        parse_method(method);
        for (const std::string& m : methods) parse_method(m);
    }
};

inline void from_json(const nlohmann::json& j, DomainSpec& s) {
    s.domain_id = j.at("domain_id").get<int>();
    s.kind = parse_generator_kind(j.at("generator_kind").get<std::string>());
    if (j.contains("input_dim")) s.input_dim = j.at("input_dim").get<int>();
    if (j.contains("embed_seed")) s.embed_seed = j.at("embed_seed").get<std::uint64_t>();
    if (j.contains("noise_sigma")) s.noise_sigma = j.at("noise_sigma").get<double>();
    if (j.contains("n_classes")) s.n_classes = j.at("n_classes").get<int>();
}

inline void to_json(nlohmann::json& j, const DomainSpec& s) {
    j = nlohmann::json{{"domain_id", s.domain_id},
                       {"generator_kind", generator_kind_name(s.kind)},
                       {"input_dim", s.input_dim},
                       {"embed_seed", s.embed_seed},
                       {"noise_sigma", s.noise_sigma},
                       {"n_classes", s.n_classes}};
}

inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
    c.domain_specs = j.at("domain_specs").get<std::vector<DomainSpec>>();
    c.holdout_id = j.at("holdout_id").get<int>();
    c.pretrain_domain_id = j.at("pretrain_domain_id").get<int>();
    if (j.contains("n_way")) c.n_way = j.at("n_way").get<int>();
    if (j.contains("k_shot")) c.k_shot = j.at("k_shot").get<int>();
    if (j.contains("q_queries")) c.q_queries = j.at("q_queries").get<int>();
    if (j.contains("hidden_widths")) c.hidden_widths = j.at("hidden_widths").get<std::vector<std::size_t>>();
    if (j.contains("split_index")) c.split_index = j.at("split_index").get<std::size_t>();
    if (j.contains("gamma")) c.train.gamma = j.at("gamma").get<double>();
    if (j.contains("beta")) c.train.beta = j.at("beta").get<double>();
    if (j.contains("inner_steps")) c.train.inner_steps = j.at("inner_steps").get<int>();
    if (j.contains("meta_batch")) c.train.meta_batch = j.at("meta_batch").get<int>();
    if (j.contains("iterations")) c.train.iterations = j.at("iterations").get<long>();
    if (j.contains("first_order")) c.train.first_order = j.at("first_order").get<bool>();
    if (j.contains("alpha_chain_rule")) {
        c.train.alpha_rule = parse_alpha_rule(j.at("alpha_chain_rule").get<std::string>());
    }
    if (j.contains("mixed_tasks_enabled")) {
        c.train.mixed_tasks_enabled = j.at("mixed_tasks_enabled").get<bool>();
    }
    if (j.contains("uniform_weights")) c.train.uniform_weights = j.at("uniform_weights").get<bool>();
    if (j.contains("pretrain_epochs")) c.pretrain_epochs = j.at("pretrain_epochs").get<int>();
    if (j.contains("pretrain_batch_size")) c.pretrain_batch_size = j.at("pretrain_batch_size").get<int>();
    if (j.contains("pretrain_per_class")) c.pretrain_per_class = j.at("pretrain_per_class").get<int>();
    if (j.contains("eval_tasks")) c.eval_tasks = j.at("eval_tasks").get<int>();
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("method")) c.method = j.at("method").get<std::string>();
    if (j.contains("methods")) c.methods = j.at("methods").get<std::vector<std::string>>();
}

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
    j = nlohmann::json{{"domain_specs", c.domain_specs},
                       {"holdout_id", c.holdout_id},
                       {"pretrain_domain_id", c.pretrain_domain_id},
                       {"n_way", c.n_way},
                       {"k_shot", c.k_shot},
                       {"q_queries", c.q_queries},
                       {"hidden_widths", c.hidden_widths},
                       {"split_index", c.split_index},
                       {"gamma", c.train.gamma},
                       {"beta", c.train.beta},
                       {"inner_steps", c.train.inner_steps},
                       {"meta_batch", c.train.meta_batch},
                       {"iterations", c.train.iterations},
                       {"first_order", c.train.first_order},
                       {"alpha_chain_rule", alpha_rule_name(c.train.alpha_rule)},
                       {"mixed_tasks_enabled", c.train.mixed_tasks_enabled},
                       {"uniform_weights", c.train.uniform_weights},
                       {"pretrain_epochs", c.pretrain_epochs},
                       {"pretrain_batch_size", c.pretrain_batch_size},
                       {"pretrain_per_class", c.pretrain_per_class},
                       {"eval_tasks", c.eval_tasks},
                       {"seeds", c.seeds},
                       {"method", c.method},
                       {"methods", c.methods}};
}

inline ExperimentConfig parse_config(const nlohmann::json& j) {
    try {
        ExperimentConfig c = j.get<ExperimentConfig>();
        c.validate();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
}

inline ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config: " + path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config " + path + ": " + e.what());
    }
    return parse_config(j);
}

struct RunResult {
    std::string method;
    int holdout_id = 0;
    std::uint64_t seed = 0;
    int n_way = 0;
    int k_shot = 0;
    int eval_tasks = 0;
    double mean_accuracy = 0.0;
    double ci95_halfwidth = 0.0;
    std::vector<double> per_task_accuracies;
    double wall_time_seconds = 0.0;
    DomainTally train_examples_by_domain;
    double pretrain_accuracy = 0.0;
    std::string error; // nonempty when the run failed
};

inline double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// 1.96 * sample std / sqrt(n); zero when n < 2.
inline double ci95_halfwidth_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    double m = mean_of(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    double sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
    return 1.96 * sd / std::sqrt(static_cast<double>(v.size()));
}

// Episode-local nearest class mean in the frozen feature space; ties go to
// the lowest class index. Does not touch the prototype stores.
inline double nearest_prototype_accuracy(const ParamVector& phi, const Episode& ep) {
    Matrix sfeats = feature_matrix(phi, ep.support);
    std::vector<std::vector<double>> protos(ep.n_way, std::vector<double>(sfeats.cols, 0.0));
    std::vector<int> counts(ep.n_way, 0);
    for (std::size_t r = 0; r < sfeats.rows; ++r) {
        int y = ep.support[r].label;
        counts[y] += 1;
        for (std::size_t c = 0; c < sfeats.cols; ++c) protos[y][c] += sfeats.at(r, c);
    }
    for (int j = 0; j < ep.n_way; ++j) {
        for (double& v : protos[j]) v /= static_cast<double>(counts[j]);
    }
    Matrix qfeats = feature_matrix(phi, ep.query);
    std::size_t correct = 0;
    for (std::size_t r = 0; r < qfeats.rows; ++r) {
        int best = 0;
        double best_d2 = 0.0;
        for (int j = 0; j < ep.n_way; ++j) {
            double d2 = 0.0;
            for (std::size_t c = 0; c < qfeats.cols; ++c) {
                double d = qfeats.at(r, c) - protos[j][c];
                d2 += d * d;
            }
            if (j == 0 || d2 < best_d2) {
                best = j;
                best_d2 = d2;
            }
        }
        if (best == ep.query[r].label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(qfeats.rows);
}

inline TrainLoopConfig effective_train_config(const ExperimentConfig& cfg, Method method) {
    TrainLoopConfig tlc = cfg.train;
    if (method == Method::CosmlUniform) tlc.uniform_weights = true;
    if (method == Method::CosmlNoMixed) tlc.mixed_tasks_enabled = false;
    return tlc;
}

// Scores a trained checkpoint on eval_tasks novel episodes from the holdout
// domain, one accuracy per task.
inline std::vector<double> evaluate_checkpoint(const Checkpoint& ck, const ExperimentConfig& cfg,
                                               std::uint64_t seed) {
    const Method method = parse_method(ck.method);
    const DomainSpec* holdout_spec = cfg.find_spec(cfg.holdout_id);
    if (!holdout_spec) throw ConfigError("evaluate: holdout_id is not a configured domain");
    DomainGenerator holdout(*holdout_spec);
    TrainLoopConfig tlc = effective_train_config(cfg, method);
    MetaState state = meta_state_from(ck);

    RngStream eval_rng = RngStream(seed).child("eval");
    std::vector<double> accuracies;
    accuracies.reserve(cfg.eval_tasks);
    for (int t = 0; t < cfg.eval_tasks; ++t) {
        Episode novel = sample_novel_task(holdout, cfg.n_way, cfg.k_shot, cfg.q_queries, eval_rng);
        double acc = 0.0;
        switch (method) {
            case Method::Cosml:
            case Method::CosmlUniform:
            case Method::CosmlNoMixed:
                acc = meta_test(state, ck.stores, novel, tlc).accuracy;
                break;
            case Method::MamlPooled: {
                ParamVector adapted = inner_adapt(state.thetas.front(), state.phi, novel.support,
                                                  tlc.gamma, tlc.inner_steps);
                acc = episode_accuracy(adapted, state.phi, novel.query);
                break;
            }
            case Method::NearestPrototype:
                acc = nearest_prototype_accuracy(state.phi, novel);
                break;
        }
        accuracies.push_back(acc);
    }
    return accuracies;
}

struct RunArtifacts {
    RunResult result;
    Checkpoint checkpoint;
};

// pretrain -> meta-train (per method) -> meta-test on eval_tasks novel
// episodes from the holdout domain. Fully deterministic in (config, seed).
inline RunArtifacts run_method_full(const ExperimentConfig& cfg, std::uint64_t seed,
                                    bool evaluate = true) {
    cfg.validate();
    const Method method = parse_method(cfg.method);
    const auto t0 = std::chrono::steady_clock::now();

    RunArtifacts out;
    RunResult& rr = out.result;
    rr.method = cfg.method;
    rr.holdout_id = cfg.holdout_id;
    rr.seed = seed;
    rr.n_way = cfg.n_way;
    rr.k_shot = cfg.k_shot;
    rr.eval_tasks = cfg.eval_tasks;

    std::vector<DomainGenerator> seen;
    for (const DomainSpec& s : cfg.seen_specs()) seen.emplace_back(s);
    DomainGenerator holdout(*cfg.find_spec(cfg.holdout_id));

    const DomainGenerator* pre_gen = nullptr;
    for (const DomainGenerator& g : seen) {
        if (g.domain_id() == cfg.pretrain_domain_id) pre_gen = &g;
    }

    RngStream root(seed);
    RngStream corpus_rng = root.child("pretrain/corpus");
    Corpus corpus = pretrain_corpus(*pre_gen, cfg.pretrain_per_class, corpus_rng);
    rr.train_examples_by_domain[pre_gen->domain_id()] +=
        static_cast<long>(corpus.examples.size());

    const std::size_t input_dim = static_cast<std::size_t>(cfg.domain_specs.front().input_dim);
    ShapeManifest pre_manifest = mlp_manifest(input_dim, cfg.hidden_widths,
                                              static_cast<std::size_t>(pre_gen->n_classes()),
                                              cfg.split_index);
    RngStream pre_rng = root.child("pretrain");
    PretrainResult pre = pretrain(corpus, pre_manifest, cfg.pretrain_epochs, cfg.pretrain_batch_size,
                                  pre_rng);
    rr.pretrain_accuracy = pre.train_accuracy;

    ShapeManifest meta_manifest = mlp_manifest(input_dim, cfg.hidden_widths,
                                               static_cast<std::size_t>(cfg.n_way), cfg.split_index);
    ParamVector phi = rebind(pre.phi, meta_manifest);
    EpisodeShape shape{cfg.n_way, cfg.k_shot, cfg.q_queries};

    TrainLoopConfig tlc = effective_train_config(cfg, method);

    Checkpoint& ck = out.checkpoint;
    ck.method = cfg.method;
    ck.manifest = meta_manifest;
    ck.phi = phi;
    {
        nlohmann::json echo = cfg;
        echo["method"] = cfg.method;
        echo["holdout_id"] = cfg.holdout_id;
        echo["seeds"] = std::vector<std::uint64_t>{seed};
        ck.config_echo = echo.dump();
    }

    switch (method) {
        case Method::Cosml:
        case Method::CosmlUniform:
        case Method::CosmlNoMixed: {
            MetaTrainResult mt = meta_train(seen, phi, shape, tlc, root);
            for (const auto& [dom, n] : mt.examples_seen) rr.train_examples_by_domain[dom] += n;
            ck.thetas = std::move(mt.state.thetas);
            ck.opt_states = std::move(mt.state.opt_states);
            ck.stores = std::move(mt.stores);
            ck.iteration = mt.state.iteration;
            break;
        }
        case Method::MamlPooled: {
            MamlTrainResult mr = maml_train(seen, phi, shape, tlc, root);
            for (const auto& [dom, n] : mr.examples_seen) rr.train_examples_by_domain[dom] += n;
            ck.thetas = {std::move(mr.theta)};
            ck.opt_states = {std::move(mr.opt_state)};
            ck.iteration = mr.iteration;
            break;
        }
        case Method::NearestPrototype:
            break;
    }

    // The holdout domain must be untouched before meta-test.
    if (rr.train_examples_by_domain.count(cfg.holdout_id) &&
        rr.train_examples_by_domain.at(cfg.holdout_id) != 0) {
        throw std::runtime_error("holdout leakage: unseen-domain examples consumed during training");
    }

    if (evaluate) {
        rr.per_task_accuracies = evaluate_checkpoint(ck, cfg, seed);
        rr.mean_accuracy = mean_of(rr.per_task_accuracies);
        rr.ci95_halfwidth = ci95_halfwidth_of(rr.per_task_accuracies);
    }
    rr.wall_time_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

inline RunResult run_method(const ExperimentConfig& cfg, std::uint64_t seed) {
    return run_method_full(cfg, seed).result;
}

inline RunResult run_method(const ExperimentConfig& cfg) { return run_method(cfg, cfg.seeds.front()); }

inline const char* results_csv_header() {
    return "method,holdout_id,seed,n_way,k_shot,eval_tasks,mean_accuracy,ci95_halfwidth,"
           "wall_time_seconds";
}

inline void write_results_csv(std::ostream& os, const std::vector<RunResult>& results) {
    os << results_csv_header() << '\n';
    for (const RunResult& r : results) {
        os << r.method << ',' << r.holdout_id << ',' << r.seed << ',' << r.n_way << ',' << r.k_shot
           << ',' << r.eval_tasks << ',' << format_double(r.mean_accuracy) << ','
           << format_double(r.ci95_halfwidth) << ',' << format_double(r.wall_time_seconds) << '\n';
    }
}

struct SuiteJob {
    std::string method;
    int holdout_id = 0;
    std::uint64_t seed = 0;
};

inline std::vector<SuiteJob> suite_jobs(const ExperimentConfig& base) {
    std::vector<SuiteJob> jobs;
    for (const DomainSpec& holdout : base.domain_specs) {
        for (const std::string& method : base.methods) {
            for (std::uint64_t seed : base.seeds) {
                jobs.push_back({method, holdout.domain_id, seed});
            }
        }
    }
    return jobs;
}

// Per-job config for one leave-one-out cell. When the rotating holdout is
// the configured pre-training domain, pre-training falls back to the seen
// domain with the smallest id.
inline ExperimentConfig job_config(const ExperimentConfig& base, const SuiteJob& job) {
    ExperimentConfig cfg = base;
    cfg.method = job.method;
    cfg.holdout_id = job.holdout_id;
    if (cfg.pretrain_domain_id == job.holdout_id) {
        int fallback = -1;
        for (const DomainSpec& s : cfg.domain_specs) {
            if (s.domain_id != job.holdout_id && (fallback < 0 || s.domain_id < fallback)) {
                fallback = s.domain_id;
            }
        }
        cfg.pretrain_domain_id = fallback;
    }
    return cfg;
}

// Leave-one-out grid: every domain as holdout x methods x seeds. Jobs are
// independent and run on a small worker pool; a failed job records its error
// and the suite continues.
inline std::vector<RunResult> run_suite(const ExperimentConfig& base, unsigned workers = 0) {
    base.validate();
    std::vector<SuiteJob> jobs = suite_jobs(base);
    std::vector<RunResult> results(jobs.size());
    if (workers == 0) {
        workers = std::thread::hardware_concurrency();
        if (workers == 0) workers = 1;
    }
    workers = std::min<unsigned>(workers, static_cast<unsigned>(jobs.size()));

    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= jobs.size()) return;
            const SuiteJob& job = jobs[i];
            try {
                results[i] = run_method(job_config(base, job), job.seed);
            } catch (const std::exception& e) {
                RunResult r;
                r.method = job.method;
                r.holdout_id = job.holdout_id;
                r.seed = job.seed;
                r.n_way = base.n_way;
                r.k_shot = base.k_shot;
                r.eval_tasks = base.eval_tasks;
                r.mean_accuracy = std::nan("");
                r.ci95_halfwidth = std::nan("");
                r.error = e.what();
                results[i] = std::move(r);
            }
        }
    };
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
    return results;
}

} // namespace cosml
