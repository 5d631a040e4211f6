#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "cosml/domains.hpp"
#include "cosml/errors.hpp"
#include "cosml/ndcore.hpp"
#include "cosml/prototypes.hpp"
#include "cosml/rng.hpp"

namespace cosml {

// How the per-domain weight enters the mixed-task meta-gradient. The chain
// rule through theta = sum_k alpha_k * theta_k contributes one alpha_k
// factor; single_alpha reads the update's explicit alpha as exactly that
// factor, double_alpha composes both and yields alpha_k^2.
enum class AlphaRule { SingleAlpha, DoubleAlpha };

inline const char* alpha_rule_name(AlphaRule r) {
    return r == AlphaRule::SingleAlpha ? "single_alpha" : "double_alpha";
}

inline AlphaRule parse_alpha_rule(const std::string& s) {
    if (s == "single_alpha") return AlphaRule::SingleAlpha;
    if (s == "double_alpha") return AlphaRule::DoubleAlpha;
    throw ConfigError("unknown alpha_chain_rule: " + s);
}

struct TrainLoopConfig {
    double gamma = 0.01;  // inner-loop step size
    double beta = 0.001;  // outer-loop (Adam) learning rate
    int inner_steps = 5;
    int meta_batch = 4;  // tasks per domain per iteration
    long iterations = 500;
    bool first_order = true;
    AlphaRule alpha_rule = AlphaRule::SingleAlpha;
    bool mixed_tasks_enabled = true;
    bool uniform_weights = false;

    void validate() const {
        if (!(gamma > 0.0)) throw ConfigError("gamma must be > 0");
        if (!(beta > 0.0)) throw ConfigError("beta must be > 0");
        if (inner_steps < 0) throw ConfigError("inner_steps must be >= 0");
        if (meta_batch < 1) throw ConfigError("meta_batch must be >= 1");
        if (iterations < 0) throw ConfigError("iterations must be >= 0");
        if (!first_order) throw ConfigError("second-order meta-gradients are not supported");
    }
};

struct EpisodeShape {
    int n_way = 5;
    int k_shot = 5;
    int q_queries = 16;
};

// One meta-learner per seen domain plus the shared frozen feature extractor.
// thetas cover layers [split_index, n); phi covers [0, split_index) and is
// never modified after pre-training.
struct MetaState {
    std::vector<ParamVector> thetas;
    std::vector<AdamState> opt_states;
    std::vector<int> domain_ids;
    ParamVector phi;
    long iteration = 0;
};

struct PretrainResult {
    ParamVector phi;
    double train_accuracy = 0.0;
};

// Non-episodic supervised pre-training of the full network; only the feature
// extractor layers survive.
inline PretrainResult pretrain(const Corpus& corpus, const ShapeManifest& manifest, int epochs,
                               int batch_size, RngStream& rng) {
    manifest.validate();
    if (corpus.examples.empty()) throw std::invalid_argument("pretrain: empty corpus");
    if (batch_size < 1) throw std::invalid_argument("pretrain: batch_size must be >= 1");
    if (manifest.output_dim() != static_cast<std::size_t>(corpus.n_classes)) {
        throw std::invalid_argument("pretrain: manifest head does not match corpus classes");
    }

    ParamVector params = glorot_init(manifest, rng);
    AdamState opt = AdamState::fresh(params.values.size());

    const std::size_t n = corpus.examples.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    for (int e = 0; e < epochs; ++e) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(batch_size)) {
            std::size_t stop = std::min(n, start + static_cast<std::size_t>(batch_size));
            Matrix x(stop - start, manifest.input_dim());
            std::vector<int> y(stop - start);
            for (std::size_t r = 0; r < stop - start; ++r) {
                const auto& [xi, yi] = corpus.examples[order[start + r]];
                std::copy(xi.begin(), xi.end(), x.row(r));
                y[r] = yi;
            }
            BackwardResult res = backward(params, x, y, 0);
            params = adam_step(opt, params, res.grad);
        }
    }

    Matrix all(n, manifest.input_dim());
    std::vector<int> labels(n);
    for (std::size_t r = 0; r < n; ++r) {
        std::copy(corpus.examples[r].first.begin(), corpus.examples[r].first.end(), all.row(r));
        labels[r] = corpus.examples[r].second;
    }
    Matrix logits = forward_batch(params, all);
    std::size_t correct = 0;
    for (std::size_t r = 0; r < n; ++r) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < logits.cols; ++c) {
            if (logits.at(r, c) > logits.at(r, best)) best = c;
        }
        if (static_cast<int>(best) == labels[r]) ++correct;
    }

    PretrainResult out;
    out.phi = slice(params, 0, manifest.split_index);
    out.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
    return out;
}

// A few steps of gradient descent on the support set, task-subnetwork layers
// only. Support features are computed once; phi stays untouched.
inline ParamVector inner_adapt(const ParamVector& theta, const ParamVector& phi,
                               const std::vector<LabeledExample>& support, double gamma, int steps) {
    if (theta.manifest != phi.manifest) throw std::invalid_argument("inner_adapt: manifest mismatch");
    if (theta.first_layer != theta.manifest.split_index ||
        theta.last_layer != theta.manifest.layer_count()) {
        throw std::invalid_argument("inner_adapt: theta must cover layers [split_index, n)");
    }
    if (support.empty()) throw std::invalid_argument("inner_adapt: empty support set");
    ParamVector cur = theta;
    if (steps == 0) return cur;
    Matrix feats = feature_matrix(phi, support);
    std::vector<int> labels = example_labels(support);
    for (int s = 0; s < steps; ++s) {
        BackwardResult res = backward(cur, feats, labels, cur.first_layer);
        cur = sgd_step(cur, res.grad, gamma);
    }
    return cur;
}

// Query-set accuracy of an adapted task subnetwork; argmax ties go to the
// lowest class index.
inline double episode_accuracy(const ParamVector& theta, const ParamVector& phi,
                               const std::vector<LabeledExample>& query) {
    if (query.empty()) throw std::invalid_argument("episode_accuracy: empty query set");
    Matrix feats = feature_matrix(phi, query);
    Matrix logits = forward_batch(theta, feats);
    std::size_t correct = 0;
    for (std::size_t r = 0; r < logits.rows; ++r) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < logits.cols; ++c) {
            if (logits.at(r, c) > logits.at(r, best)) best = c;
        }
        if (static_cast<int>(best) == query[r].label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(logits.rows);
}

namespace detail {

// First-order meta-gradient summed over a task batch: adapt on the support,
// take the query-loss gradient at the adapted parameters.
inline Gradient meta_batch_gradient(const ParamVector& theta, const ParamVector& phi,
                                    const std::vector<Episode>& batch, const TrainLoopConfig& cfg) {
    Gradient sum;
    sum.values.assign(theta.values.size(), 0.0);
    for (const Episode& ep : batch) {
        ParamVector adapted = inner_adapt(theta, phi, ep.support, cfg.gamma, cfg.inner_steps);
        Matrix qfeats = feature_matrix(phi, ep.query);
        BackwardResult res = backward(adapted, qfeats, example_labels(ep.query), adapted.first_layer);
        for (std::size_t i = 0; i < sum.values.size(); ++i) sum.values[i] += res.grad.values[i];
    }
    return sum;
}

} // namespace detail

// One MAML-style outer step for domain k from a batch of its pure tasks.
inline void pure_task_outer_update(MetaState& state, std::size_t k, const std::vector<Episode>& batch,
                                   const TrainLoopConfig& cfg) {
    if (k >= state.thetas.size()) throw std::invalid_argument("pure_task_outer_update: bad domain index");
    for (const Episode& ep : batch) {
        if (ep.kind != EpisodeKind::Pure) {
            throw std::invalid_argument("pure_task_outer_update: non-pure episode");
        }
        for (const LabeledExample& e : ep.support) {
            if (e.domain_tag != state.domain_ids[k]) {
                throw std::invalid_argument("pure_task_outer_update: foreign-domain episode");
            }
        }
    }
    Gradient g = detail::meta_batch_gradient(state.thetas[k], state.phi, batch, cfg);
    state.thetas[k] = adam_step(state.opt_states[k], state.thetas[k], g);
}

// Per-domain gradient contributions accumulated over a mixed-task batch:
// blend the domain meta-parameters with similarity weights, adapt on the
// support, and hand each domain its weighted share of the query-loss
// gradient. alpha is constant w.r.t. theta (it depends only on frozen
// features), so the weighting is exact, not approximated.
inline std::vector<Gradient> mixed_task_contributions(const MetaState& state,
                                                      const std::vector<PrototypeStore>& stores,
                                                      const std::vector<Episode>& batch,
                                                      const TrainLoopConfig& cfg) {
    const std::size_t m = state.thetas.size();
    if (stores.size() != m) throw std::invalid_argument("mixed_task_update: store count mismatch");
    for (const PrototypeStore& s : stores) {
        if (s.task_count < 1) throw std::invalid_argument("mixed_task_update: store has no folded tasks");
    }
    std::vector<Gradient> contribs(m);
    for (Gradient& g : contribs) g.values.assign(state.thetas.front().values.size(), 0.0);

    for (const Episode& ep : batch) {
        if (ep.kind != EpisodeKind::Mixed) throw std::invalid_argument("mixed_task_update: non-mixed episode");
        DomainWeights w = cfg.uniform_weights ? uniform_weights(m) : domain_weights(ep, stores, state.phi);
        ParamVector blended = blend(state.thetas, w.alphas);
        ParamVector adapted = inner_adapt(blended, state.phi, ep.support, cfg.gamma, cfg.inner_steps);
        Matrix qfeats = feature_matrix(state.phi, ep.query);
        BackwardResult res = backward(adapted, qfeats, example_labels(ep.query), adapted.first_layer);
        for (std::size_t k = 0; k < m; ++k) {
            double a = w.alphas[k];
            double factor = cfg.alpha_rule == AlphaRule::SingleAlpha ? a : a * a;
            if (factor == 0.0) continue;
            for (std::size_t i = 0; i < contribs[k].values.size(); ++i) {
                contribs[k].values[i] += factor * res.grad.values[i];
            }
        }
    }
    return contribs;
}

// One outer step per domain from a mixed-task batch.
inline void mixed_task_update(MetaState& state, const std::vector<PrototypeStore>& stores,
                              const std::vector<Episode>& batch, const TrainLoopConfig& cfg) {
    if (!cfg.mixed_tasks_enabled) throw std::logic_error("mixed_task_update: mixed tasks disabled");
    std::vector<Gradient> contribs = mixed_task_contributions(state, stores, batch, cfg);
    for (std::size_t k = 0; k < state.thetas.size(); ++k) {
        state.thetas[k] = adam_step(state.opt_states[k], state.thetas[k], contribs[k]);
    }
}

struct MetaTrainResult {
    MetaState state;
    std::vector<PrototypeStore> stores;
    DomainTally examples_seen;
};

// The full meta-training loop: every iteration processes one pure-task batch
// per seen domain (folding prototypes along the way) and, when enabled, one
// mixed-task batch. Sampling streams are fixed per purpose, so disabling
// mixed tasks does not shift the pure-task streams.
inline MetaTrainResult meta_train(const std::vector<DomainGenerator>& gens, const ParamVector& phi,
                                  const EpisodeShape& shape, const TrainLoopConfig& cfg,
                                  const RngStream& root) {
    cfg.validate();
    if (gens.empty()) throw ConfigError("meta_train: need at least one seen domain");
    const ShapeManifest& manifest = phi.manifest;
    if (phi.first_layer != 0 || phi.last_layer != manifest.split_index) {
        throw std::invalid_argument("meta_train: phi must cover layers [0, split_index)");
    }
    if (manifest.output_dim() != static_cast<std::size_t>(shape.n_way)) {
        throw std::invalid_argument("meta_train: manifest head does not match n_way");
    }

    const std::size_t m = gens.size();
    MetaTrainResult out;
    out.state.phi = phi;
    out.state.iteration = 0;
    // One shared random initialization for every domain: the meta-parameters
    // are averaged in weight space later, which only stays meaningful when
    // the specialists diverge from common ground rather than starting in
    // unrelated permutation basins.
    RngStream init = root.child("init/theta");
    ParamVector theta0 = glorot_init(manifest, manifest.split_index, manifest.layer_count(), init);
    std::vector<RngStream> pure_streams;
    for (std::size_t k = 0; k < m; ++k) {
        out.state.thetas.push_back(theta0);
        out.state.opt_states.push_back(AdamState::fresh(theta0.values.size(), cfg.beta));
        out.state.domain_ids.push_back(gens[k].domain_id());
        out.stores.push_back(PrototypeStore{gens[k].domain_id()});
        pure_streams.push_back(root.child("pure", k));
    }
    RngStream mixed_stream = root.child("mixed");

    for (long it = 0; it < cfg.iterations; ++it) {
        for (std::size_t k = 0; k < m; ++k) {
            std::vector<Episode> batch;
            batch.reserve(cfg.meta_batch);
            for (int b = 0; b < cfg.meta_batch; ++b) {
                batch.push_back(sample_pure_task(gens[k], shape.n_way, shape.k_shot, shape.q_queries,
                                                 pure_streams[k]));
                tally_episode(out.examples_seen, batch.back());
                fold_task(out.stores[k], batch.back(), phi);
            }
            pure_task_outer_update(out.state, k, batch, cfg);
        }
        if (cfg.mixed_tasks_enabled) {
            std::vector<Episode> batch;
            batch.reserve(cfg.meta_batch);
            for (int b = 0; b < cfg.meta_batch; ++b) {
                batch.push_back(sample_mixed_task(gens, shape.n_way, shape.k_shot, shape.q_queries,
                                                  mixed_stream));
                tally_episode(out.examples_seen, batch.back());
            }
            mixed_task_update(out.state, out.stores, batch, cfg);
        }
        out.state.iteration += 1;
        for (const ParamVector& th : out.state.thetas) check_finite(th.values, "meta-parameters");
    }
    return out;
}

struct MetaTestResult {
    double accuracy = 0.0;
    ParamVector adapted;
    DomainWeights alphas;
};

// Meta-test adaptation on one novel task: weight the domains by similarity,
// blend their meta-parameters, fine-tune on the support, score on the query.
inline MetaTestResult meta_test(const MetaState& state, const std::vector<PrototypeStore>& stores,
                                const Episode& novel, const TrainLoopConfig& cfg) {
    if (novel.kind != EpisodeKind::Novel) throw std::invalid_argument("meta_test: episode is not novel");
    if (stores.size() != state.thetas.size()) throw std::invalid_argument("meta_test: store count mismatch");
    for (const PrototypeStore& s : stores) {
        if (s.task_count < 1) throw std::invalid_argument("meta_test: store has no folded tasks");
    }
    MetaTestResult out;
    out.alphas = cfg.uniform_weights ? uniform_weights(state.thetas.size())
                                     : domain_weights(novel, stores, state.phi);
    ParamVector blended = blend(state.thetas, out.alphas.alphas);
    out.adapted = inner_adapt(blended, state.phi, novel.support, cfg.gamma, cfg.inner_steps);
    out.accuracy = episode_accuracy(out.adapted, state.phi, novel.query);
    return out;
}

struct MamlTrainResult {
    ParamVector theta;
    AdamState opt_state;
    DomainTally examples_seen;
    long iteration = 0;
};

// Plain first-order MAML over the union of all seen domains' pure tasks: one
// meta-learner, no prototypes, no blending. Each iteration consumes every
// domain's pure-task batch (the same per-domain streams meta_train uses, so
// the two coincide when M = 1) and applies a single outer update on the
// union, mirroring the once-per-loop update of the per-domain learners.
inline MamlTrainResult maml_train(const std::vector<DomainGenerator>& gens, const ParamVector& phi,
                                  const EpisodeShape& shape, const TrainLoopConfig& cfg,
                                  const RngStream& root) {
    cfg.validate();
    if (gens.empty()) throw ConfigError("maml_train: need at least one seen domain");
    const ShapeManifest& manifest = phi.manifest;
    if (phi.first_layer != 0 || phi.last_layer != manifest.split_index) {
        throw std::invalid_argument("maml_train: phi must cover layers [0, split_index)");
    }
    MamlTrainResult out;
    RngStream init = root.child("init/theta");
    out.theta = glorot_init(manifest, manifest.split_index, manifest.layer_count(), init);
    out.opt_state = AdamState::fresh(out.theta.values.size(), cfg.beta);
    std::vector<RngStream> pure_streams;
    for (std::size_t k = 0; k < gens.size(); ++k) pure_streams.push_back(root.child("pure", k));

    for (long it = 0; it < cfg.iterations; ++it) {
        std::vector<Episode> batch;
        batch.reserve(cfg.meta_batch * gens.size());
        for (std::size_t k = 0; k < gens.size(); ++k) {
            for (int b = 0; b < cfg.meta_batch; ++b) {
                batch.push_back(sample_pure_task(gens[k], shape.n_way, shape.k_shot, shape.q_queries,
                                                 pure_streams[k]));
                tally_episode(out.examples_seen, batch.back());
            }
        }
        Gradient g = detail::meta_batch_gradient(out.theta, phi, batch, cfg);
        out.theta = adam_step(out.opt_state, out.theta, g);
        out.iteration += 1;
        check_finite(out.theta.values, "meta-parameters");
    }
    return out;
}

} // namespace cosml
