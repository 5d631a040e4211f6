#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "cosml/domains.hpp"
#include "cosml/errors.hpp"
#include "cosml/ndcore.hpp"

namespace cosml {

// Per-domain prototype memory: the growing list of task prototypes and the
// running domain prototype (exact count-weighted mean of every feature ever
// folded in). Single-writer; reads may happen freely between folds.
struct PrototypeStore {
    int domain_id = 0;
    std::vector<std::vector<double>> task_prototypes;
    std::vector<double> domain_prototype;
    long example_count = 0;
    long task_count = 0;
    // 0 keeps every task prototype; a positive cap switches to uniform
    // reservoir replacement once full (off by default).
    std::size_t max_task_prototypes = 0;
};

struct DomainWeights {
    std::vector<double> alphas;
};

inline Matrix feature_matrix(const ParamVector& phi, const std::vector<LabeledExample>& ex) {
    if (phi.first_layer != 0 || phi.last_layer != phi.manifest.split_index) {
        throw std::invalid_argument("phi must cover layers [0, split_index)");
    }
    return forward_batch(phi, examples_matrix(ex));
}

// Eq.: mean feature vector over all support and query examples of a task.
inline std::vector<double> task_prototype(const Episode& ep, const ParamVector& phi) {
    if (ep.support.empty() && ep.query.empty()) {
        throw std::invalid_argument("task_prototype: empty episode");
    }
    std::vector<LabeledExample> all = ep.support;
    all.insert(all.end(), ep.query.begin(), ep.query.end());
    Matrix f = feature_matrix(phi, all);
    std::vector<double> mean(f.cols, 0.0);
    for (std::size_t r = 0; r < f.rows; ++r) {
        const double* fr = f.row(r);
        for (std::size_t c = 0; c < f.cols; ++c) mean[c] += fr[c];
    }
    for (double& v : mean) v /= static_cast<double>(f.rows);
    return mean;
}

// Folds one pure task of the store's own domain: appends its task prototype
// and advances the running domain mean over all of its examples.
inline void fold_task(PrototypeStore& store, const Episode& ep, const ParamVector& phi) {
    if (ep.kind != EpisodeKind::Pure) {
        throw std::invalid_argument("fold_task: only pure tasks update prototype stores");
    }
    for (const LabeledExample& e : ep.support) {
        if (e.domain_tag != store.domain_id) throw std::invalid_argument("fold_task: foreign-domain episode");
    }
    for (const LabeledExample& e : ep.query) {
        if (e.domain_tag != store.domain_id) throw std::invalid_argument("fold_task: foreign-domain episode");
    }
    std::vector<LabeledExample> all = ep.support;
    all.insert(all.end(), ep.query.begin(), ep.query.end());
    Matrix f = feature_matrix(phi, all);

    std::vector<double> proto(f.cols, 0.0);
    if (store.domain_prototype.empty()) store.domain_prototype.assign(f.cols, 0.0);
    if (store.domain_prototype.size() != f.cols) {
        throw std::invalid_argument("fold_task: feature dimension changed");
    }
    for (std::size_t r = 0; r < f.rows; ++r) {
        const double* fr = f.row(r);
        for (std::size_t c = 0; c < f.cols; ++c) proto[c] += fr[c];
        store.example_count += 1;
        const double inv = 1.0 / static_cast<double>(store.example_count);
        for (std::size_t c = 0; c < f.cols; ++c) {
            store.domain_prototype[c] += (fr[c] - store.domain_prototype[c]) * inv;
        }
    }
    for (double& v : proto) v /= static_cast<double>(f.rows);

    store.task_count += 1;
    if (store.max_task_prototypes == 0 || store.task_prototypes.size() < store.max_task_prototypes) {
        store.task_prototypes.push_back(std::move(proto));
    } else {
        // Uniform reservoir over all tasks seen so far, deterministic in
        // (domain_id, task_count).
        std::uint64_t r = detail::splitmix64(static_cast<std::uint64_t>(store.domain_id) * 0x9e3779b97f4a7c15ULL ^
                                             static_cast<std::uint64_t>(store.task_count));
        std::uint64_t j = r % static_cast<std::uint64_t>(store.task_count);
        if (j < store.max_task_prototypes) store.task_prototypes[static_cast<std::size_t>(j)] = std::move(proto);
    }
}

namespace detail {

inline double mean_distance(const Matrix& feats, const std::vector<double>& z) {
    double acc = 0.0;
    for (std::size_t r = 0; r < feats.rows; ++r) {
        const double* fr = feats.row(r);
        double d2 = 0.0;
        for (std::size_t c = 0; c < feats.cols; ++c) {
            double d = fr[c] - z[c];
            d2 += d * d;
        }
        acc += std::sqrt(d2);
    }
    return acc / static_cast<double>(feats.rows);
}

// dist(T, D) over precomputed support features: the mean of the distance to
// the domain prototype and the average distance to the task prototypes.
inline double dist_to_domain_feats(const Matrix& support_feats, const PrototypeStore& store) {
    if (store.task_count < 1 || store.task_prototypes.empty()) {
        throw std::invalid_argument("dist_to_domain: store has no folded tasks");
    }
    double d_domain = mean_distance(support_feats, store.domain_prototype);
    double d_tasks = 0.0;
    for (const std::vector<double>& z : store.task_prototypes) {
        d_tasks += mean_distance(support_feats, z);
    }
    d_tasks /= static_cast<double>(store.task_prototypes.size());
    return 0.5 * (d_domain + d_tasks);
}

} // namespace detail

// Eq.: mean Euclidean distance between the support examples' features and a
// (task or domain) prototype.
inline double ds(const std::vector<LabeledExample>& support, const std::vector<double>& z,
                 const ParamVector& phi) {
    if (support.empty()) throw std::invalid_argument("ds: empty support set");
    Matrix f = feature_matrix(phi, support);
    if (z.size() != f.cols) throw std::invalid_argument("ds: prototype dimension mismatch");
    return detail::mean_distance(f, z);
}

inline double dist_to_domain(const Episode& ep, const PrototypeStore& store, const ParamVector& phi) {
    if (ep.support.empty()) throw std::invalid_argument("dist_to_domain: empty support set");
    Matrix f = feature_matrix(phi, ep.support);
    return detail::dist_to_domain_feats(f, store);
}

inline std::vector<double> distances_to_domains(const Episode& ep,
                                                const std::vector<PrototypeStore>& stores,
                                                const ParamVector& phi) {
    if (stores.empty()) throw ConfigError("distances_to_domains: no prototype stores");
    Matrix f = feature_matrix(phi, ep.support);
    std::vector<double> d(stores.size());
    for (std::size_t k = 0; k < stores.size(); ++k) d[k] = detail::dist_to_domain_feats(f, stores[k]);
    return d;
}

// Normalized inverse-distance weights. A zero distance is the limit case:
// all mass goes uniformly to the zero-distance domains.
inline DomainWeights weights_from_distances(const std::vector<double>& dists) {
    if (dists.empty()) throw ConfigError("weights_from_distances: no distances");
    std::size_t zeros = 0;
    for (double d : dists) {
        if (!(d >= 0.0) || !std::isfinite(d)) throw std::invalid_argument("distances must be finite and >= 0");
        if (d == 0.0) ++zeros;
    }
    DomainWeights w;
    w.alphas.assign(dists.size(), 0.0);
    if (zeros > 0) {
        for (std::size_t k = 0; k < dists.size(); ++k) {
            if (dists[k] == 0.0) w.alphas[k] = 1.0 / static_cast<double>(zeros);
        }
        return w;
    }
    double total = 0.0;
    for (double d : dists) total += 1.0 / d;
    for (std::size_t k = 0; k < dists.size(); ++k) w.alphas[k] = (1.0 / dists[k]) / total;
    return w;
}

inline DomainWeights domain_weights(const Episode& ep, const std::vector<PrototypeStore>& stores,
                                    const ParamVector& phi) {
    return weights_from_distances(distances_to_domains(ep, stores, phi));
}

inline DomainWeights uniform_weights(std::size_t m) {
    if (m == 0) throw ConfigError("uniform_weights: no domains");
    DomainWeights w;
    w.alphas.assign(m, 1.0 / static_cast<double>(m));
    return w;
}

} // namespace cosml
