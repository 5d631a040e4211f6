#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "cosml/errors.hpp"
#include "cosml/ndcore.hpp"
#include "cosml/rng.hpp"

namespace cosml {

enum class GeneratorKind { Blobs, Rings, Spirals, Stripes, Moons };

inline const char* generator_kind_name(GeneratorKind k) {
    switch (k) {
        case GeneratorKind::Blobs: return "blobs";
        case GeneratorKind::Rings: return "rings";
        case GeneratorKind::Spirals: return "spirals";
        case GeneratorKind::Stripes: return "stripes";
        case GeneratorKind::Moons: return "moons";
    }
    return "blobs";
}

inline GeneratorKind parse_generator_kind(const std::string& s) {
    if (s == "blobs") return GeneratorKind::Blobs;
    if (s == "rings") return GeneratorKind::Rings;
    if (s == "spirals") return GeneratorKind::Spirals;
    if (s == "stripes") return GeneratorKind::Stripes;
    if (s == "moons") return GeneratorKind::Moons;
    throw ConfigError("unknown generator_kind: " + s);
}

struct DomainSpec {
    int domain_id = 0;
    GeneratorKind kind = GeneratorKind::Blobs;
    int input_dim = 8;
    std::uint64_t embed_seed = 0;
    double noise_sigma = 0.1;
    int n_classes = 20;

    void validate() const {
        if (input_dim < 2) throw ConfigError("input_dim must be >= 2 (latent dim)");
        if (noise_sigma < 0.0) throw ConfigError("noise_sigma must be >= 0");
        if (n_classes < 1) throw ConfigError("n_classes must be >= 1");
    }
};

namespace detail {

// Constellations deliberately differ in scale across kinds (coarse, spread
// out structures vs tight, fine-grained ones), imitating the granularity
// shift between datasets.
inline double kind_scale(GeneratorKind k) {
    switch (k) {
        case GeneratorKind::Blobs: return 1.0;
        case GeneratorKind::Rings: return 0.5;
        case GeneratorKind::Spirals: return 1.5;
        case GeneratorKind::Stripes: return 0.75;
        case GeneratorKind::Moons: return 1.25;
    }
    return 1.0;
}

// Per-class latent structure in the 2-D latent plane. Each class is a fixed
// point; all intra-class spread comes from the Gaussian noise added after
// embedding, so the embedded point is the analytic class mean.
inline std::vector<std::array<double, 2>> latent_centers(const DomainSpec& spec) {
    const int n = spec.n_classes;
    std::vector<std::array<double, 2>> z(n);
    auto group_count = [n](int groups, int g) { return (n - g + groups - 1) / groups; };
    switch (spec.kind) {
        case GeneratorKind::Blobs: {
            RngStream rng = RngStream(spec.embed_seed).child("centers");
            for (int c = 0; c < n; ++c) z[c] = {rng.uniform(-1.4, 1.4), rng.uniform(-1.4, 1.4)};
            break;
        }
        case GeneratorKind::Rings: {
            const int rings = std::min(4, n);
            for (int c = 0; c < n; ++c) {
                int ring = c % rings;
                int j = c / rings;
                int m = group_count(rings, ring);
                double angle = 6.283185307179586 * j / m + 0.4 * ring;
                double radius = rings > 1 ? 0.35 + 1.05 * ring / (rings - 1.0) : 1.0;
                z[c] = {radius * std::cos(angle), radius * std::sin(angle)};
            }
            break;
        }
        case GeneratorKind::Spirals: {
            const int arms = std::min(2, n);
            for (int c = 0; c < n; ++c) {
                int arm = c % arms;
                int j = c / arms;
                int m = group_count(arms, arm);
                double s = m > 1 ? static_cast<double>(j) / (m - 1) : 0.5;
                double angle = 3.0 * 3.141592653589793 * s + 3.141592653589793 * arm;
                double radius = 0.25 + 1.15 * s;
                z[c] = {radius * std::cos(angle), radius * std::sin(angle)};
            }
            break;
        }
        case GeneratorKind::Stripes: {
            const int stripes = std::min(4, n);
            const double rot = 0.45;
            for (int c = 0; c < n; ++c) {
                int stripe = c % stripes;
                int j = c / stripes;
                int m = group_count(stripes, stripe);
                double u = m > 1 ? -1.3 + 2.6 * j / (m - 1.0) : 0.0;
                double y = stripes > 1 ? -1.2 + 2.4 * stripe / (stripes - 1.0) : 0.0;
                z[c] = {u * std::cos(rot) - y * std::sin(rot), u * std::sin(rot) + y * std::cos(rot)};
            }
            break;
        }
        case GeneratorKind::Moons: {
            const int arms = std::min(2, n);
            for (int c = 0; c < n; ++c) {
                int arm = c % arms;
                int j = c / arms;
                int m = group_count(arms, arm);
                double t = m > 1 ? 3.141592653589793 * j / (m - 1.0) : 1.5707963267948966;
                double zx, zy;
                if (arm == 0) {
                    zx = std::cos(t);
                    zy = std::sin(t);
                } else {
                    zx = 1.0 - std::cos(t);
                    zy = 0.5 - std::sin(t);
                }
                z[c] = {1.2 * (zx - 0.5), 1.2 * (zy - 0.25)};
            }
            break;
        }
    }
    const double scale = kind_scale(spec.kind);
    for (auto& p : z) {
        p[0] *= scale;
        p[1] *= scale;
    }
    return z;
}

} // namespace detail

// Class-conditional Gaussian samples around fixed embedded centers. The
// embedding is an orthonormal 2-column map fixed by embed_seed, so latent
// geometry carries into input space isometrically.
class DomainGenerator {
public:
    explicit DomainGenerator(const DomainSpec& spec) : spec_(spec) {
        spec_.validate();
        latents_ = detail::latent_centers(spec_);
        build_embedding();
    }

    const DomainSpec& spec() const { return spec_; }
    int domain_id() const { return spec_.domain_id; }
    int n_classes() const { return spec_.n_classes; }

    // Analytic class mean in input space.
    std::vector<double> class_center(int c) const {
        if (c < 0 || c >= spec_.n_classes) throw std::invalid_argument("class index out of range");
        const int d = spec_.input_dim;
        std::vector<double> x(d);
        for (int i = 0; i < d; ++i) x[i] = latents_[c][0] * q1_[i] + latents_[c][1] * q2_[i];
        return x;
    }

    std::vector<double> sample(int c, RngStream& rng) const {
        std::vector<double> x = class_center(c);
        for (double& xi : x) xi += spec_.noise_sigma * rng.normal();
        return x;
    }

private:
    void build_embedding() {
        const int d = spec_.input_dim;
        RngStream rng = RngStream(spec_.embed_seed).child("embed");
        q1_.assign(d, 0.0);
        q2_.assign(d, 0.0);
        double n1 = 0.0;
        do {
            for (double& v : q1_) v = rng.normal();
            n1 = 0.0;
            for (double v : q1_) n1 += v * v;
        } while (n1 < 1e-12);
        n1 = std::sqrt(n1);
        for (double& v : q1_) v /= n1;
        double n2 = 0.0;
        do {
            for (double& v : q2_) v = rng.normal();
            double dot = 0.0;
            for (int i = 0; i < d; ++i) dot += q1_[i] * q2_[i];
            for (int i = 0; i < d; ++i) q2_[i] -= dot * q1_[i];
            n2 = 0.0;
            for (double v : q2_) n2 += v * v;
        } while (n2 < 1e-12);
        n2 = std::sqrt(n2);
        for (double& v : q2_) v /= n2;
    }

    DomainSpec spec_;
    std::vector<std::array<double, 2>> latents_;
    std::vector<double> q1_, q2_;
};

inline DomainGenerator make_domain(const DomainSpec& spec) { return DomainGenerator(spec); }

struct LabeledExample {
    std::vector<double> x;
    int label = 0;
    int domain_tag = 0;
};

enum class EpisodeKind { Pure, Mixed, Novel };

// One N-way K-shot task. Episode labels are remapped to 0..N-1; the original
// class identities are discarded. domain_tag records each example's source.
struct Episode {
    int n_way = 0;
    int k_shot = 0;
    int q_queries = 0;
    EpisodeKind kind = EpisodeKind::Pure;
    std::vector<LabeledExample> support;
    std::vector<LabeledExample> query;
};

namespace detail {

inline Episode sample_single_domain_task(const DomainGenerator& gen, int n_way, int k_shot,
                                         int q_queries, RngStream& rng, EpisodeKind kind) {
    if (n_way < 1 || k_shot < 1 || q_queries < 1) {
        throw std::invalid_argument("episode shape values must be positive");
    }
    if (n_way > gen.n_classes()) {
        throw std::invalid_argument("n_way exceeds the domain's class pool");
    }
    std::vector<std::size_t> classes = rng.sample_without_replacement(gen.n_classes(), n_way);
    Episode ep;
    ep.n_way = n_way;
    ep.k_shot = k_shot;
    ep.q_queries = q_queries;
    ep.kind = kind;
    ep.support.reserve(static_cast<std::size_t>(n_way) * k_shot);
    ep.query.reserve(static_cast<std::size_t>(n_way) * q_queries);
    for (int j = 0; j < n_way; ++j) {
        for (int s = 0; s < k_shot; ++s) {
            ep.support.push_back({gen.sample(static_cast<int>(classes[j]), rng), j, gen.domain_id()});
        }
    }
    for (int j = 0; j < n_way; ++j) {
        for (int q = 0; q < q_queries; ++q) {
            ep.query.push_back({gen.sample(static_cast<int>(classes[j]), rng), j, gen.domain_id()});
        }
    }
    return ep;
}

} // namespace detail

inline Episode sample_pure_task(const DomainGenerator& gen, int n_way, int k_shot, int q_queries,
                                RngStream& rng) {
    return detail::sample_single_domain_task(gen, n_way, k_shot, q_queries, rng, EpisodeKind::Pure);
}

// Identical sampling to a pure task, tagged as a meta-test episode.
inline Episode sample_novel_task(const DomainGenerator& gen, int n_way, int k_shot, int q_queries,
                                 RngStream& rng) {
    return detail::sample_single_domain_task(gen, n_way, k_shot, q_queries, rng, EpisodeKind::Novel);
}

// Each episode-class draws its domain independently and uniformly; the
// assignment is resampled until at least two distinct domains appear
// (whenever M >= 2 and N >= 2). Classes are distinct within each domain.
inline Episode sample_mixed_task(const std::vector<DomainGenerator>& gens, int n_way, int k_shot,
                                 int q_queries, RngStream& rng) {
    if (gens.empty()) throw std::invalid_argument("sample_mixed_task: no domains");
    if (n_way < 1 || k_shot < 1 || q_queries < 1) {
        throw std::invalid_argument("episode shape values must be positive");
    }
    const std::size_t m = gens.size();
    std::vector<std::size_t> assign(n_way);
    bool ok = false;
    while (!ok) {
        for (int j = 0; j < n_way; ++j) assign[j] = rng.index(m);
        ok = true;
        if (m >= 2 && n_way >= 2) {
            bool two_distinct = false;
            for (int j = 1; j < n_way && !two_distinct; ++j) two_distinct = assign[j] != assign[0];
            ok = two_distinct;
        }
        if (ok) {
            std::map<std::size_t, int> usage;
            for (int j = 0; j < n_way; ++j) usage[assign[j]] += 1;
            for (const auto& [dom, cnt] : usage) {
                if (cnt > gens[dom].n_classes()) ok = false;
            }
        }
    }
    std::map<std::size_t, std::vector<bool>> used;
    std::vector<int> classes(n_way);
    for (int j = 0; j < n_way; ++j) {
        const DomainGenerator& gen = gens[assign[j]];
        std::vector<bool>& u = used.try_emplace(assign[j], gen.n_classes(), false).first->second;
        int c = static_cast<int>(rng.index(gen.n_classes()));
        while (u[c]) c = static_cast<int>(rng.index(gen.n_classes()));
        u[c] = true;
        classes[j] = c;
    }
    Episode ep;
    ep.n_way = n_way;
    ep.k_shot = k_shot;
    ep.q_queries = q_queries;
    ep.kind = EpisodeKind::Mixed;
    for (int j = 0; j < n_way; ++j) {
        const DomainGenerator& gen = gens[assign[j]];
        for (int s = 0; s < k_shot; ++s) ep.support.push_back({gen.sample(classes[j], rng), j, gen.domain_id()});
    }
    for (int j = 0; j < n_way; ++j) {
        const DomainGenerator& gen = gens[assign[j]];
        for (int q = 0; q < q_queries; ++q) ep.query.push_back({gen.sample(classes[j], rng), j, gen.domain_id()});
    }
    return ep;
}

struct Corpus {
    std::vector<std::pair<std::vector<double>, int>> examples;
    int n_classes = 0;
};

inline Corpus pretrain_corpus(const DomainGenerator& gen, int per_class, RngStream& rng) {
    if (per_class < 2) throw std::invalid_argument("pretrain_corpus: per_class must be >= 2");
    Corpus corpus;
    corpus.n_classes = gen.n_classes();
    corpus.examples.reserve(static_cast<std::size_t>(per_class) * gen.n_classes());
    for (int c = 0; c < gen.n_classes(); ++c) {
        for (int i = 0; i < per_class; ++i) corpus.examples.emplace_back(gen.sample(c, rng), c);
    }
    return corpus;
}

inline Matrix examples_matrix(const std::vector<LabeledExample>& ex) {
    if (ex.empty()) return Matrix{};
    Matrix x(ex.size(), ex.front().x.size());
    for (std::size_t r = 0; r < ex.size(); ++r) {
        std::copy(ex[r].x.begin(), ex[r].x.end(), x.row(r));
    }
    return x;
}

inline std::vector<int> example_labels(const std::vector<LabeledExample>& ex) {
    std::vector<int> y(ex.size());
    for (std::size_t r = 0; r < ex.size(); ++r) y[r] = ex[r].label;
    return y;
}

// Per-domain count of consumed examples; the no-leakage audit trail.
using DomainTally = std::map<int, long>;

inline void tally_episode(DomainTally& tally, const Episode& ep) {
    for (const LabeledExample& e : ep.support) tally[e.domain_tag] += 1;
    for (const LabeledExample& e : ep.query) tally[e.domain_tag] += 1;
}

} // namespace cosml
