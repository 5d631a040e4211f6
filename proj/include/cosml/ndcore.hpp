#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "cosml/rng.hpp"

namespace cosml {

enum class Activation { Relu, Tanh, Identity };

inline const char* activation_name(Activation a) {
    switch (a) {
        case Activation::Relu: return "relu";
        case Activation::Tanh: return "tanh";
        case Activation::Identity: return "identity";
    }
    return "relu";
}

inline Activation parse_activation(const std::string& s) {
    if (s == "relu") return Activation::Relu;
    if (s == "tanh") return Activation::Tanh;
    if (s == "identity") return Activation::Identity;
    throw std::invalid_argument("unknown activation: " + s);
}

struct LayerDims {
    std::size_t fan_in = 0;
    std::size_t fan_out = 0;
    bool operator==(const LayerDims&) const = default;
};

// Describes a full feed-forward net. Hidden layers use hidden_activation,
// the final layer is linear. Layers [0, split_index) form the feature
// extractor; layers [split_index, n) are the task subnetwork.
struct ShapeManifest {
    std::vector<LayerDims> layers;
    Activation hidden_activation = Activation::Relu;
    std::size_t split_index = 1;

    std::size_t layer_count() const { return layers.size(); }
    std::size_t input_dim() const { return layers.front().fan_in; }
    std::size_t output_dim() const { return layers.back().fan_out; }
    std::size_t feature_dim() const { return layers[split_index - 1].fan_out; }

    std::size_t layer_param_count(std::size_t layer) const {
        const LayerDims& d = layers[layer];
        return d.fan_in * d.fan_out + d.fan_out;
    }

    std::size_t param_count(std::size_t first_layer, std::size_t last_layer) const {
        std::size_t n = 0;
        for (std::size_t l = first_layer; l < last_layer; ++l) n += layer_param_count(l);
        return n;
    }

    std::size_t param_count() const { return param_count(0, layers.size()); }

    void validate() const {
        if (layers.empty()) throw std::invalid_argument("manifest has no layers");
        for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
            if (layers[l].fan_out != layers[l + 1].fan_in) {
                throw std::invalid_argument("manifest layers " + std::to_string(l) + " and " +
                                            std::to_string(l + 1) + " are dimension-incompatible");
            }
        }
        if (split_index == 0 || split_index >= layers.size()) {
            throw std::invalid_argument("split_index must lie strictly inside the layer stack");
        }
    }

    bool operator==(const ShapeManifest&) const = default;
};

inline ShapeManifest mlp_manifest(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                                  std::size_t n_out, std::size_t split_index,
                                  Activation act = Activation::Relu) {
    ShapeManifest m;
    m.hidden_activation = act;
    m.split_index = split_index;
    std::size_t prev = input_dim;
    for (std::size_t w : hidden) {
        m.layers.push_back({prev, w});
        prev = w;
    }
    m.layers.push_back({prev, n_out});
    m.validate();
    return m;
}

// The activation applied to the output of an absolute layer index.
inline Activation layer_activation(const ShapeManifest& m, std::size_t layer) {
    return layer + 1 == m.layer_count() ? Activation::Identity : m.hidden_activation;
}

// Flat parameters covering the contiguous layer range [first_layer, last_layer)
// of a manifest. Per layer the weight matrix (row-major, fan_out x fan_in)
// is stored first, then the bias.
struct ParamVector {
    ShapeManifest manifest;
    std::size_t first_layer = 0;
    std::size_t last_layer = 0;
    std::vector<double> values;

    std::size_t covered_layers() const { return last_layer - first_layer; }

    std::size_t layer_offset(std::size_t layer) const {
        return manifest.param_count(first_layer, layer);
    }

    bool same_shape(const ParamVector& other) const {
        return manifest == other.manifest && first_layer == other.first_layer &&
               last_layer == other.last_layer;
    }
};

struct Gradient {
    std::vector<double> values;
};

inline void check_finite(const std::vector<double>& v, const char* what) {
    for (double x : v) {
        if (!std::isfinite(x)) throw std::runtime_error(std::string(what) + " contains a non-finite value");
    }
}

inline ParamVector zero_params(const ShapeManifest& m, std::size_t first_layer, std::size_t last_layer) {
    m.validate();
    if (first_layer >= last_layer || last_layer > m.layer_count()) {
        throw std::invalid_argument("bad layer range for ParamVector");
    }
    return ParamVector{m, first_layer, last_layer,
                       std::vector<double>(m.param_count(first_layer, last_layer), 0.0)};
}

inline ParamVector zero_params(const ShapeManifest& m) { return zero_params(m, 0, m.layer_count()); }

// Uniform in +-sqrt(6/(fan_in+fan_out)) per layer; biases start at zero.
inline ParamVector glorot_init(const ShapeManifest& m, std::size_t first_layer, std::size_t last_layer,
                               RngStream& rng) {
    ParamVector p = zero_params(m, first_layer, last_layer);
    for (std::size_t l = first_layer; l < last_layer; ++l) {
        const LayerDims& d = m.layers[l];
        double bound = std::sqrt(6.0 / static_cast<double>(d.fan_in + d.fan_out));
        double* w = p.values.data() + p.layer_offset(l);
        for (std::size_t i = 0; i < d.fan_in * d.fan_out; ++i) w[i] = rng.uniform(-bound, bound);
    }
    return p;
}

inline ParamVector glorot_init(const ShapeManifest& m, RngStream& rng) {
    return glorot_init(m, 0, m.layer_count(), rng);
}

inline ParamVector slice(const ParamVector& p, std::size_t first_layer, std::size_t last_layer) {
    if (first_layer < p.first_layer || last_layer > p.last_layer || first_layer >= last_layer) {
        throw std::invalid_argument("slice range outside covered layers");
    }
    ParamVector out;
    out.manifest = p.manifest;
    out.first_layer = first_layer;
    out.last_layer = last_layer;
    std::size_t lo = p.layer_offset(first_layer);
    std::size_t hi = p.layer_offset(last_layer);
    out.values.assign(p.values.begin() + lo, p.values.begin() + hi);
    return out;
}

inline ParamVector concat(const ParamVector& a, const ParamVector& b) {
    if (a.manifest != b.manifest || a.last_layer != b.first_layer) {
        throw std::invalid_argument("concat requires adjacent ranges of one manifest");
    }
    ParamVector out;
    out.manifest = a.manifest;
    out.first_layer = a.first_layer;
    out.last_layer = b.last_layer;
    out.values = a.values;
    out.values.insert(out.values.end(), b.values.begin(), b.values.end());
    return out;
}

// Re-hang a ParamVector on another manifest whose covered layers have the
// same dims (used to move a pretrained feature extractor onto a net with a
// different classifier head).
inline ParamVector rebind(const ParamVector& p, const ShapeManifest& m) {
    if (p.last_layer > m.layer_count()) throw std::invalid_argument("rebind: range exceeds manifest");
    for (std::size_t l = p.first_layer; l < p.last_layer; ++l) {
        if (!(m.layers[l] == p.manifest.layers[l])) {
            throw std::invalid_argument("rebind: layer dims differ at layer " + std::to_string(l));
        }
    }
    if (m.hidden_activation != p.manifest.hidden_activation) {
        throw std::invalid_argument("rebind: hidden activation differs");
    }
    ParamVector out = p;
    out.manifest = m;
    return out;
}

// Row-major dense matrix; one row per example.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double* row(std::size_t r) { return data.data() + r * cols; }
    const double* row(std::size_t r) const { return data.data() + r * cols; }
    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

// Post-activation outputs per layer; activations[0] is the input batch.
struct ForwardCache {
    std::vector<Matrix> activations;
};

inline void apply_activation(Matrix& z, Activation act) {
    switch (act) {
        case Activation::Relu:
            for (double& x : z.data) x = x > 0.0 ? x : 0.0;
            break;
        case Activation::Tanh:
            for (double& x : z.data) x = std::tanh(x);
            break;
        case Activation::Identity:
            break;
    }
}

inline Matrix forward_batch(const ParamVector& p, const Matrix& x, ForwardCache* cache = nullptr) {
    const ShapeManifest& m = p.manifest;
    if (x.cols != m.layers[p.first_layer].fan_in) {
        throw std::invalid_argument("forward: input dim " + std::to_string(x.cols) + " != fan_in " +
                                    std::to_string(m.layers[p.first_layer].fan_in));
    }
    Matrix a = x;
    if (cache) {
        cache->activations.clear();
        cache->activations.push_back(a);
    }
    for (std::size_t l = p.first_layer; l < p.last_layer; ++l) {
        const LayerDims& d = m.layers[l];
        const double* w = p.values.data() + p.layer_offset(l);
        const double* b = w + d.fan_in * d.fan_out;
        Matrix z(a.rows, d.fan_out);
        for (std::size_t r = 0; r < a.rows; ++r) {
            const double* ar = a.row(r);
            double* zr = z.row(r);
            for (std::size_t o = 0; o < d.fan_out; ++o) {
                const double* wo = w + o * d.fan_in;
                double acc = b[o];
                for (std::size_t i = 0; i < d.fan_in; ++i) acc += wo[i] * ar[i];
                zr[o] = acc;
            }
        }
        apply_activation(z, layer_activation(m, l));
        a = std::move(z);
        if (cache) cache->activations.push_back(a);
    }
    return a;
}

// Evaluates the covered layer range on one input vector. For a full-range
// ParamVector the result is the class logits.
inline std::vector<double> forward(const ParamVector& p, const std::vector<double>& x) {
    Matrix in(1, x.size());
    in.data = x;
    Matrix out = forward_batch(p, in);
    return out.data;
}

// g_Phi(x): the frozen feature extractor, i.e. the first split_index layers.
inline std::vector<double> features(const ParamVector& phi, const std::vector<double>& x) {
    if (phi.first_layer != 0 || phi.last_layer != phi.manifest.split_index) {
        throw std::invalid_argument("features: phi must cover layers [0, split_index)");
    }
    return forward(phi, x);
}

inline double cross_entropy(const std::vector<double>& logits, int label) {
    if (label < 0 || static_cast<std::size_t>(label) >= logits.size()) {
        throw std::invalid_argument("cross_entropy: label out of range");
    }
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double sum = 0.0;
    for (double v : logits) sum += std::exp(v - mx);
    return mx + std::log(sum) - logits[static_cast<std::size_t>(label)];
}

// Mean cross-entropy of the range output over a batch; no gradient.
inline double batch_loss(const ParamVector& p, const Matrix& x, const std::vector<int>& labels) {
    if (x.rows == 0) throw std::invalid_argument("batch_loss: empty batch");
    Matrix out = forward_batch(p, x);
    double loss = 0.0;
    for (std::size_t r = 0; r < out.rows; ++r) {
        std::vector<double> row(out.row(r), out.row(r) + out.cols);
        loss += cross_entropy(row, labels[r]);
    }
    return loss / static_cast<double>(out.rows);
}

struct BackwardResult {
    double mean_loss = 0.0;
    Gradient grad;
};

// Exact gradient of the mean cross-entropy over the batch w.r.t. every
// parameter of layers >= trainable_from; entries below stay exactly zero.
inline BackwardResult backward(const ParamVector& p, const Matrix& x, const std::vector<int>& labels,
                               std::size_t trainable_from) {
    if (x.rows == 0) throw std::invalid_argument("backward: empty batch");
    if (labels.size() != x.rows) throw std::invalid_argument("backward: labels/batch size mismatch");

    const ShapeManifest& m = p.manifest;
    ForwardCache cache;
    Matrix logits = forward_batch(p, x, &cache);
    const std::size_t n = x.rows;
    const std::size_t n_out = logits.cols;

    BackwardResult res;
    res.grad.values.assign(p.values.size(), 0.0);

    // delta = (softmax - onehot) / n at the output.
    Matrix delta(n, n_out);
    double loss = 0.0;
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r) {
        const double* zr = logits.row(r);
        int label = labels[r];
        if (label < 0 || static_cast<std::size_t>(label) >= n_out) {
            throw std::invalid_argument("backward: label out of range");
        }
        double mx = zr[0];
        for (std::size_t o = 1; o < n_out; ++o) mx = std::max(mx, zr[o]);
        double sum = 0.0;
        for (std::size_t o = 0; o < n_out; ++o) sum += std::exp(zr[o] - mx);
        loss += mx + std::log(sum) - zr[static_cast<std::size_t>(label)];
        double* dr = delta.row(r);
        for (std::size_t o = 0; o < n_out; ++o) dr[o] = std::exp(zr[o] - mx) / sum * inv_n;
        dr[static_cast<std::size_t>(label)] -= inv_n;
    }
    res.mean_loss = loss * inv_n;

    const std::size_t stop = std::max(trainable_from, p.first_layer);
    for (std::size_t l = p.last_layer; l-- > stop;) {
        const LayerDims& d = m.layers[l];
        const Matrix& a_prev = cache.activations[l - p.first_layer];
        const double* w = p.values.data() + p.layer_offset(l);
        double* gw = res.grad.values.data() + p.layer_offset(l);
        double* gb = gw + d.fan_in * d.fan_out;
        for (std::size_t r = 0; r < n; ++r) {
            const double* dr = delta.row(r);
            const double* ar = a_prev.row(r);
            for (std::size_t o = 0; o < d.fan_out; ++o) {
                double dv = dr[o];
                if (dv == 0.0) continue;
                gb[o] += dv;
                double* gwo = gw + o * d.fan_in;
                for (std::size_t i = 0; i < d.fan_in; ++i) gwo[i] += dv * ar[i];
            }
        }
        if (l > stop) {
            Matrix nd(n, d.fan_in);
            for (std::size_t r = 0; r < n; ++r) {
                const double* dr = delta.row(r);
                double* ndr = nd.row(r);
                for (std::size_t o = 0; o < d.fan_out; ++o) {
                    double dv = dr[o];
                    if (dv == 0.0) continue;
                    const double* wo = w + o * d.fan_in;
                    for (std::size_t i = 0; i < d.fan_in; ++i) ndr[i] += dv * wo[i];
                }
            }
            switch (layer_activation(m, l - 1)) {
                case Activation::Relu:
                    for (std::size_t r = 0; r < n; ++r) {
                        const double* ar = a_prev.row(r);
                        double* ndr = nd.row(r);
                        for (std::size_t i = 0; i < d.fan_in; ++i) {
                            if (ar[i] <= 0.0) ndr[i] = 0.0;
                        }
                    }
                    break;
                case Activation::Tanh:
                    for (std::size_t r = 0; r < n; ++r) {
                        const double* ar = a_prev.row(r);
                        double* ndr = nd.row(r);
                        for (std::size_t i = 0; i < d.fan_in; ++i) ndr[i] *= 1.0 - ar[i] * ar[i];
                    }
                    break;
                case Activation::Identity:
                    break;
            }
            delta = std::move(nd);
        }
    }
    return res;
}

// Central-difference gradient of the same mean loss; the test oracle.
inline Gradient finite_diff_grad(const ParamVector& p, const Matrix& x, const std::vector<int>& labels,
                                 double h) {
    if (h <= 0.0) throw std::invalid_argument("finite_diff_grad: h must be positive");
    Gradient g;
    g.values.assign(p.values.size(), 0.0);
    ParamVector probe = p;
    for (std::size_t i = 0; i < p.values.size(); ++i) {
        probe.values[i] = p.values[i] + h;
        double up = batch_loss(probe, x, labels);
        probe.values[i] = p.values[i] - h;
        double dn = batch_loss(probe, x, labels);
        probe.values[i] = p.values[i];
        g.values[i] = (up - dn) / (2.0 * h);
    }
    return g;
}

inline ParamVector sgd_step(const ParamVector& p, const Gradient& g, double step_size) {
    if (g.values.size() != p.values.size()) throw std::invalid_argument("sgd_step: length mismatch");
    ParamVector out = p;
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = p.values[i] - step_size * g.values[i];
    check_finite(out.values, "sgd_step result");
    return out;
}

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    long t = 0;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    static AdamState fresh(std::size_t n, double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999,
                           double eps = 1e-8) {
        AdamState s;
        s.m.assign(n, 0.0);
        s.v.assign(n, 0.0);
        s.lr = lr;
        s.beta1 = beta1;
        s.beta2 = beta2;
        s.eps = eps;
        return s;
    }
};

// Standard Adam with bias correction; mutates the state, returns new params.
inline ParamVector adam_step(AdamState& s, const ParamVector& p, const Gradient& g) {
    if (s.m.size() != p.values.size() || g.values.size() != p.values.size()) {
        throw std::invalid_argument("adam_step: length mismatch");
    }
    s.t += 1;
    const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.t));
    const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.t));
    ParamVector out = p;
    for (std::size_t i = 0; i < p.values.size(); ++i) {
        double gi = g.values[i];
        s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * gi;
        s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * gi * gi;
        double mhat = s.m[i] / bc1;
        double vhat = s.v[i] / bc2;
        out.values[i] = p.values[i] - s.lr * mhat / (std::sqrt(vhat) + s.eps);
    }
    check_finite(out.values, "adam_step result");
    return out;
}

// out[i] = sum_k weights[k] * params[k][i]. A one-hot weight vector returns
// the selected ParamVector bit-exactly (zero weights contribute no term).
inline ParamVector blend(const std::vector<ParamVector>& params, const std::vector<double>& weights) {
    if (params.empty()) throw std::invalid_argument("blend: empty parameter list");
    if (weights.size() != params.size()) throw std::invalid_argument("blend: weight count mismatch");
    for (double w : weights) {
        if (!std::isfinite(w)) throw std::invalid_argument("blend: non-finite weight");
    }
    for (const ParamVector& p : params) {
        if (!p.same_shape(params.front())) throw std::invalid_argument("blend: manifest mismatch");
    }
    ParamVector out = params.front();
    std::fill(out.values.begin(), out.values.end(), 0.0);
    bool started = false;
    for (std::size_t k = 0; k < params.size(); ++k) {
        double w = weights[k];
        if (w == 0.0) continue;
        const std::vector<double>& src = params[k].values;
        if (!started) {
            for (std::size_t i = 0; i < src.size(); ++i) out.values[i] = w * src[i];
            started = true;
        } else {
            for (std::size_t i = 0; i < src.size(); ++i) out.values[i] += w * src[i];
        }
    }
    check_finite(out.values, "blend result");
    return out;
}

} // namespace cosml
