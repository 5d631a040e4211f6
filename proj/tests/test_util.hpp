#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "cosml/ndcore.hpp"
#include "cosml/rng.hpp"

namespace testutil {

// Independent straight-loop re-implementation of the layered affine+ReLU
// evaluation. Indexes weights column-first on purpose so it shares no code
// path or loop order with the library.
inline std::vector<double> naive_forward(const cosml::ParamVector& p, const std::vector<double>& x) {
    std::vector<double> a = x;
    std::size_t offset = 0;
    for (std::size_t l = p.first_layer; l < p.last_layer; ++l) {
        const std::size_t fi = p.manifest.layers[l].fan_in;
        const std::size_t fo = p.manifest.layers[l].fan_out;
        std::vector<double> z(fo, 0.0);
        for (std::size_t i = 0; i < fi; ++i) {
            for (std::size_t o = 0; o < fo; ++o) z[o] += p.values[offset + o * fi + i] * a[i];
        }
        for (std::size_t o = 0; o < fo; ++o) z[o] += p.values[offset + fi * fo + o];
        const bool last = l + 1 == p.manifest.layer_count();
        if (!last) {
            switch (p.manifest.hidden_activation) {
                case cosml::Activation::Relu:
                    for (double& v : z) v = v > 0.0 ? v : 0.0;
                    break;
                case cosml::Activation::Tanh:
                    for (double& v : z) v = std::tanh(v);
                    break;
                case cosml::Activation::Identity:
                    break;
            }
        }
        offset += fi * fo + fo;
        a = std::move(z);
    }
    return a;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// Relative to max(1, |grad|), per the gradient-exactness contract.
inline double max_rel_err(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double scale = std::max(1.0, std::max(std::abs(a[i]), std::abs(b[i])));
        m = std::max(m, std::abs(a[i] - b[i]) / scale);
    }
    return m;
}

// Small random net of 1..3 layers and at most ~50 parameters.
inline cosml::ShapeManifest random_small_manifest(cosml::RngStream& rng) {
    std::size_t n_layers = 2 + rng.index(2); // 2 or 3 layers so a split exists
    std::vector<std::size_t> dims(n_layers + 1);
    for (std::size_t& d : dims) d = 1 + rng.index(4);
    cosml::ShapeManifest m;
    for (std::size_t l = 0; l < n_layers; ++l) m.layers.push_back({dims[l], dims[l + 1]});
    m.split_index = 1 + rng.index(n_layers - 1);
    m.validate();
    return m;
}

inline cosml::ParamVector random_params(const cosml::ShapeManifest& m, cosml::RngStream& rng,
                                        double scale = 1.0) {
    cosml::ParamVector p = cosml::zero_params(m);
    for (double& v : p.values) v = rng.uniform(-scale, scale);
    return p;
}

inline cosml::Matrix random_batch(std::size_t rows, std::size_t cols, cosml::RngStream& rng) {
    cosml::Matrix x(rows, cols);
    for (double& v : x.data) v = rng.normal();
    return x;
}

inline std::vector<int> random_labels(std::size_t rows, std::size_t n_classes, cosml::RngStream& rng) {
    std::vector<int> y(rows);
    for (int& v : y) v = static_cast<int>(rng.index(n_classes));
    return y;
}

} // namespace testutil
