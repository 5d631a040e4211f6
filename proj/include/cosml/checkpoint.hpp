#pragma once

#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "cosml/errors.hpp"
#include "cosml/metalearn.hpp"
#include "cosml/ndcore.hpp"
#include "cosml/prototypes.hpp"

namespace cosml {

// Decimal text with 17 significant digits round-trips an IEEE double exactly.
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

namespace detail {

inline void write_values(std::ostream& os, const std::vector<double>& v) {
    for (std::size_t i = 0; i < v.size(); ++i) {
        os << format_double(v[i]);
        os << ((i + 1) % 8 == 0 || i + 1 == v.size() ? '\n' : ' ');
    }
}

inline void read_values(std::istream& is, std::vector<double>& v, std::size_t n) {
    v.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!(is >> v[i])) throw ConfigError("checkpoint: truncated value block");
    }
}

inline void expect(std::istream& is, const char* keyword) {
    std::string tok;
    if (!(is >> tok) || tok != keyword) {
        throw ConfigError(std::string("checkpoint: expected '") + keyword + "', got '" + tok + "'");
    }
}

inline void write_manifest(std::ostream& os, const ShapeManifest& m) {
    os << "manifest " << m.layers.size() << ' ' << activation_name(m.hidden_activation) << ' '
       << m.split_index << '\n';
    for (const LayerDims& d : m.layers) os << "layer " << d.fan_in << ' ' << d.fan_out << '\n';
}

inline ShapeManifest read_manifest(std::istream& is) {
    expect(is, "manifest");
    std::size_t n = 0;
    std::string act;
    ShapeManifest m;
    if (!(is >> n >> act >> m.split_index)) throw ConfigError("checkpoint: bad manifest header");
    m.hidden_activation = parse_activation(act);
    m.layers.resize(n);
    for (std::size_t l = 0; l < n; ++l) {
        expect(is, "layer");
        if (!(is >> m.layers[l].fan_in >> m.layers[l].fan_out)) {
            throw ConfigError("checkpoint: bad layer line");
        }
    }
    m.validate();
    return m;
}

inline void write_param_block(std::ostream& os, const char* name, const ParamVector& p) {
    os << name << ' ' << p.first_layer << ' ' << p.last_layer << ' ' << p.values.size() << '\n';
    write_values(os, p.values);
}

inline ParamVector read_param_block(std::istream& is, const char* name, const ShapeManifest& m) {
    expect(is, name);
    ParamVector p;
    p.manifest = m;
    std::size_t count = 0;
    if (!(is >> p.first_layer >> p.last_layer >> count)) throw ConfigError("checkpoint: bad param header");
    if (count != m.param_count(p.first_layer, p.last_layer)) {
        throw ConfigError("checkpoint: param count does not match manifest range");
    }
    read_values(is, p.values, count);
    return p;
}

} // namespace detail

// Standalone ParamVector document: manifest plus the flat value array.
inline void write_param_vector(std::ostream& os, const ParamVector& p) {
    os << "cosml-params 1\n";
    detail::write_manifest(os, p.manifest);
    detail::write_param_block(os, "param", p);
    os << "end\n";
}

inline ParamVector read_param_vector(std::istream& is) {
    detail::expect(is, "cosml-params");
    int version = 0;
    if (!(is >> version) || version != 1) throw ConfigError("checkpoint: unsupported params version");
    ShapeManifest m = detail::read_manifest(is);
    ParamVector p = detail::read_param_block(is, "param", m);
    detail::expect(is, "end");
    return p;
}

// Everything a meta-test needs to run without retraining.
struct Checkpoint {
    std::string method;
    ShapeManifest manifest;
    ParamVector phi;
    std::vector<ParamVector> thetas;
    std::vector<AdamState> opt_states;
    std::vector<PrototypeStore> stores;
    long iteration = 0;
    std::string config_echo; // one line, JSON
};

inline void write_checkpoint(std::ostream& os, const Checkpoint& ck) {
    os << "cosml-checkpoint 1\n";
    os << "method " << ck.method << '\n';
    detail::write_manifest(os, ck.manifest);
    detail::write_param_block(os, "phi", ck.phi);
    os << "thetas " << ck.thetas.size() << '\n';
    for (const ParamVector& th : ck.thetas) detail::write_param_block(os, "theta", th);
    os << "optimizers " << ck.opt_states.size() << '\n';
    for (const AdamState& s : ck.opt_states) {
        os << "adam " << s.t << ' ' << format_double(s.lr) << ' ' << format_double(s.beta1) << ' '
           << format_double(s.beta2) << ' ' << format_double(s.eps) << ' ' << s.m.size() << '\n';
        detail::write_values(os, s.m);
        detail::write_values(os, s.v);
    }
    os << "stores " << ck.stores.size() << '\n';
    for (const PrototypeStore& st : ck.stores) {
        os << "store " << st.domain_id << ' ' << st.task_count << ' ' << st.example_count << ' '
           << st.max_task_prototypes << ' ' << st.domain_prototype.size() << ' '
           << st.task_prototypes.size() << '\n';
        detail::write_values(os, st.domain_prototype);
        for (const std::vector<double>& z : st.task_prototypes) detail::write_values(os, z);
    }
    os << "iteration " << ck.iteration << '\n';
    os << "config " << ck.config_echo << '\n';
    os << "end\n";
}

inline Checkpoint read_checkpoint(std::istream& is) {
    detail::expect(is, "cosml-checkpoint");
    int version = 0;
    if (!(is >> version) || version != 1) throw ConfigError("checkpoint: unsupported version");
    Checkpoint ck;
    detail::expect(is, "method");
    if (!(is >> ck.method)) throw ConfigError("checkpoint: missing method");
    ck.manifest = detail::read_manifest(is);
    ck.phi = detail::read_param_block(is, "phi", ck.manifest);
    detail::expect(is, "thetas");
    std::size_t n_thetas = 0;
    if (!(is >> n_thetas)) throw ConfigError("checkpoint: bad thetas count");
    for (std::size_t i = 0; i < n_thetas; ++i) {
        ck.thetas.push_back(detail::read_param_block(is, "theta", ck.manifest));
    }
    detail::expect(is, "optimizers");
    std::size_t n_opt = 0;
    if (!(is >> n_opt)) throw ConfigError("checkpoint: bad optimizer count");
    for (std::size_t i = 0; i < n_opt; ++i) {
        detail::expect(is, "adam");
        AdamState s;
        std::size_t count = 0;
        if (!(is >> s.t >> s.lr >> s.beta1 >> s.beta2 >> s.eps >> count)) {
            throw ConfigError("checkpoint: bad adam header");
        }
        detail::read_values(is, s.m, count);
        detail::read_values(is, s.v, count);
        ck.opt_states.push_back(std::move(s));
    }
    detail::expect(is, "stores");
    std::size_t n_stores = 0;
    if (!(is >> n_stores)) throw ConfigError("checkpoint: bad store count");
    for (std::size_t i = 0; i < n_stores; ++i) {
        detail::expect(is, "store");
        PrototypeStore st;
        std::size_t dim = 0, n_protos = 0;
        if (!(is >> st.domain_id >> st.task_count >> st.example_count >> st.max_task_prototypes >> dim >>
              n_protos)) {
            throw ConfigError("checkpoint: bad store header");
        }
        detail::read_values(is, st.domain_prototype, dim);
        st.task_prototypes.resize(n_protos);
        for (std::size_t z = 0; z < n_protos; ++z) detail::read_values(is, st.task_prototypes[z], dim);
        ck.stores.push_back(std::move(st));
    }
    detail::expect(is, "iteration");
    if (!(is >> ck.iteration)) throw ConfigError("checkpoint: bad iteration");
    detail::expect(is, "config");
    std::getline(is, ck.config_echo);
    if (!ck.config_echo.empty() && ck.config_echo.front() == ' ') ck.config_echo.erase(0, 1);
    detail::expect(is, "end");
    return ck;
}

// Rebuilds the meta-learner state from a checkpoint; domain ids come from
// the stores when present (pooled baselines have none).
inline MetaState meta_state_from(const Checkpoint& ck) {
    MetaState state;
    state.thetas = ck.thetas;
    state.opt_states = ck.opt_states;
    state.phi = ck.phi;
    state.iteration = ck.iteration;
    for (const PrototypeStore& s : ck.stores) state.domain_ids.push_back(s.domain_id);
    return state;
}

inline void save_checkpoint_file(const std::string& path, const Checkpoint& ck) {
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot open checkpoint for writing: " + path);
    write_checkpoint(os, ck);
    if (!os) throw std::runtime_error("failed writing checkpoint: " + path);
}

inline Checkpoint load_checkpoint_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open checkpoint: " + path);
    return read_checkpoint(is);
}

} // namespace cosml
