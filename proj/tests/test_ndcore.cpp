#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <sstream>

#include "cosml/checkpoint.hpp"
#include "cosml/ndcore.hpp"
#include "cosml/rng.hpp"
#include "test_util.hpp"

using namespace cosml;

namespace {

// Two-layer manifest whose second layer is used alone as a bare linear map.
ShapeManifest two_unit_layers() {
    ShapeManifest m;
    m.layers = {{1, 1}, {1, 1}};
    m.split_index = 1;
    return m;
}

ParamVector tiny_theta(const std::vector<double>& values) {
    ParamVector p = zero_params(two_unit_layers(), 1, 2);
    p.values = values;
    return p;
}

} // namespace

TEST_CASE("manifest validation") {
    ShapeManifest m = mlp_manifest(8, {16, 16}, 5, 1);
    REQUIRE(m.param_count() == 8 * 16 + 16 + 16 * 16 + 16 + 16 * 5 + 5);
    REQUIRE(m.feature_dim() == 16);

    ShapeManifest bad = m;
    bad.layers[1].fan_in = 7;
    REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);

    bad = m;
    bad.split_index = 0;
    REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
    bad.split_index = 3;
    REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("forward on zero parameters is zero") {
    ShapeManifest m = mlp_manifest(4, {8, 8}, 3, 1);
    ParamVector p = zero_params(m);
    std::vector<double> logits = forward(p, {1.0, -2.0, 0.5, 3.0});
    REQUIRE(logits.size() == 3);
    for (double v : logits) REQUIRE(v == 0.0);
}

TEST_CASE("forward affine arithmetic on a single linear layer") {
    ParamVector p = tiny_theta({2.0, 1.0}); // W=[[2]], b=[1]
    std::vector<double> logits = forward(p, {3.0});
    REQUIRE(logits.size() == 1);
    REQUIRE(logits[0] == 7.0);
}

TEST_CASE("forward matches the naive oracle") {
    RngStream rng(42);
    for (int trial = 0; trial < 30; ++trial) {
        ShapeManifest m = testutil::random_small_manifest(rng);
        ParamVector p = testutil::random_params(m, rng);
        std::vector<double> x(m.input_dim());
        for (double& v : x) v = rng.normal();
        std::vector<double> got = forward(p, x);
        std::vector<double> want = testutil::naive_forward(p, x);
        REQUIRE(testutil::max_abs_diff(got, want) < 1e-12);
    }
}

TEST_CASE("forward is deterministic") {
    RngStream rng(7);
    ShapeManifest m = mlp_manifest(6, {10, 10}, 4, 1);
    ParamVector p = glorot_init(m, rng);
    std::vector<double> x(6);
    for (double& v : x) v = rng.normal();
    std::vector<double> a = forward(p, x);
    std::vector<double> b = forward(p, x);
    REQUIRE(a == b);
}

TEST_CASE("forward rejects dimension mismatch") {
    ShapeManifest m = mlp_manifest(4, {8}, 3, 1);
    ParamVector p = zero_params(m);
    REQUIRE_THROWS_AS(forward(p, {1.0, 2.0}), std::invalid_argument);
}

TEST_CASE("features evaluates only the extractor layers") {
    // 2-layer net, split at 1, identity weights on layer 0.
    ShapeManifest m;
    m.layers = {{3, 3}, {3, 2}};
    m.split_index = 1;
    ParamVector full = zero_params(m);
    full.values[0] = 1.0; // W0 = I
    full.values[4] = 1.0;
    full.values[8] = 1.0;
    ParamVector phi = slice(full, 0, 1);

    std::vector<double> x{0.5, 1.5, 2.0};
    std::vector<double> f = features(phi, x);
    REQUIRE(f == x); // ReLU passes the positive input through

    SECTION("all-zero phi gives the zero feature vector") {
        ParamVector zphi = zero_params(m, 0, 1);
        std::vector<double> zf = features(zphi, {-1.0, 2.0, 3.0});
        REQUIRE(zf == std::vector<double>{0.0, 0.0, 0.0});
    }

    SECTION("random phi equals the truncated naive forward") {
        RngStream rng(5);
        for (int trial = 0; trial < 20; ++trial) {
            ShapeManifest rm = testutil::random_small_manifest(rng);
            ParamVector p = testutil::random_params(rm, rng);
            ParamVector rphi = slice(p, 0, rm.split_index);
            std::vector<double> rx(rm.input_dim());
            for (double& v : rx) v = rng.normal();
            REQUIRE(testutil::max_abs_diff(features(rphi, rx), testutil::naive_forward(rphi, rx)) <
                    1e-12);
        }
    }

    SECTION("features rejects a non-extractor range") {
        ParamVector theta = slice(full, 1, 2);
        REQUIRE_THROWS_AS(features(theta, {1.0, 2.0, 3.0}), std::invalid_argument);
    }
}

TEST_CASE("cross_entropy values") {
    SECTION("uniform logits give ln N") {
        for (std::size_t n : {2, 5, 9}) {
            std::vector<double> logits(n, 0.37);
            for (int label = 0; label < static_cast<int>(n); ++label) {
                REQUIRE(std::abs(cross_entropy(logits, label) - std::log(double(n))) < 1e-12);
            }
        }
    }
    SECTION("saturated correct logit gives ~zero loss") {
        std::vector<double> logits{1000.0, 0.0, 0.0, 0.0, 0.0};
        REQUIRE(std::abs(cross_entropy(logits, 0)) < 1e-9);
    }
    SECTION("hand-evaluated two-class case") {
        // -log softmax([1,2]) is ln(1+e) for label 0 and ln(1+e)-1 for label 1.
        REQUIRE(std::abs(cross_entropy({1.0, 2.0}, 1) - (std::log(1.0 + std::exp(1.0)) - 1.0)) <
                1e-12);
        REQUIRE(std::abs(cross_entropy({1.0, 2.0}, 1) - 0.31326168751822286) < 1e-12);
        REQUIRE(std::abs(cross_entropy({1.0, 2.0}, 0) - std::log(1.0 + std::exp(1.0))) < 1e-12);
    }
    SECTION("label out of range is rejected") {
        REQUIRE_THROWS_AS(cross_entropy({1.0, 2.0}, 2), std::invalid_argument);
        REQUIRE_THROWS_AS(cross_entropy({1.0, 2.0}, -1), std::invalid_argument);
    }
}

TEST_CASE("backward matches central finite differences") {
    RngStream rng(123);
    for (int trial = 0; trial < 20; ++trial) {
        ShapeManifest m = testutil::random_small_manifest(rng);
        ParamVector p = testutil::random_params(m, rng);
        Matrix x = testutil::random_batch(1 + rng.index(10), m.input_dim(), rng);
        std::vector<int> y = testutil::random_labels(x.rows, m.output_dim(), rng);
        BackwardResult res = backward(p, x, y, 0);
        Gradient fd = finite_diff_grad(p, x, y, 1e-5);
        REQUIRE(testutil::max_rel_err(res.grad.values, fd.values) < 1e-5);
        REQUIRE(std::abs(res.mean_loss - batch_loss(p, x, y)) < 1e-12);
    }
}

TEST_CASE("backward respects trainable_from") {
    RngStream rng(9);
    ShapeManifest m = mlp_manifest(3, {4, 4}, 2, 1);
    ParamVector p = testutil::random_params(m, rng);
    Matrix x = testutil::random_batch(6, 3, rng);
    std::vector<int> y = testutil::random_labels(6, 2, rng);

    SECTION("nothing trainable gives an all-zero gradient") {
        BackwardResult res = backward(p, x, y, m.layer_count());
        for (double g : res.grad.values) REQUIRE(g == 0.0);
    }

    SECTION("frozen prefix is exactly zero, the rest matches full backward") {
        BackwardResult full = backward(p, x, y, 0);
        BackwardResult part = backward(p, x, y, 1);
        std::size_t cut = m.layer_param_count(0);
        for (std::size_t i = 0; i < cut; ++i) REQUIRE(part.grad.values[i] == 0.0);
        for (std::size_t i = cut; i < full.grad.values.size(); ++i) {
            REQUIRE(part.grad.values[i] == full.grad.values[i]);
        }
    }
}

TEST_CASE("backward mean is invariant to duplicating the batch") {
    RngStream rng(31);
    ShapeManifest m = mlp_manifest(3, {5}, 3, 1);
    ParamVector p = testutil::random_params(m, rng);
    Matrix x = testutil::random_batch(4, 3, rng);
    std::vector<int> y = testutil::random_labels(4, 3, rng);

    Matrix x2(8, 3);
    std::vector<int> y2(8);
    for (std::size_t r = 0; r < 4; ++r) {
        for (int copy = 0; copy < 2; ++copy) {
            std::copy(x.row(r), x.row(r) + 3, x2.row(2 * r + copy));
            y2[2 * r + copy] = y[r];
        }
    }
    BackwardResult a = backward(p, x, y, 0);
    BackwardResult b = backward(p, x2, y2, 0);
    REQUIRE(std::abs(a.mean_loss - b.mean_loss) < 1e-15);
    REQUIRE(testutil::max_rel_err(a.grad.values, b.grad.values) < 1e-14);
}

TEST_CASE("backward rejects an empty batch") {
    ShapeManifest m = mlp_manifest(3, {5}, 3, 1);
    ParamVector p = zero_params(m);
    REQUIRE_THROWS_AS(backward(p, Matrix{}, {}, 0), std::invalid_argument);
}

TEST_CASE("central differences are exact on linear and quadratic functions") {
    // Sanity of the oracle's own method, on functions with known derivative.
    auto central = [](auto f, double t, double h) { return (f(t + h) - f(t - h)) / (2.0 * h); };
    auto linear = [](double t) { return 2.5 * t - 1.0; };
    auto quad = [](double t) { return t * t; };
    REQUIRE(std::abs(central(linear, 0.3, 1e-5) - 2.5) < 1e-10);
    REQUIRE(std::abs(central(quad, 3.0, 1e-5) - 6.0) < 1e-8);
}

TEST_CASE("finite_diff_grad rejects non-positive h") {
    ShapeManifest m = mlp_manifest(2, {2}, 2, 1);
    ParamVector p = zero_params(m);
    Matrix x(1, 2);
    REQUIRE_THROWS_AS(finite_diff_grad(p, x, {0}, 0.0), std::invalid_argument);
}

TEST_CASE("sgd_step") {
    ParamVector p = tiny_theta({1.0, 2.0});
    Gradient g{{0.5, -1.0}};

    SECTION("zero step size is a no-op") {
        ParamVector q = sgd_step(p, g, 0.0);
        REQUIRE(q.values == p.values);
    }
    SECTION("basic arithmetic") {
        ParamVector q = sgd_step(p, g, 0.01);
        REQUIRE(q.values[0] == Catch::Approx(0.995).margin(1e-15));
        REQUIRE(q.values[1] == Catch::Approx(2.01).margin(1e-15));
    }
    SECTION("step and inverse step round-trip") {
        RngStream rng(77);
        ShapeManifest m = mlp_manifest(3, {4}, 2, 1);
        ParamVector rp = testutil::random_params(m, rng);
        Gradient rg;
        rg.values.resize(rp.values.size());
        for (double& v : rg.values) v = rng.normal();
        ParamVector fwd = sgd_step(rp, rg, 0.01);
        ParamVector back = sgd_step(fwd, rg, -0.01);
        REQUIRE(testutil::max_abs_diff(back.values, rp.values) < 1e-15);
    }
    SECTION("input params are not modified") {
        sgd_step(p, g, 0.1);
        REQUIRE(p.values == std::vector<double>{1.0, 2.0});
    }
    SECTION("length mismatch is rejected") {
        Gradient bad{{1.0}};
        REQUIRE_THROWS_AS(sgd_step(p, bad, 0.1), std::invalid_argument);
    }
}

TEST_CASE("adam_step") {
    SECTION("zero gradient from a fresh state leaves params unchanged") {
        ParamVector p = tiny_theta({-5.0, 2.5});
        AdamState s = AdamState::fresh(2);
        ParamVector q = adam_step(s, p, Gradient{{0.0, 0.0}});
        REQUIRE(q.values == p.values);
        REQUIRE(s.t == 1);
    }
    SECTION("hand-computed first recurrence") {
        ShapeManifest m = two_unit_layers();
        ParamVector p = zero_params(m, 1, 2);
        p.values = {0.0, 0.0};
        AdamState s = AdamState::fresh(2);
        ParamVector q = adam_step(s, p, Gradient{{0.5, 0.0}});
        // mhat = 0.5, vhat = 0.25, update = -0.001 * 0.5 / (0.5 + 1e-8)
        double expect = -0.001 * 0.5 / (0.5 + 1e-8);
        REQUIRE(q.values[0] == Catch::Approx(expect).margin(1e-15));
        REQUIRE(q.values[0] == Catch::Approx(-0.0009999999).margin(1e-9));
        REQUIRE(q.values[1] == 0.0);
    }
    SECTION("first step is invariant to positive gradient rescaling") {
        ParamVector p = tiny_theta({0.3, -0.4});
        Gradient g{{0.2, -0.7}};
        Gradient g10{{2.0, -7.0}};
        AdamState s1 = AdamState::fresh(2);
        AdamState s2 = AdamState::fresh(2);
        ParamVector a = adam_step(s1, p, g);
        ParamVector b = adam_step(s2, p, g10);
        REQUIRE(testutil::max_abs_diff(a.values, b.values) < 1e-9);
    }
    SECTION("two steps follow the closed-form recurrence") {
        ParamVector p = tiny_theta({1.0, -1.0});
        Gradient g{{0.1, -0.2}};
        AdamState s = AdamState::fresh(2);
        ParamVector q1 = adam_step(s, p, g);
        ParamVector q2 = adam_step(s, q1, g);
        for (std::size_t i = 0; i < 2; ++i) {
            double gi = g.values[i];
            double m1 = 0.1 * gi, v1 = 0.001 * gi * gi;
            double m2 = 0.9 * m1 + 0.1 * gi, v2 = 0.999 * v1 + 0.001 * gi * gi;
            double p1 = p.values[i] - 0.001 * (m1 / (1 - 0.9)) / (std::sqrt(v1 / (1 - 0.999)) + 1e-8);
            double p2 = p1 - 0.001 * (m2 / (1 - 0.81)) / (std::sqrt(v2 / (1 - 0.999 * 0.999)) + 1e-8);
            REQUIRE(q2.values[i] == Catch::Approx(p2).margin(1e-12));
        }
        REQUIRE(s.t == 2);
    }
}

TEST_CASE("blend") {
    ShapeManifest m = two_unit_layers();
    auto pv = [&](double a, double b) { return tiny_theta({a, b}); };

    SECTION("dyadic convex combination of identical params is exact") {
        ParamVector v = pv(0.1, -2.7);
        ParamVector out = blend({v, v}, {0.5, 0.5});
        REQUIRE(out.values == v.values);
        ParamVector out3 = blend({v, v, v}, {0.25, 0.25, 0.5});
        REQUIRE(out3.values == v.values);
    }
    SECTION("general convex combination of identical params is a fixed point") {
        RngStream rng(3);
        ParamVector v = pv(rng.normal(), rng.normal());
        double w0 = 0.3137;
        ParamVector out = blend({v, v}, {w0, 1.0 - w0});
        REQUIRE(testutil::max_abs_diff(out.values, v.values) < 1e-12);
    }
    SECTION("midpoint arithmetic") {
        ParamVector out = blend({pv(0, 0), pv(2, 4)}, {0.5, 0.5});
        REQUIRE(out.values == std::vector<double>{1.0, 2.0});
    }
    SECTION("three-way weighted sum") {
        ParamVector out = blend({pv(1, 0), pv(0, 1), pv(1, 1)}, {0.2, 0.3, 0.5});
        REQUIRE(out.values[0] == Catch::Approx(0.7).margin(1e-12));
        REQUIRE(out.values[1] == Catch::Approx(0.8).margin(1e-12));
    }
    SECTION("one-hot weights return the selected vector bit-exactly") {
        RngStream rng(11);
        std::vector<ParamVector> ps;
        for (int k = 0; k < 4; ++k) ps.push_back(pv(rng.normal() * 1e-3, rng.normal() * 1e3));
        ps[2].values[0] = -0.0; // signed zero must survive
        for (std::size_t k = 0; k < ps.size(); ++k) {
            std::vector<double> w(ps.size(), 0.0);
            w[k] = 1.0;
            ParamVector out = blend(ps, w);
            REQUIRE(std::memcmp(out.values.data(), ps[k].values.data(),
                                sizeof(double) * out.values.size()) == 0);
        }
    }
    SECTION("blend is linear in the weights") {
        RngStream rng(13);
        std::vector<ParamVector> ps;
        for (int k = 0; k < 3; ++k) ps.push_back(pv(rng.normal(), rng.normal()));
        std::vector<double> w1{0.3, -0.1, 0.5}, w2{1.2, 0.4, -0.9};
        double a = 0.7, b = -1.3;
        std::vector<double> wc(3);
        for (int i = 0; i < 3; ++i) wc[i] = a * w1[i] + b * w2[i];
        ParamVector lhs = blend(ps, wc);
        ParamVector r1 = blend(ps, w1);
        ParamVector r2 = blend(ps, w2);
        for (std::size_t i = 0; i < lhs.values.size(); ++i) {
            REQUIRE(lhs.values[i] ==
                    Catch::Approx(a * r1.values[i] + b * r2.values[i]).margin(1e-12));
        }
    }
    SECTION("manifest mismatch is rejected") {
        ShapeManifest other = mlp_manifest(2, {1}, 1, 1); // same value count, different dims
        ParamVector foreign = zero_params(other, 1, 2);
        REQUIRE_THROWS_AS(blend({pv(0, 0), foreign}, {0.5, 0.5}), std::invalid_argument);
    }
    SECTION("empty list and bad weights are rejected") {
        REQUIRE_THROWS_AS(blend({}, {}), std::invalid_argument);
        REQUIRE_THROWS_AS(blend({pv(0, 0)}, {std::nan("")}), std::invalid_argument);
    }
}

TEST_CASE("slice, concat and rebind") {
    RngStream rng(21);
    ShapeManifest m = mlp_manifest(4, {6, 6}, 3, 2);
    ParamVector full = glorot_init(m, rng);
    ParamVector phi = slice(full, 0, 2);
    ParamVector theta = slice(full, 2, 3);
    REQUIRE(phi.values.size() + theta.values.size() == full.values.size());
    ParamVector joined = concat(phi, theta);
    REQUIRE(joined.values == full.values);

    ShapeManifest wider_head = mlp_manifest(4, {6, 6}, 7, 2);
    ParamVector rphi = rebind(phi, wider_head);
    REQUIRE(rphi.values == phi.values);
    REQUIRE(rphi.manifest == wider_head);

    ShapeManifest incompatible = mlp_manifest(4, {5, 6}, 3, 2);
    REQUIRE_THROWS_AS(rebind(phi, incompatible), std::invalid_argument);
    REQUIRE_THROWS_AS(concat(theta, phi), std::invalid_argument);
}

TEST_CASE("param vector text round-trip is value-exact") {
    RngStream rng(1234);
    ShapeManifest m = mlp_manifest(5, {7, 6}, 4, 2);
    ParamVector p = glorot_init(m, rng);
    p.values[0] = 1e-300;
    p.values[1] = -9.87654321234567e+250;
    p.values[2] = 3.0000000000000004;

    std::stringstream ss;
    write_param_vector(ss, p);
    ParamVector q = read_param_vector(ss);
    REQUIRE(q.manifest == p.manifest);
    REQUIRE(q.first_layer == p.first_layer);
    REQUIRE(q.last_layer == p.last_layer);
    REQUIRE(q.values == p.values);
}
