#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "nfmu/net.hpp"

#include <cmath>
#include <cstdio>
#include <random>

using namespace nfmu;
using doctest::Approx;

namespace {

// scalar objective L = sum(c .* out); returns analytic and FD parameter
// gradients plus the input gradient pair
struct GradCheck {
    Vec analytic_params, fd_params;
    Vec analytic_input, fd_input;
};

GradCheck gradient_check(const NetSpec& spec, const ParamVector& params, const Vec& input,
                         const Vec& side, const Vec& c) {
    GradCheck g;
    ForwardRecord rec;
    forward(spec, params, input, side, rec);
    Vec grad_side;
    g.analytic_params.assign(params.values.size(), 0.0);
    backward(spec, params, rec, c, g.analytic_input, grad_side, g.analytic_params);

    const Real eps = 1e-6;
    auto loss = [&](const ParamVector& p, const Vec& in) {
        ForwardRecord r;
        const Vec& out = forward(spec, p, in, side, r);
        Real acc = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) {
            acc += c[i] * out[i];
        }
        return acc;
    };
    g.fd_params.resize(params.values.size());
    ParamVector p = params;
    for (std::size_t i = 0; i < p.values.size(); ++i) {
        const Real v = p.values[i];
        p.values[i] = v + eps;
        const Real lp = loss(p, input);
        p.values[i] = v - eps;
        const Real lm = loss(p, input);
        p.values[i] = v;
        g.fd_params[i] = (lp - lm) / (2 * eps);
    }
    g.fd_input.resize(input.size());
    Vec in = input;
    for (std::size_t i = 0; i < in.size(); ++i) {
        const Real v = in[i];
        in[i] = v + eps;
        const Real lp = loss(params, in);
        in[i] = v - eps;
        const Real lm = loss(params, in);
        in[i] = v;
        g.fd_input[i] = (lp - lm) / (2 * eps);
    }
    return g;
}

bool grads_close(Real a, Real b) {
    // combined tolerance: below ~1e-7 central differences cannot resolve
    return std::abs(a - b) <= 1e-7 + 1e-6 * std::max(std::abs(a), std::abs(b));
}

}  // namespace

TEST_CASE("identity dense layer passes input through") {
    NetSpec spec{{DenseLayer{2, 2, Activation::Identity, true}}};
    ParamVector p = make_params(spec);
    p.values = {1.0, 0.0, 0.0, 1.0, 0.0, 0.0};  // W = I, b = 0
    ForwardRecord rec;
    const Vec& out = forward(spec, p, {3.0, 4.0}, {}, rec);
    CHECK(out[0] == 3.0);
    CHECK(out[1] == 4.0);
}

TEST_CASE("shift-scale applies scale*(input+shift)") {
    NetSpec spec{{ShiftScaleLayer{1, true, false}}};
    ParamVector p = make_params(spec);
    p.values = {1.0, 2.0};  // shift 1, scale 2
    ForwardRecord rec;
    const Vec& out = forward(spec, p, {0.5}, {}, rec);
    CHECK(out[0] == Approx(3.0));
}

TEST_CASE("inverse shift-scale undoes the forward transform") {
    NetSpec fwd{{ShiftScaleLayer{2, true, false}}};
    ParamVector p = make_params(fwd);
    p.values = {0.3, -1.2, 2.0, 0.5};
    NetSpec inv{{ShiftScaleLayer{2, false, true, {0.3, -1.2}, {2.0, 0.5}}}};
    ParamVector none = make_params(inv);
    CHECK(none.size() == 0);

    ForwardRecord r1, r2;
    const Vec x = {0.7, -0.4};
    const Vec y = forward(fwd, p, x, {}, r1);
    const Vec& back = forward(inv, none, y, {}, r2);
    CHECK(back[0] == Approx(x[0]).epsilon(1e-14));
    CHECK(back[1] == Approx(x[1]).epsilon(1e-14));
}

TEST_CASE("tanh dense with zero parameters outputs zero") {
    NetSpec spec{{DenseLayer{3, 4, Activation::Tanh, true}}};
    ParamVector p = make_params(spec);  // zeros
    ForwardRecord rec;
    const Vec& out = forward(spec, p, {5.0, -2.0, 11.0}, {}, rec);
    for (Real v : out) {
        CHECK(v == 0.0);
    }
}

TEST_CASE("chain rule on a one-weight dense layer") {
    NetSpec spec{{DenseLayer{1, 1, Activation::Identity, false}}};
    ParamVector p = make_params(spec);
    p.values = {3.0};
    ForwardRecord rec;
    forward(spec, p, {2.0}, {}, rec);
    Vec gin, gside, gp(1, 0.0);
    backward(spec, p, rec, {1.0}, gin, gside, gp);
    CHECK(gp[0] == Approx(2.0));
    CHECK(gin[0] == Approx(3.0));
}

TEST_CASE("zero upstream gradient gives zero downstream gradients") {
    NetSpec spec{{ShiftScaleLayer{2, true, false},
                  DenseLayer{2, 3, Activation::Tanh, true},
                  DenseLayer{3, 2, Activation::Tanh, true}}};
    ParamVector p = make_params(spec);
    init_params(spec, p, 7);
    ForwardRecord rec;
    forward(spec, p, {0.4, -0.2}, {}, rec);
    Vec gin, gside, gp(p.values.size(), 0.0);
    backward(spec, p, rec, {0.0, 0.0}, gin, gside, gp);
    for (Real v : gp) {
        CHECK(v == 0.0);
    }
    for (Real v : gin) {
        CHECK(v == 0.0);
    }
}

TEST_CASE("gradient check: every layer type vs central differences") {
    std::mt19937_64 rng(123);
    std::uniform_real_distribution<Real> unit(-1.0, 1.0);
    std::uniform_real_distribution<Real> pos(0.5, 2.0);

    for (int trial = 0; trial < 100; ++trial) {
        NetSpec spec{{ShiftScaleLayer{3, true, false},
                      DenseLayer{3, 5, Activation::Tanh, true},
                      DenseLayer{5, 2, Activation::Identity, true},
                      ShiftScaleLayer{2, false, true, {unit(rng), unit(rng)}, {pos(rng), pos(rng)}},
                      GatesLayer{2}}};
        ParamVector p = make_params(spec);
        for (auto& v : p.values) {
            v = unit(rng);
        }
        // keep trainable scales away from zero
        p.values[3] = pos(rng);
        p.values[4] = pos(rng);
        p.values[5] = pos(rng);

        const Vec input = {unit(rng), unit(rng), unit(rng)};
        const Vec side = {unit(rng), unit(rng)};
        const Vec c = {unit(rng), unit(rng)};

        const GradCheck g = gradient_check(spec, p, input, side, c);
        for (std::size_t i = 0; i < g.analytic_params.size(); ++i) {
            CHECK(grads_close(g.analytic_params[i], g.fd_params[i]));
        }
        for (std::size_t i = 0; i < g.analytic_input.size(); ++i) {
            CHECK(grads_close(g.analytic_input[i], g.fd_input[i]));
        }
    }
}

TEST_CASE("neutral shift-scale is the identity and passes gradients unchanged") {
    NetSpec spec{{ShiftScaleLayer{3, true, false}}};
    ParamVector p = make_params(spec);
    init_params(spec, p, 1);  // shift 0, scale 1
    ForwardRecord rec;
    const Vec x = {0.25, -7.5, 3.0};
    const Vec& out = forward(spec, p, x, {}, rec);
    for (int i = 0; i < 3; ++i) {
        CHECK(out[i] == x[i]);
    }
    Vec gin, gside, gp(p.values.size(), 0.0);
    const Vec up = {1.5, -0.5, 2.0};
    backward(spec, p, rec, up, gin, gside, gp);
    for (int i = 0; i < 3; ++i) {
        CHECK(gin[i] == up[i]);
    }
}

TEST_CASE("gates layer mixes network and side paths") {
    NetSpec spec{{GatesLayer{2}}};
    ParamVector p = make_params(spec);
    p.values = {0.5, 0.25, 2.0, 4.0};  // p_ann, p_fmu
    ForwardRecord rec;
    const Vec& out = forward(spec, p, {1.0, 2.0}, {10.0, 20.0}, rec);
    CHECK(out[0] == Approx(0.5 * 1.0 + 2.0 * 10.0));
    CHECK(out[1] == Approx(0.25 * 2.0 + 4.0 * 20.0));

    // neutral gates reproduce the side input bitwise
    init_params(spec, p, 0);
    const Vec& neutral = forward(spec, p, {123.0, -456.0}, {10.0, 20.0}, rec);
    CHECK(neutral[0] == 10.0);
    CHECK(neutral[1] == 20.0);
}

TEST_CASE("parameter accounting for the reference topology") {
    CHECK(layer_param_count(DenseLayer{3, 32, Activation::Tanh, true}) == 128);
    CHECK(layer_param_count(DenseLayer{32, 1, Activation::Tanh, true}) == 33);

    NetSpec spec{{ShiftScaleLayer{3, true, false},
                  DenseLayer{3, 32, Activation::Tanh, true},
                  DenseLayer{32, 1, Activation::Tanh, true},
                  ShiftScaleLayer{1, false, true, {0.0}, {1.0}},
                  GatesLayer{1}}};
    CHECK(layer_param_count(spec.layers[0]) == 6);
    CHECK(layer_param_count(spec.layers[3]) == 0);
    CHECK(layer_param_count(spec.layers[4]) == 2);
    CHECK(count_params(spec) == 169);
}

TEST_CASE("checkpoint round trip is bitwise") {
    NetSpec spec{{DenseLayer{2, 3, Activation::Tanh, true}, DenseLayer{3, 1, Activation::Identity, true}}};
    ParamVector p = make_params(spec);
    init_params(spec, p, 99);
    const std::string path = "test_params_roundtrip.csv";
    write_params(path, p);
    const ParamVector q = read_params(path, spec);
    REQUIRE(q.size() == p.size());
    for (int i = 0; i < p.size(); ++i) {
        CHECK(q.values[i] == p.values[i]);
    }
    std::remove(path.c_str());
}

TEST_CASE("shift-scale statistics initialization") {
    const auto st = shift_scale_from_stats({{0.0}, {2.0}});
    CHECK(st.shift[0] == Approx(-1.0));
    CHECK(st.scale[0] == Approx(1.0));  // population std of {0,2} is 1
    CHECK(st.degenerate_channels.empty());

    // already standard-normal data stays roughly untouched
    std::mt19937_64 rng(5);
    std::normal_distribution<Real> gauss(0.0, 1.0);
    std::vector<Vec> samples;
    for (int i = 0; i < 20000; ++i) {
        samples.push_back({gauss(rng)});
    }
    const auto st2 = shift_scale_from_stats(samples);
    CHECK(std::abs(st2.shift[0]) < 0.05);
    CHECK(st2.scale[0] == Approx(1.0).epsilon(0.05));

    const auto st3 = shift_scale_from_stats({{5.0}, {5.0}, {5.0}});
    CHECK(st3.shift[0] == Approx(-5.0));
    CHECK(st3.scale[0] == 1.0);
    REQUIRE(st3.degenerate_channels.size() == 1);
    CHECK(st3.degenerate_channels[0] == 0);

    CHECK_THROWS_AS(shift_scale_from_stats({{1.0}}), std::invalid_argument);
}

TEST_CASE("transformed samples become standard normal") {
    std::mt19937_64 rng(17);
    std::normal_distribution<Real> gauss(3.0, 2.5);
    std::vector<Vec> samples;
    for (int i = 0; i < 5000; ++i) {
        samples.push_back({gauss(rng)});
    }
    const auto st = shift_scale_from_stats(samples);
    Real mean = 0.0, var = 0.0;
    for (const auto& s : samples) {
        mean += st.scale[0] * (s[0] + st.shift[0]);
    }
    mean /= static_cast<Real>(samples.size());
    for (const auto& s : samples) {
        const Real v = st.scale[0] * (s[0] + st.shift[0]);
        var += (v - mean) * (v - mean);
    }
    var /= static_cast<Real>(samples.size());
    CHECK(std::abs(mean) < 1e-9);
    CHECK(var == Approx(1.0).epsilon(1e-9));
}

TEST_CASE("error paths: width mismatch and stale record") {
    NetSpec spec{{DenseLayer{2, 2, Activation::Identity, true}}};
    ParamVector p = make_params(spec);
    ForwardRecord rec;
    CHECK_THROWS_AS(forward(spec, p, {1.0, 2.0, 3.0}, {}, rec), std::invalid_argument);

    forward(spec, p, {1.0, 2.0}, {}, rec);
    NetSpec other{{DenseLayer{2, 2, Activation::Identity, true}, GatesLayer{2}}};
    ParamVector po = make_params(other);
    Vec gin, gside, gp;
    CHECK_THROWS_AS(backward(other, po, rec, {1.0, 1.0}, gin, gside, gp), std::invalid_argument);
}
