#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "nfmu/bouncing_ball.hpp"
#include "nfmu/driving_cycle.hpp"
#include "nfmu/solver.hpp"
#include "nfmu/vldm.hpp"

#include <cmath>

using namespace nfmu;
using doctest::Approx;

namespace {

DrivingCycle constant_cycle(Real v, Real t_end = 100.0) {
    return DrivingCycle({0.0, t_end}, {v, v});
}

DrivingCycle ramp_cycle() {
    return DrivingCycle({0.0, 100.0}, {0.0, 100.0});  // v_cyc(t) = t
}

}  // namespace

TEST_CASE("bouncing ball free fall derivative") {
    BouncingBall ball;
    ModelState s = ball.initial_state();
    s.x_c = {1.0, 0.0};
    Vec dx;
    ball.derivative(s, {}, dx);
    CHECK(dx[0] == 0.0);
    CHECK(dx[1] == -9.81);
}

TEST_CASE("bouncing ball indicator is the height") {
    BouncingBall ball;
    ModelState s = ball.initial_state();
    Vec z;
    s.x_c = {0.5, -1.0};
    ball.indicators(s, z);
    CHECK(z[0] == 0.5);
    s.x_c = {-0.01, -1.0};
    ball.indicators(s, z);
    CHECK(z[0] == -0.01);
    CHECK(!ball.next_time_event(3.7).has_value());
}

TEST_CASE("bouncing ball bounce reflects the velocity") {
    BouncingBall ball;
    ModelState s = ball.initial_state();
    s.x_c = {0.0, -3.0};
    ball.handle_event(s, EventKind::State, 0);
    CHECK(s.x_c[0] == 0.0);
    CHECK(s.x_c[1] == Approx(2.4));
    CHECK_THROWS_AS(ball.handle_event(s, EventKind::State, 3), std::invalid_argument);
}

TEST_CASE("vldm equilibrium at rest with zero commands") {
    VldmLite model = VldmLite::baseline(constant_cycle(0.0));
    ModelState s = model.initial_state();
    Vec dx;
    model.derivative(s, {}, dx);
    CHECK(dx[3] == 0.0);  // position
    CHECK(dx[4] == 0.0);  // speed
    CHECK(dx[5] == 300.0);  // auxiliary consumers only
}

TEST_CASE("vldm driving-state derivative") {
    VldmLite model = VldmLite::baseline(constant_cycle(12.0));
    ModelState s = model.initial_state();
    s.t = 0.5;
    s.x_c = {2.0, 0.0, 5.0, 40.0, 10.0, 1000.0};
    s.x_d = {0.5, 0.0, 1.0, 0.0, 1.0};  // throttle 0.5, active, moving forward

    Vec dx;
    model.derivative(s, {}, dx);
    CHECK(dx[0] == Approx(2.0));   // throttle integrator follows e
    CHECK(dx[1] == 0.0);           // brake branch inactive
    CHECK(dx[2] == Approx(12.0));  // cycle speed
    CHECK(dx[3] == Approx(10.0));
    // (1500 - 141.264 - 36.12) / 1200
    CHECK(dx[4] == Approx(1.10218).epsilon(1e-12));
    // 1500 * 10 / 0.85 + 300
    CHECK(dx[5] == Approx(17947.058823529413).epsilon(1e-12));
}

TEST_CASE("ground truth and baseline differ only in the speed derivative") {
    VldmLite baseline = VldmLite::baseline(constant_cycle(12.0));
    VldmLite truth = VldmLite::ground_truth(constant_cycle(12.0));
    ModelState s = baseline.initial_state();
    s.t = 0.5;
    s.x_c = {2.0, 0.0, 5.0, 40.0, 10.0, 1000.0};
    s.x_d = {0.5, 0.0, 1.0, 0.0, 1.0};

    Vec dxb, dxt;
    baseline.derivative(s, {}, dxb);
    truth.derivative(s, {}, dxt);
    for (int i = 0; i < 6; ++i) {
        if (i == 4) {
            continue;
        }
        CHECK(dxb[i] == dxt[i]);
    }
    const Real expected = 15.0 * 10.0 / 1200.0;
    CHECK(dxb[4] - dxt[4] == Approx(expected).epsilon(1e-13));
}

TEST_CASE("vldm speed indicator") {
    VldmLite model = VldmLite::baseline(constant_cycle(0.0));
    ModelState s = model.initial_state();
    s.x_c[4] = -0.3;
    Vec z;
    model.indicators(s, z);
    CHECK(z[0] == -0.3);
}

TEST_CASE("vldm 100 Hz time-event schedule") {
    VldmLite model = VldmLite::baseline(constant_cycle(0.0));
    CHECK(model.next_time_event(0.004).value() == Approx(0.01).epsilon(1e-15));
    CHECK(model.next_time_event(0.01).value() == Approx(0.02).epsilon(1e-15));
    CHECK(model.next_time_event(0.0).value() == Approx(0.01).epsilon(1e-15));
    // strictly greater even when t sits exactly on a grid point
    const Real t29 = 29 * 0.01;
    CHECK(model.next_time_event(t29).value() > t29);
}

TEST_CASE("vldm controller tick trace") {
    // cycle v_cyc(t) = t; three hand-stepped ticks against the sampled PI +
    // hysteresis + breakaway rules
    VldmLite model = VldmLite::baseline(ramp_cycle());
    ModelState s = model.initial_state();

    // tick 1: e = 0.01, below the activation threshold; nothing moves
    s.t = 0.01;
    model.handle_event(s, EventKind::Time, -1);
    for (int i = 0; i < 5; ++i) {
        CHECK(s.x_d[i] == 0.0);
    }

    // tick 2: e = 0.06 > 0.05 activates the throttle branch, integrator reset,
    // u_thr = 0.4*0.06, traction 72 N below the 141.264 N hold force
    s.t = 0.06;
    model.handle_event(s, EventKind::Time, -1);
    CHECK(s.x_d[VldmLite::kThrActive] == 1.0);
    CHECK(s.x_d[VldmLite::kUThr] == Approx(0.024));
    CHECK(s.x_d[VldmLite::kSign] == 0.0);

    // tick 3: with integrator state 0.006, u_thr = 0.4*0.12 + 0.2*0.006 =
    // 0.0492, traction 147.6 N exceeds the hold force: breakaway
    s.t = 0.12;
    s.x_c[0] = 0.006;
    model.handle_event(s, EventKind::Time, -1);
    CHECK(s.x_d[VldmLite::kUThr] == Approx(0.0492));
    CHECK(s.x_d[VldmLite::kSign] == 1.0);
    CHECK(s.x_c[0] == 0.006);  // no reset, branch was already active

    // deactivation edge: e < 0 drops the throttle branch and its command
    s.t = 0.2;
    s.x_c[4] = 1.0;  // e = 0.2 - 1.0 < 0
    model.handle_event(s, EventKind::Time, -1);
    CHECK(s.x_d[VldmLite::kThrActive] == 0.0);
    CHECK(s.x_d[VldmLite::kUThr] == 0.0);
}

TEST_CASE("vldm friction-sign automaton at speed crossings") {
    VldmLite model = VldmLite::baseline(constant_cycle(0.0));
    ModelState s = model.initial_state();

    // forward travel decelerating through zero: stick
    s.x_d[VldmLite::kSign] = 1.0;
    s.x_c[4] = -1e-9;
    model.handle_event(s, EventKind::State, 0);
    CHECK(s.x_d[VldmLite::kSign] == 0.0);
    CHECK(s.x_c[4] == -1e-9);  // x_c unchanged

    // post-breakaway crossing in the direction of travel: branch kept
    s.x_d[VldmLite::kSign] = 1.0;
    s.x_c[4] = 1e-9;
    model.handle_event(s, EventKind::State, 0);
    CHECK(s.x_d[VldmLite::kSign] == 1.0);

    // dragged out of standstill between ticks
    s.x_d[VldmLite::kSign] = 0.0;
    s.x_c[4] = 0.5;
    model.handle_event(s, EventKind::State, 0);
    CHECK(s.x_d[VldmLite::kSign] == 1.0);
}

TEST_CASE("vldm jacobians match finite differences") {
    VldmLite model = VldmLite::baseline(constant_cycle(12.0));
    ModelState s = model.initial_state();
    s.t = 0.5;
    s.x_d = {0.6, 0.1, 1.0, 0.0, 1.0};

    for (Real x5 : {10.0, 30.0}) {  // force-limited and power-limited branches
        s.x_c = {1.0, 0.5, 3.0, 20.0, x5, 500.0};
        Vec jac, jac_fd;
        model.derivative_jacobian(s, {}, jac);
        model.HybridModel::derivative_jacobian(s, {}, jac_fd);
        for (std::size_t i = 0; i < jac.size(); ++i) {
            CHECK(jac[i] == Approx(jac_fd[i]).epsilon(1e-5).scale(1.0));
        }

        Vec jd, jd_fd;
        model.derivative_jacobian_discrete(s, {}, jd);
        model.HybridModel::derivative_jacobian_discrete(s, {}, jd_fd);
        // continuous-valued discrete states (held commands) only
        for (int row = 0; row < 6; ++row) {
            for (int col = 0; col < 2; ++col) {
                CHECK(jd[row * 5 + col] == Approx(jd_fd[row * 5 + col]).epsilon(1e-5).scale(1.0));
            }
        }
    }
}

TEST_CASE("derivative is deterministic") {
    VldmLite model = VldmLite::baseline(constant_cycle(7.0));
    ModelState s = model.initial_state();
    s.x_c = {0.1, 0.2, 0.3, 0.4, 5.0, 600.0};
    s.x_d = {0.3, 0.0, 1.0, 0.0, 1.0};
    Vec a, b;
    model.derivative(s, {}, a);
    model.derivative(s, {}, b);
    for (int i = 0; i < 6; ++i) {
        CHECK(a[i] == b[i]);
    }
}

TEST_CASE("snapshot save/restore round trip") {
    VldmLite model = VldmLite::baseline(constant_cycle(5.0));
    ModelState s = model.initial_state();
    s.x_d = {0.2, 0.0, 1.0, 0.0, 1.0};
    s.x_c[4] = 3.0;

    const Snapshot snap = save_state(model, s);
    Vec before;
    model.derivative(s, {}, before);

    s.x_c[4] = 9.0;
    s.x_d[VldmLite::kUThr] = 0.9;
    restore_state(model, s, snap);
    CHECK(s.x_c[4] == 3.0);
    CHECK(s.x_d[VldmLite::kUThr] == 0.2);  // held commands preserved

    Vec after;
    model.derivative(s, {}, after);
    for (int i = 0; i < 6; ++i) {
        CHECK(before[i] == after[i]);
    }

    BouncingBall ball;
    ModelState bs = ball.initial_state();
    CHECK_THROWS_AS(restore_state(ball, bs, snap), std::invalid_argument);
}

TEST_CASE("snapshot determinism across resimulation") {
    VldmLite model = VldmLite::baseline(DrivingCycle({0.0, 2.0, 8.0, 100.0}, {0.0, 0.0, 6.0, 6.0}));
    SolverOptions opts;
    opts.record_discrete = true;

    ModelState at5;
    simulate_model(model, model.initial_state(), 5.0, opts, nullptr, &at5);
    const Snapshot snap = save_state(model, at5);

    const Solution run1 = simulate_model(model, at5, 10.0, opts);

    ModelState restored = model.initial_state();
    restore_state(model, restored, snap);
    const Solution run2 = simulate_model(model, restored, 10.0, opts);

    REQUIRE(run1.rows() == run2.rows());
    for (std::size_t r = 0; r < run1.rows(); ++r) {
        CHECK(run1.times[r] == run2.times[r]);
        for (int i = 0; i < 6; ++i) {
            CHECK(run1.states[r][i] == run2.states[r][i]);
        }
    }
    CHECK(run1.stats.accepted_steps == run2.stats.accepted_steps);
    CHECK(run1.stats.n_time_events == run2.stats.n_time_events);
}
