#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "nfmu/data_io.hpp"
#include "nfmu/vldm.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

using namespace nfmu;
using doctest::Approx;

namespace {

DrivingCycle short_cycle() {
    return DrivingCycle({0.0, 1.0, 5.0, 20.0}, {0.0, 0.0, 6.0, 6.0});
}

Solution solution_from(const Vec& times, const Vec& values) {
    Solution sol;
    sol.times = times;
    for (Real v : values) {
        sol.states.push_back(Vec{0, 0, 0, 0, 0, v});
    }
    return sol;
}

}  // namespace

TEST_CASE("measurement statistics: identical runs and constant offsets") {
    MeasurementSet ms;
    ms.times = {0.0, 1.0, 2.0};
    ms.runs = {{5.0, 6.0, 7.0}, {5.0, 6.0, 7.0}};
    ms.compute_stats();
    for (Real s : ms.std_dev) {
        CHECK(s == 0.0);
    }

    ms.runs = {{5.0, 6.0, 7.0}, {7.0, 8.0, 9.0}};  // E and E+2
    ms.compute_stats();
    for (std::size_t j = 0; j < 3; ++j) {
        CHECK(ms.mean[j] == Approx(6.0 + j));
        CHECK(ms.std_dev[j] == Approx(1.0));  // population convention
    }
}

TEST_CASE("measurement csv round trip and validation") {
    MeasurementSet ms;
    ms.times = {0.0, 0.1, 0.25};
    ms.runs = {{1.0, 2.0, 3.0}, {1.5, 2.5, 3.5}};
    ms.compute_stats();
    write_measurements("test_meas.csv", ms);
    const MeasurementSet back = load_measurements("test_meas.csv");
    REQUIRE(back.n_runs() == 2);
    for (std::size_t j = 0; j < 3; ++j) {
        CHECK(back.times[j] == ms.times[j]);
        CHECK(back.runs[0][j] == ms.runs[0][j]);
        CHECK(back.runs[1][j] == ms.runs[1][j]);
    }
    std::remove("test_meas.csv");

    std::ofstream bad("test_meas_bad.csv");
    bad << "time,run1\n0,1\n";
    bad.close();
    CHECK_THROWS_WITH_AS(load_measurements("test_meas_bad.csv"), doctest::Contains(":1:"),
                         std::runtime_error);
    std::remove("test_meas_bad.csv");

    std::ofstream mono("test_meas_mono.csv");
    mono << "t,run1\n0,1\n2,2\n1,3\n";
    mono.close();
    CHECK_THROWS_WITH_AS(load_measurements("test_meas_mono.csv"),
                         doctest::Contains("non-monotonic"), std::runtime_error);
    std::remove("test_meas_mono.csv");
}

TEST_CASE("synthetic measurements: noiseless runs equal the ground truth") {
    VldmLite truth = VldmLite::ground_truth(short_cycle());
    const MeasurementSet ms = synthesize_measurements(truth, 10.0, 2, -1.0, 7, 10.0);
    REQUIRE(ms.n_runs() == 2);
    CHECK(ms.times.size() == 101);  // 10 Hz over 10 s inclusive

    const Solution ref = simulate_model(truth, truth.initial_state(), 10.0, SolverOptions{});
    // noise_std < 0 means "default"; pass exactly zero for the noiseless case
    const MeasurementSet clean = synthesize_measurements(truth, 10.0, 2, 0.0, 7, 10.0);
    for (std::size_t j = 0; j < clean.times.size(); ++j) {
        const Real expect = ref.value_at(clean.times[j], 5);
        CHECK(clean.runs[0][j] == expect);
        CHECK(clean.runs[1][j] == expect);
    }
}

TEST_CASE("synthetic measurements are deterministic per seed") {
    VldmLite truth = VldmLite::ground_truth(short_cycle());
    const MeasurementSet a = synthesize_measurements(truth, 5.0, 3, 100.0, 42, 10.0);
    const MeasurementSet b = synthesize_measurements(truth, 5.0, 3, 100.0, 42, 10.0);
    for (std::size_t r = 0; r < 3; ++r) {
        for (std::size_t j = 0; j < a.times.size(); ++j) {
            CHECK(a.runs[r][j] == b.runs[r][j]);
        }
    }
    const MeasurementSet c = synthesize_measurements(truth, 5.0, 3, 100.0, 43, 10.0);
    bool any_diff = false;
    for (std::size_t j = 0; j < a.times.size(); ++j) {
        any_diff = any_diff || a.runs[0][j] != c.runs[0][j];
    }
    CHECK(any_diff);
}

TEST_CASE("mean of many synthetic runs converges to the ground truth") {
    VldmLite truth = VldmLite::ground_truth(short_cycle());
    const Real noise = 50.0;
    const int n_runs = 1000;
    const MeasurementSet ms = synthesize_measurements(truth, 10.0, n_runs, noise, 11, 10.0);
    const MeasurementSet clean = synthesize_measurements(truth, 10.0, 1, 0.0, 11, 10.0);
    const Real bound = 4.0 * noise / std::sqrt(static_cast<Real>(n_runs));
    for (std::size_t j = 0; j < ms.times.size(); ++j) {
        CHECK(std::abs(ms.mean[j] - clean.runs[0][j]) < bound);
    }
}

TEST_CASE("evaluate: exact match, constant offset, run-order invariance") {
    MeasurementSet data;
    data.times = {0.0, 1.0, 2.0, 3.0};
    data.runs = {{10.0, 20.0, 30.0, 40.0}, {14.0, 24.0, 34.0, 44.0}};
    data.compute_stats();  // mean 12, 22, 32, 42

    const Solution exact = solution_from(data.times, {12.0, 22.0, 32.0, 42.0});
    EvalReport rep = evaluate(exact, data);
    CHECK(rep.mse == 0.0);
    CHECK(rep.max_error == 0.0);
    CHECK(rep.final_error == 0.0);

    const Solution off = solution_from(data.times, {22.0, 32.0, 42.0, 52.0});
    rep = evaluate(off, data);
    CHECK(rep.mse == Approx(100.0));
    CHECK(rep.max_error == Approx(10.0));
    CHECK(rep.final_error == Approx(10.0));

    MeasurementSet swapped = data;
    std::swap(swapped.runs[0], swapped.runs[1]);
    swapped.compute_stats();
    const EvalReport rep2 = evaluate(off, swapped);
    CHECK(rep.mse == rep2.mse);
    CHECK(rep.max_error == rep2.max_error);
    CHECK(rep.final_error == rep2.final_error);

    MeasurementSet outside;
    outside.times = {100.0, 101.0};
    outside.runs = {{0.0, 0.0}};
    outside.compute_stats();
    CHECK_THROWS_AS(evaluate(off, outside), std::invalid_argument);
}

TEST_CASE("report formatting carries signed full-scale entries") {
    EvalReport rep;
    rep.mse = 588.91e8;
    rep.max_error = 460185.79;
    rep.final_error = -453614.80;
    rep.sim_time = 10.29;
    rep.solver_steps = 110294;
    rep.triggered_events = 110247;
    const std::string text = format_report(rep);
    const auto field = [&](const std::string& key) {
        const auto pos = text.find(key + "=");
        REQUIRE(pos != std::string::npos);
        return std::stod(text.substr(pos + key.size() + 1));
    };
    CHECK(field("mse") == 588.91e8);  // exact 17-digit round trip
    CHECK(field("final_error") == -453614.80);
    CHECK(field("final_error") < 0.0);  // sign preserved
    CHECK(text.find("solver_steps=110294") != std::string::npos);
    CHECK(text.find("triggered_events=110247") != std::string::npos);
}

TEST_CASE("evaluation is exact on shared timestamps") {
    // solution rows exactly on the data grid: no interpolation error at all
    MeasurementSet data;
    data.times = {0.0, 0.1, 0.2};
    data.runs = {{1.0, 2.0, 3.0}};
    data.compute_stats();
    const Solution sol = solution_from({0.0, 0.05, 0.1, 0.2}, {1.0, 1.7, 2.0, 3.0});
    const EvalReport rep = evaluate(sol, data);
    CHECK(rep.mse == 0.0);
}

TEST_CASE("config parser: keys, comments, errors") {
    std::ofstream cfg("test_config.cfg");
    cfg << "# a comment line\n";
    cfg << "cycle = data/cycle_train.csv\n";
    cfg << "epochs = 12   # trailing comment\n";
    cfg << "rel_tol = 1e-6\n";
    cfg << "\n";
    cfg.close();

    const Config c("test_config.cfg");
    CHECK(c.get("cycle", "") == "data/cycle_train.csv");
    CHECK(c.get_long("epochs", 0) == 12);
    CHECK(c.get_real("rel_tol", 0.0) == Approx(1e-6));
    CHECK(c.get("missing", "fallback") == "fallback");
    CHECK(!c.has("missing"));
    std::remove("test_config.cfg");

    std::ofstream bad("test_config_bad.cfg");
    bad << "just a line without equals\n";
    bad.close();
    CHECK_THROWS_WITH_AS(Config("test_config_bad.cfg"), doctest::Contains("key = value"),
                         std::runtime_error);
    std::remove("test_config_bad.cfg");
}

TEST_CASE("cycle loader validation") {
    std::ofstream bad("test_cycle_bad.csv");
    bad << "t,velocity\n0,0\n";
    bad.close();
    CHECK_THROWS_WITH_AS(load_cycle("test_cycle_bad.csv"), doctest::Contains("v_target"),
                         std::runtime_error);
    std::remove("test_cycle_bad.csv");

    std::ofstream dec("test_cycle_dec.csv");
    dec << "t,v_target\n0,0\n2,5\n1,6\n";
    dec.close();
    CHECK_THROWS_WITH_AS(load_cycle("test_cycle_dec.csv"), doctest::Contains("strictly increasing"),
                         std::runtime_error);
    std::remove("test_cycle_dec.csv");

    const DrivingCycle cyc({0.0, 2.0, 4.0}, {0.0, 10.0, 10.0});
    CHECK(cyc.speed(-1.0) == 0.0);
    CHECK(cyc.speed(1.0) == Approx(5.0));
    CHECK(cyc.speed(99.0) == 10.0);  // constant extrapolation
}
