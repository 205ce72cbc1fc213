#pragma once

#include "nfmu/model.hpp"
#include "nfmu/types.hpp"

#include <array>
#include <functional>
#include <limits>
#include <optional>
#include <variant>

namespace nfmu {

struct SolverOptions {
    Real rel_tol = 1e-6;
    Real abs_tol = 1e-8;
    Real h_init = 1e-4;
    Real h_max = std::numeric_limits<Real>::infinity();
    Real event_tol = 1e-9;         // width of the event-time bracket
    bool record_derivatives = false;
    bool record_discrete = false;
    long max_steps = 10'000'000;   // runaway guard
};

struct SolutionStats {
    long accepted_steps = 0;
    long rejected_steps = 0;
    long n_state_events = 0;
    long n_time_events = 0;
    long rhs_evaluations = 0;
};

struct Solution {
    Vec times;
    std::vector<Vec> states;        // one row per saved point
    std::vector<EventRecord> event_log;
    SolutionStats stats;
    Real wall_time = 0.0;           // seconds
    std::vector<Vec> derivs;        // optional, per saved point
    std::vector<Vec> discrete;      // optional, per saved point

    [[nodiscard]] std::size_t rows() const { return times.size(); }
    [[nodiscard]] const Vec& final_state() const { return states.back(); }

    /// Linear interpolation on the saved grid; at duplicated event rows the
    /// post-event value is used.
    [[nodiscard]] Real value_at(Real t, int channel) const;
};

/// One accepted Runge-Kutta step. theta < 1 marks a step truncated at a state
/// event; the step output is then the dense-output state at theta.
struct TapeStep {
    Real t0 = 0.0;
    Real h = 0.0;
    Real theta = 1.0;
    Vec x0;
    Vec x_d;                      // discrete snapshot during the step
    std::array<Vec, 7> k;
    int row_after = -1;           // solution row holding the step output
};

struct TapeEvent {
    EventKind kind = EventKind::Time;
    int indicator_index = -1;
    Real t = 0.0;
    Vec x_pre;
    Vec x_post;
    Vec xd_pre;                   // discrete state before the handler
    int row_pre = -1;
    int row_post = -1;
};

using TapeRecord = std::variant<TapeStep, TapeEvent>;

struct Tape {
    Real t0 = 0.0;
    Vec x0;
    int n_states = 0;
    std::vector<TapeRecord> records;
};

/// Recomputes every step output of a recorded tape from its stages. Forward
/// replay is bitwise identical to the recorded trajectory.
[[nodiscard]] std::vector<Vec> replay_tape(const Tape& tape);

/// Right-hand side and event callbacks of a hybrid system. Discrete state
/// lives inside the callbacks' closure; discrete_state exposes a copy of it
/// for recording purposes.
struct SystemCallbacks {
    int n_states = 0;
    int n_indicators = 0;
    std::function<void(Real t, const Vec& x, Vec& dx)> rhs;
    std::function<void(Real t, const Vec& x, Vec& z)> indicators;
    std::function<std::optional<Real>(Real t)> next_time_event;
    std::function<void(Real t, Vec& x, EventKind kind, int indicator_index)> handle_event;
    std::function<Vec()> discrete_state;
};

/// Integrates with Dormand-Prince 5(4) adaptive steps. Scheduled time events
/// are hit exactly (the step is clipped to land on them); indicator sign
/// changes are localized to within opts.event_tol and integration restarts
/// from the post-event state with h_init. Both pre- and post-event states are
/// saved. Passing a tape records every accepted step for reverse sweeps.
Solution solve(const SystemCallbacks& sys, const Vec& x0, Real t0, Real t_end,
               const SolverOptions& opts, Tape* tape = nullptr);

/// Dense-output segment of one accepted step, for event localization.
struct DenseSegment {
    Real t0 = 0.0;
    Real h = 0.0;
    const Vec* x0 = nullptr;
    const std::array<Vec, 7>* k = nullptr;

    void state_at(Real theta, Vec& x) const;
};

/// Bisects the dense-output interpolant for the sign change of one indicator.
/// Both segment ends must have opposite sign classes (z >= 0 counts as
/// positive); throws std::logic_error otherwise. Returns the post-crossing
/// time with bracket width <= event_tol.
[[nodiscard]] Real locate_state_event(const DenseSegment& seg,
                                      const std::function<void(Real, const Vec&, Vec&)>& indicators,
                                      int indicator_index, Real event_tol);

/// Drives a hybrid model through solve(), keeping the discrete state in an
/// internal ModelState and dispatching the model's event callbacks.
/// final_state, when given, receives the full model state at t_end.
Solution simulate_model(const HybridModel& model, const ModelState& start, Real t_end,
                        const SolverOptions& opts, Tape* tape = nullptr,
                        ModelState* final_state = nullptr);

void write_solution(const std::string& path, const Solution& sol);
[[nodiscard]] Solution read_solution(const std::string& path);

/// Total number of solve() invocations in this process (diagnostic).
[[nodiscard]] long solver_invocations();

/// Dormand-Prince 5(4) tableau, shared with the reverse sweep over tapes.
namespace rkdp {

inline constexpr int kStages = 7;
extern const Real c[7];
extern const Real b[7];

/// Row of stage coefficients a[stage][0..stage-1] for stage in 1..6.
[[nodiscard]] const Real* a_row(int stage);

/// Output weights of the dense interpolant at theta (equal b at theta = 1 up
/// to rounding).
void dense_coefficients(Real theta, Real coeff[7]);

/// out = x0 + h * sum_i coeff[i] * k[i], skipping zero coefficients; the
/// solver uses this exact summation, so recomputations are bitwise.
void combine(const Vec& x0, Real h, const std::array<Vec, 7>& k, const Real* coeff, int n_stages,
             Vec& out);

}  // namespace rkdp

}  // namespace nfmu
