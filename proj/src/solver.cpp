#include "nfmu/solver.hpp"

#include "csv_detail.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>

namespace nfmu {

namespace rkdp {

namespace {
constexpr Real kA2[1] = {1.0 / 5.0};
constexpr Real kA3[2] = {3.0 / 40.0, 9.0 / 40.0};
constexpr Real kA4[3] = {44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0};
constexpr Real kA5[4] = {19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0};
constexpr Real kA6[5] = {9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0,
                         -5103.0 / 18656.0};
// 4th-order dense-output polynomial, x(theta) = x0 + h * sum_i P_i(theta) * k_i
// with P_i(theta) = theta*(BI[i][0] + theta*(BI[i][1] + theta*(BI[i][2] + theta*BI[i][3])))
constexpr Real kBI[7][4] = {
    {1.0, -183.0 / 64.0, 37.0 / 12.0, -145.0 / 128.0},
    {0.0, 0.0, 0.0, 0.0},
    {0.0, 1500.0 / 371.0, -1000.0 / 159.0, 1000.0 / 371.0},
    {0.0, -125.0 / 32.0, 125.0 / 12.0, -375.0 / 64.0},
    {0.0, 9477.0 / 3392.0, -729.0 / 106.0, 25515.0 / 6784.0},
    {0.0, -11.0 / 7.0, 11.0 / 3.0, -55.0 / 28.0},
    {0.0, 3.0 / 2.0, -4.0, 5.0 / 2.0}};
}  // namespace

const Real c[7] = {0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0};
const Real b[7] = {35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0,
                   11.0 / 84.0, 0.0};

const Real* a_row(int stage) {
    switch (stage) {
        case 1: return kA2;
        case 2: return kA3;
        case 3: return kA4;
        case 4: return kA5;
        case 5: return kA6;
        case 6: return b;  // FSAL
        default: throw std::invalid_argument("rkdp::a_row: stage out of range");
    }
}

void dense_coefficients(Real theta, Real coeff[7]) {
    for (int i = 0; i < 7; ++i) {
        coeff[i] = theta * (kBI[i][0] + theta * (kBI[i][1] + theta * (kBI[i][2] + theta * kBI[i][3])));
    }
}

void combine(const Vec& x0, Real h, const std::array<Vec, 7>& k, const Real* coeff, int n_stages,
             Vec& out) {
    out.resize(x0.size());
    for (std::size_t c2 = 0; c2 < x0.size(); ++c2) {
        Real acc = x0[c2];
        for (int i = 0; i < n_stages; ++i) {
            if (coeff[i] != 0.0) {
                acc += h * coeff[i] * k[i][c2];
            }
        }
        out[c2] = acc;
    }
}

}  // namespace rkdp

namespace {

std::atomic<long> g_solver_invocations{0};

using rkdp::combine;
using rkdp::dense_coefficients;
const Real* kC = rkdp::c;
const Real* kB = rkdp::b;
const Real* kA2 = rkdp::a_row(1);
const Real* kA3 = rkdp::a_row(2);
const Real* kA4 = rkdp::a_row(3);
const Real* kA5 = rkdp::a_row(4);
const Real* kA6 = rkdp::a_row(5);
// b - b* (error estimate weights)
constexpr Real kE[7] = {71.0 / 57600.0, 0.0, -71.0 / 16695.0, 71.0 / 1920.0,
                        -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0};

int sign_class(Real z) {
    return z >= 0.0 ? 1 : -1;
}

}  // namespace

void DenseSegment::state_at(Real theta, Vec& x) const {
    Real coeff[7];
    dense_coefficients(theta, coeff);
    combine(*x0, h, *k, coeff, 7, x);
}

Real locate_state_event(const DenseSegment& seg,
                        const std::function<void(Real, const Vec&, Vec&)>& indicators,
                        int indicator_index, Real event_tol) {
    Vec x, z;
    seg.state_at(0.0, x);
    indicators(seg.t0, x, z);
    const int s_lo = sign_class(z[indicator_index]);
    seg.state_at(1.0, x);
    indicators(seg.t0 + seg.h, x, z);
    if (sign_class(z[indicator_index]) == s_lo) {
        throw std::logic_error("locate_state_event: indicator has no sign change on segment");
    }
    Real lo = 0.0, hi = 1.0;
    while (seg.h * (hi - lo) > event_tol) {
        const Real mid = 0.5 * (lo + hi);
        seg.state_at(mid, x);
        indicators(seg.t0 + mid * seg.h, x, z);
        if (sign_class(z[indicator_index]) == s_lo) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return seg.t0 + hi * seg.h;
}

Real Solution::value_at(Real t, int channel) const {
    if (times.empty()) {
        throw std::invalid_argument("Solution::value_at on empty solution");
    }
    if (t <= times.front()) {
        return states.front()[channel];
    }
    if (t >= times.back()) {
        return states.back()[channel];
    }
    const auto it = std::upper_bound(times.begin(), times.end(), t);
    const std::size_t i = static_cast<std::size_t>(it - times.begin());
    const Real t0 = times[i - 1], t1 = times[i];
    if (t == t0 || t1 == t0) {
        return states[i - 1][channel];
    }
    const Real w = (t - t0) / (t1 - t0);
    return states[i - 1][channel] + w * (states[i][channel] - states[i - 1][channel]);
}

std::vector<Vec> replay_tape(const Tape& tape) {
    std::vector<Vec> out;
    out.reserve(tape.records.size());
    Vec x;
    for (const auto& rec : tape.records) {
        if (const auto* step = std::get_if<TapeStep>(&rec)) {
            if (step->theta == 1.0) {
                combine(step->x0, step->h, step->k, kB, 7, x);
            } else {
                DenseSegment seg{step->t0, step->h, &step->x0, &step->k};
                seg.state_at(step->theta, x);
            }
            out.push_back(x);
        } else {
            out.push_back(std::get<TapeEvent>(rec).x_post);
        }
    }
    return out;
}

Solution solve(const SystemCallbacks& sys, const Vec& x0, Real t0, Real t_end,
               const SolverOptions& opts, Tape* tape) {
    if (!(t_end > t0)) {
        throw std::invalid_argument("solve: t_end must be greater than t0");
    }
    if (!(opts.rel_tol > 0.0) || !(opts.abs_tol > 0.0) || !(opts.event_tol > 0.0)) {
        throw std::invalid_argument("solve: tolerances must be positive");
    }
    for (std::size_t i = 0; i < x0.size(); ++i) {
        if (!std::isfinite(x0[i])) {
            throw std::invalid_argument("solve: non-finite initial state at index " +
                                        std::to_string(i));
        }
    }
    g_solver_invocations.fetch_add(1, std::memory_order_relaxed);
    const auto t_start_wall = std::chrono::steady_clock::now();

    const int n = static_cast<int>(x0.size());
    const int n_ind = sys.n_indicators;

    Solution sol;
    if (tape) {
        tape->t0 = t0;
        tape->x0 = x0;
        tape->n_states = n;
        tape->records.clear();
    }

    Vec x = x0;
    Real t = t0;

    std::array<Vec, 7> k;
    for (auto& ki : k) {
        ki.resize(n);
    }
    Vec xnew(n), xtmp(n), xerr(n);
    Vec z_base, z_new, z_tmp, x_pre, deriv_tmp;

    auto eval_rhs = [&](Real tt, const Vec& xx, Vec& dd) {
        sys.rhs(tt, xx, dd);
        ++sol.stats.rhs_evaluations;
        for (int i = 0; i < n; ++i) {
            if (!std::isfinite(dd[i])) {
                throw SimulationError("solve: non-finite derivative in component " +
                                      std::to_string(i) + " at t=" + std::to_string(tt));
            }
        }
    };

    auto save_row = [&](Real tt, const Vec& xx, const Vec* deriv) {
        sol.times.push_back(tt);
        sol.states.push_back(xx);
        if (opts.record_derivatives) {
            if (deriv) {
                sol.derivs.push_back(*deriv);
            } else {
                eval_rhs(tt, xx, deriv_tmp);
                sol.derivs.push_back(deriv_tmp);
            }
        }
        if (opts.record_discrete) {
            sol.discrete.push_back(sys.discrete_state ? sys.discrete_state() : Vec{});
        }
        return static_cast<int>(sol.times.size()) - 1;
    };

    // initial row; k1 doubles as its derivative record
    eval_rhs(t, x, k[0]);
    bool k1_valid = true;
    save_row(t, x, &k[0]);

    std::vector<int> sign_base(n_ind, 1);
    auto rearm = [&](Real tt, const Vec& xx) {
        if (n_ind == 0) {
            return;
        }
        sys.indicators(tt, xx, z_tmp);
        for (int i = 0; i < n_ind; ++i) {
            sign_base[i] = sign_class(z_tmp[i]);
        }
    };
    rearm(t, x);

    // fires the handler at the current (t, x); returns the post-event row
    auto apply_event = [&](EventKind kind, int idx) {
        Vec xd_pre = sys.discrete_state ? sys.discrete_state() : Vec{};
        x_pre = x;
        sys.handle_event(t, x, kind, idx);
        sol.event_log.push_back({t, kind, idx});
        if (kind == EventKind::Time) {
            ++sol.stats.n_time_events;
        } else {
            ++sol.stats.n_state_events;
        }
        const int row_pre = static_cast<int>(sol.times.size()) - 1;
        const int row_post = save_row(t, x, nullptr);
        if (tape) {
            tape->records.push_back(TapeEvent{kind, idx, t, x_pre, x, std::move(xd_pre),
                                              row_pre, row_post});
        }
    };

    Real h = std::min(opts.h_init, opts.h_max);
    Real err_prev = 1e-4;
    constexpr Real kSafety = 0.9;

    while (t < t_end) {
        if (sol.stats.accepted_steps > opts.max_steps) {
            throw SimulationError("solve: accepted step limit exceeded (" +
                                  std::to_string(opts.max_steps) + ") at t=" + std::to_string(t));
        }
        std::optional<Real> tev = sys.next_time_event ? sys.next_time_event(t) : std::nullopt;
        Real target = t_end;
        bool target_is_tev = false;
        if (tev && *tev <= target) {
            target = *tev;
            target_is_tev = true;
        }

        Real h_eff = std::min(h, opts.h_max);
        bool landed = false;
        if (t + h_eff >= target) {
            h_eff = target - t;
            landed = true;
        }
        if (h_eff < 1e-14 * std::max(1.0, std::abs(t))) {
            throw SimulationError("solve: step size underflow at t=" + std::to_string(t) +
                                  " (h=" + std::to_string(h_eff) + ")");
        }

        // stages
        if (!k1_valid) {
            eval_rhs(t, x, k[0]);
            k1_valid = true;
        }
        combine(x, h_eff, k, kA2, 1, xtmp);
        eval_rhs(t + kC[1] * h_eff, xtmp, k[1]);
        combine(x, h_eff, k, kA3, 2, xtmp);
        eval_rhs(t + kC[2] * h_eff, xtmp, k[2]);
        combine(x, h_eff, k, kA4, 3, xtmp);
        eval_rhs(t + kC[3] * h_eff, xtmp, k[3]);
        combine(x, h_eff, k, kA5, 4, xtmp);
        eval_rhs(t + kC[4] * h_eff, xtmp, k[4]);
        combine(x, h_eff, k, kA6, 5, xtmp);
        eval_rhs(t + kC[5] * h_eff, xtmp, k[5]);
        combine(x, h_eff, k, kB, 6, xnew);  // a7 row equals b (FSAL)
        eval_rhs(t + h_eff, xnew, k[6]);

        Real err_sq = 0.0;
        for (int c = 0; c < n; ++c) {
            Real e = 0.0;
            for (int i = 0; i < 7; ++i) {
                if (kE[i] != 0.0) {
                    e += kE[i] * k[i][c];
                }
            }
            e *= h_eff;
            const Real scale = opts.abs_tol +
                               opts.rel_tol * std::max(std::abs(x[c]), std::abs(xnew[c]));
            err_sq += (e / scale) * (e / scale);
        }
        const Real err = std::sqrt(err_sq / n);

        if (!(err <= 1.0)) {
            ++sol.stats.rejected_steps;
            const Real shrink = std::clamp(kSafety * std::pow(err, -0.2), 0.1, 0.9);
            h = h_eff * shrink;
            continue;  // k1 still valid at (t, x)
        }

        const Real t_new = landed ? target : t + h_eff;

        // state events inside the accepted span
        int hit_index = -1;
        Real t_hit = 0.0;
        if (n_ind > 0) {
            sys.indicators(t_new, xnew, z_new);
            for (int i = 0; i < n_ind; ++i) {
                if (sign_class(z_new[i]) != sign_base[i]) {
                    DenseSegment seg{t, h_eff, &x, &k};
                    Real ti;
                    try {
                        ti = locate_state_event(seg, sys.indicators, i, opts.event_tol);
                    } catch (const std::logic_error&) {
                        // interpolant endpoint rounds to the old sign while the
                        // step endpoint flipped: crossing at the step end
                        ti = t_new;
                    }
                    if (hit_index < 0 || ti < t_hit) {
                        hit_index = i;
                        t_hit = ti;
                    }
                }
            }
        }

        if (hit_index >= 0) {
            ++sol.stats.accepted_steps;
            const Real theta = (t_hit - t) / h_eff;
            DenseSegment seg{t, h_eff, &x, &k};
            seg.state_at(theta, xtmp);
            if (tape) {
                tape->records.push_back(TapeStep{t, h_eff, theta, x,
                                                 sys.discrete_state ? sys.discrete_state() : Vec{},
                                                 k, static_cast<int>(sol.times.size())});
            }
            t = t_hit;
            x = xtmp;
            save_row(t, x, nullptr);
            apply_event(EventKind::State, hit_index);
            rearm(t, x);
            h = opts.h_init;
            err_prev = 1e-4;
            k1_valid = false;
            continue;
        }

        // commit the step
        ++sol.stats.accepted_steps;
        if (tape) {
            tape->records.push_back(TapeStep{t, h_eff, 1.0, x,
                                             sys.discrete_state ? sys.discrete_state() : Vec{},
                                             k, static_cast<int>(sol.times.size())});
        }
        t = t_new;
        x.swap(xnew);
        save_row(t, x, &k[6]);  // FSAL stage is the derivative at the new point
        k[0].swap(k[6]);        // reuse as k1 of the next step
        if (n_ind > 0) {
            for (int i = 0; i < n_ind; ++i) {
                sign_base[i] = sign_class(z_new[i]);
            }
        }

        Real grow = kSafety * std::pow(err, -0.17) * std::pow(err_prev, 0.04);
        if (!std::isfinite(grow)) {
            grow = 10.0;
        }
        h = h_eff * std::clamp(grow, 0.2, 10.0);
        err_prev = std::max(err, 1e-4);

        if (landed && target_is_tev) {
            apply_event(EventKind::Time, -1);
            // a handler may push indicators across zero: fire those state
            // events at the same instant, time event first (tie-break)
            if (n_ind > 0) {
                std::vector<bool> fired(n_ind, false);
                for (int pass = 0; pass < 32; ++pass) {
                    sys.indicators(t, x, z_tmp);
                    int idx = -1;
                    for (int i = 0; i < n_ind; ++i) {
                        if (!fired[i] && sign_class(z_tmp[i]) != sign_base[i]) {
                            idx = i;
                            break;
                        }
                    }
                    if (idx < 0) {
                        break;
                    }
                    fired[idx] = true;
                    apply_event(EventKind::State, idx);
                }
                rearm(t, x);
            }
            h = opts.h_init;
            err_prev = 1e-4;
            k1_valid = false;
        }
    }

    sol.wall_time =
        std::chrono::duration<Real>(std::chrono::steady_clock::now() - t_start_wall).count();
    return sol;
}

Solution simulate_model(const HybridModel& model, const ModelState& start, Real t_end,
                        const SolverOptions& opts, Tape* tape, ModelState* final_state) {
    if (static_cast<int>(start.x_c.size()) != model.n_states() ||
        static_cast<int>(start.x_d.size()) != model.n_discrete()) {
        throw std::invalid_argument("simulate_model: start state does not match model '" +
                                    model.name() + "'");
    }
    ModelState cur = start;
    ModelIO io;
    SystemCallbacks sys;
    sys.n_states = model.n_states();
    sys.n_indicators = model.n_indicators();
    sys.rhs = [&](Real t, const Vec& x, Vec& dx) {
        cur.t = t;
        cur.x_c = x;
        model.derivative(cur, io, dx);
    };
    sys.indicators = [&](Real t, const Vec& x, Vec& z) {
        cur.t = t;
        cur.x_c = x;
        model.indicators(cur, z);
    };
    sys.next_time_event = [&](Real t) { return model.next_time_event(t); };
    sys.handle_event = [&](Real t, Vec& x, EventKind kind, int idx) {
        cur.t = t;
        cur.x_c = x;
        model.handle_event(cur, kind, idx);
        x = cur.x_c;
    };
    sys.discrete_state = [&]() { return cur.x_d; };
    Solution sol = solve(sys, start.x_c, start.t, t_end, opts, tape);
    if (final_state) {
        final_state->t = sol.times.back();
        final_state->x_c = sol.states.back();
        final_state->x_d = cur.x_d;
    }
    return sol;
}

void write_solution(const std::string& path, const Solution& sol) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write file: " + path);
    }
    out << "# accepted_steps=" << sol.stats.accepted_steps << '\n';
    out << "# rejected_steps=" << sol.stats.rejected_steps << '\n';
    out << "# n_state_events=" << sol.stats.n_state_events << '\n';
    out << "# n_time_events=" << sol.stats.n_time_events << '\n';
    out << "# rhs_evaluations=" << sol.stats.rhs_evaluations << '\n';
    out << "# wall_time=" << csv::format_real(sol.wall_time) << '\n';
    const std::size_t n = sol.states.empty() ? 0 : sol.states.front().size();
    out << 't';
    for (std::size_t i = 0; i < n; ++i) {
        out << ",x" << (i + 1);
    }
    out << '\n';
    for (std::size_t r = 0; r < sol.rows(); ++r) {
        out << csv::format_real(sol.times[r]);
        for (std::size_t i = 0; i < n; ++i) {
            out << ',' << csv::format_real(sol.states[r][i]);
        }
        out << '\n';
    }
}

Solution read_solution(const std::string& path) {
    const auto tab = csv::read_table(path);
    if (tab.header.empty() || tab.header[0] != "t") {
        throw std::runtime_error(path + ": expected solution header 't,x1,...'");
    }
    Solution sol;
    for (const auto& row : tab.rows) {
        sol.times.push_back(row[0]);
        sol.states.emplace_back(row.begin() + 1, row.end());
    }
    auto parse_stat = [&](const std::string& key) -> std::optional<Real> {
        for (const auto& c : tab.comments) {
            const auto pos = c.find(key + "=");
            if (pos != std::string::npos) {
                return std::stod(c.substr(pos + key.size() + 1));
            }
        }
        return std::nullopt;
    };
    if (auto v = parse_stat("accepted_steps")) sol.stats.accepted_steps = static_cast<long>(*v);
    if (auto v = parse_stat("rejected_steps")) sol.stats.rejected_steps = static_cast<long>(*v);
    if (auto v = parse_stat("n_state_events")) sol.stats.n_state_events = static_cast<long>(*v);
    if (auto v = parse_stat("n_time_events")) sol.stats.n_time_events = static_cast<long>(*v);
    if (auto v = parse_stat("rhs_evaluations")) sol.stats.rhs_evaluations = static_cast<long>(*v);
    if (auto v = parse_stat("wall_time")) sol.wall_time = *v;
    return sol;
}

long solver_invocations() {
    return g_solver_invocations.load(std::memory_order_relaxed);
}

}  // namespace nfmu
