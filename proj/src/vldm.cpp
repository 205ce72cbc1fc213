#include "nfmu/vldm.hpp"

#include <algorithm>
#include <cmath>

namespace nfmu {

VldmLite VldmLite::baseline(DrivingCycle cycle) {
    Params p;
    p.c_v = 0.0;
    return VldmLite("vldm-lite-baseline", p, std::move(cycle));
}

VldmLite VldmLite::ground_truth(DrivingCycle cycle) {
    Params p;
    p.c_v = 15.0;
    return VldmLite("vldm-lite-truth", p, std::move(cycle));
}

ModelState VldmLite::initial_state() const {
    ModelState s;
    s.t = 0.0;
    s.x_c.assign(6, 0.0);
    s.x_d.assign(5, 0.0);  // commands 0, branches inactive, standstill
    return s;
}

Real VldmLite::traction_limit(Real v) const {
    return std::min(params_.f_max, params_.p_max / std::max(v, 0.1));
}

void VldmLite::derivative(const ModelState& s, const ModelIO&, Vec& dx) const {
    const Params& p = params_;
    const Real x5 = s.x_c[4];
    const Real u_thr = s.x_d[kUThr];
    const Real u_brk = s.x_d[kUBrk];
    const Real thr_act = s.x_d[kThrActive];
    const Real brk_act = s.x_d[kBrkActive];
    const Real sgn = s.x_d[kSign];

    const Real v_cyc = cycle_.speed(s.t);
    const Real e = v_cyc - x5;
    const Real f_trac = u_thr * traction_limit(x5);

    dx.resize(6);
    dx[0] = thr_act != 0.0 ? e : 0.0;
    dx[1] = brk_act != 0.0 ? -e : 0.0;
    dx[2] = v_cyc;
    dx[3] = x5;
    if (sgn == 0.0) {
        dx[4] = 0.0;  // standstill: static friction balances the drivetrain
    } else {
        const Real f_brk = u_brk * p.f_brk_max * sgn;
        const Real f_roll = p.c_r * p.m_veh * p.g * sgn;
        const Real f_aero = 0.5 * p.rho * p.cd_a * x5 * std::abs(x5);
        const Real f_extra = p.c_v * x5;
        dx[4] = (f_trac - f_brk - f_roll - f_aero - f_extra) / p.m_veh;
    }
    dx[5] = f_trac * x5 / p.eta_d + p.p_aux;
    check_finite(dx, s.t);
}

void VldmLite::indicators(const ModelState& s, Vec& z) const {
    z.resize(1);
    z[0] = s.x_c[4];
}

std::optional<Real> VldmLite::next_time_event(Real t) const {
    const Real period = params_.controller_period;
    Real next = (std::floor(t / period) + 1.0) * period;
    if (next <= t) {
        next = (std::floor(t / period) + 2.0) * period;
    }
    return next;
}

void VldmLite::handle_event(ModelState& s, EventKind kind, int indicator_index) const {
    const Params& p = params_;
    if (kind == EventKind::State) {
        if (indicator_index != 0) {
            throw std::invalid_argument("vldm-lite: unknown indicator index " +
                                        std::to_string(indicator_index));
        }
        const Real post_sign = s.x_c[4] >= 0.0 ? 1.0 : -1.0;
        Real& sgn = s.x_d[kSign];
        if (sgn == 0.0) {
            sgn = post_sign;  // dragged out of standstill between ticks
        } else if (sgn == -post_sign) {
            sgn = 0.0;  // reversal through zero: stick
        }
        // crossing in the direction of travel (post-breakaway): keep branch
        return;
    }

    // 100 Hz controller tick: sample the speed error, update hysteresis
    // branches and held commands, check standstill breakaway.
    const Real x5 = s.x_c[4];
    const Real e = cycle_.speed(s.t) - x5;

    Real& thr_act = s.x_d[kThrActive];
    Real& brk_act = s.x_d[kBrkActive];
    if (thr_act != 0.0 && e < p.deactivate_threshold) {
        thr_act = 0.0;
    }
    if (thr_act == 0.0 && e > p.activate_threshold) {
        thr_act = 1.0;
        s.x_c[0] = 0.0;  // integrator initialized at the activation edge
    }
    if (brk_act != 0.0 && -e < p.deactivate_threshold) {
        brk_act = 0.0;
    }
    if (brk_act == 0.0 && -e > p.activate_threshold) {
        brk_act = 1.0;
        s.x_c[1] = 0.0;
    }

    const auto clamp01 = [](Real v) { return std::clamp(v, 0.0, 1.0); };
    s.x_d[kUThr] = thr_act != 0.0 ? clamp01(p.kp * e + p.ki * s.x_c[0]) : 0.0;
    s.x_d[kUBrk] = brk_act != 0.0 ? clamp01(-p.kp * e + p.ki * s.x_c[1]) : 0.0;

    Real& sgn = s.x_d[kSign];
    if (sgn == 0.0) {
        // held commands and x5 are constant until the next tick, so checking
        // the force balance here is exact
        const Real f_trac = s.x_d[kUThr] * traction_limit(x5);
        const Real hold = p.c_r * p.m_veh * p.g + s.x_d[kUBrk] * p.f_brk_max;
        if (f_trac > hold) {
            sgn = 1.0;
        } else if (f_trac < -hold) {
            sgn = -1.0;
        } else if (std::abs(x5) > p.v_rest_eps) {
            sgn = x5 > 0.0 ? 1.0 : -1.0;
        }
    }
}

bool VldmLite::channel_held(const ModelState& s, int channel) const {
    // standstill: static friction clamps the speed state
    return channel == 4 && s.x_d[kSign] == 0.0;
}

void VldmLite::derivative_jacobian(const ModelState& s, const ModelIO&, Vec& jac) const {
    const Params& p = params_;
    const Real x5 = s.x_c[4];
    const Real u_thr = s.x_d[kUThr];
    const Real sgn = s.x_d[kSign];

    jac.assign(36, 0.0);
    jac[0 * 6 + 4] = s.x_d[kThrActive] != 0.0 ? -1.0 : 0.0;
    jac[1 * 6 + 4] = s.x_d[kBrkActive] != 0.0 ? 1.0 : 0.0;
    jac[3 * 6 + 4] = 1.0;

    const Real xm = std::max(x5, 0.1);
    const bool power_limited = p.p_max / xm < p.f_max;
    const Real dlim = (power_limited && x5 > 0.1) ? -p.p_max / (x5 * x5) : 0.0;
    if (sgn != 0.0) {
        jac[4 * 6 + 4] = (u_thr * dlim - p.rho * p.cd_a * std::abs(x5) - p.c_v) / p.m_veh;
    }
    jac[5 * 6 + 4] = u_thr * (dlim * x5 + traction_limit(x5)) / p.eta_d;
}

void VldmLite::derivative_jacobian_discrete(const ModelState& s, const ModelIO&, Vec& jac) const {
    const Params& p = params_;
    const Real x5 = s.x_c[4];
    const Real sgn = s.x_d[kSign];
    const Real lim = traction_limit(x5);

    jac.assign(30, 0.0);  // 6 x 5; branch flags and sign are pure discrete
    if (sgn != 0.0) {
        jac[4 * 5 + kUThr] = lim / p.m_veh;
        jac[4 * 5 + kUBrk] = -p.f_brk_max * sgn / p.m_veh;
    }
    jac[5 * 5 + kUThr] = lim * x5 / p.eta_d;
}

void VldmLite::handle_event_vjp(const ModelState& pre, EventKind kind, int,
                                Vec& lambda_c, Vec& lambda_d) const {
    if (kind == EventKind::State) {
        return;  // x_c unchanged, branch switch is pure discrete
    }
    const Params& p = params_;

    // replay the tick's branch decisions at the primal point
    const Real x5 = pre.x_c[4];
    const Real e = cycle_.speed(pre.t) - x5;
    Real thr_act = pre.x_d[kThrActive];
    Real brk_act = pre.x_d[kBrkActive];
    bool thr_reset = false, brk_reset = false;
    if (thr_act != 0.0 && e < p.deactivate_threshold) {
        thr_act = 0.0;
    }
    if (thr_act == 0.0 && e > p.activate_threshold) {
        thr_act = 1.0;
        thr_reset = true;
    }
    if (brk_act != 0.0 && -e < p.deactivate_threshold) {
        brk_act = 0.0;
    }
    if (brk_act == 0.0 && -e > p.activate_threshold) {
        brk_act = 1.0;
        brk_reset = true;
    }
    const Real x1_eff = thr_reset ? 0.0 : pre.x_c[0];
    const Real x2_eff = brk_reset ? 0.0 : pre.x_c[1];
    const Real w_thr = p.kp * e + p.ki * x1_eff;
    const Real w_brk = -p.kp * e + p.ki * x2_eff;
    const bool thr_lin = thr_act != 0.0 && w_thr > 0.0 && w_thr < 1.0;
    const bool brk_lin = brk_act != 0.0 && w_brk > 0.0 && w_brk < 1.0;

    // u_thr' = clamp(kp*e + ki*x1', 0, 1), e = v_cyc - x5
    const Real l_uthr = lambda_d[kUThr];
    const Real l_ubrk = lambda_d[kUBrk];
    if (thr_lin) {
        lambda_c[4] += l_uthr * (-p.kp);
        if (!thr_reset) {
            lambda_c[0] += l_uthr * p.ki;
        }
    }
    if (brk_lin) {
        lambda_c[4] += l_ubrk * p.kp;
        if (!brk_reset) {
            lambda_c[1] += l_ubrk * p.ki;
        }
    }
    if (thr_reset) {
        lambda_c[0] = 0.0;
    }
    if (brk_reset) {
        lambda_c[1] = 0.0;
    }
    // held commands are overwritten at every tick
    lambda_d[kUThr] = 0.0;
    lambda_d[kUBrk] = 0.0;
}

}  // namespace nfmu
