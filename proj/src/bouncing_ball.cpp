#include "nfmu/bouncing_ball.hpp"

namespace nfmu {

ModelState BouncingBall::initial_state() const {
    ModelState s;
    s.t = 0.0;
    s.x_c = {params_.h0, params_.v0};
    s.x_d = {};
    return s;
}

void BouncingBall::derivative(const ModelState& s, const ModelIO&, Vec& dx) const {
    dx.resize(2);
    dx[0] = s.x_c[1];
    dx[1] = -params_.g;
    check_finite(dx, s.t);
}

void BouncingBall::indicators(const ModelState& s, Vec& z) const {
    z.resize(1);
    z[0] = s.x_c[0];
}

std::optional<Real> BouncingBall::next_time_event(Real) const {
    return std::nullopt;
}

void BouncingBall::handle_event(ModelState& s, EventKind kind, int indicator_index) const {
    if (kind == EventKind::Time) {
        return;
    }
    if (indicator_index != 0) {
        throw std::invalid_argument("bouncing-ball: unknown indicator index " +
                                    std::to_string(indicator_index));
    }
    s.x_c[0] = 0.0;
    s.x_c[1] = -params_.restitution * s.x_c[1];
}

void BouncingBall::derivative_jacobian(const ModelState&, const ModelIO&, Vec& jac) const {
    jac.assign(4, 0.0);
    jac[1] = 1.0;  // d(h')/dv
}

void BouncingBall::handle_event_vjp(const ModelState&, EventKind kind, int,
                                    Vec& lambda_c, Vec&) const {
    if (kind == EventKind::Time) {
        return;
    }
    lambda_c[0] = 0.0;  // height pinned to 0
    lambda_c[1] = -params_.restitution * lambda_c[1];
}

}  // namespace nfmu
