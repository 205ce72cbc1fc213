#include "nfmu/model.hpp"

#include <cmath>

namespace nfmu {

void HybridModel::check_finite(const Vec& dx, Real t) const {
    for (std::size_t i = 0; i < dx.size(); ++i) {
        if (!std::isfinite(dx[i])) {
            throw SimulationError("non-finite derivative in state index " + std::to_string(i) +
                                  " of model '" + name() + "' at t=" + std::to_string(t));
        }
    }
}

void HybridModel::derivative_jacobian(const ModelState& s, const ModelIO& io, Vec& jac) const {
    const int n = n_states();
    jac.assign(static_cast<std::size_t>(n) * n, 0.0);
    ModelState pert = s;
    Vec dp(n), dm(n);
    for (int j = 0; j < n; ++j) {
        const Real h = 1e-7 * std::max(1.0, std::abs(s.x_c[j]));
        pert.x_c[j] = s.x_c[j] + h;
        derivative(pert, io, dp);
        pert.x_c[j] = s.x_c[j] - h;
        derivative(pert, io, dm);
        pert.x_c[j] = s.x_c[j];
        for (int i = 0; i < n; ++i) {
            jac[static_cast<std::size_t>(i) * n + j] = (dp[i] - dm[i]) / (2.0 * h);
        }
    }
}

void HybridModel::derivative_jacobian_discrete(const ModelState& s, const ModelIO& io, Vec& jac) const {
    const int n = n_states();
    const int m = n_discrete();
    jac.assign(static_cast<std::size_t>(n) * m, 0.0);
    if (m == 0) {
        return;
    }
    ModelState pert = s;
    Vec dp(n), dm(n);
    for (int j = 0; j < m; ++j) {
        const Real h = 1e-7 * std::max(1.0, std::abs(s.x_d[j]));
        pert.x_d[j] = s.x_d[j] + h;
        derivative(pert, io, dp);
        pert.x_d[j] = s.x_d[j] - h;
        derivative(pert, io, dm);
        pert.x_d[j] = s.x_d[j];
        for (int i = 0; i < n; ++i) {
            jac[static_cast<std::size_t>(i) * m + j] = (dp[i] - dm[i]) / (2.0 * h);
        }
    }
}

void HybridModel::handle_event_vjp(const ModelState&, EventKind, int, Vec&, Vec&) const {
    // identity transfer on x_c and x_d
}

bool HybridModel::channel_held(const ModelState&, int) const {
    return false;
}

Snapshot save_state(const HybridModel& model, const ModelState& s) {
    return Snapshot{model.name(), s};
}

void restore_state(const HybridModel& model, ModelState& s, const Snapshot& snap) {
    if (snap.model_name != model.name()) {
        throw std::invalid_argument("snapshot from model '" + snap.model_name +
                                    "' cannot be restored into model '" + model.name() + "'");
    }
    s = snap.state;
}

}  // namespace nfmu
