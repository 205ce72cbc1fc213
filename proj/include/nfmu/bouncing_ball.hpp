#pragma once

#include "nfmu/model.hpp"

namespace nfmu {

/// Bouncing ball with restitution; the event-handling oracle. States are
/// [height, velocity], one indicator z = height. At a bounce the velocity is
/// reflected and scaled by the restitution factor and the height is pinned to
/// the contact plane.
class BouncingBall final : public HybridModel {
public:
    struct Params {
        Real g = 9.81;
        Real restitution = 0.8;
        Real h0 = 1.0;
        Real v0 = 0.0;
    };

    BouncingBall() = default;
    explicit BouncingBall(Params p) : params_(p) {}

    [[nodiscard]] const std::string& name() const override { return name_; }
    [[nodiscard]] int n_states() const override { return 2; }
    [[nodiscard]] int n_discrete() const override { return 0; }
    [[nodiscard]] int n_indicators() const override { return 1; }

    [[nodiscard]] ModelState initial_state() const override;

    void derivative(const ModelState& s, const ModelIO& io, Vec& dx) const override;
    void indicators(const ModelState& s, Vec& z) const override;
    [[nodiscard]] std::optional<Real> next_time_event(Real t) const override;
    void handle_event(ModelState& s, EventKind kind, int indicator_index) const override;

    void derivative_jacobian(const ModelState& s, const ModelIO& io, Vec& jac) const override;
    void handle_event_vjp(const ModelState& pre, EventKind kind, int indicator_index,
                          Vec& lambda_c, Vec& lambda_d) const override;

    [[nodiscard]] const Params& params() const { return params_; }

private:
    Params params_;
    std::string name_ = "bouncing-ball";
};

}  // namespace nfmu
