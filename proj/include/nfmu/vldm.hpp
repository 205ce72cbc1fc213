#pragma once

#include "nfmu/driving_cycle.hpp"
#include "nfmu/model.hpp"

namespace nfmu {

/// Six-state vehicle longitudinal dynamics consumption model with two sampled
/// PI pedal controllers (100 Hz zero-order hold), pedal-activation hysteresis
/// and a Karnopp-style friction sign branch.
///
/// Continuous states:
///   x1 throttle PI integrator, x2 brake PI integrator, x3 cycle position,
///   x4 vehicle position, x5 vehicle speed, x6 cumulative consumption [Ws].
/// Discrete states:
///   u_thr, u_brk (held pedal commands), throttle/brake activation flags,
///   friction sign branch (-1, 0 = standstill, +1).
class VldmLite final : public HybridModel {
public:
    struct Params {
        Real m_veh = 1200.0;      // kg
        Real f_max = 3000.0;      // N, traction force limit
        Real p_max = 60e3;        // W, traction power limit
        Real f_brk_max = 4000.0;  // N
        Real c_r = 0.012;         // rolling resistance coefficient
        Real rho = 1.204;         // kg/m^3
        Real cd_a = 0.6;          // m^2, drag area
        Real eta_d = 0.85;        // drivetrain efficiency
        Real p_aux = 300.0;       // W
        Real g = 9.81;            // m/s^2
        Real c_v = 0.0;           // N*s/m, extra viscous friction (ground truth: 15)

        Real kp = 0.4;
        Real ki = 0.2;
        Real activate_threshold = 0.05;    // m/s on the speed error
        Real deactivate_threshold = 0.0;
        Real controller_period = 0.01;     // s
        Real v_rest_eps = 0.01;            // m/s, standstill band
    };

    // x_d layout
    static constexpr int kUThr = 0;
    static constexpr int kUBrk = 1;
    static constexpr int kThrActive = 2;
    static constexpr int kBrkActive = 3;
    static constexpr int kSign = 4;

    VldmLite(std::string name, Params p, DrivingCycle cycle)
        : params_(p), cycle_(std::move(cycle)), name_(std::move(name)) {}

    static VldmLite baseline(DrivingCycle cycle);
    static VldmLite ground_truth(DrivingCycle cycle);

    [[nodiscard]] const std::string& name() const override { return name_; }
    [[nodiscard]] int n_states() const override { return 6; }
    [[nodiscard]] int n_discrete() const override { return 5; }
    [[nodiscard]] int n_indicators() const override { return 1; }

    [[nodiscard]] ModelState initial_state() const override;

    void derivative(const ModelState& s, const ModelIO& io, Vec& dx) const override;
    void indicators(const ModelState& s, Vec& z) const override;
    [[nodiscard]] std::optional<Real> next_time_event(Real t) const override;
    void handle_event(ModelState& s, EventKind kind, int indicator_index) const override;

    [[nodiscard]] bool channel_held(const ModelState& s, int channel) const override;

    void derivative_jacobian(const ModelState& s, const ModelIO& io, Vec& jac) const override;
    void derivative_jacobian_discrete(const ModelState& s, const ModelIO& io, Vec& jac) const override;
    void handle_event_vjp(const ModelState& pre, EventKind kind, int indicator_index,
                          Vec& lambda_c, Vec& lambda_d) const override;

    [[nodiscard]] const Params& params() const { return params_; }
    [[nodiscard]] const DrivingCycle& cycle() const { return cycle_; }

    /// Traction force limit at speed v for a unit throttle command.
    [[nodiscard]] Real traction_limit(Real v) const;

private:
    Params params_;
    DrivingCycle cycle_;
    std::string name_;
};

}  // namespace nfmu
