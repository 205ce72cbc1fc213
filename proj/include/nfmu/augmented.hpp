#pragma once

#include "nfmu/model.hpp"
#include "nfmu/net.hpp"
#include "nfmu/solver.hpp"

#include <functional>
#include <memory>

namespace nfmu {

/// Hybrid model with a neural derivative pipeline: the base derivative is
/// trimmed to input_subset, run through the network (whose last layer mixes
/// against the base value via gates), and scattered back onto
/// output_channel_map; all other channels pass through unchanged.
struct AugmentedModel {
    std::shared_ptr<const HybridModel> base;
    std::vector<int> input_subset;
    std::vector<int> output_channel_map;
    NetSpec net;
    ParamVector params;

    // optional state network between the solver state and the base model
    std::shared_ptr<const NetSpec> state_net;
    std::shared_ptr<const ParamVector> state_params;

    void validate() const;
    [[nodiscard]] int n_gated() const { return static_cast<int>(output_channel_map.size()); }

    /// Views into the gate parameters of the final Gates layer.
    [[nodiscard]] std::pair<Real*, Real*> gate_params();
    void set_gates(Real p_ann, Real p_fmu);
};

/// Reusable evaluation buffers for the hot path.
struct AugWorkspace {
    Vec dx_base;
    Vec net_in;
    Vec side;
    Vec x_hat;
    ForwardRecord rec;
    ForwardRecord state_rec;
    ModelState scratch;
    Vec jac_c, jac_d;
    Vec w_base, w_y, g_in, g_side, v_base;
    Vec state_scratch_grad, state_grad_in;
};

/// Derivative of the augmented system at a consistent model state.
void augmented_derivative(const AugmentedModel& am, const ModelState& s, Vec& out,
                          AugWorkspace& ws);
[[nodiscard]] Vec augmented_derivative(const AugmentedModel& am, const ModelState& s);

/// Vector-Jacobian products of the augmented derivative: given upstream w,
/// computes w^T d(f)/d(x_c) into v_x, w^T d(f)/d(x_d) into v_d and
/// accumulates w^T d(f)/d(params) into grad_params (resized if empty).
void augmented_vjp(const AugmentedModel& am, const ModelState& s, const Vec& w, Vec& v_x,
                   Vec& v_d, Vec& grad_params, AugWorkspace& ws);

/// Event-aware simulation of the augmented model. Events are detected and
/// handled exactly as in a plain base-model run; with a state network the
/// post-event solver state is recovered by inversion.
Solution simulate(const AugmentedModel& am, const ModelState& start, Real t_end,
                  const SolverOptions& opts, Tape* tape = nullptr,
                  ModelState* final_state = nullptr);

struct InversionOptions {
    int max_iters = 100;
    Real x_tol = 1e-10;
    Real indicator_penalty_weight = 1e3;
    Real indicator_boundary_layer = 1e-6;  // width of the softplus hinge on z
};

struct InversionResult {
    Vec x;
    Real residual = 0.0;
    int iters = 0;
    bool converged = false;
};

/// Solves min_x ||net(x) - x_hat_target||^2 + w*eps*softplus(-s*z(x)/eps)
/// with damped Gauss-Newton, starting from x_init. indicator_sign s orients
/// the penalty toward the post-event indicator sign (the hinge keeps z on the
/// post-event side within a boundary layer eps); 0 (time events) disables it.
InversionResult invert_state_ann(const NetSpec& net, const ParamVector& params,
                                 const Vec& x_hat_target,
                                 const std::function<Real(const Vec&)>& indicator,
                                 Real indicator_sign, const Vec& x_init,
                                 const InversionOptions& opts);

/// Pre/post-processed tanh network with gates over one derivative subset,
/// matching the consumption-model reference topology when called with
/// subset {3,4,5}, map {4} and 32 hidden units.
AugmentedModel make_derivative_augmentation(std::shared_ptr<const HybridModel> base,
                                            std::vector<int> input_subset,
                                            std::vector<int> output_channel_map, int hidden,
                                            std::uint64_t seed);

/// Writes the trainable pre-process shift/scale from channel statistics of
/// the network inputs (rows of input_subset width).
void init_pre_from_stats(AugmentedModel& am, const std::vector<Vec>& samples);

/// Freezes the inverse post-process from statistics of the mapped derivative
/// channels; headroom widens the representable band around the mean so the
/// tanh output range covers the data.
void freeze_post_from_stats(AugmentedModel& am, const std::vector<Vec>& samples, Real headroom);

}  // namespace nfmu
