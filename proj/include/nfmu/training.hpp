#pragma once

#include "nfmu/augmented.hpp"

#include <cstdint>
#include <optional>

namespace nfmu {

struct AdamOptions {
    Real beta1 = 0.9;
    Real beta2 = 0.999;
    Real eps = 1e-8;
};

/// step size at optimizer step k: max(initial * decay^k, floor)
struct StepSchedule {
    Real initial = 1e-3;
    Real decay = 0.95;
    Real floor = 1e-5;

    [[nodiscard]] Real at(long k) const;
};

struct TrainConfig {
    int loss_channel = 5;              // cumulative consumption x6
    Real batch_element_length = 10.0;  // s
    int epochs = 1;
    long max_steps = -1;               // cap across epochs; -1 = no cap
    AdamOptions adam;
    StepSchedule schedule;
    std::uint64_t seed = 0;
    bool snapshot_batching = false;
    bool shuffle_elements = false;     // random element order (snapshot mode only)
    SolverOptions solver;
    std::vector<std::uint8_t> frozen;  // per-parameter freeze mask, optional

    void validate(Real window_length) const;
};

struct BatchElement {
    Real t_start = 0.0;
    Real t_end = 0.0;
    Vec target_times;
    Vec target_values;
    std::optional<Snapshot> start_snapshot;
};

/// Mean squared deviation between the interpolated solution channel and the
/// target samples.
[[nodiscard]] Real mse_loss(const Solution& sol, const Vec& target_times,
                            const Vec& target_values, int channel);

struct GradientResult {
    Real loss = 0.0;
    Vec grad;        // d loss / d am.params
    Vec grad_x0;     // d loss / d initial continuous state
};

/// Taped simulation over [start.t, t_end] followed by a reverse sweep over
/// the recorded steps (discrete adjoint). Event instants are frozen; event
/// handlers are differentiated through handle_event_vjp.
GradientResult gradient(const AugmentedModel& am, const ModelState& start, Real t_end,
                        const Vec& target_times, const Vec& target_values, int channel,
                        const SolverOptions& opts, ModelState* final_state = nullptr);

struct DerivSamples {
    std::vector<Vec> inputs;   // network inputs per saved point
    std::vector<Vec> targets;  // mapped derivative channels per saved point
};

/// Extracts (input subset, mapped channel) derivative samples from a
/// reference solution. Uses recorded derivatives when present; otherwise
/// recomputes them through the base model (requires recorded discrete state).
[[nodiscard]] DerivSamples derivative_samples(const AugmentedModel& am, const Solution& reference);

struct PretrainResult {
    Real final_loss = 0.0;
    long iters = 0;
};

/// Trains the pre/ANN/post pipeline (gates excluded) to reproduce the mapped
/// derivative channels of the reference simulation: the identity map on the
/// gated channels. No ODE is solved. Stops early below target_loss.
PretrainResult nipt_pretrain(AugmentedModel& am, const Solution& reference, long iters, Real step,
                             Real target_loss = 0.0);

/// Collocation pre-training: fits the merged derivative (gates included) to
/// target derivatives along a given state trajectory, no ODE solve. Refuses
/// when the objective channel is not gated or the trajectory does not cover
/// the full state.
PretrainResult ccpt_pretrain(AugmentedModel& am, const Vec& times,
                             const std::vector<Vec>& states, const std::vector<Vec>& derivs,
                             int objective_channel, long iters, Real step,
                             Real target_loss = 0.0);

/// Central differences at interior points, one-sided at the ends; optional
/// centered moving-average smoothing of the result.
[[nodiscard]] std::vector<Vec> estimate_derivatives(const Vec& times,
                                                    const std::vector<Vec>& states,
                                                    int smooth_window = 0);

[[nodiscard]] std::vector<BatchElement> make_batches_sequential(Real t0, Real t_end,
                                                                Real element_length,
                                                                const Vec& target_times,
                                                                const Vec& target_values);

/// One forward pass over the window caching a full-state snapshot at each
/// element start; elements may then be simulated in any order.
[[nodiscard]] std::vector<BatchElement> make_batches_snapshot(const AugmentedModel& am,
                                                              const ModelState& start, Real t_end,
                                                              Real element_length,
                                                              const Vec& target_times,
                                                              const Vec& target_values,
                                                              const SolverOptions& opts);

struct TrainHistoryRow {
    long step = 0;
    int epoch = 0;
    int element = 0;
    Real loss = 0.0;
    Real step_size = 0.0;
    Real wall_s = 0.0;
};

struct TrainResult {
    std::vector<TrainHistoryRow> history;
};

/// Adam with the exponential-decay schedule over batch elements. Sequential
/// mode carries the model state across elements without resetting; snapshot
/// mode restarts each element from its cached snapshot.
TrainResult train(AugmentedModel& am, const ModelState& start, Real t_end,
                  const Vec& target_times, const Vec& target_values, const TrainConfig& cfg);

void write_history(const std::string& path, const std::vector<TrainHistoryRow>& rows);

}  // namespace nfmu
