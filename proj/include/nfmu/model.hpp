#pragma once

#include "nfmu/types.hpp"

#include <memory>
#include <optional>

namespace nfmu {

/// Model-exchange contract for discontinuous ODE models. All mutable state
/// lives in an explicit ModelState; the model object itself holds only
/// parameters and is safe to share between instances.
class HybridModel {
public:
    virtual ~HybridModel() = default;

    [[nodiscard]] virtual const std::string& name() const = 0;
    [[nodiscard]] virtual int n_states() const = 0;
    [[nodiscard]] virtual int n_discrete() const = 0;
    [[nodiscard]] virtual int n_indicators() const = 0;
    [[nodiscard]] virtual int n_inputs() const { return 0; }

    [[nodiscard]] virtual ModelState initial_state() const = 0;

    /// Continuous state derivative. Reads x_d, never writes it. Writes dx
    /// (resized to n_states). Throws SimulationError on non-finite results,
    /// identifying the state index.
    virtual void derivative(const ModelState& s, const ModelIO& io, Vec& dx) const = 0;

    /// Event indicator values; continuous in x_c between events.
    virtual void indicators(const ModelState& s, Vec& z) const = 0;

    /// Smallest scheduled event time strictly greater than t, if any.
    [[nodiscard]] virtual std::optional<Real> next_time_event(Real t) const = 0;

    /// Apply the event effect at a located event instant. May modify x_c and
    /// x_d. indicator_index is ignored for time events.
    virtual void handle_event(ModelState& s, EventKind kind, int indicator_index) const = 0;

    /// True when a discrete mode currently constrains the channel's
    /// derivative to zero (e.g. static friction holding a speed state).
    /// Augmentations must not inject dynamics into held channels.
    [[nodiscard]] virtual bool channel_held(const ModelState& s, int channel) const;

    /// Jacobian of derivative() w.r.t. x_c, row-major n x n. Default is a
    /// central finite difference; models override with analytic forms.
    virtual void derivative_jacobian(const ModelState& s, const ModelIO& io, Vec& jac) const;

    /// Jacobian of derivative() w.r.t. x_d, row-major n x n_discrete.
    /// Entries for purely discrete switches (mode flags) are zero.
    virtual void derivative_jacobian_discrete(const ModelState& s, const ModelIO& io, Vec& jac) const;

    /// Pull adjoints of the post-event state back to the pre-event state,
    /// treating the handler as an explicit map differentiated at the primal
    /// branch. Default: identity on both x_c and x_d adjoints.
    virtual void handle_event_vjp(const ModelState& pre, EventKind kind, int indicator_index,
                                  Vec& lambda_c, Vec& lambda_d) const;

protected:
    void check_finite(const Vec& dx, Real t) const;
};

/// Opaque memory copy of a model instance's entire state.
struct Snapshot {
    std::string model_name;
    ModelState state;
};

[[nodiscard]] Snapshot save_state(const HybridModel& model, const ModelState& s);

/// Throws std::invalid_argument if the snapshot was taken from a different
/// model type.
void restore_state(const HybridModel& model, ModelState& s, const Snapshot& snap);

}  // namespace nfmu
