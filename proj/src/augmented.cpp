#include "nfmu/augmented.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace nfmu {

namespace {

const ModelIO kNoIO{};

Real softplus(Real u) {
    return u > 30.0 ? u : std::log1p(std::exp(u));
}

Real sigmoid(Real u) {
    return 1.0 / (1.0 + std::exp(-u));
}

/// Gaussian elimination with partial pivoting; a is n x n row-major,
/// overwritten. Solves a*x = b in place of b.
void solve_dense(Vec& a, Vec& b) {
    const int n = static_cast<int>(b.size());
    for (int col = 0; col < n; ++col) {
        int piv = col;
        for (int r = col + 1; r < n; ++r) {
            if (std::abs(a[r * n + col]) > std::abs(a[piv * n + col])) {
                piv = r;
            }
        }
        if (a[piv * n + col] == 0.0) {
            throw std::runtime_error("invert_state_ann: singular normal equations");
        }
        if (piv != col) {
            for (int c2 = 0; c2 < n; ++c2) {
                std::swap(a[col * n + c2], a[piv * n + c2]);
            }
            std::swap(b[col], b[piv]);
        }
        for (int r = col + 1; r < n; ++r) {
            const Real f = a[r * n + col] / a[col * n + col];
            if (f == 0.0) {
                continue;
            }
            for (int c2 = col; c2 < n; ++c2) {
                a[r * n + c2] -= f * a[col * n + c2];
            }
            b[r] -= f * b[col];
        }
    }
    for (int r = n - 1; r >= 0; --r) {
        Real acc = b[r];
        for (int c2 = r + 1; c2 < n; ++c2) {
            acc -= a[r * n + c2] * b[c2];
        }
        b[r] = acc / a[r * n + r];
    }
}

}  // namespace

void AugmentedModel::validate() const {
    if (!base) {
        throw std::invalid_argument("AugmentedModel: missing base model");
    }
    const int n = base->n_states();
    std::set<int> seen;
    for (int idx : input_subset) {
        if (idx < 0 || idx >= n) {
            throw std::invalid_argument("AugmentedModel: input subset index out of range");
        }
        if (!seen.insert(idx).second) {
            throw std::invalid_argument("AugmentedModel: duplicate input subset index");
        }
    }
    seen.clear();
    for (int idx : output_channel_map) {
        if (idx < 0 || idx >= n) {
            throw std::invalid_argument("AugmentedModel: output map index out of range");
        }
        if (!seen.insert(idx).second) {
            throw std::invalid_argument("AugmentedModel: duplicate output map index");
        }
    }
    net.validate();
    if (net.input_width() != static_cast<int>(input_subset.size())) {
        throw std::invalid_argument("AugmentedModel: net input width does not match subset");
    }
    if (net.output_width() != n_gated()) {
        throw std::invalid_argument("AugmentedModel: net output width does not match map");
    }
    if (!std::holds_alternative<GatesLayer>(net.layers.back())) {
        throw std::invalid_argument("AugmentedModel: last net layer must be gates");
    }
    if (state_net) {
        state_net->validate();
        if (state_net->input_width() != n || state_net->output_width() != n) {
            throw std::invalid_argument("AugmentedModel: state net must be square n_states");
        }
        if (!state_params) {
            throw std::invalid_argument("AugmentedModel: state net without parameters");
        }
    }
}

std::pair<Real*, Real*> AugmentedModel::gate_params() {
    const int off = params.offsets.back();
    const int w = n_gated();
    return {params.values.data() + off, params.values.data() + off + w};
}

void AugmentedModel::set_gates(Real p_ann, Real p_fmu) {
    auto [pa, pf] = gate_params();
    for (int i = 0; i < n_gated(); ++i) {
        pa[i] = p_ann;
        pf[i] = p_fmu;
    }
}

void augmented_derivative(const AugmentedModel& am, const ModelState& s, Vec& out,
                          AugWorkspace& ws) {
    const HybridModel& base = *am.base;
    const ModelState* eval_state = &s;
    if (am.state_net) {
        ws.x_hat = forward(*am.state_net, *am.state_params, s.x_c, {}, ws.state_rec);
        ws.scratch.t = s.t;
        ws.scratch.x_c = ws.x_hat;
        ws.scratch.x_d = s.x_d;
        eval_state = &ws.scratch;
    }
    base.derivative(*eval_state, kNoIO, ws.dx_base);

    const std::size_t n_in = am.input_subset.size();
    const std::size_t n_map = am.output_channel_map.size();
    ws.net_in.resize(n_in);
    for (std::size_t i = 0; i < n_in; ++i) {
        ws.net_in[i] = ws.dx_base[am.input_subset[i]];
    }
    ws.side.resize(n_map);
    for (std::size_t i = 0; i < n_map; ++i) {
        ws.side[i] = ws.dx_base[am.output_channel_map[i]];
    }
    const Vec& merged = forward(am.net, am.params, ws.net_in, ws.side, ws.rec);

    out = ws.dx_base;
    for (std::size_t i = 0; i < n_map; ++i) {
        const int ch = am.output_channel_map[i];
        if (!base.channel_held(*eval_state, ch)) {
            out[ch] = merged[i];
        }
        // held channels keep the base (constrained) derivative
    }
}

Vec augmented_derivative(const AugmentedModel& am, const ModelState& s) {
    AugWorkspace ws;
    Vec out;
    augmented_derivative(am, s, out, ws);
    return out;
}

void augmented_vjp(const AugmentedModel& am, const ModelState& s, const Vec& w, Vec& v_x,
                   Vec& v_d, Vec& grad_params, AugWorkspace& ws) {
    const HybridModel& base = *am.base;
    const int n = base.n_states();
    const int m = base.n_discrete();
    if (grad_params.empty()) {
        grad_params.assign(am.params.values.size(), 0.0);
    }

    // recompute the primal pipeline at s
    Vec out_unused;
    augmented_derivative(am, s, out_unused, ws);

    const ModelState* hold_state = am.state_net ? &ws.scratch : &s;
    const std::size_t n_map = am.output_channel_map.size();
    ws.w_y.resize(n_map);
    for (std::size_t i = 0; i < n_map; ++i) {
        const int ch = am.output_channel_map[i];
        ws.w_y[i] = base.channel_held(*hold_state, ch) ? 0.0 : w[ch];
    }
    backward(am.net, am.params, ws.rec, ws.w_y, ws.g_in, ws.g_side, grad_params);

    // pull the upstream back onto the base derivative
    ws.w_base = w;
    for (std::size_t i = 0; i < n_map; ++i) {
        const int ch = am.output_channel_map[i];
        if (!base.channel_held(*hold_state, ch)) {
            ws.w_base[ch] = ws.g_side[i];
        }
    }
    for (std::size_t i = 0; i < am.input_subset.size(); ++i) {
        ws.w_base[am.input_subset[i]] += ws.g_in[i];
    }

    const ModelState* eval_state = &s;
    if (am.state_net) {
        ws.scratch.t = s.t;
        ws.scratch.x_c = ws.x_hat;
        ws.scratch.x_d = s.x_d;
        eval_state = &ws.scratch;
    }
    base.derivative_jacobian(*eval_state, kNoIO, ws.jac_c);
    base.derivative_jacobian_discrete(*eval_state, kNoIO, ws.jac_d);

    ws.v_base.assign(n, 0.0);
    for (int i = 0; i < n; ++i) {
        const Real wi = ws.w_base[i];
        if (wi == 0.0) {
            continue;
        }
        for (int j = 0; j < n; ++j) {
            ws.v_base[j] += wi * ws.jac_c[static_cast<std::size_t>(i) * n + j];
        }
    }
    v_d.assign(m, 0.0);
    for (int i = 0; i < n; ++i) {
        const Real wi = ws.w_base[i];
        if (wi == 0.0) {
            continue;
        }
        for (int j = 0; j < m; ++j) {
            v_d[j] += wi * ws.jac_d[static_cast<std::size_t>(i) * m + j];
        }
    }

    if (am.state_net) {
        // chain through x_hat = state_net(x)
        ws.state_scratch_grad.assign(am.state_params->values.size(), 0.0);
        Vec g_side_unused;
        backward(*am.state_net, *am.state_params, ws.state_rec, ws.v_base, ws.state_grad_in,
                 g_side_unused, ws.state_scratch_grad);
        v_x = ws.state_grad_in;
    } else {
        v_x = ws.v_base;
    }
}

Solution simulate(const AugmentedModel& am, const ModelState& start, Real t_end,
                  const SolverOptions& opts, Tape* tape, ModelState* final_state) {
    am.validate();
    const HybridModel& base = *am.base;
    if (static_cast<int>(start.x_c.size()) != base.n_states() ||
        static_cast<int>(start.x_d.size()) != base.n_discrete()) {
        throw std::invalid_argument("simulate: start state does not match base model");
    }

    ModelState cur = start;
    AugWorkspace ws;
    ForwardRecord ind_rec;
    InversionOptions inv_opts;

    SystemCallbacks sys;
    sys.n_states = base.n_states();
    sys.n_indicators = base.n_indicators();
    sys.rhs = [&](Real t, const Vec& x, Vec& dx) {
        cur.t = t;
        cur.x_c = x;
        augmented_derivative(am, cur, dx, ws);
    };
    sys.indicators = [&](Real t, const Vec& x, Vec& z) {
        cur.t = t;
        if (am.state_net) {
            cur.x_c = forward(*am.state_net, *am.state_params, x, {}, ind_rec);
        } else {
            cur.x_c = x;
        }
        base.indicators(cur, z);
    };
    sys.next_time_event = [&](Real t) { return base.next_time_event(t); };
    sys.handle_event = [&](Real t, Vec& x, EventKind kind, int idx) {
        cur.t = t;
        if (!am.state_net) {
            cur.x_c = x;
            base.handle_event(cur, kind, idx);
            x = cur.x_c;
            return;
        }
        // the base model lives behind the state network: handle the event in
        // its coordinates, then recover the solver state by inversion
        cur.x_c = forward(*am.state_net, *am.state_params, x, {}, ind_rec);
        base.handle_event(cur, kind, idx);
        const Vec x_hat_post = cur.x_c;

        Real penalty_sign = 0.0;
        std::function<Real(const Vec&)> indicator_fn;
        if (kind == EventKind::State) {
            Vec z;
            base.indicators(cur, z);
            penalty_sign = z[idx] >= 0.0 ? 1.0 : -1.0;
            indicator_fn = [&am, &cur, t, idx](const Vec& xc) {
                ForwardRecord r;
                ModelState probe;
                probe.t = t;
                probe.x_c = forward(*am.state_net, *am.state_params, xc, {}, r);
                probe.x_d = cur.x_d;
                Vec zz;
                am.base->indicators(probe, zz);
                return zz[idx];
            };
        }
        const InversionResult res = invert_state_ann(*am.state_net, *am.state_params, x_hat_post,
                                                     indicator_fn, penalty_sign, x, inv_opts);
        x = res.x;
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

InversionResult invert_state_ann(const NetSpec& net, const ParamVector& params,
                                 const Vec& x_hat_target,
                                 const std::function<Real(const Vec&)>& indicator,
                                 Real indicator_sign, const Vec& x_init,
                                 const InversionOptions& opts) {
    if (opts.max_iters <= 0 || !(opts.x_tol > 0.0)) {
        throw std::invalid_argument("invert_state_ann: options must be positive");
    }
    const int n = static_cast<int>(x_init.size());
    const bool use_penalty = indicator_sign != 0.0 && static_cast<bool>(indicator);
    const Real w_pen = opts.indicator_penalty_weight;
    const Real eps_pen = opts.indicator_boundary_layer;

    ForwardRecord rec;
    Vec gp_scratch(params.values.size(), 0.0);

    auto objective = [&](const Vec& x) {
        ForwardRecord r;
        const Vec& y = forward(net, params, x, {}, r);
        Real phi = 0.0;
        for (int i = 0; i < n; ++i) {
            const Real d = y[i] - x_hat_target[i];
            phi += d * d;
        }
        if (use_penalty) {
            phi += w_pen * eps_pen * softplus(-indicator_sign * indicator(x) / eps_pen);
        }
        return phi;
    };

    InversionResult best;
    best.x = x_init;
    best.residual = objective(x_init);

    Vec x = x_init;
    Real mu = 0.0;
    Vec jac(static_cast<std::size_t>(n) * n);
    Vec grad(n), r(n), gin, gside;

    for (int it = 0; it < opts.max_iters; ++it) {
        const Vec& y = forward(net, params, x, {}, rec);
        for (int i = 0; i < n; ++i) {
            r[i] = y[i] - x_hat_target[i];
        }
        // Jacobian rows via unit upstream gradients
        for (int i = 0; i < n; ++i) {
            Vec e(n, 0.0);
            e[i] = 1.0;
            std::fill(gp_scratch.begin(), gp_scratch.end(), 0.0);
            backward(net, params, rec, e, gin, gside, gp_scratch);
            for (int j = 0; j < n; ++j) {
                jac[static_cast<std::size_t>(i) * n + j] = gin[j];
            }
        }
        // grad = 2 J^T r (+ penalty gradient, indicator slope from central FD)
        std::fill(grad.begin(), grad.end(), 0.0);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                grad[j] += 2.0 * jac[static_cast<std::size_t>(i) * n + j] * r[i];
            }
        }
        Vec grad_z(n, 0.0);
        Real pen_curv = 0.0;
        if (use_penalty) {
            const Real z0 = indicator(x);
            const Real sig = sigmoid(-indicator_sign * z0 / eps_pen);
            Vec xp = x;
            for (int j = 0; j < n; ++j) {
                const Real h = 1e-7 * std::max(1.0, std::abs(x[j]));
                xp[j] = x[j] + h;
                const Real zp = indicator(xp);
                xp[j] = x[j] - h;
                const Real zm = indicator(xp);
                xp[j] = x[j];
                grad_z[j] = (zp - zm) / (2.0 * h);
                grad[j] += w_pen * sig * (-indicator_sign) * grad_z[j];
            }
            pen_curv = w_pen / eps_pen * sig * (1.0 - sig);
        }

        bool stepped = false;
        for (int attempt = 0; attempt < 30 && !stepped; ++attempt) {
            Vec h_mat(static_cast<std::size_t>(n) * n, 0.0);
            for (int i = 0; i < n; ++i) {
                for (int a = 0; a < n; ++a) {
                    for (int b = 0; b < n; ++b) {
                        h_mat[static_cast<std::size_t>(a) * n + b] +=
                            2.0 * jac[static_cast<std::size_t>(i) * n + a] *
                            jac[static_cast<std::size_t>(i) * n + b];
                    }
                }
            }
            if (pen_curv > 0.0) {
                for (int a = 0; a < n; ++a) {
                    for (int b = 0; b < n; ++b) {
                        h_mat[static_cast<std::size_t>(a) * n + b] +=
                            pen_curv * grad_z[a] * grad_z[b];
                    }
                }
            }
            for (int a = 0; a < n; ++a) {
                h_mat[static_cast<std::size_t>(a) * n + a] += mu;
            }
            Vec step = grad;
            for (auto& v : step) {
                v = -v;
            }
            try {
                solve_dense(h_mat, step);
            } catch (const std::runtime_error&) {
                mu = std::max(mu * 10.0, 1e-8);
                continue;
            }

            Vec x_new = x;
            Real step_norm = 0.0;
            for (int j = 0; j < n; ++j) {
                x_new[j] += step[j];
                step_norm += step[j] * step[j];
            }
            step_norm = std::sqrt(step_norm);

            const Real phi_new = objective(x_new);
            if (phi_new <= best.residual) {
                x = x_new;
                best.x = x;
                best.residual = phi_new;
                best.iters = it + 1;
                mu = mu * 0.3;
                stepped = true;
                if (step_norm < opts.x_tol || phi_new < 1e-24) {
                    best.converged = true;
                    return best;
                }
            } else {
                mu = std::max(mu * 10.0, 1e-8);
            }
        }
        if (!stepped) {
            break;  // damping saturated
        }
    }
    best.converged = best.residual < 1e-18;
    return best;
}

AugmentedModel make_derivative_augmentation(std::shared_ptr<const HybridModel> base,
                                            std::vector<int> input_subset,
                                            std::vector<int> output_channel_map, int hidden,
                                            std::uint64_t seed) {
    AugmentedModel am;
    am.base = std::move(base);
    am.input_subset = std::move(input_subset);
    am.output_channel_map = std::move(output_channel_map);
    const int n_in = static_cast<int>(am.input_subset.size());
    const int n_out = static_cast<int>(am.output_channel_map.size());
    am.net.layers = {ShiftScaleLayer{n_in, true, false, {}, {}},
                     DenseLayer{n_in, hidden, Activation::Tanh, true},
                     DenseLayer{hidden, n_out, Activation::Tanh, true},
                     ShiftScaleLayer{n_out, false, true, Vec(n_out, 0.0), Vec(n_out, 1.0)},
                     GatesLayer{n_out}};
    am.params = make_params(am.net);
    init_params(am.net, am.params, seed);
    am.validate();
    return am;
}

void init_pre_from_stats(AugmentedModel& am, const std::vector<Vec>& samples) {
    const auto st = shift_scale_from_stats(samples);
    const auto* layer = std::get_if<ShiftScaleLayer>(&am.net.layers.front());
    if (!layer || !layer->trainable) {
        throw std::invalid_argument("init_pre_from_stats: first layer is not a trainable shift/scale");
    }
    const int off = am.params.offsets.front();
    for (int i = 0; i < layer->width; ++i) {
        am.params.values[off + i] = st.shift[i];
        am.params.values[off + layer->width + i] = st.scale[i];
    }
}

void freeze_post_from_stats(AugmentedModel& am, const std::vector<Vec>& samples, Real headroom) {
    if (!(headroom > 0.0)) {
        throw std::invalid_argument("freeze_post_from_stats: headroom must be positive");
    }
    const auto st = shift_scale_from_stats(samples);
    ShiftScaleLayer* post = nullptr;
    for (auto& layer : am.net.layers) {
        if (auto* s = std::get_if<ShiftScaleLayer>(&layer)) {
            if (!s->trainable && s->inverse) {
                post = s;
            }
        }
    }
    if (!post) {
        throw std::invalid_argument("freeze_post_from_stats: no frozen inverse shift/scale layer");
    }
    post->frozen_shift = st.shift;
    post->frozen_scale.resize(st.scale.size());
    for (std::size_t i = 0; i < st.scale.size(); ++i) {
        post->frozen_scale[i] = st.scale[i] / headroom;
    }
}

}  // namespace nfmu
