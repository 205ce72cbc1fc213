#include "nfmu/training.hpp"

#include "csv_detail.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

namespace nfmu {

namespace {

/// Spec of the pre/ANN/post pipeline without the trailing gates layer. The
/// full ParamVector stays valid for it (offsets are indexed per layer).
NetSpec pipeline_spec(const AugmentedModel& am) {
    NetSpec sub;
    sub.layers.assign(am.net.layers.begin(), am.net.layers.end() - 1);
    return sub;
}

struct AdamState {
    Vec m, v;
    long t = 0;

    explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}

    void update(Vec& params, const Vec& grad, Real alpha, const AdamOptions& opt,
                const std::vector<std::uint8_t>& frozen) {
        ++t;
        const Real bc1 = 1.0 - std::pow(opt.beta1, static_cast<Real>(t));
        const Real bc2 = 1.0 - std::pow(opt.beta2, static_cast<Real>(t));
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (!frozen.empty() && frozen[i]) {
                continue;
            }
            m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * grad[i];
            v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * grad[i] * grad[i];
            const Real mhat = m[i] / bc1;
            const Real vhat = v[i] / bc2;
            params[i] -= alpha * mhat / (std::sqrt(vhat) + opt.eps);
        }
    }
};

/// Interpolation weights of a sample on the saved grid; duplicated event rows
/// resolve to the later (post-event) row.
struct SampleWeights {
    std::size_t row0 = 0;
    std::size_t row1 = 0;
    Real w = 0.0;
};

SampleWeights locate_sample(const Vec& times, Real ts) {
    SampleWeights sw;
    if (ts <= times.front()) {
        return sw;
    }
    if (ts >= times.back()) {
        sw.row0 = sw.row1 = times.size() - 1;
        return sw;
    }
    const auto it = std::upper_bound(times.begin(), times.end(), ts);
    const std::size_t i = static_cast<std::size_t>(it - times.begin());
    sw.row0 = i - 1;
    sw.row1 = i;
    const Real t0 = times[i - 1], t1 = times[i];
    sw.w = (ts == t0 || t1 == t0) ? 0.0 : (ts - t0) / (t1 - t0);
    return sw;
}

}  // namespace

Real StepSchedule::at(long k) const {
    return std::max(initial * std::pow(decay, static_cast<Real>(k)), floor);
}

void TrainConfig::validate(Real window_length) const {
    if (!(batch_element_length > 0.0)) {
        throw std::invalid_argument("TrainConfig: batch element length must be positive");
    }
    if (window_length < batch_element_length * 0.0) {
        throw std::invalid_argument("TrainConfig: empty training window");
    }
    if (schedule.floor > schedule.initial) {
        throw std::invalid_argument("TrainConfig: schedule floor above initial step size");
    }
    if (epochs < 1) {
        throw std::invalid_argument("TrainConfig: epochs must be >= 1");
    }
}

Real mse_loss(const Solution& sol, const Vec& target_times, const Vec& target_values,
              int channel) {
    if (target_times.empty()) {
        throw std::invalid_argument("mse_loss: empty target");
    }
    if (target_times.size() != target_values.size()) {
        throw std::invalid_argument("mse_loss: target time/value length mismatch");
    }
    Real acc = 0.0;
    for (std::size_t j = 0; j < target_times.size(); ++j) {
        const Real d = sol.value_at(target_times[j], channel) - target_values[j];
        acc += d * d;
    }
    return acc / static_cast<Real>(target_times.size());
}

GradientResult gradient(const AugmentedModel& am, const ModelState& start, Real t_end,
                        const Vec& target_times, const Vec& target_values, int channel,
                        const SolverOptions& opts, ModelState* final_state) {
    Tape tape;
    const Solution sol = simulate(am, start, t_end, opts, &tape, final_state);

    GradientResult res;
    res.loss = mse_loss(sol, target_times, target_values, channel);
    res.grad.assign(am.params.values.size(), 0.0);
    if (sol.rows() != tape.records.size() + 1) {
        throw std::logic_error("gradient: tape does not align with saved rows");
    }

    // dL/d(saved state) is nonzero only on the loss channel
    Vec row_seed(sol.rows(), 0.0);
    const Real n_inv = 2.0 / static_cast<Real>(target_times.size());
    for (std::size_t j = 0; j < target_times.size(); ++j) {
        const SampleWeights sw = locate_sample(sol.times, target_times[j]);
        const Real pred = sol.states[sw.row0][channel] +
                          sw.w * (sol.states[sw.row1][channel] - sol.states[sw.row0][channel]);
        const Real f = n_inv * (pred - target_values[j]);
        row_seed[sw.row0] += f * (1.0 - sw.w);
        row_seed[sw.row1] += f * sw.w;
    }

    const int n = am.base->n_states();
    const int m = am.base->n_discrete();
    Vec lambda(n, 0.0), lambda_d(m, 0.0);
    lambda[channel] += row_seed[sol.rows() - 1];

    AugWorkspace ws;
    std::array<Vec, 7> stage_w;  // upstream per stage
    Vec coeff(7), v_sum(n), vd_sum(m), stage_state, v_x, v_d;
    std::array<Vec, 7> stage_v;
    ModelState s_stage;

    for (std::size_t ri = tape.records.size(); ri-- > 0;) {
        const TapeRecord& rec = tape.records[ri];
        if (const auto* ev = std::get_if<TapeEvent>(&rec)) {
            ModelState pre;
            pre.t = ev->t;
            pre.x_c = ev->x_pre;
            pre.x_d = ev->xd_pre;
            am.base->handle_event_vjp(pre, ev->kind, ev->indicator_index, lambda, lambda_d);
        } else {
            const auto& st = std::get<TapeStep>(rec);
            if (st.theta == 1.0) {
                std::copy(rkdp::b, rkdp::b + 7, coeff.begin());
            } else {
                rkdp::dense_coefficients(st.theta, coeff.data());
            }
            std::fill(v_sum.begin(), v_sum.end(), 0.0);
            std::fill(vd_sum.begin(), vd_sum.end(), 0.0);
            for (auto& sv : stage_v) {
                sv.clear();
            }
            s_stage.x_d = st.x_d;
            for (int stage = 6; stage >= 0; --stage) {
                // upstream on stage derivative k_stage
                Vec& w = stage_w[stage];
                w.assign(n, 0.0);
                bool nonzero = false;
                for (int c2 = 0; c2 < n; ++c2) {
                    Real acc = coeff[stage] * lambda[c2];
                    for (int l = stage + 1; l < 7; ++l) {
                        const Real a = rkdp::a_row(l)[stage];
                        if (a != 0.0 && !stage_v[l].empty()) {
                            acc += a * stage_v[l][c2];
                        }
                    }
                    acc *= st.h;
                    w[c2] = acc;
                    nonzero = nonzero || acc != 0.0;
                }
                if (!nonzero) {
                    stage_v[stage].clear();
                    continue;
                }
                if (stage == 0) {
                    stage_state = st.x0;
                } else {
                    rkdp::combine(st.x0, st.h, st.k, rkdp::a_row(stage), stage, stage_state);
                }
                s_stage.t = st.t0 + rkdp::c[stage] * st.h;
                s_stage.x_c = stage_state;
                augmented_vjp(am, s_stage, w, v_x, v_d, res.grad, ws);
                stage_v[stage] = v_x;
                for (int c2 = 0; c2 < n; ++c2) {
                    v_sum[c2] += v_x[c2];
                }
                for (int j = 0; j < m; ++j) {
                    vd_sum[j] += v_d[j];
                }
            }
            for (int c2 = 0; c2 < n; ++c2) {
                lambda[c2] += v_sum[c2];
            }
            for (int j = 0; j < m; ++j) {
                lambda_d[j] += vd_sum[j];
            }
        }
        // the record's input is saved row ri
        lambda[channel] += row_seed[ri];
    }
    res.grad_x0 = lambda;
    return res;
}

DerivSamples derivative_samples(const AugmentedModel& am, const Solution& reference) {
    DerivSamples out;
    const std::size_t rows = reference.rows();
    const bool have_derivs = reference.derivs.size() == rows;
    if (!have_derivs && am.base->n_discrete() > 0 && reference.discrete.size() != rows) {
        throw std::invalid_argument(
            "derivative_samples: reference lacks derivative records; recomputation needs "
            "recorded discrete state");
    }
    Vec dx;
    ModelState s;
    const ModelIO io;
    out.inputs.reserve(rows);
    out.targets.reserve(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const Vec* d = nullptr;
        if (have_derivs) {
            d = &reference.derivs[r];
        } else {
            s.t = reference.times[r];
            s.x_c = reference.states[r];
            s.x_d = reference.discrete.empty() ? Vec{} : reference.discrete[r];
            am.base->derivative(s, io, dx);
            d = &dx;
        }
        Vec in(am.input_subset.size());
        for (std::size_t i = 0; i < am.input_subset.size(); ++i) {
            in[i] = (*d)[am.input_subset[i]];
        }
        Vec tg(am.output_channel_map.size());
        for (std::size_t i = 0; i < am.output_channel_map.size(); ++i) {
            tg[i] = (*d)[am.output_channel_map[i]];
        }
        out.inputs.push_back(std::move(in));
        out.targets.push_back(std::move(tg));
    }
    return out;
}

PretrainResult nipt_pretrain(AugmentedModel& am, const Solution& reference, long iters, Real step,
                             Real target_loss) {
    const DerivSamples samples = derivative_samples(am, reference);
    const NetSpec sub = pipeline_spec(am);
    const std::size_t n_samples = samples.inputs.size();
    if (n_samples == 0) {
        throw std::invalid_argument("nipt_pretrain: reference has no saved points");
    }

    AdamState adam(am.params.values.size());
    const AdamOptions adam_opts;
    ForwardRecord rec;
    Vec grad(am.params.values.size(), 0.0);
    Vec gin, gside, up;

    PretrainResult res;
    for (long it = 0; it < iters; ++it) {
        std::fill(grad.begin(), grad.end(), 0.0);
        Real loss = 0.0;
        for (std::size_t j = 0; j < n_samples; ++j) {
            const Vec& y = forward(sub, am.params, samples.inputs[j], {}, rec);
            up.resize(y.size());
            for (std::size_t c = 0; c < y.size(); ++c) {
                const Real d = y[c] - samples.targets[j][c];
                loss += d * d;
                up[c] = 2.0 * d / static_cast<Real>(n_samples);
            }
            backward(sub, am.params, rec, up, gin, gside, grad);
        }
        loss /= static_cast<Real>(n_samples);
        res.final_loss = loss;
        res.iters = it;
        if (target_loss > 0.0 && loss < target_loss) {
            return res;
        }
        adam.update(am.params.values, grad, step, adam_opts, {});
    }
    // evaluate the final loss after the last update
    Real loss = 0.0;
    for (std::size_t j = 0; j < n_samples; ++j) {
        const Vec& y = forward(sub, am.params, samples.inputs[j], {}, rec);
        for (std::size_t c = 0; c < y.size(); ++c) {
            const Real d = y[c] - samples.targets[j][c];
            loss += d * d;
        }
    }
    res.final_loss = loss / static_cast<Real>(n_samples);
    res.iters = iters;
    return res;
}

PretrainResult ccpt_pretrain(AugmentedModel& am, const Vec& times,
                             const std::vector<Vec>& states, const std::vector<Vec>& derivs,
                             int objective_channel, long iters, Real step, Real target_loss) {
    const int n = am.base->n_states();
    if (std::find(am.output_channel_map.begin(), am.output_channel_map.end(), objective_channel) ==
        am.output_channel_map.end()) {
        throw std::invalid_argument(
            "ccpt_pretrain: collocation pre-training cannot be used here: the objective "
            "channel's derivative (index " + std::to_string(objective_channel) +
            ") is not affected by the network");
    }
    if (states.empty() || times.size() != states.size()) {
        throw std::invalid_argument("ccpt_pretrain: empty or inconsistent state trajectory");
    }
    for (const auto& row : states) {
        if (static_cast<int>(row.size()) != n) {
            throw std::invalid_argument(
                "ccpt_pretrain: state trajectory must cover the entire system state (" +
                std::to_string(n) + " states)");
        }
    }
    std::vector<Vec> dtraj = derivs;
    if (dtraj.empty()) {
        dtraj = estimate_derivatives(times, states);
    }
    if (dtraj.size() != states.size()) {
        throw std::invalid_argument("ccpt_pretrain: derivative trajectory length mismatch");
    }

    // network inputs and side values come from the base model along the given
    // trajectory; both are constants of the optimization
    const std::size_t n_samples = states.size();
    const ModelIO io;
    std::vector<Vec> net_in(n_samples), side(n_samples), target(n_samples);
    ModelState s = am.base->initial_state();
    Vec dx;
    for (std::size_t j = 0; j < n_samples; ++j) {
        s.t = times[j];
        s.x_c = states[j];
        am.base->derivative(s, io, dx);
        net_in[j].resize(am.input_subset.size());
        for (std::size_t i = 0; i < am.input_subset.size(); ++i) {
            net_in[j][i] = dx[am.input_subset[i]];
        }
        side[j].resize(am.output_channel_map.size());
        target[j].resize(am.output_channel_map.size());
        for (std::size_t i = 0; i < am.output_channel_map.size(); ++i) {
            side[j][i] = dx[am.output_channel_map[i]];
            target[j][i] = dtraj[j][am.output_channel_map[i]];
        }
    }

    AdamState adam(am.params.values.size());
    const AdamOptions adam_opts;
    ForwardRecord rec;
    Vec grad(am.params.values.size(), 0.0);
    Vec gin, gside, up;

    auto eval_loss = [&](bool with_grad) {
        Real loss = 0.0;
        for (std::size_t j = 0; j < n_samples; ++j) {
            const Vec& y = forward(am.net, am.params, net_in[j], side[j], rec);
            up.resize(y.size());
            for (std::size_t c = 0; c < y.size(); ++c) {
                const Real d = y[c] - target[j][c];
                loss += d * d;
                up[c] = 2.0 * d / static_cast<Real>(n_samples);
            }
            if (with_grad) {
                backward(am.net, am.params, rec, up, gin, gside, grad);
            }
        }
        return loss / static_cast<Real>(n_samples);
    };

    PretrainResult res;
    for (long it = 0; it < iters; ++it) {
        std::fill(grad.begin(), grad.end(), 0.0);
        res.final_loss = eval_loss(true);
        res.iters = it;
        if (target_loss > 0.0 && res.final_loss < target_loss) {
            return res;
        }
        adam.update(am.params.values, grad, step, adam_opts, {});
    }
    res.final_loss = eval_loss(false);
    res.iters = iters;
    return res;
}

std::vector<Vec> estimate_derivatives(const Vec& times, const std::vector<Vec>& states,
                                      int smooth_window) {
    const std::size_t n_samples = times.size();
    if (n_samples < 3) {
        throw std::invalid_argument("estimate_derivatives: need at least 3 samples");
    }
    if (states.size() != n_samples) {
        throw std::invalid_argument("estimate_derivatives: time/state length mismatch");
    }
    for (std::size_t j = 1; j < n_samples; ++j) {
        if (!(times[j] > times[j - 1])) {
            throw std::invalid_argument("estimate_derivatives: duplicate or decreasing timestamp at index " +
                                        std::to_string(j));
        }
    }
    const std::size_t width = states.front().size();
    std::vector<Vec> deriv(n_samples, Vec(width, 0.0));
    for (std::size_t c = 0; c < width; ++c) {
        for (std::size_t j = 0; j < n_samples; ++j) {
            if (j == 0) {
                deriv[j][c] = (states[1][c] - states[0][c]) / (times[1] - times[0]);
            } else if (j == n_samples - 1) {
                deriv[j][c] = (states[j][c] - states[j - 1][c]) / (times[j] - times[j - 1]);
            } else {
                deriv[j][c] = (states[j + 1][c] - states[j - 1][c]) / (times[j + 1] - times[j - 1]);
            }
        }
    }
    if (smooth_window > 1) {
        std::vector<Vec> smooth(n_samples, Vec(width, 0.0));
        const int half = smooth_window / 2;
        for (std::size_t j = 0; j < n_samples; ++j) {
            const std::size_t lo = j < static_cast<std::size_t>(half) ? 0 : j - half;
            const std::size_t hi = std::min(n_samples - 1, j + half);
            for (std::size_t c = 0; c < width; ++c) {
                Real acc = 0.0;
                for (std::size_t r = lo; r <= hi; ++r) {
                    acc += deriv[r][c];
                }
                smooth[j][c] = acc / static_cast<Real>(hi - lo + 1);
            }
        }
        return smooth;
    }
    return deriv;
}

std::vector<BatchElement> make_batches_sequential(Real t0, Real t_end, Real element_length,
                                                  const Vec& target_times,
                                                  const Vec& target_values) {
    if (!(element_length > 0.0)) {
        throw std::invalid_argument("make_batches_sequential: element length must be positive");
    }
    if (!(t_end > t0)) {
        throw std::invalid_argument("make_batches_sequential: empty window");
    }
    const Real span = t_end - t0;
    const int n_elem = std::max(1, static_cast<int>(std::ceil(span / element_length - 1e-12)));
    std::vector<BatchElement> elems(n_elem);
    for (int e = 0; e < n_elem; ++e) {
        elems[e].t_start = t0 + e * element_length;
        elems[e].t_end = e + 1 == n_elem ? t_end : t0 + (e + 1) * element_length;
    }
    // partition the samples: (t_start, t_end], initial time into the first
    for (std::size_t j = 0; j < target_times.size(); ++j) {
        const Real ts = target_times[j];
        if (ts < t0 || ts > t_end) {
            continue;
        }
        int e = ts <= elems[0].t_end ? 0
                                     : static_cast<int>(std::ceil((ts - t0) / element_length)) - 1;
        e = std::clamp(e, 0, n_elem - 1);
        while (e > 0 && ts <= elems[e - 1].t_end) {
            --e;
        }
        while (e + 1 < n_elem && ts > elems[e].t_end) {
            ++e;
        }
        elems[e].target_times.push_back(ts);
        elems[e].target_values.push_back(target_values[j]);
    }
    return elems;
}

std::vector<BatchElement> make_batches_snapshot(const AugmentedModel& am, const ModelState& start,
                                                Real t_end, Real element_length,
                                                const Vec& target_times, const Vec& target_values,
                                                const SolverOptions& opts) {
    std::vector<BatchElement> elems =
        make_batches_sequential(start.t, t_end, element_length, target_times, target_values);
    ModelState cur = start;
    for (auto& e : elems) {
        e.start_snapshot = save_state(*am.base, cur);
        ModelState next;
        simulate(am, cur, e.t_end, opts, nullptr, &next);
        cur = next;
    }
    return elems;
}

TrainResult train(AugmentedModel& am, const ModelState& start, Real t_end,
                  const Vec& target_times, const Vec& target_values, const TrainConfig& cfg) {
    cfg.validate(t_end - start.t);
    if (!cfg.frozen.empty() && cfg.frozen.size() != am.params.values.size()) {
        throw std::invalid_argument("train: freeze mask length does not match parameter count");
    }

    std::vector<BatchElement> elems =
        cfg.snapshot_batching
            ? make_batches_snapshot(am, start, t_end, cfg.batch_element_length, target_times,
                                    target_values, cfg.solver)
            : make_batches_sequential(start.t, t_end, cfg.batch_element_length, target_times,
                                      target_values);

    AdamState adam(am.params.values.size());
    TrainResult res;
    long k = 0;
    const auto t_wall0 = std::chrono::steady_clock::now();

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<int> order(elems.size());
        std::iota(order.begin(), order.end(), 0);
        if (cfg.snapshot_batching && cfg.shuffle_elements) {
            std::mt19937_64 rng(cfg.seed + static_cast<std::uint64_t>(epoch));
            std::shuffle(order.begin(), order.end(), rng);
        }
        ModelState cur = start;  // sequential carry-over, reset each epoch
        for (int ei : order) {
            BatchElement& elem = elems[static_cast<std::size_t>(ei)];
            if (cfg.max_steps >= 0 && k >= cfg.max_steps) {
                return res;
            }
            ModelState elem_start;
            if (cfg.snapshot_batching) {
                elem_start = elem.start_snapshot->state;
            } else {
                elem_start = cur;
            }
            if (elem.target_times.empty()) {
                // nothing to fit in this element; advance the carried state
                if (!cfg.snapshot_batching) {
                    ModelState next;
                    simulate(am, elem_start, elem.t_end, cfg.solver, nullptr, &next);
                    cur = next;
                }
                continue;
            }
            ModelState next;
            const GradientResult g =
                gradient(am, elem_start, elem.t_end, elem.target_times, elem.target_values,
                         cfg.loss_channel, cfg.solver, &next);
            if (!std::isfinite(g.loss)) {
                Real pnorm = 0.0;
                for (Real v : am.params.values) {
                    pnorm += v * v;
                }
                throw SimulationError("train: non-finite loss at step " + std::to_string(k) +
                                      ", element " + std::to_string(ei) +
                                      ", parameter norm " + std::to_string(std::sqrt(pnorm)));
            }
            if (!cfg.snapshot_batching) {
                cur = next;
            }
            const Real alpha = cfg.schedule.at(k);
            adam.update(am.params.values, g.grad, alpha, cfg.adam, cfg.frozen);
            const Real wall =
                std::chrono::duration<Real>(std::chrono::steady_clock::now() - t_wall0).count();
            res.history.push_back({k, epoch, ei, g.loss, alpha, wall});
            ++k;
        }
    }
    return res;
}

void write_history(const std::string& path, const std::vector<TrainHistoryRow>& rows) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write file: " + path);
    }
    out << "step,epoch,element,loss,step_size,wall_s\n";
    for (const auto& r : rows) {
        out << r.step << ',' << r.epoch << ',' << r.element << ',' << csv::format_real(r.loss)
            << ',' << csv::format_real(r.step_size) << ',' << csv::format_real(r.wall_s) << '\n';
    }
}

}  // namespace nfmu
