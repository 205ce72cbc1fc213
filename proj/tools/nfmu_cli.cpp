#include <CLI11.hpp>

#include "nfmu/augmented.hpp"
#include "nfmu/bouncing_ball.hpp"
#include "nfmu/data_io.hpp"
#include "nfmu/training.hpp"
#include "nfmu/vldm.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>

using namespace nfmu;

namespace {

std::shared_ptr<const HybridModel> make_model(const std::string& name, const std::string& cycle_path) {
    if (name == "bouncing-ball") {
        return std::make_shared<BouncingBall>();
    }
    if (cycle_path.empty()) {
        throw std::runtime_error("model '" + name + "' needs --cycle");
    }
    DrivingCycle cycle = load_cycle(cycle_path);
    if (name == "vldm-lite-baseline") {
        return std::make_shared<VldmLite>(VldmLite::baseline(std::move(cycle)));
    }
    if (name == "vldm-lite-truth") {
        return std::make_shared<VldmLite>(VldmLite::ground_truth(std::move(cycle)));
    }
    throw std::runtime_error("unknown model '" + name +
                             "' (expected bouncing-ball, vldm-lite-baseline, vldm-lite-truth)");
}

void write_checkpoint(const std::string& path, const AugmentedModel& am) {
    write_params(path, am.params);
    std::ofstream spec(path + ".spec.txt");
    if (!spec) {
        throw std::runtime_error("cannot write sidecar: " + path + ".spec.txt");
    }
    spec << describe(am.net);
}

/// Restores hidden width and frozen post-process constants from the sidecar.
struct SidecarInfo {
    int hidden = 32;
    Vec post_shift{0.0};
    Vec post_scale{1.0};
};

Vec parse_semicolon_list(const std::string& text) {
    Vec out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t next = text.find(';', pos);
        if (next == std::string::npos) {
            next = text.size();
        }
        out.push_back(std::stod(text.substr(pos, next - pos)));
        pos = next + 1;
    }
    return out;
}

SidecarInfo read_sidecar(const std::string& checkpoint_path) {
    const std::string path = checkpoint_path + ".spec.txt";
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open sidecar: " + path);
    }
    SidecarInfo info;
    std::string line;
    bool first_dense = true;
    while (std::getline(in, line)) {
        if (line.rfind("dense ", 0) == 0 && first_dense) {
            const auto pos = line.find("out=");
            info.hidden = std::stoi(line.substr(pos + 4));
            first_dense = false;
        } else if (line.rfind("shift_scale", 0) == 0 &&
                   line.find("trainable=0") != std::string::npos &&
                   line.find("inverse=1") != std::string::npos) {
            const auto s_pos = line.find("shift=");
            const auto c_pos = line.find("scale=");
            if (s_pos != std::string::npos && c_pos != std::string::npos) {
                info.post_shift =
                    parse_semicolon_list(line.substr(s_pos + 6, line.find(' ', s_pos) - s_pos - 6));
                const auto rest = line.substr(c_pos + 6);
                info.post_scale = parse_semicolon_list(rest.substr(0, rest.find(' ')));
            }
        }
    }
    return info;
}

AugmentedModel consumption_topology(std::shared_ptr<const HybridModel> base, int hidden,
                                    std::uint64_t seed) {
    return make_derivative_augmentation(std::move(base), {3, 4, 5}, {4}, hidden, seed);
}

AugmentedModel load_augmented(std::shared_ptr<const HybridModel> base,
                              const std::string& checkpoint) {
    const SidecarInfo info = read_sidecar(checkpoint);
    AugmentedModel am = consumption_topology(std::move(base), info.hidden, 0);
    auto& post = std::get<ShiftScaleLayer>(am.net.layers[3]);
    post.frozen_shift = info.post_shift;
    post.frozen_scale = info.post_scale;
    am.params = read_params(checkpoint, am.net);
    am.validate();
    return am;
}

int cmd_simulate(const std::string& model, const std::string& cycle, Real t_end,
                 const std::string& out, const std::string& checkpoint, Real rel_tol,
                 Real abs_tol) {
    auto base = make_model(model, cycle);
    SolverOptions opts;
    opts.rel_tol = rel_tol;
    opts.abs_tol = abs_tol;
    Solution sol;
    if (checkpoint.empty()) {
        sol = simulate_model(*base, base->initial_state(), t_end, opts);
    } else {
        const AugmentedModel am = load_augmented(base, checkpoint);
        sol = simulate(am, base->initial_state(), t_end, opts);
    }
    write_solution(out, sol);
    std::printf("wrote %s (%zu rows, %ld steps, %ld events)\n", out.c_str(), sol.rows(),
                sol.stats.accepted_steps,
                sol.stats.n_time_events + sol.stats.n_state_events);
    return 0;
}

int cmd_make_data(const std::string& cycle_path, Real t_end, int runs, Real noise,
                  std::uint64_t seed, const std::string& out) {
    DrivingCycle cycle = load_cycle(cycle_path);
    if (t_end <= 0.0) {
        t_end = cycle.duration();
    }
    VldmLite truth = VldmLite::ground_truth(std::move(cycle));
    const MeasurementSet ms = synthesize_measurements(truth, t_end, runs, noise, seed);
    write_measurements(out, ms);
    std::printf("wrote %s (%zu samples, %zu runs)\n", out.c_str(), ms.times.size(), ms.n_runs());
    return 0;
}

int cmd_evaluate(const std::string& solution_path, const std::string& data_path) {
    const Solution sol = read_solution(solution_path);
    const MeasurementSet data = load_measurements(data_path);
    const EvalReport rep = evaluate(sol, data);
    std::fputs(format_report(rep).c_str(), stdout);
    return 0;
}

int cmd_pretrain(const std::string& cycle_path, Real t_end, const std::string& mode,
                 long iters, Real step, std::uint64_t seed, const std::string& out,
                 const std::string& states_path, int objective_channel, Real headroom) {
    auto base = make_model("vldm-lite-baseline", cycle_path);
    if (t_end <= 0.0) {
        t_end = std::static_pointer_cast<const VldmLite>(base)->cycle().duration();
    }
    AugmentedModel am = consumption_topology(base, 32, seed);

    SolverOptions ref_opts;
    ref_opts.record_derivatives = true;
    const Solution reference = simulate_model(*base, base->initial_state(), t_end, ref_opts);
    const DerivSamples samples = derivative_samples(am, reference);
    init_pre_from_stats(am, samples.inputs);
    freeze_post_from_stats(am, samples.targets, headroom);

    PretrainResult res;
    if (mode == "nipt") {
        res = nipt_pretrain(am, reference, iters, step);
    } else if (mode == "ccpt") {
        if (states_path.empty()) {
            throw std::runtime_error("ccpt needs --states with a full state trajectory CSV");
        }
        const Solution traj = read_solution(states_path);
        res = ccpt_pretrain(am, traj.times, traj.states, {}, objective_channel, iters, step);
    } else {
        throw std::runtime_error("unknown pre-training mode '" + mode + "'");
    }
    write_checkpoint(out, am);
    std::printf("pretrain %s: loss %.3e after %ld iterations; wrote %s\n", mode.c_str(),
                res.final_loss, res.iters, out.c_str());
    return 0;
}

int cmd_train(const std::string& config_path) {
    const Config cfg(config_path);
    const std::string cycle_path = cfg.get("cycle", "");
    const std::string data_path = cfg.get("data", "");
    if (cycle_path.empty() || data_path.empty()) {
        throw std::runtime_error("config must set 'cycle' and 'data'");
    }
    const MeasurementSet data = load_measurements(data_path);
    auto base = make_model("vldm-lite-baseline", cycle_path);
    const Real t_end = cfg.get_real("t_end", data.times.back());
    const int hidden = static_cast<int>(cfg.get_long("hidden", 32));
    const std::uint64_t seed = static_cast<std::uint64_t>(cfg.get_long("seed", 0));

    AugmentedModel am = consumption_topology(base, hidden, seed);

    SolverOptions ref_opts;
    ref_opts.record_derivatives = true;
    const Solution reference = simulate_model(*base, base->initial_state(), t_end, ref_opts);
    const DerivSamples samples = derivative_samples(am, reference);
    init_pre_from_stats(am, samples.inputs);
    freeze_post_from_stats(am, samples.targets, cfg.get_real("headroom", 4.0));

    const std::string pre_mode = cfg.get("pretrain", "none");
    if (pre_mode == "nipt") {
        const PretrainResult pres =
            nipt_pretrain(am, reference, cfg.get_long("pretrain_iters", 20000),
                          cfg.get_real("pretrain_step", 1e-3),
                          cfg.get_real("pretrain_target_loss", 1e-6));
        std::printf("nipt: loss %.3e after %ld iterations\n", pres.final_loss, pres.iters);
    } else if (pre_mode == "ccpt") {
        // the consumption objective is not gated; this reports the refusal
        ccpt_pretrain(am, reference.times, reference.states, {}, 5,
                      cfg.get_long("pretrain_iters", 1000), cfg.get_real("pretrain_step", 1e-3));
    } else if (pre_mode != "none") {
        throw std::runtime_error("config: unknown pretrain mode '" + pre_mode + "'");
    }

    TrainConfig tc;
    tc.loss_channel = static_cast<int>(cfg.get_long("loss_channel", 5));
    tc.batch_element_length = cfg.get_real("element_length", 10.0);
    tc.epochs = static_cast<int>(cfg.get_long("epochs", 200));
    tc.max_steps = cfg.get_long("max_steps", 2000);
    tc.seed = seed;
    tc.snapshot_batching = cfg.get_long("snapshot_batching", 0) != 0;
    tc.shuffle_elements = cfg.get_long("shuffle", 0) != 0;
    tc.solver.rel_tol = cfg.get_real("rel_tol", 1e-6);
    tc.solver.abs_tol = cfg.get_real("abs_tol", 1e-8);
    tc.schedule.initial = cfg.get_real("step_initial", 1e-3);
    tc.schedule.decay = cfg.get_real("step_decay", 0.95);
    tc.schedule.floor = cfg.get_real("step_floor", 1e-5);

    Vec t_target, y_target;
    for (std::size_t j = 0; j < data.times.size(); ++j) {
        if (data.times[j] <= t_end) {
            t_target.push_back(data.times[j]);
            y_target.push_back(data.mean[j]);
        }
    }

    const TrainResult res = train(am, base->initial_state(), t_end, t_target, y_target, tc);

    const std::string out_hist = cfg.get("out_history", "history.csv");
    const std::string out_ckpt = cfg.get("out_checkpoint", "checkpoint.csv");
    write_history(out_hist, res.history);
    write_checkpoint(out_ckpt, am);
    std::printf("trained %zu steps; final loss %.6e; wrote %s, %s\n", res.history.size(),
                res.history.empty() ? 0.0 : res.history.back().loss, out_hist.c_str(),
                out_ckpt.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hybrid neural ODE consumption-model toolkit"};
    app.require_subcommand(1);

    std::string model = "vldm-lite-baseline", cycle, out = "solution.csv", checkpoint;
    Real t_end = 0.0, rel_tol = 1e-6, abs_tol = 1e-8, noise = -1.0, step = 1e-3, headroom = 4.0;
    int runs = 2, objective_channel = 4;
    long iters = 20000;
    std::uint64_t seed = 0;
    std::string solution_path, data_path, config_path, pre_mode = "nipt", states_path;

    auto* sim = app.add_subcommand("simulate", "simulate a model over a driving cycle");
    sim->add_option("--model", model, "bouncing-ball | vldm-lite-baseline | vldm-lite-truth");
    sim->add_option("--cycle", cycle, "driving cycle CSV");
    sim->add_option("--t-end", t_end, "end time [s]")->required();
    sim->add_option("--out", out, "output solution CSV");
    sim->add_option("--checkpoint", checkpoint, "trained parameter CSV (simulates the hybrid)");
    sim->add_option("--rel-tol", rel_tol);
    sim->add_option("--abs-tol", abs_tol);

    auto* mk = app.add_subcommand("make-data", "synthesize noisy consumption measurements");
    mk->add_option("--cycle", cycle)->required();
    mk->add_option("--t-end", t_end, "end time [s], default cycle duration");
    mk->add_option("--runs", runs);
    mk->add_option("--noise", noise, "noise std [Ws]; default 0.3% of final consumption");
    mk->add_option("--seed", seed);
    mk->add_option("--out", out)->required();

    auto* ev = app.add_subcommand("evaluate", "compare a solution against measurements");
    ev->add_option("--solution", solution_path)->required();
    ev->add_option("--data", data_path)->required();

    auto* pre = app.add_subcommand("pretrain", "initialize the network without solving the ODE");
    pre->add_option("--cycle", cycle)->required();
    pre->add_option("--t-end", t_end);
    pre->add_option("--pretrain", pre_mode, "nipt | ccpt");
    pre->add_option("--iters", iters);
    pre->add_option("--step", step);
    pre->add_option("--seed", seed);
    pre->add_option("--headroom", headroom);
    pre->add_option("--states", states_path, "full state trajectory CSV (ccpt)");
    pre->add_option("--objective-channel", objective_channel, "0-based state index (ccpt)");
    pre->add_option("--out", out)->required();

    auto* tr = app.add_subcommand("train", "train the hybrid model from a config file");
    tr->add_option("--config", config_path)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (sim->parsed()) {
            return cmd_simulate(model, cycle, t_end, out, checkpoint, rel_tol, abs_tol);
        }
        if (mk->parsed()) {
            return cmd_make_data(cycle, t_end, runs, noise, seed, out);
        }
        if (ev->parsed()) {
            return cmd_evaluate(solution_path, data_path);
        }
        if (pre->parsed()) {
            return cmd_pretrain(cycle, t_end, pre_mode, iters, step, seed, out, states_path,
                                objective_channel, headroom);
        }
        if (tr->parsed()) {
            return cmd_train(config_path);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
