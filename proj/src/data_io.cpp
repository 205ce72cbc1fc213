#include "nfmu/data_io.hpp"

#include "csv_detail.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace nfmu {

void MeasurementSet::compute_stats() {
    const std::size_t n = times.size();
    mean.assign(n, 0.0);
    std_dev.assign(n, 0.0);
    if (runs.empty()) {
        return;
    }
    const Real nr = static_cast<Real>(runs.size());
    for (std::size_t j = 0; j < n; ++j) {
        Real m = 0.0;
        for (const auto& run : runs) {
            m += run[j];
        }
        m /= nr;
        Real var = 0.0;
        for (const auto& run : runs) {
            var += (run[j] - m) * (run[j] - m);
        }
        mean[j] = m;
        std_dev[j] = std::sqrt(var / nr);  // population convention
    }
}

MeasurementSet load_measurements(const std::string& path) {
    const auto tab = csv::read_table(path);
    if (tab.header.size() < 2 || tab.header[0] != "t") {
        throw std::runtime_error(path + ":1: expected header 't,run1,...' with at least 2 columns");
    }
    MeasurementSet ms;
    const std::size_t n_runs = tab.header.size() - 1;
    ms.runs.assign(n_runs, Vec{});
    for (std::size_t r = 0; r < tab.rows.size(); ++r) {
        const auto& row = tab.rows[r];
        if (!ms.times.empty() && row[0] < ms.times.back()) {
            throw std::runtime_error(path + ": non-monotonic time at data row " +
                                     std::to_string(r + 1));
        }
        ms.times.push_back(row[0]);
        for (std::size_t c = 0; c < n_runs; ++c) {
            ms.runs[c].push_back(row[c + 1]);
        }
    }
    if (ms.times.empty()) {
        throw std::runtime_error(path + ": no data rows");
    }
    ms.compute_stats();
    return ms;
}

void write_measurements(const std::string& path, const MeasurementSet& ms) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write file: " + path);
    }
    out << 't';
    for (std::size_t c = 0; c < ms.n_runs(); ++c) {
        out << ",run" << (c + 1);
    }
    out << '\n';
    for (std::size_t j = 0; j < ms.times.size(); ++j) {
        out << csv::format_real(ms.times[j]);
        for (const auto& run : ms.runs) {
            out << ',' << csv::format_real(run[j]);
        }
        out << '\n';
    }
}

MeasurementSet synthesize_measurements(const HybridModel& truth, Real t_end, int n_runs,
                                       Real noise_std, std::uint64_t seed, Real sample_rate,
                                       const SolverOptions& opts) {
    if (n_runs < 1) {
        throw std::invalid_argument("synthesize_measurements: need at least one run");
    }
    const Solution sol = simulate_model(truth, truth.initial_state(), t_end, opts);
    const int channel = truth.n_states() - 1;  // cumulative consumption

    MeasurementSet ms;
    const Real dt = 1.0 / sample_rate;
    for (long j = 0;; ++j) {
        const Real ts = static_cast<Real>(j) * dt;
        if (ts > t_end + 1e-12) {
            break;
        }
        ms.times.push_back(std::min(ts, t_end));
    }
    Vec clean(ms.times.size());
    for (std::size_t j = 0; j < ms.times.size(); ++j) {
        clean[j] = sol.value_at(ms.times[j], channel);
    }
    if (noise_std < 0.0) {
        noise_std = 0.003 * std::abs(clean.back());  // default 0.3% of final consumption
    }
    ms.runs.assign(n_runs, Vec(ms.times.size(), 0.0));
    for (int r = 0; r < n_runs; ++r) {
        std::mt19937_64 rng(seed + static_cast<std::uint64_t>(r));
        std::normal_distribution<Real> gauss(0.0, 1.0);
        for (std::size_t j = 0; j < ms.times.size(); ++j) {
            const Real noise = noise_std > 0.0 ? noise_std * gauss(rng) : 0.0;
            ms.runs[r][j] = clean[j] + noise;
        }
    }
    ms.compute_stats();
    return ms;
}

EvalReport evaluate(const Solution& sol, const MeasurementSet& data, int channel) {
    if (data.times.empty()) {
        throw std::invalid_argument("evaluate: empty measurement set");
    }
    if (data.times.front() > sol.times.back() || data.times.back() < sol.times.front()) {
        throw std::invalid_argument("evaluate: no overlap between solution and data");
    }
    EvalReport rep;
    Real acc = 0.0;
    long count = 0;
    for (std::size_t j = 0; j < data.times.size(); ++j) {
        const Real ts = data.times[j];
        if (ts < sol.times.front() || ts > sol.times.back()) {
            continue;
        }
        const Real dev = sol.value_at(ts, channel) - data.mean[j];
        acc += dev * dev;
        rep.max_error = std::max(rep.max_error, std::abs(dev));
        ++count;
    }
    if (count == 0) {
        throw std::invalid_argument("evaluate: no data timestamps inside the solution span");
    }
    rep.mse = acc / static_cast<Real>(count);
    rep.final_error = sol.value_at(data.times.back(), channel) - data.mean.back();
    rep.sim_time = sol.wall_time;
    rep.solver_steps = sol.stats.accepted_steps;
    rep.triggered_events = sol.stats.n_state_events + sol.stats.n_time_events;
    return rep;
}

std::string format_report(const EvalReport& rep) {
    std::string out;
    out += "mse=" + csv::format_real(rep.mse) + "\n";
    out += "max_error=" + csv::format_real(rep.max_error) + "\n";
    out += "final_error=" + csv::format_real(rep.final_error) + "\n";
    out += "sim_time=" + csv::format_real(rep.sim_time) + "\n";
    out += "solver_steps=" + std::to_string(rep.solver_steps) + "\n";
    out += "triggered_events=" + std::to_string(rep.triggered_events) + "\n";
    return out;
}

Config::Config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open config file: " + path);
    }
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) {
            line = line.substr(0, hash);
        }
        const auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
        };
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                     ": expected 'key = value'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": empty key");
        }
        entries_[key] = value;
    }
}

bool Config::has(const std::string& key) const {
    return entries_.count(key) > 0;
}

std::string Config::get(const std::string& key, const std::string& fallback) const {
    const auto it = entries_.find(key);
    return it == entries_.end() ? fallback : it->second;
}

Real Config::get_real(const std::string& key, Real fallback) const {
    const auto it = entries_.find(key);
    return it == entries_.end() ? fallback : std::stod(it->second);
}

long Config::get_long(const std::string& key, long fallback) const {
    const auto it = entries_.find(key);
    return it == entries_.end() ? fallback : std::stol(it->second);
}

}  // namespace nfmu
