#pragma once

#include "nfmu/driving_cycle.hpp"
#include "nfmu/model.hpp"
#include "nfmu/solver.hpp"

#include <cstdint>
#include <map>

namespace nfmu {

/// Repeated measurement runs of the cumulative consumption on a shared time
/// grid, with per-timestamp mean and population standard deviation.
struct MeasurementSet {
    Vec times;                  // s
    std::vector<Vec> runs;      // one vector per run, cumulative consumption [Ws]
    Vec mean;
    Vec std_dev;

    [[nodiscard]] std::size_t n_runs() const { return runs.size(); }
    void compute_stats();
};

/// Reads `t,run1,run2,...`; time must be non-decreasing, at least one run.
[[nodiscard]] MeasurementSet load_measurements(const std::string& path);
void write_measurements(const std::string& path, const MeasurementSet& ms);

/// Simulates the ground-truth model over the cycle, samples the consumption
/// channel at sample_rate and adds independent Gaussian noise per run.
/// noise_std = 0 produces identical noiseless runs; negative selects the
/// default 0.3% of the final consumption. Run i uses seed + i, so runs are
/// reproducible individually.
[[nodiscard]] MeasurementSet synthesize_measurements(const HybridModel& truth, Real t_end,
                                                     int n_runs, Real noise_std,
                                                     std::uint64_t seed,
                                                     Real sample_rate = 10.0,
                                                     const SolverOptions& opts = {});

struct EvalReport {
    Real mse = 0.0;          // W^2 s^2
    Real max_error = 0.0;    // Ws
    Real final_error = 0.0;  // Ws, signed (prediction - data mean)
    Real sim_time = 0.0;     // s
    long solver_steps = 0;
    long triggered_events = 0;
};

/// Deviation of the solution channel from the measurement mean at the data
/// timestamps.
[[nodiscard]] EvalReport evaluate(const Solution& sol, const MeasurementSet& data,
                                  int channel = 5);

[[nodiscard]] std::string format_report(const EvalReport& report);

/// Line-based `key = value` configuration with '#' comments.
class Config {
public:
    Config() = default;
    explicit Config(const std::string& path);

    [[nodiscard]] bool has(const std::string& key) const;
    [[nodiscard]] std::string get(const std::string& key, const std::string& fallback) const;
    [[nodiscard]] Real get_real(const std::string& key, Real fallback) const;
    [[nodiscard]] long get_long(const std::string& key, long fallback) const;
    [[nodiscard]] const std::map<std::string, std::string>& entries() const { return entries_; }

private:
    std::map<std::string, std::string> entries_;
};

}  // namespace nfmu
