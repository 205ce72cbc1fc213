#pragma once

#include "nfmu/types.hpp"

namespace nfmu {

/// Target-speed table of a driving cycle. Linear interpolation between rows,
/// constant extrapolation after the last row.
class DrivingCycle {
public:
    DrivingCycle() = default;
    DrivingCycle(Vec times, Vec speeds);

    [[nodiscard]] Real speed(Real t) const;
    [[nodiscard]] Real duration() const { return times_.empty() ? 0.0 : times_.back(); }
    [[nodiscard]] std::size_t size() const { return times_.size(); }
    [[nodiscard]] const Vec& times() const { return times_; }
    [[nodiscard]] const Vec& speeds() const { return speeds_; }

private:
    Vec times_;
    Vec speeds_;
};

/// Reads a cycle CSV with header `t,v_target`, t strictly increasing from 0.
/// Throws std::runtime_error naming the offending line on malformed input.
[[nodiscard]] DrivingCycle load_cycle(const std::string& path);

void write_cycle(const std::string& path, const DrivingCycle& cycle);

}  // namespace nfmu
