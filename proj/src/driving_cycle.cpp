#include "nfmu/driving_cycle.hpp"

#include "csv_detail.hpp"

#include <algorithm>
#include <cmath>

namespace nfmu {

DrivingCycle::DrivingCycle(Vec times, Vec speeds)
    : times_(std::move(times)), speeds_(std::move(speeds)) {
    if (times_.size() != speeds_.size() || times_.empty()) {
        throw std::invalid_argument("cycle: time and speed vectors must be non-empty and equal length");
    }
    if (times_.front() != 0.0) {
        throw std::invalid_argument("cycle: time must start at 0");
    }
    for (std::size_t i = 1; i < times_.size(); ++i) {
        if (!(times_[i] > times_[i - 1])) {
            throw std::invalid_argument("cycle: time must be strictly increasing at row " +
                                        std::to_string(i + 1));
        }
    }
}

Real DrivingCycle::speed(Real t) const {
    if (t <= times_.front()) {
        return speeds_.front();
    }
    if (t >= times_.back()) {
        return speeds_.back();
    }
    const auto it = std::upper_bound(times_.begin(), times_.end(), t);
    const std::size_t i = static_cast<std::size_t>(it - times_.begin());
    const Real t0 = times_[i - 1], t1 = times_[i];
    const Real w = (t - t0) / (t1 - t0);
    return speeds_[i - 1] + w * (speeds_[i] - speeds_[i - 1]);
}

DrivingCycle load_cycle(const std::string& path) {
    const auto tab = csv::read_table(path);
    if (tab.header.size() != 2 || tab.header[0] != "t" || tab.header[1] != "v_target") {
        throw std::runtime_error(path + ":1: expected header 't,v_target'");
    }
    Vec times, speeds;
    times.reserve(tab.rows.size());
    speeds.reserve(tab.rows.size());
    for (const auto& row : tab.rows) {
        times.push_back(row[0]);
        speeds.push_back(row[1]);
    }
    try {
        return DrivingCycle(std::move(times), std::move(speeds));
    } catch (const std::invalid_argument& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
}

void write_cycle(const std::string& path, const DrivingCycle& cycle) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write file: " + path);
    }
    out << "t,v_target\n";
    for (std::size_t i = 0; i < cycle.size(); ++i) {
        out << csv::format_real(cycle.times()[i]) << ',' << csv::format_real(cycle.speeds()[i])
            << '\n';
    }
}

}  // namespace nfmu
