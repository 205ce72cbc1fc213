#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace nfmu {

using Real = double;
using Vec = std::vector<Real>;

/// State of a hybrid model instance: continuous states x_c, discrete states
/// x_d (held commands, mode flags, sign branches) and the current time.
struct ModelState {
    Real t = 0.0;
    Vec x_c;
    Vec x_d;
};

/// External inputs u and outputs y; both may be empty.
struct ModelIO {
    Vec u;
    Vec y;
};

enum class EventKind { Time, State };

struct EventRecord {
    Real t = 0.0;
    EventKind kind = EventKind::Time;
    int indicator_index = -1;  // -1 for time events
};

struct EventIndicators {
    Vec z;
    [[nodiscard]] int count() const { return static_cast<int>(z.size()); }
};

class SimulationError : public std::runtime_error {
public:
    explicit SimulationError(const std::string& msg) : std::runtime_error(msg) {}
};

inline const char* to_string(EventKind k) {
    return k == EventKind::Time ? "time" : "state";
}

}  // namespace nfmu
