#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace nvs {

// Log-linear (exponential) interpolation between an initial and final rate,
// clamped at `max_steps`.
struct LrSchedule {
    double initial = 1.0;
    double final = 1.0;
    std::int64_t max_steps = 1;

    LrSchedule() = default;
    LrSchedule(double initial_, double final_, std::int64_t max_steps_)
        : initial(initial_), final(final_), max_steps(max_steps_) {
        if (!(initial > 0.0) || !(final > 0.0) || max_steps <= 0)
            throw std::invalid_argument("lr schedule requires positive rates and steps");
    }

    double value(std::int64_t step) const {
        if (step <= 0) return initial;
        if (step >= max_steps) return final;
        const double frac = double(step) / double(max_steps);
        return initial * std::exp(std::log(final / initial) * frac);
    }
};

}  // namespace nvs
