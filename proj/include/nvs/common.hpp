#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace nvs {

// Malformed or out-of-range input data (datasets, checkpoints, CLI files).
// Mapped to exit code 3 by the command-line tool.
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values or numerically degenerate state encountered mid-computation.
// Mapped to exit code 4 by the command-line tool.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

template <typename T>
inline bool is_finite(T v) {
    return std::isfinite(static_cast<double>(v));
}

template <typename T>
inline T sigmoid(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

// d(sigmoid)/dx expressed through the activated value.
template <typename T>
inline T sigmoid_grad_from_value(T s) {
    return s * (T(1) - s);
}

template <typename T>
inline T logit(T y) {
    return std::log(y / (T(1) - y));
}

}  // namespace nvs
