#pragma once

// Central finite-difference checking against analytic gradients, double
// precision, h = 1e-5. Comparison: relative error against the tolerance, with
// an absolute floor near zero.

#include <cmath>
#include <functional>
#include <string>

#include <doctest.h>

namespace nvs::testing {

inline constexpr double kFdStep = 1e-5;

class GradChecker {
public:
    explicit GradChecker(double rel_tol, double abs_tol = 1e-6)
        : rel_tol_(rel_tol), abs_tol_(abs_tol) {}

    // f() re-evaluates the scalar loss; *param is the parameter under test.
    void check(const std::function<double()>& f, double* param, double analytic,
               const std::string& label) {
        const double orig = *param;
        *param = orig + kFdStep;
        const double fp = f();
        *param = orig - kFdStep;
        const double fm = f();
        *param = orig;
        const double numeric = (fp - fm) / (2.0 * kFdStep);

        const double err = std::abs(analytic - numeric);
        const double denom = std::max(std::abs(analytic), std::abs(numeric));
        const bool ok = err <= abs_tol_ || (denom > 0 && err / denom <= rel_tol_);
        if (!ok) {
            ++failures_;
            if (failures_ <= 5) {
                FAIL_CHECK(label << ": analytic " << analytic << " vs fd " << numeric
                                 << " (rel " << (denom > 0 ? err / denom : err) << ")");
            }
        }
        ++checked_;
    }

    int failures() const { return failures_; }
    int checked() const { return checked_; }

private:
    double rel_tol_;
    double abs_tol_;
    int failures_ = 0;
    int checked_ = 0;
};

}  // namespace nvs::testing
