#pragma once

#include <functional>

#include "vmnf/tensor.hpp"

namespace vmnf {

// Central-difference gradient of a scalar function of a flat parameter vector.
// Independent of the autodiff engine; used as a test oracle.
inline std::vector<double> finite_diff_gradient(
    const std::function<double(const std::vector<double>&)>& f, std::vector<double> at,
    double h = 1e-5) {
    std::vector<double> grad(at.size());
    for (std::size_t i = 0; i < at.size(); ++i) {
        double orig = at[i];
        at[i] = orig + h;
        double fp = f(at);
        at[i] = orig - h;
        double fm = f(at);
        at[i] = orig;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

// Relative agreement test used throughout: |a - b| <= tol * max(1, |a|, |b|).
inline bool close_rel(double a, double b, double tol) {
    double scale = std::max({1.0, std::abs(a), std::abs(b)});
    return std::abs(a - b) <= tol * scale;
}

}  // namespace vmnf
