#pragma once

#include <cmath>
#include <functional>

#include "bodyadapt/tensor.hpp"

namespace bodyadapt {

// Central-difference gradient estimate, (f(x+h*e_i) - f(x-h*e_i)) / 2h per
// coordinate. The independent oracle gradient checks compare the tape
// against.
inline Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f,
                                         const Tensor& point, double h) {
    if (!(h > 0.0)) throw NumericError("finite difference step must be positive");
    Tensor grad(point.shape());
    Tensor x = point;
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        float orig = x[i];
        float xp = static_cast<float>(orig + h);
        float xm = static_cast<float>(orig - h);
        // divide by the step the float grid actually realized
        double denom = static_cast<double>(xp) - static_cast<double>(xm);
        if (denom == 0.0) throw NumericError("finite difference step vanished at float precision");
        x[i] = xp;
        double fp = f(x);
        x[i] = xm;
        double fm = f(x);
        x[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw NumericError("non-finite function value in finite difference");
        grad[i] = static_cast<float>((fp - fm) / denom);
    }
    return grad;
}

// || a - b ||_2 / max(||a||_2, ||b||_2, floor) -- the usual norm-wise
// gradient-check metric, robust to individual near-zero coordinates.
inline double relative_error(const Tensor& a, const Tensor& b, double floor = 1e-12) {
    require_same_shape(a, b, "relative_error");
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        double d = static_cast<double>(a[i]) - b[i];
        diff += d * d;
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    double denom = std::max(std::max(std::sqrt(na), std::sqrt(nb)), floor);
    return std::sqrt(diff) / denom;
}

}  // namespace bodyadapt
