#pragma once

// Central finite differences for the gradient checks.

#include <algorithm>
#include <cmath>

#include "atlas/core.hpp"

namespace atlas::fd {

template <class F>
Vector central_gradient(F&& f, const Vector& x, double h) {
    Vector g(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        Vector xp = x, xm = x;
        xp(i) += h;
        xm(i) -= h;
        g(i) = (f(xp) - f(xm)) / (2.0 * h);
    }
    return g;
}

template <class F>
double central_partial(F&& f, const Vector& x, Eigen::Index i, double h) {
    Vector xp = x, xm = x;
    xp(i) += h;
    xm(i) -= h;
    return (f(xp) - f(xm)) / (2.0 * h);
}

/// Relative agreement with an absolute floor for entries near zero.
inline bool close(double exact, double approx, double rel, double floor = 1e-7) {
    return std::abs(exact - approx) <= rel * std::max(std::abs(exact), std::abs(approx)) + floor;
}

}  // namespace atlas::fd
