#pragma once

#include <cmath>

#include "atlas/value_learn.hpp"

namespace atlas::oracle {

/// Loss recomputed from value() and grad() alone. With `frozen` the controls
/// stay at the given values instead of following the network.
inline double td_loss(const ValueNetwork& net, const ControlAffineModel& model, const Matrix& X, const LossOptions& opt,
                      const Matrix* frozen) {
    double sum = 0.0;
    int used = 0;
    for (Eigen::Index i = 0; i < X.cols(); ++i) {
        const Vector x = X.col(i);
        const Vector u = frozen ? Vector(frozen->col(i)) : optimal_control(net, model, x);
        const double d = residual(net, model, x, u, opt.tau);
        const double l = model.running_cost(x, u);
        if (opt.kind == LossKind::mse) {
            sum += d * d;
            ++used;
        } else if (l >= kMinRunningCost) {
            sum += std::abs(d) / l;
            ++used;
        }
    }
    return sum / used;
}

}  // namespace atlas::oracle
