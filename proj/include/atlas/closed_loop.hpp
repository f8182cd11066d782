#pragma once

#include <cmath>
#include <vector>

#include "atlas/core.hpp"
#include "atlas/linear_system.hpp"
#include "atlas/riccati.hpp"
#include "atlas/trajectory.hpp"

namespace atlas {

/// u = -Kx.
struct LinearPolicy {
    Matrix K;
    TimeMode mode = TimeMode::continuous;

    Vector operator()(const Vector& x) const { return -(K * x); }
};

struct ClosedLoop {
    Matrix A_cl;
    std::vector<Complex> eigenvalues;
    bool stable = false;
};

inline constexpr double kDivergenceBound = 1e6;

inline LinearPolicy policy_from(const Matrix& p, const LinearSystem& sys) {
    if (!p.allFinite()) throw Error(ErrorKind::non_finite_state, "P is not finite");
    return {feedback_gain(sys, p), sys.mode};
}

inline LinearPolicy policy_from(const RiccatiSolution& sol, const LinearSystem& sys) { return policy_from(sol.P, sys); }

inline ClosedLoop closed_loop_matrix(const Matrix& p, const LinearSystem& sys) {
    ClosedLoop cl;
    cl.A_cl = closed_loop_dynamics(sys, p);
    cl.eigenvalues = eigenvalues_of(cl.A_cl);
    cl.stable = all_stable(cl.eigenvalues, sys.mode);
    return cl;
}

/// Closed-loop simulation. In continuous time `horizon` is a duration and the
/// dynamics are integrated with classical RK4; in discrete time it is rounded
/// to a step count and the map is iterated. Continuous cost is the trapezoid
/// rule over the knots; discrete cost sums the running cost of every state
/// that is followed by a transition. Stops early (diverged) once
/// ||x||_inf exceeds 1e6.
inline Trajectory simulate(const LinearSystem& sys, const LinearPolicy& policy, const Vector& x0, double horizon,
                           double dt = 0.01) {
    if (!(horizon > 0.0)) throw Error(ErrorKind::invalid_config, "horizon must be positive");
    if (sys.mode == TimeMode::continuous && !(dt > 0.0)) throw Error(ErrorKind::invalid_config, "dt must be positive");
    const bool continuous = sys.mode == TimeMode::continuous;
    const auto steps = continuous ? static_cast<long>(std::llround(horizon / dt)) : static_cast<long>(std::llround(horizon));
    const Matrix a_cl = sys.A - sys.B * policy.K;

    Trajectory traj;
    auto record = [&](double t, const Vector& x) {
        if (!x.allFinite()) throw Error(ErrorKind::non_finite_state, "state became non-finite at t = " + std::to_string(t));
        const Vector u = policy(x);
        traj.times.push_back(t);
        traj.states.push_back(x);
        traj.controls.push_back(u);
        traj.running_costs.push_back(x.dot(sys.Q * x) + u.dot(sys.R * u));
    };

    Vector x = x0;
    record(0.0, x);
    for (long k = 0; k < steps; ++k) {
        if (continuous) {
            const Vector k1 = a_cl * x;
            const Vector k2 = a_cl * (x + 0.5 * dt * k1);
            const Vector k3 = a_cl * (x + 0.5 * dt * k2);
            const Vector k4 = a_cl * (x + dt * k3);
            x += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            record(static_cast<double>(k + 1) * dt, x);
            traj.cumulative_cost += 0.5 * dt * (traj.running_costs[traj.size() - 2] + traj.running_costs.back());
        } else {
            x = a_cl * x;
            record(static_cast<double>(k + 1), x);
            traj.cumulative_cost += traj.running_costs[traj.size() - 2];
        }
        if (x.lpNorm<Eigen::Infinity>() > kDivergenceBound) {
            traj.diverged = true;
            break;
        }
    }
    return traj;
}

/// Cost-to-go x0'Px0 of the stabilizing solution.
inline double exact_cost(const Matrix& p_stable, const Vector& x0) { return x0.dot(p_stable * x0); }

}  // namespace atlas
