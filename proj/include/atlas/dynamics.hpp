#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <string>

#include "atlas/core.hpp"
#include "atlas/linear_system.hpp"
#include "atlas/trajectory.hpp"

namespace atlas {

/// x' = f1(x) + f2(x) u with running cost l1(x) + (u - u_ref)' R (u - u_ref).
/// u_ref is zero unless the cost is measured relative to the hover thrust.
struct ControlAffineModel {
    std::string name;
    Eigen::Index n = 0;
    Eigen::Index m = 0;
    std::function<Vector(const Vector&)> f1;
    std::function<Matrix(const Vector&)> f2;
    std::function<double(const Vector&)> l1;
    Matrix R;
    Vector u_min, u_max;
    Vector x_eq, u_eq, u_ref;
    Vector init_box, reset_box;

    Vector f(const Vector& x, const Vector& u) const { return f1(x) + f2(x) * u; }

    double running_cost(const Vector& x, const Vector& u) const {
        const Vector du = u - u_ref;
        return l1(x) + du.dot(R * du);
    }

    Vector clip(const Vector& u) const { return u.cwiseMax(u_min).cwiseMin(u_max); }

    bool inside_reset_box(const Vector& x) const {
        return ((x - x_eq).cwiseAbs().array() <= reset_box.array()).all();
    }
};

using Policy = std::function<Vector(const Vector&)>;

/// ||f1(x_eq) + f2(x_eq) u_eq||_inf.
inline double equilibrium_defect(const ControlAffineModel& model) {
    return model.f(model.x_eq, model.u_eq).lpNorm<Eigen::Infinity>();
}

struct CartpoleParams {
    double m_cart = 1.0;
    double m_pole = 0.1;
    double length = 1.0;
    double g = 9.81;
};

/// State [p, theta, v, omega], theta measured from upright.
inline ControlAffineModel cartpole(const CartpoleParams& c = {}) {
    ControlAffineModel model;
    model.name = "cartpole";
    model.n = 4;
    model.m = 1;
    model.f1 = [c](const Vector& x) {
        const double s = std::sin(x(1)), co = std::cos(x(1)), w = x(3);
        const double den = c.m_cart + c.m_pole * s * s;
        Vector out(4);
        out << x(2), w, c.m_pole * s * (c.length * w * w - c.g * co) / den,
            (c.m_pole * c.length * w * w * co * s - (c.m_cart + c.m_pole) * c.g * s) / (c.length * den);
        return out;
    };
    model.f2 = [c](const Vector& x) {
        const double s = std::sin(x(1)), co = std::cos(x(1));
        const double den = c.m_cart + c.m_pole * s * s;
        Matrix out = Matrix::Zero(4, 1);
        out(2, 0) = 1.0 / den;
        out(3, 0) = co / (c.length * den);
        return out;
    };
    model.l1 = [](const Vector& x) { return x.squaredNorm(); };
    model.R = Matrix::Identity(1, 1);
    const double u_cap = c.m_pole * c.g;
    model.u_min = Vector::Constant(1, -u_cap);
    model.u_max = Vector::Constant(1, u_cap);
    model.x_eq = Vector::Zero(4);
    model.u_eq = model.u_ref = Vector::Zero(1);
    model.init_box = (Vector(4) << 4.0, 0.5, 2.0, 2.0).finished();
    model.reset_box = (Vector(4) << 10.0, 10.0, 1000.0, 1000.0).finished();
    return model;
}

enum class ThrustLimit { per_propeller, total };

struct DroneParams {
    double mass = 1.0;
    double arm = 0.25;
    double inertia = 0.0625;
    double g = 9.81;
    ThrustLimit limit = ThrustLimit::per_propeller;
    bool cost_about_hover = true;
};

/// State [p_x, p_y, theta, v_x, v_y, omega]; controls are the two propeller
/// thrusts.
inline ControlAffineModel drone2d(const DroneParams& d = {}) {
    ControlAffineModel model;
    model.name = "drone2d";
    model.n = 6;
    model.m = 2;
    model.f1 = [d](const Vector& x) {
        Vector out = Vector::Zero(6);
        out(0) = x(3);
        out(1) = x(4);
        out(2) = x(5);
        out(4) = -d.g;
        return out;
    };
    model.f2 = [d](const Vector& x) {
        const double s = std::sin(x(2)), c = std::cos(x(2));
        Matrix out = Matrix::Zero(6, 2);
        out(3, 0) = out(3, 1) = -s / d.mass;
        out(4, 0) = out(4, 1) = c / d.mass;
        out(5, 0) = d.arm / d.inertia;
        out(5, 1) = -d.arm / d.inertia;
        return out;
    };
    model.l1 = [](const Vector& x) { return x.squaredNorm(); };
    model.R = Matrix::Identity(2, 2);
    const double weight = d.mass * d.g;
    model.u_min = Vector::Zero(2);
    model.u_max = Vector::Constant(2, d.limit == ThrustLimit::per_propeller ? weight : 2.0 * weight);
    model.x_eq = Vector::Zero(6);
    model.u_eq = Vector::Constant(2, 0.5 * weight);
    model.u_ref = d.cost_about_hover ? model.u_eq : Vector::Zero(2);
    model.init_box = Vector::Constant(6, 2.0);
    model.reset_box = (Vector(6) << 4.0, 4.0, 4.0, 5.0, 5.0, 5.0).finished();
    return model;
}

/// Control-affine view of a continuous linear system. Controls are unbounded.
inline ControlAffineModel from_linear(const LinearSystem& input, double init_half_width = 2.0,
                                      double reset_half_width = 10.0) {
    const LinearSystem sys = validate(input);
    if (sys.mode != TimeMode::continuous) throw Error(ErrorKind::wrong_mode, "from_linear needs a continuous system");
    ControlAffineModel model;
    model.name = "linear";
    model.n = sys.n();
    model.m = sys.m();
    const Matrix a = sys.A, b = sys.B, q = sys.Q;
    model.f1 = [a](const Vector& x) { return Vector(a * x); };
    model.f2 = [b](const Vector&) { return b; };
    model.l1 = [q](const Vector& x) { return x.dot(q * x); };
    model.R = sys.R;
    const double inf = std::numeric_limits<double>::infinity();
    model.u_min = Vector::Constant(model.m, -inf);
    model.u_max = Vector::Constant(model.m, inf);
    model.x_eq = Vector::Zero(model.n);
    model.u_eq = model.u_ref = Vector::Zero(model.m);
    model.init_box = Vector::Constant(model.n, init_half_width);
    model.reset_box = Vector::Constant(model.n, reset_half_width);
    return model;
}

/// Jacobians of f at (x_eq, u_eq) by central differences, packaged as a
/// continuous LinearSystem in deviation coordinates with Q = Hessian of l1 / 2.
inline LinearSystem linearize(const ControlAffineModel& model, double h = 1e-6) {
    LinearSystem sys;
    sys.A.resize(model.n, model.n);
    sys.Q.resize(model.n, model.n);
    for (Eigen::Index j = 0; j < model.n; ++j) {
        Vector xp = model.x_eq, xm = model.x_eq;
        xp(j) += h;
        xm(j) -= h;
        sys.A.col(j) = (model.f(xp, model.u_eq) - model.f(xm, model.u_eq)) / (2.0 * h);
    }
    const double hq = 1e-4;
    for (Eigen::Index i = 0; i < model.n; ++i)
        for (Eigen::Index j = 0; j < model.n; ++j) {
            Vector pp = model.x_eq, pm = model.x_eq, mp = model.x_eq, mm = model.x_eq;
            pp(i) += hq, pp(j) += hq;
            pm(i) += hq, pm(j) -= hq;
            mp(i) -= hq, mp(j) += hq;
            mm(i) -= hq, mm(j) -= hq;
            sys.Q(i, j) = (model.l1(pp) - model.l1(pm) - model.l1(mp) + model.l1(mm)) / (8.0 * hq * hq);
        }
    sys.Q = symmetrize(sys.Q);
    sys.B = model.f2(model.x_eq);
    sys.R = model.R;
    return sys;
}

/// One RK4 step with u held fixed.
inline Vector step(const ControlAffineModel& model, const Vector& x, const Vector& u, double dt) {
    if (!(dt > 0.0)) throw Error(ErrorKind::invalid_config, "dt must be positive");
    const Vector k1 = model.f(x, u);
    const Vector k2 = model.f(x + 0.5 * dt * k1, u);
    const Vector k3 = model.f(x + 0.5 * dt * k2, u);
    const Vector k4 = model.f(x + dt * k3, u);
    Vector next = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!next.allFinite()) throw Error(ErrorKind::non_finite_state, "RK4 step produced a non-finite state");
    return next;
}

/// RK4 step that re-evaluates the policy at every stage.
inline Vector step_closed_loop(const ControlAffineModel& model, const Policy& policy, const Vector& x, double dt) {
    auto rhs = [&](const Vector& y) { return model.f(y, policy(y)); };
    const Vector k1 = rhs(x);
    const Vector k2 = rhs(x + 0.5 * dt * k1);
    const Vector k3 = rhs(x + 0.5 * dt * k2);
    const Vector k4 = rhs(x + dt * k3);
    Vector next = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!next.allFinite()) throw Error(ErrorKind::non_finite_state, "RK4 step produced a non-finite state");
    return next;
}

struct RolloutOptions {
    double dt = 0.01;
    bool policy_at_stages = false;
};

/// Runs up to max_steps steps. Leaving the reset box ends the rollout with
/// diverged = true; the offending state is kept as the last knot.
inline Trajectory rollout(const ControlAffineModel& model, const Policy& policy, const Vector& x0, long max_steps,
                          const RolloutOptions& opt = {}) {
    if (!(opt.dt > 0.0)) throw Error(ErrorKind::invalid_config, "dt must be positive");
    if (!x0.allFinite()) throw Error(ErrorKind::non_finite_state, "initial state is not finite");
    Trajectory traj;
    auto record = [&](double t, const Vector& x) {
        const Vector u = policy(x);
        traj.times.push_back(t);
        traj.states.push_back(x);
        traj.controls.push_back(u);
        traj.running_costs.push_back(model.running_cost(x, u));
    };
    Vector x = x0;
    record(0.0, x);
    if (!model.inside_reset_box(x)) {
        traj.diverged = true;
        return traj;
    }
    for (long k = 0; k < max_steps; ++k) {
        x = opt.policy_at_stages ? step_closed_loop(model, policy, x, opt.dt) : step(model, x, traj.controls.back(), opt.dt);
        record(static_cast<double>(k + 1) * opt.dt, x);
        traj.cumulative_cost += 0.5 * opt.dt * (traj.running_costs[traj.size() - 2] + traj.running_costs.back());
        if (!model.inside_reset_box(x)) {
            traj.diverged = true;
            break;
        }
    }
    return traj;
}

/// Uniform draw from the init box around x_eq.
inline Vector sample_initial_state(const ControlAffineModel& model, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    Vector x(model.n);
    for (Eigen::Index i = 0; i < model.n; ++i) x(i) = model.x_eq(i) + model.init_box(i) * unit(rng);
    return x;
}

}  // namespace atlas
