#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "atlas/dynamics.hpp"
#include "support/oracles.hpp"

using namespace atlas;

namespace {

Vector vec(std::initializer_list<double> xs) {
    Vector v(static_cast<Eigen::Index>(xs.size()));
    Eigen::Index i = 0;
    for (double x : xs) v(i++) = x;
    return v;
}

Vector fine_reference(const ControlAffineModel& model, Vector x, const Vector& u, double t, int substeps) {
    const double h = t / substeps;
    for (int k = 0; k < substeps; ++k) x = step(model, x, u, h);
    return x;
}

}  // namespace

TEST(Cartpole, EquilibriumAndControlJacobian) {
    const auto cp = cartpole();
    EXPECT_TRUE(cp.f1(cp.x_eq).isZero());
    EXPECT_TRUE(cp.u_eq.isZero());
    const Matrix f2 = cp.f2(Vector::Zero(4));
    EXPECT_DOUBLE_EQ(f2(0, 0), 0.0);
    EXPECT_DOUBLE_EQ(f2(1, 0), 0.0);
    // denominator m_c + m_p sin^2(theta) is m_c = 1 at theta = 0
    EXPECT_NEAR(f2(2, 0), 1.0, 1e-15);
    EXPECT_NEAR(f2(3, 0), 1.0, 1e-15);
    EXPECT_NEAR(cp.u_max(0), 0.981, 1e-15);
    EXPECT_NEAR(cp.u_min(0), -0.981, 1e-15);
}

TEST(Cartpole, DriftAtHorizontalPole) {
    const auto cp = cartpole();
    const Vector f = cp.f1(vec({0.0, std::numbers::pi / 2, 0.0, 0.0}));
    EXPECT_NEAR(f(0), 0.0, 1e-15);
    EXPECT_NEAR(f(1), 0.0, 1e-15);
    EXPECT_NEAR(f(2), 0.0, 1e-15);
    EXPECT_NEAR(f(3), -9.81, 1e-12);
}

TEST(Cartpole, PushFromRestMovesCartAndPoleForward) {
    const auto cp = cartpole();
    const Vector u = Vector::Constant(1, 0.981);
    Vector x = Vector::Zero(4);
    for (int k = 0; k < 5; ++k) x = step(cp, x, u, 0.01);
    EXPECT_GT(x(0), 0.0);
    EXPECT_GT(x(1), 0.0);
    const Vector ref = fine_reference(cp, Vector::Zero(4), u, 0.05, 500);
    EXPECT_LE((x - ref).norm(), 1e-8);
    EXPECT_EQ(x(0) > 0.0, ref(0) > 0.0);
    EXPECT_EQ(x(1) > 0.0, ref(1) > 0.0);
}

TEST(Cartpole, RestIsFixedPoint) {
    const auto cp = cartpole();
    for (double dt : {0.001, 0.01, 0.1}) EXPECT_TRUE(step(cp, cp.x_eq, Vector::Zero(1), dt).isZero());
}

TEST(Drone, HoverBalance) {
    const auto d = drone2d();
    EXPECT_LE(equilibrium_defect(d), 1e-12);
    EXPECT_NEAR(d.u_eq(0), 4.905, 1e-12);
    EXPECT_NEAR(d.u_max(0), 9.81, 1e-12);
    DroneParams total;
    total.limit = ThrustLimit::total;
    EXPECT_NEAR(drone2d(total).u_max(0), 19.62, 1e-12);
}

TEST(Drone, AngularAndLateralAcceleration) {
    const auto d = drone2d();
    std::mt19937_64 rng(4);
    for (int i = 0; i < 10; ++i) {
        const Vector x = oracle::random_matrix(6, 1, rng);
        EXPECT_NEAR(d.f(x, vec({1.0, 0.0}))(5), 4.0, 1e-12);
    }
    Vector x = Vector::Zero(6);
    x(2) = std::numbers::pi / 2;
    EXPECT_NEAR(d.f(x, vec({0.5, 0.5}))(3), -1.0, 1e-15);
}

TEST(Drone, HoverRolloutCost) {
    const auto d = drone2d();
    DroneParams literal;
    literal.cost_about_hover = false;
    const auto dl = drone2d(literal);
    const Policy hover = [&](const Vector&) { return d.u_eq; };
    const auto traj = rollout(dl, hover, dl.x_eq, 200, {0.01});
    EXPECT_FALSE(traj.diverged);
    for (const auto& x : traj.states) EXPECT_LE(x.norm(), 1e-12);
    EXPECT_NEAR(traj.cumulative_cost, 200 * 0.01 * 2.0 * 4.905 * 4.905, 1e-9);
    EXPECT_NEAR(rollout(d, hover, d.x_eq, 200, {0.01}).cumulative_cost, 0.0, 1e-20);
}

TEST(FromLinear, ToyView) {
    const auto model = from_linear(oracle::toy_system());
    EXPECT_EQ(model.f1(vec({1.0, 0.0})), vec({1.0, 0.0}));
    EXPECT_DOUBLE_EQ(model.l1(vec({1.0, 1.0})), 2.0);
    std::mt19937_64 rng(5);
    for (int i = 0; i < 10; ++i) EXPECT_EQ(model.f2(oracle::random_matrix(2, 1, rng)), Matrix::Identity(2, 2));
    EXPECT_TRUE(std::isinf(model.u_max(0)));
}

TEST(FromLinear, RejectsDiscrete) {
    auto sys = oracle::toy_system();
    sys.mode = TimeMode::discrete;
    try {
        from_linear(sys);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::wrong_mode);
    }
}

TEST(Models, AffineInControl) {
    std::mt19937_64 rng(6);
    for (const auto& model : {cartpole(), drone2d(), from_linear(oracle::toy_system())}) {
        for (int i = 0; i < 100; ++i) {
            const Vector x = oracle::random_matrix(model.n, 1, rng);
            const Vector u = oracle::random_matrix(model.m, 1, rng);
            const Vector v = oracle::random_matrix(model.m, 1, rng);
            const Vector lhs = model.f(x, u) - model.f(x, v);
            const Vector rhs = model.f2(x) * (u - v);
            EXPECT_LE((lhs - rhs).lpNorm<Eigen::Infinity>(), 1e-12 * std::max(1.0, rhs.lpNorm<Eigen::Infinity>()));
        }
    }
}

TEST(Models, EquilibriumInvariants) {
    std::mt19937_64 rng(7);
    for (const auto& model : {cartpole(), drone2d()}) {
        EXPECT_LE(equilibrium_defect(model), 1e-10);
        EXPECT_EQ(model.l1(model.x_eq), 0.0);
        EXPECT_TRUE((model.u_min.array() <= model.u_eq.array()).all());
        EXPECT_TRUE((model.u_eq.array() <= model.u_max.array()).all());
        for (int i = 0; i < 100; ++i) EXPECT_GT(model.l1(sample_initial_state(model, rng)), 0.0);
    }
}

TEST(Step, Rk4ConvergenceOrderOnCartpole) {
    const auto cp = cartpole();
    const Vector x0 = vec({0.3, 0.4, -0.5, 1.0});
    const Vector u = Vector::Constant(1, 0.2);
    const double t = 0.8;
    const Vector ref = fine_reference(cp, x0, u, t, 12800);
    const double e1 = (fine_reference(cp, x0, u, t, 20) - ref).norm();
    const double e2 = (fine_reference(cp, x0, u, t, 40) - ref).norm();
    EXPECT_GE(e1 / e2, 12.0);
    EXPECT_LE(e1 / e2, 20.0);
}

TEST(Step, RejectsBadInputs) {
    const auto cp = cartpole();
    EXPECT_THROW(step(cp, Vector::Zero(4), Vector::Zero(1), 0.0), Error);
    Vector bad = Vector::Zero(4);
    bad(0) = std::nan("");
    try {
        step(cp, bad, Vector::Zero(1), 0.01);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::non_finite_state);
    }
}

TEST(Rollout, LeavesResetBox) {
    const auto model = from_linear(oracle::toy_system());
    const Policy none = [](const Vector&) { return Vector::Zero(2); };
    const auto traj = rollout(model, none, vec({1.0, 0.0}), 1000, {0.01});
    EXPECT_TRUE(traj.diverged);
    EXPECT_GT(traj.states.back()(0), 10.0);
    EXPECT_NEAR(traj.times.back(), 2.31, 0.02);  // e^t = 10
}

TEST(Rollout, StageEvaluationMatchesLinearClosedLoop) {
    const auto model = from_linear(oracle::toy_system());
    const double k = 1.0 + std::sqrt(2.0);
    const Policy lqr = [k](const Vector& x) { return Vector(-k * x); };
    const auto zoh = rollout(model, lqr, vec({1.0, 1.0}), 100, {0.01, false});
    const auto stages = rollout(model, lqr, vec({1.0, 1.0}), 100, {0.01, true});
    const Vector exact = std::exp(-std::sqrt(2.0)) * vec({1.0, 1.0});
    EXPECT_LE((stages.states.back() - exact).norm(), 1e-9);
    EXPECT_LE((zoh.states.back() - exact).norm(), 1e-2);
    EXPECT_GT((zoh.states.back() - exact).norm(), (stages.states.back() - exact).norm());
}

TEST(Linearize, CartpoleMatchesHandDerivation) {
    const auto sys = linearize(cartpole());
    Matrix a = Matrix::Zero(4, 4);
    a(0, 2) = a(1, 3) = 1.0;
    a(2, 1) = -0.1 * 9.81;
    a(3, 1) = -1.1 * 9.81;
    EXPECT_LE((sys.A - a).norm(), 1e-7);
    EXPECT_LE((sys.Q - Matrix::Identity(4, 4)).norm(), 1e-6);
    EXPECT_NEAR(sys.B(2, 0), 1.0, 1e-12);
    EXPECT_NEAR(sys.B(3, 0), 1.0, 1e-12);
}
