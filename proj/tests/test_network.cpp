#include <gtest/gtest.h>

#include <random>
#include <tuple>

#include "atlas/network.hpp"
#include "support/fd.hpp"

using namespace atlas;

namespace {

ValueNetwork random_net(NetworkKind kind, Activation act, Eigen::Index n, std::vector<int> widths, std::mt19937_64& rng,
                        double eps = 1e-3) {
    std::normal_distribution<double> g(0.0, 1.0);
    Vector x_eq(n);
    for (Eigen::Index i = 0; i < n; ++i) x_eq(i) = 0.3 * g(rng);
    ValueNetwork net(kind, n, std::move(widths), act, x_eq, eps);
    net.initialize(Initializer::lecun_normal, rng);
    // nonzero biases so the generic path is exercised fully
    for (const auto& l : net.layers())
        if (l.b_offset >= 0)
            for (Eigen::Index i = 0; i < l.out; ++i) net.params()(l.b_offset + i) = 0.1 * g(rng);
    return net;
}

}  // namespace

TEST(Layout, ParameterCounts) {
    ValueNetwork gen(NetworkKind::generic, 2, {8, 4}, Activation::elu, Vector::Zero(2));
    EXPECT_EQ(gen.num_params(), (2 * 8 + 8) + (8 * 4 + 4) + (4 + 1));
    ValueNetwork pd(NetworkKind::positive_definite, 2, {8, 4}, Activation::elu, Vector::Zero(2));
    EXPECT_EQ(pd.num_params(), 2 * 8 + 8 * 4);
}

TEST(Layout, RejectsBadArchitectures) {
    EXPECT_THROW(ValueNetwork(NetworkKind::generic, 2, {}, Activation::elu, Vector::Zero(2)), Error);
    EXPECT_THROW(ValueNetwork(NetworkKind::generic, 2, {0}, Activation::elu, Vector::Zero(2)), Error);
    EXPECT_THROW(ValueNetwork(NetworkKind::positive_definite, 2, {4}, Activation::elu, Vector::Zero(2), 0.0), Error);
    EXPECT_THROW(ValueNetwork(NetworkKind::generic, 2, {4}, Activation::elu, Vector::Zero(3)), Error);
}

TEST(PositiveDefinite, ZeroWeightsLeaveEpsilonTerm) {
    Vector x_eq(2);
    x_eq << 0.5, -1.0;
    ValueNetwork net(NetworkKind::positive_definite, 2, {16, 8}, Activation::elu, x_eq, 1e-3);
    Vector x(2);
    x << 1.5, 2.0;
    EXPECT_DOUBLE_EQ(net.value(x), 1e-3 * (x - x_eq).squaredNorm());
    EXPECT_LE((net.grad(x) - 2e-3 * (x - x_eq)).norm(), 1e-18);
    EXPECT_EQ(net.value(x_eq), 0.0);
}

TEST(PositiveDefinite, LowerBoundOverRandomParameters) {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> g(0.0, 2.0);
    for (auto act : {Activation::elu, Activation::relu, Activation::tanh}) {
        for (int trial = 0; trial < 1000; ++trial) {
            auto net = random_net(NetworkKind::positive_definite, act, 3, {6, 5}, rng);
            for (Eigen::Index i = 0; i < net.num_params(); ++i) net.params()(i) = g(rng);
            Vector x(3);
            for (Eigen::Index i = 0; i < 3; ++i) x(i) = g(rng);
            if ((x - net.x_eq()).norm() == 0.0) continue;
            EXPECT_GE(net.value(x), net.epsilon() * (x - net.x_eq()).squaredNorm() * (1.0 - 1e-14));
            EXPECT_EQ(net.value(net.x_eq()), 0.0);
        }
    }
}

TEST(PositiveDefinite, ZeroGradientAtEquilibrium) {
    std::mt19937_64 rng(12);
    for (auto act : {Activation::elu, Activation::tanh}) {
        const auto net = random_net(NetworkKind::positive_definite, act, 4, {8, 8}, rng);
        EXPECT_LE(net.grad(net.x_eq()).norm(), 1e-15);
    }
}

TEST(Initializers, Statistics) {
    std::mt19937_64 rng(13);
    ValueNetwork net(NetworkKind::generic, 200, {400}, Activation::elu, Vector::Zero(200));
    auto weights = [&] { return Eigen::Map<const Vector>(net.params().data(), 200 * 400); };
    net.initialize(Initializer::lecun_normal, rng);
    EXPECT_NEAR(std::sqrt(weights().squaredNorm() / (200 * 400)), std::sqrt(1.0 / 200), 0.002);
    EXPECT_LE(weights().cwiseAbs().maxCoeff(), 2.0 * std::sqrt(1.0 / 200) / 0.8796256610342398 + 1e-12);
    net.initialize(Initializer::kaiming_normal, rng);
    EXPECT_NEAR(std::sqrt(weights().squaredNorm() / (200 * 400)), std::sqrt(2.0 / 200), 0.003);
    net.initialize(Initializer::uniform, rng);
    EXPECT_LE(weights().cwiseAbs().maxCoeff(), 0.5);
    net.initialize(Initializer::normal, rng);
    EXPECT_NEAR(std::sqrt(weights().squaredNorm() / (200 * 400)), 1.0, 0.02);
    const auto& b = net.layers()[0];
    EXPECT_TRUE(net.params().segment(b.b_offset, b.out).isZero());
}

class Gradients : public ::testing::TestWithParam<std::tuple<NetworkKind, Activation>> {};

TEST_P(Gradients, StateGradientMatchesFiniteDifferences) {
    const auto [kind, act] = GetParam();
    std::mt19937_64 rng(21 + static_cast<int>(kind) * 7 + static_cast<int>(act));
    std::normal_distribution<double> g(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        const auto net = random_net(kind, act, 4, {16, 12}, rng);
        Vector x(4);
        for (Eigen::Index i = 0; i < 4; ++i) x(i) = g(rng);
        const Vector grad = net.grad(x);
        const Vector fd = fd::central_gradient([&](const Vector& y) { return net.value(y); }, x, 1e-5);
        for (Eigen::Index i = 0; i < 4; ++i)
            EXPECT_TRUE(fd::close(grad(i), fd(i), 1e-4)) << "component " << i << ": " << grad(i) << " vs " << fd(i);
    }
}

TEST_P(Gradients, TangentIsDirectionalDerivative) {
    const auto [kind, act] = GetParam();
    std::mt19937_64 rng(31);
    const auto net = random_net(kind, act, 3, {10, 6}, rng);
    const Matrix X = Matrix::Random(3, 7), D = Matrix::Random(3, 7);
    const auto cache = net.forward(X);
    const auto tan = net.tangent(cache, D);
    const Matrix grads = net.input_gradients(cache);
    for (Eigen::Index i = 0; i < 7; ++i) EXPECT_NEAR(tan.slopes(i), grads.col(i).dot(D.col(i)), 1e-12);
}

TEST_P(Gradients, ParameterGradientOfValueAndSlope) {
    const auto [kind, act] = GetParam();
    std::mt19937_64 rng(41);
    auto net = random_net(kind, act, 3, {8, 8}, rng);
    const Matrix X = Matrix::Random(3, 16), D = Matrix::Random(3, 16);
    const Vector a = Vector::Random(16), b = Vector::Random(16);
    auto objective = [&](const Vector& theta) {
        ValueNetwork copy = net;
        copy.set_params(theta);
        const auto c = copy.forward(X);
        return a.dot(c.values) + b.dot(copy.tangent(c, D).slopes);
    };
    const auto cache = net.forward(X);
    const Vector grad = net.param_gradient(cache, net.tangent(cache, D), a, b);
    std::uniform_int_distribution<Eigen::Index> pick(0, net.num_params() - 1);
    for (int k = 0; k < 20; ++k) {
        const Eigen::Index i = pick(rng);
        const double fd = fd::central_partial(objective, net.params(), i, 1e-5);
        EXPECT_TRUE(fd::close(grad(i), fd, 1e-4)) << "theta " << i << ": " << grad(i) << " vs " << fd;
    }
}

INSTANTIATE_TEST_SUITE_P(AllKinds, Gradients,
                         ::testing::Combine(::testing::Values(NetworkKind::generic, NetworkKind::positive_definite),
                                            ::testing::Values(Activation::elu, Activation::relu, Activation::tanh)));

TEST(Batch, ColumnsMatchSingleEvaluation) {
    std::mt19937_64 rng(51);
    const auto net = random_net(NetworkKind::generic, Activation::tanh, 2, {5}, rng);
    const Matrix X = Matrix::Random(2, 4);
    const Vector v = net.values(X);
    const Matrix g = net.gradients(X);
    for (Eigen::Index i = 0; i < 4; ++i) {
        EXPECT_DOUBLE_EQ(v(i), net.value(X.col(i)));
        EXPECT_LE((g.col(i) - net.grad(X.col(i))).norm(), 1e-15);
    }
}

TEST(Names, RoundTrip) {
    EXPECT_EQ(activation_from(to_string(Activation::tanh)), Activation::tanh);
    EXPECT_EQ(network_kind_from(to_string(NetworkKind::positive_definite)), NetworkKind::positive_definite);
    EXPECT_EQ(initializer_from(to_string(Initializer::kaiming_normal)), Initializer::kaiming_normal);
    EXPECT_THROW(activation_from("sigmoid"), Error);
}
