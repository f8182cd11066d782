#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <cstring>
#include <deque>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "atlas/core.hpp"
#include "atlas/dynamics.hpp"
#include "atlas/json_io.hpp"
#include "atlas/network.hpp"
#include "atlas/riccati.hpp"

namespace atlas {

/// Anything exposing value(x) and grad(x).
template <class F>
concept ValueFunction = requires(const F& f, const Vector& x) {
    { f.value(x) } -> std::convertible_to<double>;
    { f.grad(x) } -> std::convertible_to<Vector>;
};

/// V + c. The gradient is untouched.
template <ValueFunction F>
struct OffsetValue {
    const F& base;
    double offset = 0.0;

    double value(const Vector& x) const { return base.value(x) + offset; }
    Vector grad(const Vector& x) const { return base.grad(x); }
};

/// x'Px + c.
struct QuadraticValue {
    Matrix P;
    double offset = 0.0;

    double value(const Vector& x) const { return x.dot(P * x) + offset; }
    Vector grad(const Vector& x) const { return (P + P.transpose()) * x; }
};

namespace detail {

inline Vector unclipped_control(const ControlAffineModel& model, const Matrix& f2, const Vector& grad) {
    return model.u_ref - 0.5 * model.R.llt().solve(f2.transpose() * grad);
}

}  // namespace detail

/// clip(u_ref - R^-1 f2' grad V / 2, u_min, u_max).
template <ValueFunction F>
Vector optimal_control(const F& vf, const ControlAffineModel& model, const Vector& x) {
    return model.clip(detail::unclipped_control(model, model.f2(x), vf.grad(x)));
}

/// l(x,u) + grad V . f(x,u) - V/tau; the last term is dropped without tau.
template <ValueFunction F>
double residual(const F& vf, const ControlAffineModel& model, const Vector& x, const Vector& u,
                std::optional<double> tau = std::nullopt) {
    double d = model.running_cost(x, u) + vf.grad(x).dot(model.f(x, u));
    if (tau) d -= vf.value(x) / *tau;
    return d;
}

enum class LossKind { weighted, mse };

inline const char* to_string(LossKind k) { return k == LossKind::weighted ? "weighted" : "mse"; }

inline LossKind loss_kind_from(const std::string& s) {
    if (s == "weighted") return LossKind::weighted;
    if (s == "mse") return LossKind::mse;
    throw Error(ErrorKind::invalid_config, "unknown loss '" + s + "'");
}

inline constexpr double kMinRunningCost = 1e-9;

struct ResidualBatch {
    Matrix states;
    Matrix controls;
    Vector residuals;
    Vector running_costs;
    double weighted_loss = 0.0;
    std::size_t dropped = 0;
};

struct LossOptions {
    LossKind kind = LossKind::weighted;
    std::optional<double> tau;
    bool differentiate_control = false;
};

struct LossResult {
    double loss = 0.0;
    double weighted_loss = 0.0;
    double mean_abs_delta = 0.0;
    double mse = 0.0;
    Vector grad;
    std::size_t used = 0;
    std::size_t dropped = 0;
};

/// Residuals over a batch with the clipped optimal control. Samples with
/// l < 1e-9 are left out of weighted_loss and counted in `dropped`.
inline ResidualBatch residual_batch(const ValueNetwork& net, const ControlAffineModel& model, const Matrix& X,
                                    std::optional<double> tau = std::nullopt) {
    const auto cache = net.forward(X);
    const Matrix grads = net.input_gradients(cache);
    ResidualBatch rb;
    rb.states = X;
    rb.controls.resize(model.m, X.cols());
    rb.residuals.resize(X.cols());
    rb.running_costs.resize(X.cols());
    double sum = 0.0;
    std::size_t used = 0;
    for (Eigen::Index i = 0; i < X.cols(); ++i) {
        const Vector x = X.col(i);
        const Vector u = model.clip(detail::unclipped_control(model, model.f2(x), grads.col(i)));
        const double l = model.running_cost(x, u);
        double d = l + grads.col(i).dot(model.f(x, u));
        if (tau) d -= cache.values(i) / *tau;
        rb.controls.col(i) = u;
        rb.residuals(i) = d;
        rb.running_costs(i) = l;
        if (l < kMinRunningCost) {
            ++rb.dropped;
            continue;
        }
        sum += std::abs(d) / l;
        ++used;
    }
    rb.weighted_loss = used ? sum / static_cast<double>(used) : 0.0;
    return rb;
}

/// Loss and its exact gradient in theta. The control is held fixed unless
/// differentiate_control is set, in which case the dependence of the
/// unclipped components of u* on grad V is included.
inline LossResult loss_and_param_grad(const ValueNetwork& net, const ControlAffineModel& model, const Matrix& X,
                                      const LossOptions& opt = {}) {
    const Eigen::Index batch = X.cols();
    const auto cache = net.forward(X);
    const Matrix grads = net.input_gradients(cache);
    const Matrix r_inv = model.R.inverse();

    Matrix F(model.n, batch), W = Matrix::Zero(model.n, batch);
    Vector delta(batch), cost(batch), slope(batch);
    std::vector<bool> keep(static_cast<std::size_t>(batch), true);
    std::vector<Matrix> f2s(static_cast<std::size_t>(batch));
    std::vector<Vector> us(static_cast<std::size_t>(batch));
    std::vector<Eigen::Array<bool, Eigen::Dynamic, 1>> free(static_cast<std::size_t>(batch));

    LossResult res;
    double wsum = 0.0, asum = 0.0, ssum = 0.0;
    for (Eigen::Index i = 0; i < batch; ++i) {
        const auto si = static_cast<std::size_t>(i);
        const Vector x = X.col(i);
        f2s[si] = model.f2(x);
        const Vector raw = detail::unclipped_control(model, f2s[si], grads.col(i));
        us[si] = model.clip(raw);
        free[si] = (us[si].array() == raw.array());
        F.col(i) = model.f1(x) + f2s[si] * us[si];
        cost(i) = model.running_cost(x, us[si]);
        slope(i) = grads.col(i).dot(F.col(i));
        delta(i) = cost(i) + slope(i) - (opt.tau ? cache.values(i) / *opt.tau : 0.0);
        if (!std::isfinite(delta(i))) throw Error(ErrorKind::training_diverged, "non-finite residual");
        asum += std::abs(delta(i));
        ssum += delta(i) * delta(i);
        if (cost(i) < kMinRunningCost) {
            keep[si] = false;
            ++res.dropped;
            continue;
        }
        wsum += std::abs(delta(i)) / cost(i);
    }
    res.used = static_cast<std::size_t>(batch) - res.dropped;
    if (opt.kind == LossKind::weighted && res.used == 0)
        throw Error(ErrorKind::degenerate_cost, "every sample in the batch sits at zero running cost");
    res.weighted_loss = res.used ? wsum / static_cast<double>(res.used) : 0.0;
    res.mean_abs_delta = asum / static_cast<double>(batch);
    res.mse = ssum / static_cast<double>(batch);
    res.loss = opt.kind == LossKind::weighted ? res.weighted_loss : res.mse;

    // dL/dV (a), dL/d(grad V . f) (b), dL/du
    Vector a = Vector::Zero(batch), b = Vector::Zero(batch);
    const double inv_tau = opt.tau ? 1.0 / *opt.tau : 0.0;
    for (Eigen::Index i = 0; i < batch; ++i) {
        const auto si = static_cast<std::size_t>(i);
        Vector du_bar;
        const Vector du = us[si] - model.u_ref;
        const Vector dl_du = 2.0 * (model.R * du);
        const Vector ds_du = f2s[si].transpose() * grads.col(i);
        if (opt.kind == LossKind::weighted) {
            if (!keep[si]) continue;
            const double sgn = (delta(i) > 0.0) - (delta(i) < 0.0);
            const double scale = sgn / (cost(i) * static_cast<double>(res.used));
            a(i) = -inv_tau * scale;
            b(i) = scale;
            const double excess = (slope(i) - cache.values(i) * inv_tau) / cost(i);
            du_bar = scale * (ds_du - excess * dl_du);
        } else {
            const double scale = 2.0 * delta(i) / static_cast<double>(batch);
            a(i) = -inv_tau * scale;
            b(i) = scale;
            du_bar = scale * (dl_du + ds_du);
        }
        if (opt.differentiate_control) {
            const Vector masked = free[si].select(du_bar, Vector::Zero(du_bar.size()));
            W.col(i) = -0.5 * f2s[si] * (r_inv * masked);
        }
    }
    const Matrix D = F * b.asDiagonal() + W;
    const auto tan = net.tangent(cache, D);
    res.grad = net.param_gradient(cache, tan, a, Vector::Ones(batch));
    return res;
}

/// Adam with bias correction.
struct Adam {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    Vector m, v;
    long t = 0;

    void step(Vector& theta, const Vector& g) {
        if (m.size() != theta.size()) {
            m = Vector::Zero(theta.size());
            v = Vector::Zero(theta.size());
        }
        ++t;
        m = beta1 * m + (1.0 - beta1) * g;
        v = beta2 * v + (1.0 - beta2) * g.cwiseProduct(g);
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        theta.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
    }
};

enum class DataRegime { rollouts, uniform };

inline const char* to_string(DataRegime d) { return d == DataRegime::rollouts ? "rollouts" : "uniform"; }

inline DataRegime data_regime_from(const std::string& s) {
    if (s == "rollouts") return DataRegime::rollouts;
    if (s == "uniform" || s == "grid") return DataRegime::uniform;
    throw Error(ErrorKind::invalid_config, "unknown data regime '" + s + "'");
}

struct TrainConfig {
    NetworkKind kind = NetworkKind::positive_definite;
    std::vector<int> widths{128, 128, 64};
    double learning_rate = 1e-3;
    int batch_size = 256;
    int rollouts_per_epoch = 20;
    int max_traj_len = 200;
    double epsilon = 1e-3;
    Activation activation = Activation::elu;
    Initializer initializer = Initializer::lecun_normal;
    int epochs = 200;
    std::uint64_t seed = 0;
    std::optional<double> tau;
    double dt = 0.01;
    DataRegime data = DataRegime::rollouts;
    int uniform_samples = 10000;
    LossKind loss = LossKind::weighted;
    bool differentiate_control = false;
    bool policy_at_stages = false;
    int eval_rollouts = 20;
    int eval_steps = 200;
    int eval_every = 1;
    int batches_per_epoch = 0;
    long dataset_capacity = 0;
    std::optional<double> target_loss;

    void check() const {
        auto bad = [](const std::string& what) { throw Error(ErrorKind::invalid_config, what); };
        if (widths.empty()) bad("widths must not be empty");
        for (int w : widths)
            if (w <= 0) bad("widths must be positive");
        if (!(learning_rate > 0.0)) bad("learning_rate must be positive");
        if (batch_size <= 0) bad("batch_size must be positive");
        if (rollouts_per_epoch <= 0) bad("rollouts_per_epoch must be positive");
        if (max_traj_len <= 0) bad("max_traj_len must be positive");
        if (!(epsilon > 0.0)) bad("epsilon must be positive");
        if (epochs <= 0) bad("epochs must be positive");
        if (tau && !(*tau > 0.0)) bad("tau must be positive");
        if (!(dt > 0.0)) bad("dt must be positive");
        if (uniform_samples <= 0) bad("uniform_samples must be positive");
        if (eval_rollouts < 0 || eval_steps <= 0 || eval_every < 0) bad("evaluation settings must be positive");
        if (batches_per_epoch < 0 || dataset_capacity < 0) bad("batch and dataset caps must be non-negative");
    }
};

struct EpochRecord {
    int epoch = 0;
    double weighted_loss = 0.0;
    double mean_abs_delta = 0.0;
    double mse = 0.0;
    double eval_cost = std::numeric_limits<double>::quiet_NaN();
    double divergence_fraction = std::numeric_limits<double>::quiet_NaN();
    std::size_t dataset_size = 0;
};

struct EvalResult {
    double mean_cost = 0.0;
    double divergence_fraction = 0.0;
    std::vector<double> costs;
    std::vector<bool> diverged;
};

struct TrainResult {
    ValueNetwork net;
    std::vector<EpochRecord> history;
    std::vector<Vector> eval_starts;
    EvalResult final_eval;
};

inline Policy greedy_policy(const ValueNetwork& net, const ControlAffineModel& model) {
    return [&net, &model](const Vector& x) { return optimal_control(net, model, x); };
}

/// Rolls the greedy policy from each start. Cost is the trapezoid sum over
/// the knots actually visited.
inline EvalResult evaluate(const Policy& policy, const ControlAffineModel& model, const std::vector<Vector>& starts,
                           long steps, const RolloutOptions& opt = {}) {
    EvalResult r;
    for (const auto& x0 : starts) {
        const auto traj = rollout(model, policy, x0, steps, opt);
        r.costs.push_back(traj.cumulative_cost);
        r.diverged.push_back(traj.diverged);
    }
    if (!starts.empty()) {
        r.mean_cost = std::accumulate(r.costs.begin(), r.costs.end(), 0.0) / static_cast<double>(starts.size());
        r.divergence_fraction =
            static_cast<double>(std::count(r.diverged.begin(), r.diverged.end(), true)) / static_cast<double>(starts.size());
    }
    return r;
}

inline EvalResult evaluate(const ValueNetwork& net, const ControlAffineModel& model, const std::vector<Vector>& starts,
                           long steps, const RolloutOptions& opt = {}) {
    return evaluate(greedy_policy(net, model), model, starts, steps, opt);
}

/// Independent streams derived from one seed.
inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream)};
    std::uint32_t words[2];
    seq.generate(words, words + 2);
    return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

inline std::vector<Vector> draw_starts(const ControlAffineModel& model, int count, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<Vector> starts;
    for (int i = 0; i < count; ++i) starts.push_back(sample_initial_state(model, rng));
    return starts;
}

inline ValueNetwork make_network(const ControlAffineModel& model, const TrainConfig& cfg) {
    ValueNetwork net(cfg.kind, model.n, cfg.widths, cfg.activation, model.x_eq, cfg.epsilon);
    std::mt19937_64 rng(stream_seed(cfg.seed, 1));
    net.initialize(cfg.initializer, rng);
    return net;
}

/// Algorithm 1. With DataRegime::uniform the dataset is a fixed draw of
/// uniform_samples states from the init box and no rollouts are collected.
/// Single-threaded and deterministic for a given config.
inline TrainResult train(const ControlAffineModel& model, const TrainConfig& cfg) {
    cfg.check();
    TrainResult out;
    out.net = make_network(model, cfg);
    ValueNetwork& net = out.net;
    std::mt19937_64 data_rng(stream_seed(cfg.seed, 2));
    std::mt19937_64 shuffle_rng(stream_seed(cfg.seed, 3));
    out.eval_starts = draw_starts(model, cfg.eval_rollouts, stream_seed(cfg.seed, 4));

    Adam adam;
    adam.lr = cfg.learning_rate;
    const LossOptions lopt{cfg.loss, cfg.tau, cfg.differentiate_control};
    const RolloutOptions ropt{cfg.dt, cfg.policy_at_stages};

    std::deque<Vector> dataset;
    if (cfg.data == DataRegime::uniform)
        for (int i = 0; i < cfg.uniform_samples; ++i) dataset.push_back(sample_initial_state(model, data_rng));

    std::vector<std::size_t> order;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        try {
            if (cfg.data == DataRegime::rollouts) {
                const auto policy = greedy_policy(net, model);
                for (int r = 0; r < cfg.rollouts_per_epoch; ++r) {
                    const auto traj = rollout(model, policy, sample_initial_state(model, data_rng), cfg.max_traj_len, ropt);
                    for (const auto& x : traj.states)
                        if (model.inside_reset_box(x)) dataset.push_back(x);
                }
                if (cfg.dataset_capacity > 0)
                    while (static_cast<long>(dataset.size()) > cfg.dataset_capacity) dataset.pop_front();
            }

            order.resize(dataset.size());
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::shuffle(order.begin(), order.end(), shuffle_rng);
            const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
            std::size_t batches = (order.size() + bs - 1) / bs;
            if (cfg.batches_per_epoch > 0) batches = std::min(batches, static_cast<std::size_t>(cfg.batches_per_epoch));

            EpochRecord rec;
            rec.epoch = epoch;
            rec.dataset_size = dataset.size();
            std::size_t seen = 0, weighted_seen = 0;
            for (std::size_t k = 0; k < batches; ++k) {
                const std::size_t lo = k * bs, hi = std::min(order.size(), lo + bs);
                Matrix X(model.n, static_cast<Eigen::Index>(hi - lo));
                for (std::size_t j = lo; j < hi; ++j) X.col(static_cast<Eigen::Index>(j - lo)) = dataset[order[j]];
                LossResult lr;
                try {
                    lr = loss_and_param_grad(net, model, X, lopt);
                } catch (const Error& e) {
                    if (e.kind() == ErrorKind::degenerate_cost) continue;
                    throw;
                }
                if (!std::isfinite(lr.loss) || !lr.grad.allFinite())
                    throw Error(ErrorKind::training_diverged, "non-finite loss or gradient");
                const double cnt = static_cast<double>(hi - lo);
                rec.weighted_loss += lr.weighted_loss * static_cast<double>(lr.used);
                rec.mean_abs_delta += lr.mean_abs_delta * cnt;
                rec.mse += lr.mse * cnt;
                seen += hi - lo;
                weighted_seen += lr.used;
                adam.step(net.params(), lr.grad);
            }
            if (seen) {
                rec.mean_abs_delta /= static_cast<double>(seen);
                rec.mse /= static_cast<double>(seen);
            }
            if (weighted_seen) rec.weighted_loss /= static_cast<double>(weighted_seen);

            const bool last = epoch == cfg.epochs;
            const bool stop = cfg.target_loss && (cfg.loss == LossKind::mse ? rec.mse : rec.weighted_loss) < *cfg.target_loss;
            if (cfg.eval_rollouts > 0 && ((cfg.eval_every > 0 && epoch % cfg.eval_every == 0) || last || stop)) {
                const auto ev = evaluate(net, model, out.eval_starts, cfg.eval_steps, ropt);
                rec.eval_cost = ev.mean_cost;
                rec.divergence_fraction = ev.divergence_fraction;
            }
            out.history.push_back(rec);
            if (stop) break;
        } catch (const Error& e) {
            if (e.kind() == ErrorKind::training_diverged || e.kind() == ErrorKind::non_finite_state)
                throw Error(ErrorKind::training_diverged, "epoch " + std::to_string(epoch) + ": " + e.what());
            throw;
        }
    }
    out.final_eval = evaluate(net, model, out.eval_starts, cfg.eval_steps, ropt);
    return out;
}

inline std::string history_csv(const std::vector<EpochRecord>& history) {
    std::ostringstream os;
    os << "epoch,weighted_loss,mean_abs_delta,eval_cost,divergence_fraction,mse,dataset_size\n";
    for (const auto& r : history)
        os << r.epoch << ',' << io::fmt(r.weighted_loss) << ',' << io::fmt(r.mean_abs_delta) << ','
           << io::fmt(r.eval_cost) << ',' << io::fmt(r.divergence_fraction) << ',' << io::fmt(r.mse) << ','
           << r.dataset_size << '\n';
    return os.str();
}

// ---------------------------------------------------------------------------
// Config (de)serialization. The seed is excluded: it names a run, not a setup.

namespace io {

inline json to_json(const TrainConfig& c) {
    json j;
    j["kind"] = to_string(c.kind);
    j["widths"] = c.widths;
    j["learning_rate"] = c.learning_rate;
    j["batch_size"] = c.batch_size;
    j["rollouts_per_epoch"] = c.rollouts_per_epoch;
    j["max_traj_len"] = c.max_traj_len;
    j["epsilon"] = c.epsilon;
    j["activation"] = to_string(c.activation);
    j["initializer"] = to_string(c.initializer);
    j["epochs"] = c.epochs;
    j["tau"] = c.tau ? json(*c.tau) : json(nullptr);
    j["dt"] = c.dt;
    j["data"] = to_string(c.data);
    j["uniform_samples"] = c.uniform_samples;
    j["loss"] = to_string(c.loss);
    j["differentiate_control"] = c.differentiate_control;
    j["policy_at_stages"] = c.policy_at_stages;
    j["eval_rollouts"] = c.eval_rollouts;
    j["eval_steps"] = c.eval_steps;
    j["eval_every"] = c.eval_every;
    j["batches_per_epoch"] = c.batches_per_epoch;
    j["dataset_capacity"] = c.dataset_capacity;
    j["target_loss"] = c.target_loss ? json(*c.target_loss) : json(nullptr);
    return j;
}

/// Applies the keys present in `j` on top of `base`. Unknown keys are errors.
inline TrainConfig train_config_from_json(const json& j, TrainConfig base = {}) {
    if (!j.is_object()) throw Error(ErrorKind::invalid_config, "train settings must be an object");
    auto opt = [](const json& v) -> std::optional<double> {
        if (v.is_null()) return std::nullopt;
        return v.get<double>();
    };
    try {
        for (const auto& [key, v] : j.items()) {
            if (key == "kind") base.kind = network_kind_from(v.get<std::string>());
            else if (key == "widths") base.widths = v.get<std::vector<int>>();
            else if (key == "learning_rate") base.learning_rate = v.get<double>();
            else if (key == "batch_size") base.batch_size = v.get<int>();
            else if (key == "rollouts_per_epoch") base.rollouts_per_epoch = v.get<int>();
            else if (key == "max_traj_len") base.max_traj_len = v.get<int>();
            else if (key == "epsilon") base.epsilon = v.get<double>();
            else if (key == "activation") base.activation = activation_from(v.get<std::string>());
            else if (key == "initializer") base.initializer = initializer_from(v.get<std::string>());
            else if (key == "epochs") base.epochs = v.get<int>();
            else if (key == "tau") base.tau = opt(v);
            else if (key == "dt") base.dt = v.get<double>();
            else if (key == "data") base.data = data_regime_from(v.get<std::string>());
            else if (key == "uniform_samples") base.uniform_samples = v.get<int>();
            else if (key == "loss") base.loss = loss_kind_from(v.get<std::string>());
            else if (key == "differentiate_control") base.differentiate_control = v.get<bool>();
            else if (key == "policy_at_stages") base.policy_at_stages = v.get<bool>();
            else if (key == "eval_rollouts") base.eval_rollouts = v.get<int>();
            else if (key == "eval_steps") base.eval_steps = v.get<int>();
            else if (key == "eval_every") base.eval_every = v.get<int>();
            else if (key == "batches_per_epoch") base.batches_per_epoch = v.get<int>();
            else if (key == "dataset_capacity") base.dataset_capacity = v.get<long>();
            else if (key == "target_loss") base.target_loss = opt(v);
            else throw Error(ErrorKind::invalid_config, "unknown train setting '" + key + "'");
        }
    } catch (const json::exception& e) {
        throw Error(ErrorKind::invalid_config, std::string("bad train setting: ") + e.what());
    }
    base.check();
    return base;
}

}  // namespace io

// ---------------------------------------------------------------------------
// Quadratic classification on the 2-D toy problem

struct Classification {
    Matrix P_hat;
    double offset = 0.0;
    double relative_rms = 0.0;
    bool quadratic = false;
    Matrix nearest_P;
    double distance = std::numeric_limits<double>::infinity();
    bool nearest_stable = false;
    bool nearest_isolated = false;
    int nearest_index = -1;
    std::string label;
};

inline constexpr double kQuadraticFitTolerance = 0.05;

/// Least-squares fit of V(x) = x'Px + c on a 41 x 41 grid over [-2,2]^2,
/// then the closest member of the solution family in Frobenius norm.
template <ValueFunction F>
Classification classify_learned_solution(const F& vf, const SolutionFamily& family, double half_width = 2.0,
                                         int grid = 41) {
    if (family.isolated.empty() || family.isolated.front().P.rows() != 2)
        throw Error(ErrorKind::invalid_config, "classification is defined for two-dimensional systems");
    const int count = grid * grid;
    Matrix design(count, 4);
    Vector target(count);
    int row = 0;
    for (int i = 0; i < grid; ++i)
        for (int j = 0; j < grid; ++j, ++row) {
            const double x1 = -half_width + 2.0 * half_width * i / (grid - 1);
            const double x2 = -half_width + 2.0 * half_width * j / (grid - 1);
            design.row(row) << x1 * x1, 2.0 * x1 * x2, x2 * x2, 1.0;
            target(row) = vf.value((Vector(2) << x1, x2).finished());
        }
    const Vector coef = design.colPivHouseholderQr().solve(target);
    Classification c;
    c.P_hat = (Matrix(2, 2) << coef(0), coef(1), coef(1), coef(2)).finished();
    c.offset = coef(3);
    const double resid = std::sqrt((design * coef - target).squaredNorm() / count);
    const double spread = std::sqrt((target.array() - target.mean()).square().sum() / count);
    c.relative_rms = spread > 0.0 ? resid / spread : (resid > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
    c.quadratic = c.relative_rms <= kQuadraticFitTolerance;

    auto consider = [&](const RiccatiSolution& s, int index, bool isolated) {
        const double d = (s.P - c.P_hat).norm();
        if (d < c.distance) {
            c.distance = d;
            c.nearest_P = s.P;
            c.nearest_stable = s.stable;
            c.nearest_isolated = isolated;
            c.nearest_index = index;
        }
    };
    for (std::size_t i = 0; i < family.isolated.size(); ++i) consider(family.isolated[i], static_cast<int>(i), true);
    for (std::size_t i = 0; i < family.samples.size(); ++i) consider(family.samples[i], static_cast<int>(i), false);
    if (!c.quadratic)
        c.label = "not_quadratic";
    else if (c.nearest_stable)
        c.label = "stable";
    else
        c.label = c.nearest_isolated ? "unstable_isolated" : "unstable_family";
    return c;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace detail {

inline std::string base64_encode(const unsigned char* data, std::size_t len) {
    static const char* table = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((len + 2) / 3 * 4);
    for (std::size_t i = 0; i < len; i += 3) {
        std::uint32_t chunk = static_cast<std::uint32_t>(data[i]) << 16;
        if (i + 1 < len) chunk |= static_cast<std::uint32_t>(data[i + 1]) << 8;
        if (i + 2 < len) chunk |= data[i + 2];
        out += table[(chunk >> 18) & 63];
        out += table[(chunk >> 12) & 63];
        out += i + 1 < len ? table[(chunk >> 6) & 63] : '=';
        out += i + 2 < len ? table[chunk & 63] : '=';
    }
    return out;
}

inline std::vector<unsigned char> base64_decode(const std::string& text) {
    auto value = [](char ch) -> int {
        if (ch >= 'A' && ch <= 'Z') return ch - 'A';
        if (ch >= 'a' && ch <= 'z') return ch - 'a' + 26;
        if (ch >= '0' && ch <= '9') return ch - '0' + 52;
        if (ch == '+') return 62;
        if (ch == '/') return 63;
        return -1;
    };
    if (text.size() % 4 != 0) throw Error(ErrorKind::io, "malformed base64 payload");
    std::vector<unsigned char> out;
    for (std::size_t i = 0; i < text.size(); i += 4) {
        std::uint32_t chunk = 0;
        int pad = 0;
        for (int k = 0; k < 4; ++k) {
            const char ch = text[i + static_cast<std::size_t>(k)];
            int v = 0;
            if (ch == '=') {
                ++pad;
            } else {
                v = value(ch);
                if (v < 0 || pad) throw Error(ErrorKind::io, "malformed base64 payload");
            }
            chunk = (chunk << 6) | static_cast<std::uint32_t>(v);
        }
        out.push_back(static_cast<unsigned char>(chunk >> 16));
        if (pad < 2) out.push_back(static_cast<unsigned char>(chunk >> 8));
        if (pad < 1) out.push_back(static_cast<unsigned char>(chunk));
    }
    return out;
}

}  // namespace detail

/// FNV-1a over the compact dump of a JSON value, as 16 hex digits.
inline std::string config_hash(const io::json& j) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : j.dump()) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    static const char* hex = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i, h >>= 4) out[static_cast<std::size_t>(i)] = hex[h & 15];
    return out;
}

inline io::json checkpoint_json(const ValueNetwork& net, std::uint64_t seed, const std::string& hash) {
    std::vector<unsigned char> bytes(static_cast<std::size_t>(net.num_params()) * 8);
    for (Eigen::Index i = 0; i < net.num_params(); ++i) {
        std::uint64_t bits;
        const double v = net.params()(i);
        std::memcpy(&bits, &v, 8);
        for (int k = 0; k < 8; ++k) bytes[static_cast<std::size_t>(i) * 8 + static_cast<std::size_t>(k)] = static_cast<unsigned char>(bits >> (8 * k));
    }
    io::json j;
    j["format"] = "atlas-value-network";
    j["version"] = 1;
    j["kind"] = to_string(net.kind());
    j["widths"] = net.widths();
    j["activation"] = to_string(net.activation());
    j["epsilon"] = net.epsilon();
    j["n"] = net.input_dim();
    j["x_eq"] = io::to_json(net.x_eq());
    j["seed"] = seed;
    j["config_hash"] = hash;
    j["num_params"] = net.num_params();
    j["theta"] = detail::base64_encode(bytes.data(), bytes.size());
    return j;
}

struct Checkpoint {
    ValueNetwork net;
    std::uint64_t seed = 0;
    std::string config_hash;
};

inline Checkpoint checkpoint_from_json(const io::json& j) {
    try {
        if (j.at("format").get<std::string>() != "atlas-value-network") throw Error(ErrorKind::io, "not a checkpoint");
        Checkpoint c;
        c.net = ValueNetwork(network_kind_from(j.at("kind").get<std::string>()), j.at("n").get<Eigen::Index>(),
                             j.at("widths").get<std::vector<int>>(), activation_from(j.at("activation").get<std::string>()),
                             io::vector_from_json(j.at("x_eq"), "x_eq"), j.at("epsilon").get<double>());
        const auto bytes = detail::base64_decode(j.at("theta").get<std::string>());
        if (bytes.size() != static_cast<std::size_t>(c.net.num_params()) * 8)
            throw Error(ErrorKind::checkpoint_mismatch, "parameter payload does not match the architecture");
        Vector theta(c.net.num_params());
        for (Eigen::Index i = 0; i < theta.size(); ++i) {
            std::uint64_t bits = 0;
            for (int k = 0; k < 8; ++k)
                bits |= static_cast<std::uint64_t>(bytes[static_cast<std::size_t>(i) * 8 + static_cast<std::size_t>(k)]) << (8 * k);
            double v;
            std::memcpy(&v, &bits, 8);
            theta(i) = v;
        }
        c.net.set_params(theta);
        c.seed = j.at("seed").get<std::uint64_t>();
        c.config_hash = j.at("config_hash").get<std::string>();
        return c;
    } catch (const io::json::exception& e) {
        throw Error(ErrorKind::io, std::string("bad checkpoint: ") + e.what());
    }
}

}  // namespace atlas
