#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "atlas/core.hpp"
#include "atlas/json_io.hpp"

namespace atlas {

/// Deterministic finite MDP with reward maximization.
struct TabularMDP {
    int num_states = 0;
    int num_actions = 0;
    std::vector<std::vector<int>> next;      // [s][a]
    std::vector<std::vector<double>> reward;  // [s][a]
    double gamma = 0.9;

    void check() const {
        if (num_states <= 0 || num_actions <= 0) throw Error(ErrorKind::invalid_config, "MDP needs states and actions");
        if (!(gamma > 0.0 && gamma < 1.0)) throw Error(ErrorKind::invalid_config, "gamma must lie in (0, 1)");
        if (static_cast<int>(next.size()) != num_states || static_cast<int>(reward.size()) != num_states)
            throw Error(ErrorKind::dimension_mismatch, "tables must have one row per state");
        for (int s = 0; s < num_states; ++s) {
            const auto su = static_cast<std::size_t>(s);
            if (static_cast<int>(next[su].size()) != num_actions || static_cast<int>(reward[su].size()) != num_actions)
                throw Error(ErrorKind::dimension_mismatch, "tables must have one column per action");
            for (int a = 0; a < num_actions; ++a) {
                const int t = next[su][static_cast<std::size_t>(a)];
                if (t < 0 || t >= num_states) throw Error(ErrorKind::invalid_config, "next-state index out of range");
                if (!std::isfinite(reward[su][static_cast<std::size_t>(a)]))
                    throw Error(ErrorKind::invalid_config, "rewards must be finite");
            }
        }
    }
};

/// (TW)(s) = max_a r(s,a) + gamma W(next(s,a)).
inline Vector bellman_backup(const TabularMDP& mdp, const Vector& w) {
    Vector out(mdp.num_states);
    for (int s = 0; s < mdp.num_states; ++s) {
        const auto su = static_cast<std::size_t>(s);
        double best = -std::numeric_limits<double>::infinity();
        for (int a = 0; a < mdp.num_actions; ++a) {
            const auto au = static_cast<std::size_t>(a);
            best = std::max(best, mdp.reward[su][au] + mdp.gamma * w(mdp.next[su][au]));
        }
        out(s) = best;
    }
    return out;
}

/// Rewards as negated running costs.
inline std::vector<std::vector<double>> rewards_from_costs(const std::vector<std::vector<double>>& costs) {
    auto out = costs;
    for (auto& row : out)
        for (auto& v : row) v = -v;
    return out;
}

struct ValueIterationResult {
    Vector V;
    int iterations = 0;
    std::vector<double> contraction_ratios;
    std::vector<Vector> iterates;
};

/// Iterates W <- TW until ||W_{k+1} - W_k||_inf <= tol, then replays the
/// stored iterates to record ||TW - TV||_inf / ||W - V||_inf against the
/// converged V. Sweeps whose distance to V is within 1e-3 max(1, ||V||_inf)
/// of rounding level are skipped, since the ratio there measures float
/// noise instead of the operator.
inline ValueIterationResult value_iteration(const TabularMDP& mdp, const Vector& w0, double tol = 1e-10,
                                            int max_iterations = 1000000) {
    mdp.check();
    if (!(tol > 0.0)) throw Error(ErrorKind::invalid_config, "tol must be positive");
    if (w0.size() != mdp.num_states) throw Error(ErrorKind::dimension_mismatch, "initial values have the wrong length");
    ValueIterationResult r;
    Vector w = w0;
    r.iterates.push_back(w);
    for (;;) {
        Vector next = bellman_backup(mdp, w);
        ++r.iterations;
        const double change = (next - w).lpNorm<Eigen::Infinity>();
        w = std::move(next);
        r.iterates.push_back(w);
        if (change <= tol) break;
        if (r.iterations >= max_iterations) throw Error(ErrorKind::convergence_failure, "value iteration did not converge");
    }
    r.V = w;
    const Vector tv = bellman_backup(mdp, r.V);
    const double floor = 1e-3 * std::max(1.0, r.V.lpNorm<Eigen::Infinity>());
    for (const auto& it : r.iterates) {
        const double gap = (it - r.V).lpNorm<Eigen::Infinity>();
        if (gap <= floor) continue;
        r.contraction_ratios.push_back((bellman_backup(mdp, it) - tv).lpNorm<Eigen::Infinity>() / gap);
    }
    return r;
}

inline TabularMDP random_mdp(int num_states, int num_actions, double gamma, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> state(0, num_states - 1);
    std::uniform_real_distribution<double> rew(-1.0, 1.0);
    TabularMDP mdp;
    mdp.num_states = num_states;
    mdp.num_actions = num_actions;
    mdp.gamma = gamma;
    mdp.next.assign(static_cast<std::size_t>(num_states), std::vector<int>(static_cast<std::size_t>(num_actions)));
    mdp.reward.assign(static_cast<std::size_t>(num_states), std::vector<double>(static_cast<std::size_t>(num_actions)));
    for (int s = 0; s < num_states; ++s)
        for (int a = 0; a < num_actions; ++a) {
            mdp.next[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)] = state(rng);
            mdp.reward[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)] = rew(rng);
        }
    return mdp;
}

namespace io {

inline json to_json(const TabularMDP& mdp) {
    return json{{"gamma", mdp.gamma}, {"next", mdp.next}, {"reward", mdp.reward}};
}

inline TabularMDP mdp_from_json(const json& j) {
    try {
        TabularMDP mdp;
        mdp.gamma = j.at("gamma").get<double>();
        mdp.next = j.at("next").get<std::vector<std::vector<int>>>();
        mdp.reward = j.at("reward").get<std::vector<std::vector<double>>>();
        mdp.num_states = static_cast<int>(mdp.next.size());
        mdp.num_actions = mdp.next.empty() ? 0 : static_cast<int>(mdp.next.front().size());
        mdp.check();
        return mdp;
    } catch (const json::exception& e) {
        throw Error(ErrorKind::invalid_config, std::string("bad MDP: ") + e.what());
    }
}

}  // namespace io

}  // namespace atlas
