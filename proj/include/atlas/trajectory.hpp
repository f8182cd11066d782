#pragma once

#include <sstream>
#include <string>
#include <vector>

#include "atlas/core.hpp"
#include "atlas/json_io.hpp"

namespace atlas {

/// Knot-sampled trajectory. Controls and running costs are recorded at every
/// knot, including the last one, so all sequences have equal length.
struct Trajectory {
    std::vector<double> times;
    std::vector<Vector> states;
    std::vector<Vector> controls;
    std::vector<double> running_costs;
    double cumulative_cost = 0.0;
    bool diverged = false;

    std::size_t size() const { return times.size(); }
};

/// CSV with header t,x_1..x_n,u_1..u_m,l.
inline std::string to_csv(const Trajectory& traj) {
    std::ostringstream os;
    const auto n = traj.states.empty() ? 0 : traj.states.front().size();
    const auto m = traj.controls.empty() ? 0 : traj.controls.front().size();
    os << "t";
    for (Eigen::Index i = 0; i < n; ++i) os << ",x_" << (i + 1);
    for (Eigen::Index i = 0; i < m; ++i) os << ",u_" << (i + 1);
    os << ",l\n";
    for (std::size_t k = 0; k < traj.size(); ++k) {
        os << io::fmt(traj.times[k]);
        for (Eigen::Index i = 0; i < n; ++i) os << ',' << io::fmt(traj.states[k](i));
        for (Eigen::Index i = 0; i < m; ++i) os << ',' << io::fmt(traj.controls[k](i));
        os << ',' << io::fmt(traj.running_costs[k]) << '\n';
    }
    return os.str();
}

}  // namespace atlas
