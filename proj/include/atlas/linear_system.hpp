#pragma once

#include <cmath>
#include <optional>
#include <string>

#include "atlas/core.hpp"
#include "atlas/json_io.hpp"

namespace atlas {

/// An LQR problem instance: dx = Ax + Bu (or x' = Ax + Bu), running cost
/// x'Qx + u'Ru. An absent discount means undiscounted (tau = inf, gamma = 1).
/// In continuous mode the discount is the time constant tau of exp(-s/tau);
/// in discrete mode it is the per-step factor gamma.
struct LinearSystem {
    Matrix A;
    Matrix B;
    Matrix Q;
    Matrix R;
    TimeMode mode = TimeMode::continuous;
    std::optional<double> discount;

    Eigen::Index n() const { return A.rows(); }
    Eigen::Index m() const { return B.cols(); }
};

struct SystemDiagnostics {
    bool controllable = false;
    bool observable = false;
    int controllability_rank = 0;
    int observability_rank = 0;
};

namespace detail {

inline constexpr double kSymmetryTol = 1e-10;
inline constexpr double kPsdTol = 1e-10;
inline constexpr double kPdTol = 1e-10;
inline constexpr double kRankTol = 1e-8;

inline int numerical_rank(const Matrix& m, double rel_tol) {
    if (m.size() == 0) return 0;
    Eigen::JacobiSVD<Matrix> svd(m);
    const auto& s = svd.singularValues();
    if (s(0) == 0.0) return 0;
    int rank = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i)
        if (s(i) > rel_tol * s(0)) ++rank;
    return rank;
}

// Full-row-rank factor C with C^T C = Q (eigenvalue factorization, truncated).
inline Matrix psd_factor(const Matrix& q) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(q));
    const Vector& lam = es.eigenvalues();
    const double top = std::max(lam.cwiseAbs().maxCoeff(), 0.0);
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < lam.size(); ++i)
        if (lam(i) > kRankTol * top && lam(i) > 0.0) keep.push_back(i);
    Matrix c(static_cast<Eigen::Index>(keep.size()), q.cols());
    for (std::size_t r = 0; r < keep.size(); ++r)
        c.row(static_cast<Eigen::Index>(r)) =
            std::sqrt(lam(keep[r])) * es.eigenvectors().col(keep[r]).transpose();
    return c;
}

}  // namespace detail

/// Returns the system unchanged if every structural invariant holds, otherwise
/// throws with the first violated condition.
inline LinearSystem validate(const LinearSystem& sys) {
    const auto n = sys.A.rows();
    if (n == 0 || sys.A.cols() != n)
        throw Error(ErrorKind::dimension_mismatch, "A must be square and non-empty");
    if (sys.B.rows() != n) throw Error(ErrorKind::dimension_mismatch, "B must have n rows");
    if (sys.B.cols() == 0) throw Error(ErrorKind::dimension_mismatch, "B must have at least one column");
    if (sys.Q.rows() != n || sys.Q.cols() != n) throw Error(ErrorKind::dimension_mismatch, "Q must be n x n");
    if (sys.R.rows() != sys.B.cols() || sys.R.cols() != sys.B.cols())
        throw Error(ErrorKind::dimension_mismatch, "R must be m x m");
    if (!sys.A.allFinite() || !sys.B.allFinite() || !sys.Q.allFinite() || !sys.R.allFinite())
        throw Error(ErrorKind::dimension_mismatch, "system matrices must be finite");

    if (symmetry_defect(sys.Q) > detail::kSymmetryTol) throw Error(ErrorKind::not_psd, "Q is not symmetric");
    if (min_symmetric_eigenvalue(sys.Q) < -detail::kPsdTol)
        throw Error(ErrorKind::not_psd, "Q has a negative eigenvalue");
    if (symmetry_defect(sys.R) > detail::kSymmetryTol) throw Error(ErrorKind::not_pd, "R is not symmetric");
    if (min_symmetric_eigenvalue(sys.R) < detail::kPdTol)
        throw Error(ErrorKind::not_pd, "R is not positive definite");

    if (sys.discount) {
        const double d = *sys.discount;
        if (sys.mode == TimeMode::continuous && !(d > 0.0 && std::isfinite(d)))
            throw Error(ErrorKind::dimension_mismatch, "tau must be a positive finite number");
        if (sys.mode == TimeMode::discrete && !(d > 0.0 && d <= 1.0))
            throw Error(ErrorKind::dimension_mismatch, "gamma must lie in (0, 1]");
    }
    if (sys.mode == TimeMode::discrete) {
        Eigen::FullPivLU<Matrix> lu(sys.A);
        if (!lu.isInvertible() || condition_number(sys.A) > 1e14)
            throw Error(ErrorKind::singular_a, "discrete-time A must be invertible");
    }
    return sys;
}

/// Rank tests for (A, B) controllability and (Q, A) observability.
inline SystemDiagnostics diagnose(const LinearSystem& sys) {
    const auto n = sys.n();
    const Matrix& a = sys.A;

    Matrix ctrb(n, n * sys.m());
    Matrix block = sys.B;
    for (Eigen::Index k = 0; k < n; ++k) {
        ctrb.middleCols(k * sys.m(), sys.m()) = block;
        block = a * block;
    }

    const Matrix c = detail::psd_factor(sys.Q);
    Matrix obsv(n * c.rows(), n);
    Matrix row_block = c;
    for (Eigen::Index k = 0; k < n; ++k) {
        obsv.middleRows(k * c.rows(), c.rows()) = row_block;
        row_block = row_block * a;
    }

    SystemDiagnostics d;
    d.controllability_rank = detail::numerical_rank(ctrb, detail::kRankTol);
    d.observability_rank = c.rows() == 0 ? 0 : detail::numerical_rank(obsv, detail::kRankTol);
    d.controllable = d.controllability_rank == n;
    d.observable = d.observability_rank == n;
    return d;
}

/// Undiscounted problem with dynamics A - I/(2 tau) that shares every
/// quadratic HJB solution with the discounted continuous problem.
inline LinearSystem modified_dynamics(const LinearSystem& sys) {
    if (sys.mode != TimeMode::continuous)
        throw Error(ErrorKind::wrong_mode, "modified dynamics apply to continuous-time systems");
    if (!sys.discount) throw Error(ErrorKind::wrong_mode, "system has no discount to absorb");
    LinearSystem out = sys;
    out.A = sys.A - (0.5 / *sys.discount) * Matrix::Identity(sys.n(), sys.n());
    out.discount.reset();
    return out;
}

/// Undiscounted equivalent of any system: modified dynamics for continuous
/// time, (sqrt(gamma) A, sqrt(gamma) B) for discrete time.
inline LinearSystem undiscounted_equivalent(const LinearSystem& sys) {
    if (!sys.discount) return sys;
    if (sys.mode == TimeMode::continuous) return modified_dynamics(sys);
    LinearSystem out = sys;
    const double s = std::sqrt(*sys.discount);
    out.A = s * sys.A;
    out.B = s * sys.B;
    out.discount.reset();
    return out;
}

namespace io {

inline json to_json(const LinearSystem& sys) {
    json j;
    j["mode"] = to_string(sys.mode);
    j["A"] = to_json(sys.A);
    j["B"] = to_json(sys.B);
    j["Q"] = to_json(sys.Q);
    j["R"] = to_json(sys.R);
    const char* key = sys.mode == TimeMode::continuous ? "tau" : "gamma";
    j[key] = sys.discount ? json(*sys.discount) : json(nullptr);
    return j;
}

inline LinearSystem system_from_json(const json& j) {
    LinearSystem sys;
    const std::string mode = j.value("mode", std::string("continuous"));
    if (mode == "continuous") sys.mode = TimeMode::continuous;
    else if (mode == "discrete") sys.mode = TimeMode::discrete;
    else throw Error(ErrorKind::dimension_mismatch, "unknown mode '" + mode + "'");
    for (const char* key : {"A", "B", "Q", "R"})
        if (!j.contains(key)) throw Error(ErrorKind::dimension_mismatch, std::string("missing field ") + key);
    sys.A = matrix_from_json(j["A"], "A");
    sys.B = matrix_from_json(j["B"], "B");
    sys.Q = matrix_from_json(j["Q"], "Q");
    sys.R = matrix_from_json(j["R"], "R");
    const char* key = sys.mode == TimeMode::continuous ? "tau" : "gamma";
    if (j.contains(key) && !j[key].is_null()) sys.discount = j[key].get<double>();
    return sys;
}

inline LinearSystem load_system(const std::string& path) { return system_from_json(read_json_file(path)); }

}  // namespace io

}  // namespace atlas
