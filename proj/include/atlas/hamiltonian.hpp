#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <Eigen/Eigenvalues>

#include "atlas/core.hpp"
#include "atlas/linear_system.hpp"

namespace atlas {

struct HamiltonianMatrix {
    Matrix H;
    TimeMode mode = TimeMode::continuous;
    Eigen::Index n = 0;
};

/// Eigen-structure of a Hamiltonian. When H is diagonalizable `basis` holds
/// unit-norm right eigenvectors; otherwise it holds the real Schur vectors and
/// `defective` is set, and invariant subspaces are recovered per eigenvalue
/// cluster instead of per eigenvector.
struct SpectralData {
    TimeMode mode = TimeMode::continuous;
    Eigen::Index n = 0;
    Matrix hamiltonian;
    double h_norm = 0.0;
    std::vector<Complex> eigenvalues;
    ComplexMatrix basis;
    std::vector<int> pairing;  // conjugate partner of each eigenvalue
    std::vector<bool> stable_mask;
    bool defective = false;
    std::vector<std::vector<int>> eigenspace_groups;
    std::vector<int> group_of;  // eigenvalue index -> group index

    double group_tolerance() const { return 1e-6 * std::max(1.0, h_norm); }

    Complex group_value(int g) const {
        Complex sum = 0.0;
        for (int i : eigenspace_groups[static_cast<std::size_t>(g)]) sum += eigenvalues[static_cast<std::size_t>(i)];
        return sum / static_cast<double>(eigenspace_groups[static_cast<std::size_t>(g)].size());
    }
};

/// Image of an eigenvalue under the Hamiltonian symmetry: -conj(l) in
/// continuous time, 1/conj(l) in discrete time.
inline Complex mirror_eigenvalue(Complex lambda, TimeMode mode) {
    return mode == TimeMode::continuous ? -std::conj(lambda) : 1.0 / std::conj(lambda);
}

inline bool is_stable_eigenvalue(Complex lambda, TimeMode mode, double margin = 0.0) {
    return mode == TimeMode::continuous ? lambda.real() < -margin : std::abs(lambda) < 1.0 - margin;
}

/// Assembles the 2n x 2n Hamiltonian. A discounted system is first mapped to
/// its undiscounted equivalent, so every quadratic HJB solution of the
/// discounted problem appears among the invariant subspaces.
inline HamiltonianMatrix build(const LinearSystem& input) {
    const LinearSystem sys = undiscounted_equivalent(validate(input));
    const auto n = sys.n();
    const Matrix g = symmetrize(sys.B * sys.R.llt().solve(sys.B.transpose()));

    HamiltonianMatrix out;
    out.mode = sys.mode;
    out.n = n;
    out.H.resize(2 * n, 2 * n);
    if (sys.mode == TimeMode::continuous) {
        out.H.topLeftCorner(n, n) = sys.A;
        out.H.topRightCorner(n, n) = -g;
        out.H.bottomLeftCorner(n, n) = -sys.Q;
        out.H.bottomRightCorner(n, n) = -sys.A.transpose();
    } else {
        Eigen::FullPivLU<Matrix> lu(sys.A.transpose());
        if (!lu.isInvertible()) throw Error(ErrorKind::singular_a, "A is singular");
        const Matrix a_inv_t = lu.inverse();
        out.H.topLeftCorner(n, n) = sys.A + g * a_inv_t * sys.Q;
        out.H.topRightCorner(n, n) = -g * a_inv_t;
        out.H.bottomLeftCorner(n, n) = -a_inv_t * sys.Q;
        out.H.bottomRightCorner(n, n) = a_inv_t;
    }
    return out;
}

/// J = [[0, I], [-I, 0]].
inline Matrix symplectic_unit(Eigen::Index n) {
    Matrix j = Matrix::Zero(2 * n, 2 * n);
    j.topRightCorner(n, n).setIdentity();
    j.bottomLeftCorner(n, n) = -Matrix::Identity(n, n);
    return j;
}

/// Structural defect of H: ||HJ - (HJ)^T||_F for continuous time, relative
/// ||H^T J H - J||_F / ||J||_F for discrete time.
inline double structure_defect(const HamiltonianMatrix& h) {
    const Matrix j = symplectic_unit(h.n);
    if (h.mode == TimeMode::continuous) {
        const Matrix hj = h.H * j;
        return (hj - hj.transpose()).norm();
    }
    return (h.H.transpose() * j * h.H - j).norm() / j.norm();
}

namespace detail {

inline std::vector<std::vector<int>> cluster_eigenvalues(const std::vector<Complex>& values, double tol) {
    const int count = static_cast<int>(values.size());
    std::vector<int> parent(static_cast<std::size_t>(count));
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](int i) {
        while (parent[static_cast<std::size_t>(i)] != i) i = parent[static_cast<std::size_t>(i)];
        return i;
    };
    for (int i = 0; i < count; ++i)
        for (int j = i + 1; j < count; ++j)
            if (std::abs(values[static_cast<std::size_t>(i)] - values[static_cast<std::size_t>(j)]) <= tol)
                parent[static_cast<std::size_t>(find(j))] = find(i);

    std::vector<std::vector<int>> groups;
    std::vector<int> slot(static_cast<std::size_t>(count), -1);
    for (int i = 0; i < count; ++i) {
        const int root = find(i);
        if (slot[static_cast<std::size_t>(root)] < 0) {
            slot[static_cast<std::size_t>(root)] = static_cast<int>(groups.size());
            groups.emplace_back();
        }
        groups[static_cast<std::size_t>(slot[static_cast<std::size_t>(root)])].push_back(i);
    }
    return groups;
}

inline std::vector<int> conjugate_pairing(const std::vector<Complex>& values, double tol) {
    const int count = static_cast<int>(values.size());
    std::vector<int> pairing(static_cast<std::size_t>(count), -1);
    for (int i = 0; i < count; ++i) {
        if (pairing[static_cast<std::size_t>(i)] >= 0) continue;
        const Complex v = values[static_cast<std::size_t>(i)];
        if (std::abs(v.imag()) <= tol) {
            pairing[static_cast<std::size_t>(i)] = i;
            continue;
        }
        int best = -1;
        double best_dist = std::numeric_limits<double>::infinity();
        for (int j = 0; j < count; ++j) {
            if (j == i || pairing[static_cast<std::size_t>(j)] >= 0) continue;
            const double d = std::abs(values[static_cast<std::size_t>(j)] - std::conj(v));
            if (d < best_dist) {
                best_dist = d;
                best = j;
            }
        }
        if (best < 0) throw Error(ErrorKind::convergence_failure, "complex eigenvalue without conjugate partner");
        pairing[static_cast<std::size_t>(i)] = best;
        pairing[static_cast<std::size_t>(best)] = i;
    }
    return pairing;
}

}  // namespace detail

/// Eigen-decomposition of H with conjugate bookkeeping. Falls back to the real
/// Schur form when the eigenvector matrix is numerically singular.
inline SpectralData spectrum(const HamiltonianMatrix& h) {
    SpectralData out;
    out.mode = h.mode;
    out.n = h.n;
    out.hamiltonian = h.H;
    out.h_norm = spectral_norm(h.H);

    Eigen::EigenSolver<Matrix> es(h.H, true);
    if (es.info() != Eigen::Success) throw Error(ErrorKind::convergence_failure, "eigen solver did not converge");

    ComplexMatrix v = es.eigenvectors();
    for (Eigen::Index c = 0; c < v.cols(); ++c) {
        const double norm = v.col(c).norm();
        if (norm > 0.0) v.col(c) /= norm;
    }
    out.eigenvalues = to_std(es.eigenvalues());

    const double scale_tol = 1e-10 * std::max(1.0, out.h_norm);
    out.pairing = detail::conjugate_pairing(out.eigenvalues, scale_tol);
    for (const auto& lambda : out.eigenvalues) out.stable_mask.push_back(is_stable_eigenvalue(lambda, h.mode));

    Eigen::JacobiSVD<ComplexMatrix> svd(v);
    const auto& s = svd.singularValues();
    const double smin = s(s.size() - 1);
    out.defective = !(smin > 0.0) || s(0) / smin > 1e10;

    if (!out.defective) {
        out.basis = std::move(v);
    } else {
        Eigen::RealSchur<Matrix> schur(h.H);
        if (schur.info() != Eigen::Success) throw Error(ErrorKind::convergence_failure, "Schur decomposition failed");
        out.basis = schur.matrixU().cast<Complex>();
    }

    out.eigenspace_groups = detail::cluster_eigenvalues(out.eigenvalues, out.group_tolerance());
    out.group_of.assign(out.eigenvalues.size(), -1);
    for (std::size_t g = 0; g < out.eigenspace_groups.size(); ++g)
        for (int i : out.eigenspace_groups[g]) out.group_of[static_cast<std::size_t>(i)] = static_cast<int>(g);
    return out;
}

/// Index of the group holding the mirror image of group `g`, or -1.
inline int mirror_group(const SpectralData& spec, int g) {
    const Complex target = mirror_eigenvalue(spec.group_value(g), spec.mode);
    int best = -1;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < spec.eigenspace_groups.size(); ++k) {
        const double d = std::abs(spec.group_value(static_cast<int>(k)) - target);
        if (d < best_dist) {
            best_dist = d;
            best = static_cast<int>(k);
        }
    }
    const double tol = 1e-6 * std::max(1.0, spec.h_norm) * std::max(1.0, std::abs(target));
    return best_dist <= tol ? best : -1;
}

/// Index of the group holding conj(group g); equals g for real groups.
inline int conjugate_group(const SpectralData& spec, int g) {
    const int first = spec.eigenspace_groups[static_cast<std::size_t>(g)].front();
    return spec.group_of[static_cast<std::size_t>(spec.pairing[static_cast<std::size_t>(first)])];
}

inline bool is_real_group(const SpectralData& spec, int g) { return conjugate_group(spec, g) == g; }

namespace io {

inline json to_json(const SpectralData& spec) {
    json j;
    j["mode"] = to_string(spec.mode);
    j["n"] = spec.n;
    j["eigenvalues"] = to_json(spec.eigenvalues);
    j["pairing"] = spec.pairing;
    std::vector<int> mask(spec.stable_mask.begin(), spec.stable_mask.end());
    j["stable_mask"] = mask;
    j["defective"] = spec.defective;
    j["eigenspace_groups"] = spec.eigenspace_groups;
    return j;
}

}  // namespace io

}  // namespace atlas
