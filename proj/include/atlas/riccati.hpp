#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "atlas/core.hpp"
#include "atlas/hamiltonian.hpp"
#include "atlas/linear_system.hpp"

namespace atlas {

inline constexpr Eigen::Index kMaxEnumerationDim = 12;
inline constexpr double kP1ConditionLimit = 1e10;
inline constexpr double kDedupTol = 1e-6;
inline constexpr double kStabilityMargin = 1e-8;

/// A choice of n Hamiltonian eigen-directions whose span is invariant.
struct SubspaceSelection {
    std::vector<int> indices;
    bool conjugate_closed = true;
    std::vector<Complex> lambda1;
};

/// Coordinates of a member of a continuum of solutions: the repeated
/// eigenvalue group, its mirror group, the rotation mixing both eigenspaces and
/// how many rotated columns come from the first group.
struct FamilyParameter {
    int group = -1;
    int partner = -1;
    Matrix rotation;
    int split = 0;
};

struct RiccatiSolution {
    Matrix P;
    double are_residual = 0.0;
    double symmetry_defect = 0.0;
    std::vector<Complex> closed_loop_eigs;
    bool stable = false;
    std::optional<SubspaceSelection> selection;
    std::optional<FamilyParameter> family;
    double p1_condition = 0.0;
    int multiplicity = 1;
};

/// Isolated solutions (one per union of whole eigenspace groups), plus the
/// bookkeeping that tells whether repeated eigenvalues open up a continuum.
struct SolutionFamily {
    TimeMode mode = TimeMode::continuous;
    std::vector<RiccatiSolution> isolated;
    std::vector<RiccatiSolution> samples;
    std::vector<int> anchor_groups;  // repeated real groups that admit mixing
    std::size_t selections_tried = 0;
    std::size_t singular_selections = 0;
    std::size_t rejected_by_residual = 0;
    bool has_continuum = false;
    std::vector<std::string> warnings;

    std::size_t count_discrete() const { return isolated.size(); }

    int stable_index() const {
        for (std::size_t i = 0; i < isolated.size(); ++i)
            if (isolated[i].stable) return static_cast<int>(i);
        return -1;
    }
};

struct EnumerateOptions {
    int family_samples = 16;
    std::uint64_t seed = 0;
};

inline double residual_tolerance(const Matrix& p) {
    const double s = 1.0 + p.norm();
    return 1e-8 * s * s;
}

/// Left-hand side of the (undiscounted-equivalent) algebraic Riccati equation.
inline Matrix are_lhs(const LinearSystem& input, const Matrix& p) {
    const LinearSystem sys = undiscounted_equivalent(input);
    if (sys.mode == TimeMode::continuous) {
        const Matrix g = sys.B * sys.R.llt().solve(sys.B.transpose());
        return sys.A.transpose() * p + p * sys.A - p * g * p + sys.Q;
    }
    const Matrix s = sys.R + sys.B.transpose() * p * sys.B;
    const Matrix bpa = sys.B.transpose() * p * sys.A;
    return sys.Q + sys.A.transpose() * p * sys.A - sys.A.transpose() * p * sys.B * s.fullPivLu().solve(bpa) - p;
}

inline double are_residual(const LinearSystem& sys, const Matrix& p) { return are_lhs(sys, p).norm(); }

/// Feedback gain K with u = -Kx for the policy that is greedy w.r.t. x'Px.
inline Matrix feedback_gain(const LinearSystem& sys, const Matrix& p) {
    if (sys.mode == TimeMode::continuous) return sys.R.llt().solve(sys.B.transpose() * p);
    const double gamma = sys.discount.value_or(1.0);
    const Matrix s = sys.R + gamma * sys.B.transpose() * p * sys.B;
    Eigen::FullPivLU<Matrix> lu(s);
    if (!lu.isInvertible()) throw Error(ErrorKind::singular_rbpb, "R + B'PB is singular");
    return lu.solve(gamma * sys.B.transpose() * p * sys.A);
}

inline Matrix closed_loop_dynamics(const LinearSystem& sys, const Matrix& p) {
    return sys.A - sys.B * feedback_gain(sys, p);
}

inline std::vector<Complex> eigenvalues_of(const Matrix& m) {
    Eigen::EigenSolver<Matrix> es(m, false);
    if (es.info() != Eigen::Success) throw Error(ErrorKind::convergence_failure, "eigen solver did not converge");
    return to_std(es.eigenvalues());
}

inline bool all_stable(const std::vector<Complex>& eigs, TimeMode mode, double margin = kStabilityMargin) {
    return std::all_of(eigs.begin(), eigs.end(), [&](Complex l) { return is_stable_eigenvalue(l, mode, margin); });
}

/// Closed-loop eigenvalues implied by Hamiltonian eigenvalues of the
/// undiscounted-equivalent problem, mapped back to the original system.
inline std::vector<Complex> closed_loop_from_hamiltonian(const LinearSystem& sys, std::vector<Complex> lambda1) {
    if (!sys.discount) return lambda1;
    for (auto& l : lambda1) {
        if (sys.mode == TimeMode::continuous) l += 0.5 / *sys.discount;
        else l /= std::sqrt(*sys.discount);
    }
    return lambda1;
}

/// Fills residual, symmetry, closed-loop spectrum and stability for P.
inline RiccatiSolution make_solution(const LinearSystem& sys, Matrix p) {
    RiccatiSolution sol;
    sol.P = std::move(p);
    sol.are_residual = are_residual(sys, sol.P);
    sol.symmetry_defect = symmetry_defect(sol.P);
    sol.closed_loop_eigs = eigenvalues_of(closed_loop_dynamics(sys, sol.P));
    sol.stable = all_stable(sol.closed_loop_eigs, sys.mode);
    return sol;
}

namespace detail {

// Real 2n x k basis of the invariant subspace spanned by whole groups.
inline Matrix group_basis(const SpectralData& spec, const std::vector<int>& groups) {
    const auto dim2 = 2 * spec.n;
    if (!spec.defective) {
        std::vector<Vector> cols;
        for (int g : groups) {
            const int partner = conjugate_group(spec, g);
            for (int i : spec.eigenspace_groups[static_cast<std::size_t>(g)]) {
                const ComplexVector v = spec.basis.col(i);
                if (partner == g) {
                    cols.push_back(v.real());
                } else if (spec.eigenvalues[static_cast<std::size_t>(i)].imag() > 0.0) {
                    cols.push_back(v.real());
                    cols.push_back(v.imag());
                }
            }
        }
        Matrix out(dim2, static_cast<Eigen::Index>(cols.size()));
        for (std::size_t c = 0; c < cols.size(); ++c) out.col(static_cast<Eigen::Index>(c)) = cols[c];
        return out;
    }

    // Defective H: the generalized eigenspace of the selected clusters is the
    // kernel of the real polynomial with those roots at full multiplicity.
    const Matrix& h = spec.hamiltonian;
    const Matrix eye = Matrix::Identity(dim2, dim2);
    Matrix poly = eye;
    Eigen::Index dim = 0;
    for (int g : groups) {
        const int partner = conjugate_group(spec, g);
        for (int i : spec.eigenspace_groups[static_cast<std::size_t>(g)]) {
            const Complex l = spec.eigenvalues[static_cast<std::size_t>(i)];
            if (partner == g) {
                poly = (h - l.real() * eye) * poly;
                ++dim;
            } else if (l.imag() > 0.0) {
                poly = (h * h - 2.0 * l.real() * h + std::norm(l) * eye) * poly;
                dim += 2;
            }
        }
    }
    Eigen::JacobiSVD<Matrix> svd(poly, Eigen::ComputeFullV);
    return svd.matrixV().rightCols(dim);
}

inline std::optional<Matrix> solve_from_basis(const Matrix& basis, Eigen::Index n, double& p1_condition) {
    const Matrix p1 = basis.topRows(n);
    const Matrix p2 = basis.bottomRows(n);
    p1_condition = condition_number(p1);
    if (!(p1_condition < kP1ConditionLimit)) return std::nullopt;
    // P = P2 P1^{-1}  <=>  P1^T P^T = P2^T
    const Matrix pt = p1.transpose().fullPivLu().solve(p2.transpose());
    return Matrix(pt.transpose());
}

// Units of selection: a real group alone, or a complex group together with
// its conjugate group. Each unit carries its total dimension.
struct SelectionUnit {
    std::vector<int> groups;
    int size = 0;
};

inline std::vector<SelectionUnit> selection_units(const SpectralData& spec) {
    std::vector<SelectionUnit> units;
    std::vector<bool> used(spec.eigenspace_groups.size(), false);
    for (std::size_t g = 0; g < spec.eigenspace_groups.size(); ++g) {
        if (used[g]) continue;
        SelectionUnit unit;
        const int conj = conjugate_group(spec, static_cast<int>(g));
        unit.groups.push_back(static_cast<int>(g));
        used[g] = true;
        if (conj != static_cast<int>(g) && conj >= 0 && !used[static_cast<std::size_t>(conj)]) {
            unit.groups.push_back(conj);
            used[static_cast<std::size_t>(conj)] = true;
        }
        for (int gg : unit.groups) unit.size += static_cast<int>(spec.eigenspace_groups[static_cast<std::size_t>(gg)].size());
        units.push_back(std::move(unit));
    }
    return units;
}

inline bool same_solution(const Matrix& a, const Matrix& b) {
    return (a - b).norm() < kDedupTol * (1.0 + b.norm());
}

// Random orthogonal matrix, Haar distributed.
inline Matrix haar_orthogonal(Eigen::Index k, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix g(k, k);
    for (Eigen::Index j = 0; j < k; ++j)
        for (Eigen::Index i = 0; i < k; ++i) g(i, j) = normal(rng);
    Eigen::HouseholderQR<Matrix> qr(g);
    Matrix q = qr.householderQ() * Matrix::Identity(k, k);
    const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Eigen::Index j = 0; j < k; ++j)
        if (r(j, j) < 0.0) q.col(j) = -q.col(j);
    return q;
}

}  // namespace detail

/// Number of distinct invariant-subspace selections the enumerator will
/// visit: conjugate-closed unions of whole eigenspace groups of total size n.
inline std::vector<std::vector<int>> whole_group_selections(const SpectralData& spec) {
    const auto units = detail::selection_units(spec);
    std::vector<std::vector<int>> out;
    std::vector<int> current;
    const int n = static_cast<int>(spec.n);
    auto recurse = [&](auto&& self, std::size_t next, int size) -> void {
        if (size == n) {
            std::vector<int> groups;
            for (int u : current)
                for (int g : units[static_cast<std::size_t>(u)].groups) groups.push_back(g);
            out.push_back(std::move(groups));
            return;
        }
        for (std::size_t u = next; u < units.size(); ++u) {
            if (size + units[u].size > n) continue;
            current.push_back(static_cast<int>(u));
            self(self, u + 1, size + units[u].size);
            current.pop_back();
        }
    };
    recurse(recurse, 0, 0);
    return out;
}

/// One member of the continuum anchored at a repeated real eigenvalue group:
/// `split` rotated directions from `param.group`, the rest from its mirror
/// group, completed by the stable directions of every other group.
inline std::optional<RiccatiSolution> family_member(const SpectralData& spec, const LinearSystem& sys,
                                                    const FamilyParameter& param) {
    if (spec.defective) return std::nullopt;
    const auto& ga = spec.eigenspace_groups[static_cast<std::size_t>(param.group)];
    const auto& gb = spec.eigenspace_groups[static_cast<std::size_t>(param.partner)];
    const auto k = static_cast<Eigen::Index>(ga.size());
    if (static_cast<Eigen::Index>(gb.size()) != k || param.rotation.rows() != k) return std::nullopt;

    const Matrix va = detail::group_basis(spec, {param.group});
    const Matrix vb = detail::group_basis(spec, {param.partner});
    const auto n = spec.n;

    // Express both eigenspaces in one frame F of the first group's top block so
    // that a common rotation mixes corresponding directions.
    Eigen::HouseholderQR<Matrix> qr(va.topRows(n));
    const Matrix frame = qr.householderQ() * Matrix::Identity(n, k);
    const Matrix va_aligned = va * va.topRows(n).completeOrthogonalDecomposition().pseudoInverse() * frame;
    const Matrix vb_aligned = vb * vb.topRows(n).completeOrthogonalDecomposition().pseudoInverse() * frame;

    const Matrix ra = va_aligned * param.rotation.leftCols(param.split);
    const Matrix rb = vb_aligned * param.rotation.rightCols(k - param.split);

    std::vector<int> rest;
    for (std::size_t g = 0; g < spec.eigenspace_groups.size(); ++g) {
        const int gi = static_cast<int>(g);
        if (gi == param.group || gi == param.partner) continue;
        const int first = spec.eigenspace_groups[g].front();
        if (spec.stable_mask[static_cast<std::size_t>(first)]) rest.push_back(gi);
    }
    const Matrix vr = detail::group_basis(spec, rest);
    if (ra.cols() + rb.cols() + vr.cols() != n) return std::nullopt;

    Matrix basis(2 * n, n);
    basis << ra, rb, vr;
    double cond = 0.0;
    auto p = detail::solve_from_basis(basis, n, cond);
    if (!p) return std::nullopt;
    RiccatiSolution sol = make_solution(sys, std::move(*p));
    if (!(sol.are_residual <= residual_tolerance(sol.P))) return std::nullopt;
    sol.p1_condition = cond;
    sol.family = param;
    return sol;
}

/// Draws k random rotations inside the repeated eigenspace `group` and its
/// mirror, keeping the members that pass the ARE residual check. A group of
/// multiplicity one (or a complex group) has no freedom and yields nothing.
inline std::vector<RiccatiSolution> sample_family(const SpectralData& spec, const LinearSystem& sys, int group,
                                                  int k, std::mt19937_64& rng) {
    std::vector<RiccatiSolution> out;
    if (group < 0 || group >= static_cast<int>(spec.eigenspace_groups.size())) return out;
    const auto mult = static_cast<int>(spec.eigenspace_groups[static_cast<std::size_t>(group)].size());
    if (mult < 2 || spec.defective || !is_real_group(spec, group)) return out;
    const int partner = mirror_group(spec, group);
    if (partner < 0 || partner == group) return out;

    std::uniform_int_distribution<int> split(1, mult - 1);
    for (int s = 0; s < k; ++s) {
        FamilyParameter param;
        param.group = group;
        param.partner = partner;
        param.rotation = detail::haar_orthogonal(mult, rng);
        param.split = split(rng);
        if (auto member = family_member(spec, sys, param)) out.push_back(std::move(*member));
    }
    return out;
}

/// Enumerates every isolated ARE solution P = P2 P1^{-1} obtained from
/// conjugate-closed unions of whole eigenspace groups, and probes repeated
/// groups for continua. Selections with ill-conditioned P1 are counted and
/// skipped; candidates failing the residual check are dropped with a warning.
inline SolutionFamily enumerate(const SpectralData& spec, const LinearSystem& sys, const EnumerateOptions& options = {}) {
    if (spec.n > kMaxEnumerationDim)
        throw Error(ErrorKind::enumeration_cap,
                    "refusing to enumerate n = " + std::to_string(spec.n) + " > " + std::to_string(kMaxEnumerationDim));

    SolutionFamily fam;
    fam.mode = spec.mode;
    for (const auto& groups : whole_group_selections(spec)) {
        ++fam.selections_tried;
        const Matrix basis = detail::group_basis(spec, groups);
        double cond = 0.0;
        auto p = detail::solve_from_basis(basis, spec.n, cond);
        if (!p) {
            ++fam.singular_selections;
            continue;
        }
        RiccatiSolution sol = make_solution(sys, std::move(*p));
        sol.p1_condition = cond;
        SubspaceSelection sel;
        for (int g : groups)
            for (int i : spec.eigenspace_groups[static_cast<std::size_t>(g)]) {
                sel.indices.push_back(i);
                sel.lambda1.push_back(spec.eigenvalues[static_cast<std::size_t>(i)]);
            }
        std::sort(sel.indices.begin(), sel.indices.end());
        sol.selection = std::move(sel);

        if (!(sol.are_residual <= residual_tolerance(sol.P))) {
            ++fam.rejected_by_residual;
            fam.warnings.push_back("selection discarded: ARE residual " + std::to_string(sol.are_residual));
            continue;
        }
        auto dup = std::find_if(fam.isolated.begin(), fam.isolated.end(),
                                [&](const RiccatiSolution& s) { return detail::same_solution(sol.P, s.P); });
        if (dup != fam.isolated.end()) {
            ++dup->multiplicity;
            continue;
        }
        fam.isolated.push_back(std::move(sol));
    }

    for (std::size_t g = 0; g < spec.eigenspace_groups.size(); ++g) {
        const int gi = static_cast<int>(g);
        if (spec.eigenspace_groups[g].size() < 2 || !is_real_group(spec, gi)) continue;
        const int partner = mirror_group(spec, gi);
        if (partner < 0 || partner == gi) continue;
        // Each pair of mirror groups anchors one continuum; keep the first.
        if (std::find(fam.anchor_groups.begin(), fam.anchor_groups.end(), partner) != fam.anchor_groups.end()) continue;
        fam.anchor_groups.push_back(gi);
    }

    std::mt19937_64 rng(options.seed);
    for (int g : fam.anchor_groups) {
        auto members = sample_family(spec, sys, g, std::max(options.family_samples, 4), rng);
        for (auto& m : members) {
            const bool known = std::any_of(fam.isolated.begin(), fam.isolated.end(),
                                           [&](const RiccatiSolution& s) { return detail::same_solution(m.P, s.P); });
            if (!known) fam.has_continuum = true;
            if (static_cast<int>(fam.samples.size()) < options.family_samples * static_cast<int>(fam.anchor_groups.size()))
                fam.samples.push_back(std::move(m));
        }
    }
    return fam;
}

/// Convenience pipeline: validate, build, decompose, enumerate.
inline SolutionFamily solve_all(const LinearSystem& sys, const EnumerateOptions& options = {}) {
    return enumerate(spectrum(build(sys)), validate(sys), options);
}

// ---------------------------------------------------------------------------
// Dirichlet boundary conditions on spheres.

struct SphereBoundary {
    double radius = 1.0;
    double value = 0.0;
};

struct BoundarySurvivor {
    RiccatiSolution solution;
    double offset = 0.0;
};

inline constexpr int kBoundaryPoints = 64;
inline constexpr double kBoundaryTol = 1e-8;

/// Deterministic low-discrepancy points on the sphere of the given radius in
/// R^n: golden-angle sequence on circles, Kronecker-sequence hyperspherical
/// angles in higher dimension.
inline std::vector<Vector> sphere_points(Eigen::Index n, double radius, int count = kBoundaryPoints) {
    std::vector<Vector> pts;
    pts.reserve(static_cast<std::size_t>(count));
    const double golden = 0.5 * (std::sqrt(5.0) - 1.0);
    if (n == 1) {
        for (int i = 0; i < count; ++i) pts.push_back(Vector::Constant(1, (i % 2 == 0 ? 1.0 : -1.0) * radius));
        return pts;
    }
    std::vector<double> alpha;
    for (Eigen::Index d = 0; d + 1 < n; ++d) alpha.push_back(std::fmod(std::sqrt(2.0 + static_cast<double>(d)) * golden, 1.0));
    for (int i = 0; i < count; ++i) {
        Vector x(n);
        if (n == 2) {
            const double t = 2.0 * std::numbers::pi * std::fmod((i + 0.5) * golden, 1.0);
            x << std::cos(t), std::sin(t);
        } else {
            double sin_prod = 1.0;
            for (Eigen::Index d = 0; d + 1 < n; ++d) {
                const double u = std::fmod((i + 0.5) * alpha[static_cast<std::size_t>(d)], 1.0);
                const double ang = (d + 2 == n) ? 2.0 * std::numbers::pi * u : std::numbers::pi * u;
                x(d) = sin_prod * std::cos(ang);
                sin_prod *= std::sin(ang);
            }
            x(n - 1) = sin_prod;
        }
        pts.push_back(radius * x.normalized());
    }
    return pts;
}

/// Keeps the candidates whose quadratic value x'Px (+ a constant offset when
/// allowed) matches every boundary. The offset is fitted on the first boundary
/// and verified on all of them. A constant offset only solves the HJB equation
/// without the discount term, so the system must be undiscounted continuous.
inline std::vector<BoundarySurvivor> boundary_filter(std::span<const RiccatiSolution> candidates,
                                                     const LinearSystem& sys,
                                                     const std::vector<SphereBoundary>& boundaries,
                                                     bool allow_offset) {
    if (sys.mode != TimeMode::continuous || sys.discount)
        throw Error(ErrorKind::wrong_mode, "boundary filtering requires an undiscounted continuous system");
    std::vector<BoundarySurvivor> out;
    if (boundaries.empty()) {
        for (const auto& c : candidates) out.push_back({c, 0.0});
        return out;
    }
    std::vector<std::vector<Vector>> points;
    for (const auto& b : boundaries) points.push_back(sphere_points(sys.n(), b.radius));

    for (const auto& cand : candidates) {
        double offset = 0.0;
        if (allow_offset) {
            double sum = 0.0;
            for (const auto& x : points.front()) sum += boundaries.front().value - x.dot(cand.P * x);
            offset = sum / static_cast<double>(points.front().size());
        }
        bool ok = true;
        for (std::size_t b = 0; b < boundaries.size() && ok; ++b) {
            const double target = boundaries[b].value;
            for (const auto& x : points[b]) {
                if (std::abs(x.dot(cand.P * x) + offset - target) > kBoundaryTol * std::max(1.0, std::abs(target))) {
                    ok = false;
                    break;
                }
            }
        }
        if (ok) out.push_back({cand, offset});
    }
    return out;
}

inline std::vector<BoundarySurvivor> boundary_filter(const SolutionFamily& fam, const LinearSystem& sys,
                                                     const std::vector<SphereBoundary>& boundaries,
                                                     bool allow_offset) {
    std::vector<RiccatiSolution> all = fam.isolated;
    all.insert(all.end(), fam.samples.begin(), fam.samples.end());
    return boundary_filter(std::span<const RiccatiSolution>(all), sys, boundaries, allow_offset);
}

namespace io {

inline json to_json(const RiccatiSolution& s) {
    json j;
    j["P"] = to_json(s.P);
    j["are_residual"] = s.are_residual;
    j["symmetry_defect"] = s.symmetry_defect;
    j["closed_loop_eigs"] = to_json(s.closed_loop_eigs);
    j["stable"] = s.stable;
    j["p1_condition"] = s.p1_condition;
    j["multiplicity"] = s.multiplicity;
    if (s.selection) {
        j["source"] = {{"kind", "subspace"},
                       {"indices", s.selection->indices},
                       {"lambda1", to_json(s.selection->lambda1)}};
    } else if (s.family) {
        j["source"] = {{"kind", "family"},
                       {"group", s.family->group},
                       {"partner", s.family->partner},
                       {"split", s.family->split},
                       {"rotation", to_json(s.family->rotation)}};
    }
    return j;
}

inline json to_json(const SolutionFamily& fam) {
    json j;
    json sols = json::array();
    for (const auto& s : fam.isolated) sols.push_back(to_json(s));
    json samples = json::array();
    for (const auto& s : fam.samples) samples.push_back(to_json(s));
    j["solutions"] = std::move(sols);
    j["family_samples"] = std::move(samples);
    j["summary"] = {{"count_isolated", fam.count_discrete()},
                    {"has_continuum", fam.has_continuum},
                    {"stable_index", fam.stable_index()},
                    {"selections_tried", fam.selections_tried},
                    {"singular_selections", fam.singular_selections},
                    {"rejected_by_residual", fam.rejected_by_residual}};
    j["warnings"] = fam.warnings;
    return j;
}

}  // namespace io

}  // namespace atlas
