#pragma once

#include <complex>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace atlas {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Complex = std::complex<double>;
using ComplexMatrix = Eigen::MatrixXcd;
using ComplexVector = Eigen::VectorXcd;

enum class TimeMode { continuous, discrete };

inline const char* to_string(TimeMode mode) {
    return mode == TimeMode::continuous ? "continuous" : "discrete";
}

enum class ErrorKind {
    dimension_mismatch,
    not_psd,
    not_pd,
    singular_a,
    wrong_mode,
    convergence_failure,
    enumeration_cap,
    singular_rbpb,
    non_finite_state,
    degenerate_cost,
    training_diverged,
    invalid_config,
    checkpoint_mismatch,
    io,
};

inline const char* to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::dimension_mismatch: return "DimensionMismatch";
    case ErrorKind::not_psd: return "NotPSD";
    case ErrorKind::not_pd: return "NotPD";
    case ErrorKind::singular_a: return "SingularA";
    case ErrorKind::wrong_mode: return "WrongMode";
    case ErrorKind::convergence_failure: return "ConvergenceFailure";
    case ErrorKind::enumeration_cap: return "EnumerationCap";
    case ErrorKind::singular_rbpb: return "SingularRBPB";
    case ErrorKind::non_finite_state: return "NonFiniteState";
    case ErrorKind::degenerate_cost: return "DegenerateCost";
    case ErrorKind::training_diverged: return "TrainingDiverged";
    case ErrorKind::invalid_config: return "InvalidConfig";
    case ErrorKind::checkpoint_mismatch: return "CheckpointMismatch";
    case ErrorKind::io: return "IOError";
    }
    return "Unknown";
}

/// Every failure raised by the library carries one of the ErrorKind tags so
/// callers (the CLI in particular) can map it to an exit code.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

/// Frobenius norm of the antisymmetric part scaled back to ||M - M^T||_F.
inline double symmetry_defect(const Matrix& m) { return (m - m.transpose()).norm(); }

inline double spectral_norm(const Matrix& m) {
    if (m.size() == 0) return 0.0;
    Eigen::JacobiSVD<Matrix> svd(m);
    return svd.singularValues()(0);
}

inline double condition_number(const Matrix& m) {
    Eigen::JacobiSVD<Matrix> svd(m);
    const auto& s = svd.singularValues();
    if (s.size() == 0) return 0.0;
    const double smin = s(s.size() - 1);
    if (smin == 0.0) return std::numeric_limits<double>::infinity();
    return s(0) / smin;
}

inline Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

inline double min_symmetric_eigenvalue(const Matrix& m) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(m), Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

inline std::vector<Complex> to_std(const ComplexVector& v) {
    return {v.data(), v.data() + v.size()};
}

}  // namespace atlas
