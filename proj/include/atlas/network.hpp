#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "atlas/core.hpp"

namespace atlas {

enum class NetworkKind { generic, positive_definite };
enum class Activation { elu, relu, tanh };
enum class Initializer { lecun_normal, kaiming_normal, uniform, normal };

inline const char* to_string(NetworkKind k) { return k == NetworkKind::generic ? "generic" : "positive_definite"; }

inline const char* to_string(Activation a) {
    switch (a) {
    case Activation::elu: return "elu";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    }
    return "?";
}

inline const char* to_string(Initializer i) {
    switch (i) {
    case Initializer::lecun_normal: return "lecun_normal";
    case Initializer::kaiming_normal: return "kaiming_normal";
    case Initializer::uniform: return "uniform";
    case Initializer::normal: return "normal";
    }
    return "?";
}

inline NetworkKind network_kind_from(const std::string& s) {
    if (s == "generic") return NetworkKind::generic;
    if (s == "positive_definite" || s == "pd") return NetworkKind::positive_definite;
    throw Error(ErrorKind::invalid_config, "unknown network kind '" + s + "'");
}

inline Activation activation_from(const std::string& s) {
    if (s == "elu") return Activation::elu;
    if (s == "relu") return Activation::relu;
    if (s == "tanh") return Activation::tanh;
    throw Error(ErrorKind::invalid_config, "unknown activation '" + s + "'");
}

inline Initializer initializer_from(const std::string& s) {
    if (s == "lecun_normal" || s == "lecun") return Initializer::lecun_normal;
    if (s == "kaiming_normal" || s == "kaiming" || s == "he_normal") return Initializer::kaiming_normal;
    if (s == "uniform") return Initializer::uniform;
    if (s == "normal") return Initializer::normal;
    throw Error(ErrorKind::invalid_config, "unknown initializer '" + s + "'");
}

namespace detail {

struct ActivationDerivs {
    Matrix value, d1, d2;
};

inline double act(Activation a, double z) {
    switch (a) {
    case Activation::elu: return z > 0.0 ? z : std::expm1(z);
    case Activation::relu: return z > 0.0 ? z : 0.0;
    case Activation::tanh: return std::tanh(z);
    }
    return 0.0;
}

/// sigma' and sigma'' at z; ReLU's kink gets derivative 0.
inline void act_derivs(Activation a, double z, double& d1, double& d2) {
    switch (a) {
    case Activation::elu:
        if (z > 0.0) {
            d1 = 1.0;
            d2 = 0.0;
        } else {
            d1 = d2 = std::exp(z);
        }
        return;
    case Activation::relu:
        d1 = z > 0.0 ? 1.0 : 0.0;
        d2 = 0.0;
        return;
    case Activation::tanh: {
        const double t = std::tanh(z);
        d1 = 1.0 - t * t;
        d2 = -2.0 * t * d1;
        return;
    }
    }
}

}  // namespace detail

/// Offsets of one dense layer inside the flat parameter vector. W is stored
/// column-major (out x in); b follows W when present.
struct LayerView {
    Eigen::Index in = 0;
    Eigen::Index out = 0;
    Eigen::Index w_offset = 0;
    Eigen::Index b_offset = -1;
};

/// Per-batch forward state: pre-activations z and activations h of every
/// hidden layer (h[0] is the network input).
struct ForwardCache {
    std::vector<Matrix> z;
    std::vector<Matrix> h;
    Matrix deviation;  // X - x_eq
    Vector values;
};

/// Directional derivatives of every hidden activation along input directions D.
struct TangentCache {
    std::vector<Matrix> zdot;
    std::vector<Matrix> hdot;
    Matrix direction;
    Vector slopes;  // grad V . d per column
};

/// Value network. The generic kind is a biased MLP with a linear scalar
/// output. The positive-definite kind has no biases and evaluates
/// ||h_N||^2 + eps ||x - x_eq||^2 with h_0 = x - x_eq.
class ValueNetwork {
public:
    ValueNetwork() = default;

    ValueNetwork(NetworkKind kind, Eigen::Index n, std::vector<int> widths, Activation activation, Vector x_eq,
                 double epsilon = 1e-3)
        : kind_(kind), activation_(activation), n_(n), widths_(std::move(widths)), x_eq_(std::move(x_eq)),
          epsilon_(epsilon) {
        if (n_ <= 0) throw Error(ErrorKind::invalid_config, "input dimension must be positive");
        if (x_eq_.size() != n_) throw Error(ErrorKind::dimension_mismatch, "x_eq has the wrong length");
        if (widths_.empty()) throw Error(ErrorKind::invalid_config, "at least one hidden layer is required");
        for (int w : widths_)
            if (w <= 0) throw Error(ErrorKind::invalid_config, "layer widths must be positive");
        if (kind_ == NetworkKind::positive_definite) {
            if (!(epsilon_ > 0.0)) throw Error(ErrorKind::invalid_config, "epsilon must be positive");
            if (detail::act(activation_, 0.0) != 0.0)
                throw Error(ErrorKind::invalid_config, "positive-definite networks need sigma(0) = 0");
        }
        const bool bias = kind_ == NetworkKind::generic;
        Eigen::Index offset = 0;
        Eigen::Index in = n_;
        auto add = [&](Eigen::Index out) {
            LayerView l{in, out, offset, -1};
            offset += in * out;
            if (bias) {
                l.b_offset = offset;
                offset += out;
            }
            layers_.push_back(l);
            in = out;
        };
        for (int w : widths_) add(w);
        if (bias) add(1);
        theta_ = Vector::Zero(offset);
    }

    NetworkKind kind() const { return kind_; }
    Activation activation() const { return activation_; }
    Eigen::Index input_dim() const { return n_; }
    const std::vector<int>& widths() const { return widths_; }
    const Vector& x_eq() const { return x_eq_; }
    double epsilon() const { return epsilon_; }
    const std::vector<LayerView>& layers() const { return layers_; }
    Eigen::Index num_params() const { return theta_.size(); }
    const Vector& params() const { return theta_; }
    Vector& params() { return theta_; }

    void set_params(const Vector& theta) {
        if (theta.size() != theta_.size()) throw Error(ErrorKind::dimension_mismatch, "parameter vector has the wrong length");
        theta_ = theta;
    }

    /// Weights drawn from the chosen initializer; biases zero.
    void initialize(Initializer init, std::mt19937_64& rng) {
        std::normal_distribution<double> gauss(0.0, 1.0);
        std::uniform_real_distribution<double> uni(-0.5, 0.5);
        theta_.setZero();
        for (const auto& l : layers_) {
            const double fan_in = static_cast<double>(l.in);
            // truncated at two standard deviations, rescaled to the target variance
            const double trunc_std = 0.87962566103423978;
            double scale = 1.0;
            if (init == Initializer::lecun_normal) scale = std::sqrt(1.0 / fan_in) / trunc_std;
            if (init == Initializer::kaiming_normal) scale = std::sqrt(2.0 / fan_in) / trunc_std;
            for (Eigen::Index k = 0; k < l.in * l.out; ++k) {
                double v = 0.0;
                switch (init) {
                case Initializer::lecun_normal:
                case Initializer::kaiming_normal:
                    do v = gauss(rng);
                    while (std::abs(v) > 2.0);
                    v *= scale;
                    break;
                case Initializer::uniform: v = uni(rng); break;
                case Initializer::normal: v = gauss(rng); break;
                }
                theta_(l.w_offset + k) = v;
            }
        }
    }

    Eigen::Map<const Matrix> weight(std::size_t layer) const {
        const auto& l = layers_[layer];
        return {theta_.data() + l.w_offset, l.out, l.in};
    }

    std::size_t hidden_count() const { return widths_.size(); }

    ForwardCache forward(const Matrix& X) const {
        if (X.rows() != n_) throw Error(ErrorKind::dimension_mismatch, "state has the wrong dimension");
        ForwardCache c;
        c.deviation = X.colwise() - x_eq_;
        c.h.push_back(kind_ == NetworkKind::positive_definite ? c.deviation : X);
        for (std::size_t k = 0; k < hidden_count(); ++k) {
            Matrix z = weight(k) * c.h.back();
            add_bias(k, z);
            Matrix h(z.rows(), z.cols());
            for (Eigen::Index i = 0; i < z.size(); ++i) h.data()[i] = detail::act(activation_, z.data()[i]);
            c.z.push_back(std::move(z));
            c.h.push_back(std::move(h));
        }
        if (kind_ == NetworkKind::generic) {
            const auto& out = layers_.back();
            Matrix v = weight(layers_.size() - 1) * c.h.back();
            c.values = v.row(0).transpose().array() + theta_(out.b_offset);
        } else {
            c.values = c.h.back().colwise().squaredNorm().transpose() +
                       epsilon_ * c.deviation.colwise().squaredNorm().transpose();
        }
        return c;
    }

    TangentCache tangent(const ForwardCache& c, const Matrix& D) const {
        TangentCache t;
        t.direction = D;
        t.hdot.push_back(D);
        for (std::size_t k = 0; k < hidden_count(); ++k) {
            Matrix zd = weight(k) * t.hdot.back();
            Matrix hd(zd.rows(), zd.cols());
            const Matrix& z = c.z[k];
            for (Eigen::Index i = 0; i < z.size(); ++i) {
                double d1, d2;
                detail::act_derivs(activation_, z.data()[i], d1, d2);
                hd.data()[i] = d1 * zd.data()[i];
            }
            t.zdot.push_back(std::move(zd));
            t.hdot.push_back(std::move(hd));
        }
        if (kind_ == NetworkKind::generic) {
            t.slopes = (weight(layers_.size() - 1) * t.hdot.back()).row(0).transpose();
        } else {
            t.slopes = 2.0 * c.h.back().cwiseProduct(t.hdot.back()).colwise().sum().transpose() +
                       2.0 * epsilon_ * c.deviation.cwiseProduct(D).colwise().sum().transpose();
        }
        return t;
    }

    /// Columns are grad_x V at the cached inputs.
    Matrix input_gradients(const ForwardCache& c) const {
        const Eigen::Index batch = c.values.size();
        Matrix hbar;
        if (kind_ == NetworkKind::generic)
            hbar = weight(layers_.size() - 1).transpose() * Matrix::Ones(1, batch);
        else
            hbar = 2.0 * c.h.back();
        for (std::size_t k = hidden_count(); k-- > 0;) {
            const Matrix& z = c.z[k];
            Matrix zbar(z.rows(), z.cols());
            for (Eigen::Index i = 0; i < z.size(); ++i) {
                double d1, d2;
                detail::act_derivs(activation_, z.data()[i], d1, d2);
                zbar.data()[i] = hbar.data()[i] * d1;
            }
            hbar = weight(k).transpose() * zbar;
        }
        if (kind_ == NetworkKind::positive_definite) hbar += 2.0 * epsilon_ * c.deviation;
        return hbar;
    }

    /// Gradient with respect to theta of sum_i a_i V(x_i) + b_i (grad V(x_i) . d_i).
    Vector param_gradient(const ForwardCache& c, const TangentCache& t, const Vector& a, const Vector& b) const {
        Vector g = Vector::Zero(theta_.size());
        Matrix hbar, hdbar;
        if (kind_ == NetworkKind::generic) {
            const auto& out = layers_.back();
            const auto w = weight(layers_.size() - 1);
            Eigen::Map<Matrix> gw(g.data() + out.w_offset, 1, out.in);
            gw = (c.h.back() * a + t.hdot.back() * b).transpose();
            g(out.b_offset) = a.sum();
            hbar = w.transpose() * a.transpose();
            hdbar = w.transpose() * b.transpose();
        } else {
            hbar = 2.0 * (c.h.back() * a.asDiagonal() + t.hdot.back() * b.asDiagonal());
            hdbar = 2.0 * c.h.back() * b.asDiagonal();
        }
        for (std::size_t k = hidden_count(); k-- > 0;) {
            const Matrix& z = c.z[k];
            const Matrix& zd = t.zdot[k];
            Matrix zbar(z.rows(), z.cols()), zdbar(z.rows(), z.cols());
            for (Eigen::Index i = 0; i < z.size(); ++i) {
                double d1, d2;
                detail::act_derivs(activation_, z.data()[i], d1, d2);
                zbar.data()[i] = hbar.data()[i] * d1 + hdbar.data()[i] * zd.data()[i] * d2;
                zdbar.data()[i] = hdbar.data()[i] * d1;
            }
            const auto& l = layers_[k];
            Eigen::Map<Matrix> gw(g.data() + l.w_offset, l.out, l.in);
            gw.noalias() += zbar * c.h[k].transpose();
            gw.noalias() += zdbar * t.hdot[k].transpose();
            if (l.b_offset >= 0) g.segment(l.b_offset, l.out) += zbar.rowwise().sum();
            if (k > 0) {
                const auto w = weight(k);
                hbar = w.transpose() * zbar;
                hdbar = w.transpose() * zdbar;
            }
        }
        return g;
    }

    Vector values(const Matrix& X) const { return forward(X).values; }

    Matrix gradients(const Matrix& X) const { return input_gradients(forward(X)); }

    double value(const Vector& x) const { return forward(x).values(0); }

    Vector grad(const Vector& x) const { return input_gradients(forward(x)).col(0); }

private:
    void add_bias(std::size_t k, Matrix& z) const {
        const auto& l = layers_[k];
        if (l.b_offset < 0) return;
        z.colwise() += theta_.segment(l.b_offset, l.out);
    }

    NetworkKind kind_ = NetworkKind::generic;
    Activation activation_ = Activation::elu;
    Eigen::Index n_ = 0;
    std::vector<int> widths_;
    Vector x_eq_;
    double epsilon_ = 1e-3;
    std::vector<LayerView> layers_;
    Vector theta_;
};

}  // namespace atlas
