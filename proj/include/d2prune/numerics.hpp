#pragma once

// Dense kernels shared by the whole toolkit. Everything is a thin layer over
// Eigen, templated on the scalar so the oracle tests can run the same code in
// long double when they want headroom. Eigen's products run single-threaded
// here (no OpenMP), so every reduction has a fixed order and results are
// bit-reproducible for a given build.

#include <cmath>
#include <optional>
#include <span>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "d2prune/errors.hpp"

namespace d2p {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;

/// Dampening applied to calibration Hessians unless the caller overrides it:
/// 1% of the mean diagonal.
inline constexpr double kDefaultDamping = 0.01;

inline std::string shape_str(Eigen::Index r, Eigen::Index c) {
    return std::to_string(r) + "x" + std::to_string(c);
}

template <typename DerivedA, typename DerivedB>
MatrixX<typename DerivedA::Scalar> matmul(const Eigen::MatrixBase<DerivedA>& a,
                                          const Eigen::MatrixBase<DerivedB>& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: " + shape_str(a.rows(), a.cols()) + " times " +
                         shape_str(b.rows(), b.cols()));
    }
    MatrixX<typename DerivedA::Scalar> out(a.rows(), b.cols());
    out.noalias() = a * b;
    return out;
}

/// Lower Cholesky factor of a symmetric positive-definite matrix.
template <typename Scalar>
struct CholeskyFactor {
    MatrixX<Scalar> lower;

    Eigen::Index dim() const { return lower.rows(); }
    MatrixX<Scalar> reconstruct() const { return lower * lower.transpose(); }
};

/// Returns nullopt when `spd` is not numerically positive-definite.
template <typename Derived>
std::optional<CholeskyFactor<typename Derived::Scalar>> cholesky(const Eigen::MatrixBase<Derived>& spd) {
    using Scalar = typename Derived::Scalar;
    if (spd.rows() != spd.cols()) {
        throw ShapeError("cholesky: matrix is " + shape_str(spd.rows(), spd.cols()));
    }
    Eigen::LLT<MatrixX<Scalar>> llt(spd.eval());
    if (llt.info() != Eigen::Success) return std::nullopt;
    MatrixX<Scalar> lower = llt.matrixL();
    for (Eigen::Index i = 0; i < lower.rows(); ++i) {
        if (!(lower(i, i) > Scalar(0)) || !std::isfinite(static_cast<double>(lower(i, i)))) return std::nullopt;
    }
    return CholeskyFactor<Scalar>{std::move(lower)};
}

/// Adds eps_frac * mean(diag(h)) to the diagonal.
template <typename Derived>
MatrixX<typename Derived::Scalar> damp(const Eigen::MatrixBase<Derived>& h, typename Derived::Scalar eps_frac) {
    using Scalar = typename Derived::Scalar;
    if (h.rows() != h.cols()) throw ShapeError("damp: matrix is " + shape_str(h.rows(), h.cols()));
    MatrixX<Scalar> out = h;
    if (h.rows() == 0) return out;
    const Scalar mean_diag = h.diagonal().sum() / Scalar(h.rows());
    out.diagonal().array() += eps_frac * mean_diag;
    return out;
}

/// (H + eps_frac * mean(diag H) * I)^-1 through a Cholesky solve. The result
/// is symmetrized so callers can rely on exact symmetry.
template <typename Derived>
MatrixX<typename Derived::Scalar> damped_inverse(const Eigen::MatrixBase<Derived>& h,
                                                 typename Derived::Scalar eps_frac,
                                                 const std::string& layer = "<unnamed>") {
    using Scalar = typename Derived::Scalar;
    if (eps_frac < Scalar(0)) throw InputError("damped_inverse: eps_frac must be >= 0");
    MatrixX<Scalar> damped = damp(h, eps_frac);
    auto factor = cholesky(damped);
    if (!factor) throw SingularHessianError(layer, "matrix is not positive-definite after damping");
    const auto n = h.rows();
    MatrixX<Scalar> inv = MatrixX<Scalar>::Identity(n, n);
    factor->lower.template triangularView<Eigen::Lower>().solveInPlace(inv);
    factor->lower.transpose().template triangularView<Eigen::Upper>().solveInPlace(inv);
    MatrixX<Scalar> sym = (inv + inv.transpose()) * Scalar(0.5);
    return sym;
}

/// Row-wise softmax with max subtraction.
template <typename Derived>
MatrixX<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived>& m) {
    using Scalar = typename Derived::Scalar;
    MatrixX<Scalar> out(m.rows(), m.cols());
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        if (m.cols() == 0) continue;
        const Scalar mx = m.row(r).maxCoeff();
        Scalar total(0);
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            out(r, c) = std::exp(m(r, c) - mx);
            total += out(r, c);
        }
        out.row(r) /= total;
    }
    return out;
}

template <typename Derived>
VectorX<typename Derived::Scalar> l2_norm_cols(const Eigen::MatrixBase<Derived>& m) {
    VectorX<typename Derived::Scalar> out(m.cols());
    for (Eigen::Index c = 0; c < m.cols(); ++c) out(c) = m.col(c).norm();
    return out;
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
    return m.array().isFinite().all();
}

inline constexpr double kProbFloor = 1e-12;

/// KL(p || q) in nats. Both distributions get an additive floor and are
/// renormalized first, so zeros never produce infinities.
inline double floored_kl(std::span<const double> p, std::span<const double> q, double floor = kProbFloor) {
    if (p.size() != q.size()) {
        throw ShapeError("floored_kl: sizes " + std::to_string(p.size()) + " and " + std::to_string(q.size()));
    }
    double zp = 0.0, zq = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        zp += p[i] + floor;
        zq += q[i] + floor;
    }
    double kl = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double a = (p[i] + floor) / zp;
        const double b = (q[i] + floor) / zq;
        kl += a * std::log(a / b);
    }
    return kl;
}

}  // namespace d2p
