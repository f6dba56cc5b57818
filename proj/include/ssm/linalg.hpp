#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "ssm/errors.hpp"

namespace ssm {

// Lower-triangular Cholesky factor of an SPD matrix.
struct CholeskyFactor {
    Eigen::MatrixXd L;

    Eigen::Index dim() const { return L.rows(); }

    Eigen::MatrixXd covariance() const { return L * L.transpose(); }

    // ln|L| = sum of log-diagonal; half the log-determinant of the covariance.
    double log_det() const {
        double s = 0.0;
        for (Eigen::Index i = 0; i < L.rows(); ++i) s += std::log(L(i, i));
        return s;
    }

    static std::optional<CholeskyFactor> try_from_covariance(const Eigen::MatrixXd& cov) {
        Eigen::LLT<Eigen::MatrixXd> llt(cov);
        if (llt.info() != Eigen::Success) return std::nullopt;
        CholeskyFactor f{llt.matrixL()};
        for (Eigen::Index i = 0; i < f.L.rows(); ++i)
            if (!(f.L(i, i) > 0.0) || !std::isfinite(f.L(i, i))) return std::nullopt;
        return f;
    }

    static CholeskyFactor from_covariance(const Eigen::MatrixXd& cov) {
        if (cov.rows() != cov.cols())
            throw std::invalid_argument("CholeskyFactor: covariance must be square");
        auto f = try_from_covariance(cov);
        if (!f) throw NonPositiveDefiniteError("CholeskyFactor: matrix not positive definite");
        return *f;
    }
};

// Rank-1 downdate: returns L' with L'L'^T = LL^T - vv^T, or nullopt when the
// downdated matrix is not positive definite (caller falls back to a full
// factorization of the explicitly formed matrix).
inline std::optional<CholeskyFactor> chol_rank1_downdate(const CholeskyFactor& factor,
                                                         const Eigen::VectorXd& v) {
    const Eigen::Index n = factor.dim();
    if (v.size() != n) throw std::invalid_argument("chol_rank1_downdate: dimension mismatch");
    Eigen::MatrixXd L = factor.L;
    Eigen::VectorXd w = v;
    for (Eigen::Index k = 0; k < n; ++k) {
        const double d = L(k, k);
        const double r2 = d * d - w[k] * w[k];
        if (!(r2 > 0.0) || !std::isfinite(r2)) return std::nullopt;
        const double r = std::sqrt(r2);
        const double c = r / d;
        const double s = w[k] / d;
        L(k, k) = r;
        for (Eigen::Index i = k + 1; i < n; ++i) {
            L(i, k) = (L(i, k) - s * w[i]) / c;
            w[i] = c * w[i] - s * L(i, k);
        }
    }
    return CholeskyFactor{std::move(L)};
}

// log(sum_i exp(x_i)) with the usual max shift; -inf for an empty or all
// -inf input.
inline double log_sum_exp(const Eigen::VectorXd& x) {
    if (x.size() == 0) return -std::numeric_limits<double>::infinity();
    double m = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < x.size(); ++i)
        if (x[i] > m) m = x[i];
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) s += std::exp(x[i] - m);
    return m + std::log(s);
}

} // namespace ssm
