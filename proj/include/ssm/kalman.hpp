#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "ssm/errors.hpp"
#include "ssm/model.hpp"

namespace ssm {

// z_t = A z_{t-1} + b + Lq w_t,   y_t = H z_t + d + Lr e_t,
// w, e standard normal; z_0 ~ N(m0, P0chol P0chol^T) (point mass allowed).
struct LinearGaussianSystem {
    MatrixXd A;
    VectorXd b;
    MatrixXd Lq;
    MatrixXd H;
    VectorXd d;
    MatrixXd Lr;
    VectorXd m0;
    MatrixXd P0chol;
};

struct KalmanResult {
    double log_likelihood = 0.0;
    // Index 0 holds the initial belief; index t the belief after updating on
    // y_t. pred_* are the one-step predictions used for the updates (index
    // t-1 predicts time t).
    std::vector<VectorXd> filt_mean;
    std::vector<MatrixXd> filt_cov;
    std::vector<VectorXd> pred_mean;
    std::vector<MatrixXd> pred_cov;
};

inline KalmanResult kalman_filter(const LinearGaussianSystem& sys, const MatrixXd& y) {
    const Eigen::Index T = y.cols();
    KalmanResult out;
    VectorXd m = sys.m0;
    MatrixXd P = sys.P0chol * sys.P0chol.transpose();
    const MatrixXd Q = sys.Lq * sys.Lq.transpose();
    const MatrixXd R = sys.Lr * sys.Lr.transpose();
    out.filt_mean.push_back(m);
    out.filt_cov.push_back(P);
    for (Eigen::Index t = 0; t < T; ++t) {
        const VectorXd mp = sys.A * m + sys.b;
        const MatrixXd Pp = sys.A * P * sys.A.transpose() + Q;
        out.pred_mean.push_back(mp);
        out.pred_cov.push_back(Pp);
        const VectorXd yp = sys.H * mp + sys.d;
        const MatrixXd S = sys.H * Pp * sys.H.transpose() + R;
        Eigen::LLT<MatrixXd> llt(S);
        if (llt.info() != Eigen::Success)
            throw SingularObservationError("kalman_filter: innovation covariance not PD");
        const VectorXd innov = y.col(t) - yp;
        const VectorXd alpha = llt.solve(innov);
        const MatrixXd K = Pp * sys.H.transpose() * llt.solve(MatrixXd::Identity(S.rows(), S.cols()));
        m = mp + K * innov;
        P = Pp - K * sys.H * Pp;
        P = 0.5 * (P + P.transpose());
        double log_det = 0.0;
        const MatrixXd Ls = llt.matrixL();
        for (Eigen::Index i = 0; i < Ls.rows(); ++i) log_det += std::log(Ls(i, i));
        out.log_likelihood += -0.5 * static_cast<double>(S.rows()) * std::log(2.0 * std::numbers::pi) -
                              log_det - 0.5 * innov.dot(alpha);
        out.filt_mean.push_back(m);
        out.filt_cov.push_back(P);
    }
    return out;
}

struct SmootherResult {
    std::vector<VectorXd> mean; // index 0..T
    std::vector<MatrixXd> cov;
};

// Rauch-Tung-Striebel backward pass over a kalman_filter result.
inline SmootherResult rts_smoother(const LinearGaussianSystem& sys, const KalmanResult& kf) {
    const std::size_t T = kf.pred_mean.size();
    SmootherResult out;
    out.mean.resize(T + 1);
    out.cov.resize(T + 1);
    out.mean[T] = kf.filt_mean[T];
    out.cov[T] = kf.filt_cov[T];
    for (std::size_t t = T; t-- > 0;) {
        const MatrixXd C = kf.filt_cov[t] * sys.A.transpose(); // Cov(z_t, z_{t+1} | y_{1:t})
        Eigen::LLT<MatrixXd> llt(kf.pred_cov[t]);
        if (llt.info() != Eigen::Success)
            throw NonPositiveDefiniteError("rts_smoother: predicted covariance not PD");
        const MatrixXd G = llt.solve(C.transpose()).transpose();
        out.mean[t] = kf.filt_mean[t] + G * (out.mean[t + 1] - kf.pred_mean[t]);
        MatrixXd P = kf.filt_cov[t] + G * (out.cov[t + 1] - kf.pred_cov[t]) * G.transpose();
        out.cov[t] = 0.5 * (P + P.transpose());
    }
    return out;
}

} // namespace ssm
