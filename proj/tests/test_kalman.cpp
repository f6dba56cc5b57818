#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "ssm/kalman.hpp"
#include "ssm/random.hpp"

using Eigen::MatrixXd;
using Eigen::VectorXd;
using ssm::LinearGaussianSystem;
using ssm::RngStream;

namespace {

// Brute-force oracle: assemble the explicit joint Gaussian over
// (z_0..z_T, y_1..y_T) as an affine map of the base variables
// (z_0, w_{1:T}, e_{1:T}) and condition the state block on the observations
// by plain block algebra. Independent of the Kalman recursion under test.
struct JointOracle {
    VectorXd mean;
    MatrixXd cov;
    Eigen::Index nz, ny, T;

    JointOracle(const LinearGaussianSystem& sys, Eigen::Index horizon) {
        nz = sys.A.rows();
        ny = sys.H.rows();
        T = horizon;
        const Eigen::Index base = nz + T * (nz + ny); // z0, w_1..w_T, e_1..e_T
        const Eigen::Index out = (T + 1) * nz + T * ny;
        MatrixXd map = MatrixXd::Zero(out, base);
        VectorXd off = VectorXd::Zero(out);
        // rows [t*nz, (t+1)*nz) hold z_t; rows after (T+1)*nz hold y_t.
        map.block(0, 0, nz, nz).setIdentity();
        off.head(nz) = VectorXd::Zero(nz);
        for (Eigen::Index t = 1; t <= T; ++t) {
            const auto prev = map.block((t - 1) * nz, 0, nz, base);
            map.block(t * nz, 0, nz, base) = sys.A * prev;
            map.block(t * nz, nz + (t - 1) * nz, nz, nz) += sys.Lq;
            off.segment(t * nz, nz) = sys.A * off.segment((t - 1) * nz, nz) + sys.b;
            const Eigen::Index yrow = (T + 1) * nz + (t - 1) * ny;
            map.block(yrow, 0, ny, base) = sys.H * map.block(t * nz, 0, nz, base);
            map.block(yrow, nz + T * nz + (t - 1) * ny, ny, ny) += sys.Lr;
            off.segment(yrow, ny) = sys.H * off.segment(t * nz, nz) + sys.d;
        }
        VectorXd base_mean = VectorXd::Zero(base);
        base_mean.head(nz) = sys.m0;
        MatrixXd base_cov = MatrixXd::Identity(base, base);
        base_cov.topLeftCorner(nz, nz) = sys.P0chol * sys.P0chol.transpose();
        mean = map * base_mean + off;
        cov = map * base_cov * map.transpose();
    }

    double log_marginal(const MatrixXd& y) const {
        const Eigen::Index zdim = (T + 1) * nz;
        const Eigen::Index ydim = T * ny;
        VectorXd yv(ydim);
        for (Eigen::Index t = 0; t < T; ++t) yv.segment(t * ny, ny) = y.col(t);
        const MatrixXd s = cov.bottomRightCorner(ydim, ydim);
        const VectorXd r = yv - mean.tail(ydim);
        Eigen::LLT<MatrixXd> llt(s);
        const VectorXd alpha = llt.solve(r);
        double log_det = 0.0;
        const MatrixXd l = llt.matrixL();
        for (Eigen::Index i = 0; i < ydim; ++i) log_det += std::log(l(i, i));
        (void)zdim;
        return -0.5 * static_cast<double>(ydim) * std::log(2.0 * std::numbers::pi) - log_det -
               0.5 * r.dot(alpha);
    }

    // Posterior mean/cov of z_t given all observations.
    std::pair<VectorXd, MatrixXd> posterior(Eigen::Index t, const MatrixXd& y) const {
        const Eigen::Index zdim = (T + 1) * nz;
        const Eigen::Index ydim = T * ny;
        VectorXd yv(ydim);
        for (Eigen::Index s = 0; s < T; ++s) yv.segment(s * ny, ny) = y.col(s);
        const MatrixXd syy = cov.bottomRightCorner(ydim, ydim);
        const MatrixXd szy = cov.block(t * nz, zdim, nz, ydim);
        Eigen::LLT<MatrixXd> llt(syy);
        const MatrixXd gain = llt.solve(szy.transpose()).transpose();
        const VectorXd m = mean.segment(t * nz, nz) + gain * (yv - mean.tail(ydim));
        const MatrixXd p = cov.block(t * nz, t * nz, nz, nz) - gain * szy.transpose();
        return {m, p};
    }
};

LinearGaussianSystem random_system(RngStream& s, int nz, int ny) {
    LinearGaussianSystem sys;
    sys.A = 0.5 * MatrixXd::NullaryExpr(nz, nz, [&](Eigen::Index, Eigen::Index) { return s.normal(); });
    sys.b = VectorXd::NullaryExpr(nz, [&](Eigen::Index) { return s.normal(); });
    MatrixXd q = MatrixXd::NullaryExpr(nz, nz, [&](Eigen::Index, Eigen::Index) { return s.normal(); });
    sys.Lq = MatrixXd((0.3 * q * q.transpose() + 0.2 * MatrixXd::Identity(nz, nz)).llt().matrixL());
    sys.H = MatrixXd::NullaryExpr(ny, nz, [&](Eigen::Index, Eigen::Index) { return s.normal(); });
    sys.d = VectorXd::NullaryExpr(ny, [&](Eigen::Index) { return s.normal(); });
    sys.Lr = MatrixXd(0.4 * MatrixXd::Identity(ny, ny));
    sys.m0 = VectorXd::NullaryExpr(nz, [&](Eigen::Index) { return s.normal(); });
    MatrixXd p = MatrixXd::NullaryExpr(nz, nz, [&](Eigen::Index, Eigen::Index) { return s.normal(); });
    sys.P0chol = MatrixXd((0.5 * p * p.transpose() + 0.1 * MatrixXd::Identity(nz, nz)).llt().matrixL());
    return sys;
}

} // namespace

TEST_CASE("Kalman filter and smoother match the joint-Gaussian oracle", "[kalman]") {
    RngStream s(21);
    for (int rep = 0; rep < 5; ++rep) {
        const int nz = 1 + rep % 3;
        const int ny = 1 + rep % 2;
        const int T = 4;
        const LinearGaussianSystem sys = random_system(s, nz, ny);
        MatrixXd y(ny, T);
        for (int t = 0; t < T; ++t) y.col(t) = s.normal_vector(ny);

        const JointOracle oracle(sys, T);
        const auto kf = ssm::kalman_filter(sys, y);
        CHECK(kf.log_likelihood == Catch::Approx(oracle.log_marginal(y)).margin(1e-8));

        const auto [mT, pT] = oracle.posterior(T, y);
        CHECK((kf.filt_mean.back() - mT).norm() < 1e-8);
        CHECK((kf.filt_cov.back() - pT).norm() < 1e-8);

        const auto smooth = ssm::rts_smoother(sys, kf);
        for (int t = 0; t <= T; ++t) {
            const auto [mt, pt] = oracle.posterior(t, y);
            CHECK((smooth.mean[static_cast<std::size_t>(t)] - mt).norm() < 1e-8);
            CHECK((smooth.cov[static_cast<std::size_t>(t)] - pt).norm() < 1e-8);
        }
    }
}

TEST_CASE("Kalman likelihood with a point x0 handles the zero-covariance start", "[kalman]") {
    RngStream s(22);
    LinearGaussianSystem sys = random_system(s, 1, 1);
    sys.P0chol.setZero();
    MatrixXd y(1, 3);
    y << 0.1, -0.2, 0.4;
    const JointOracle oracle(sys, 3);
    CHECK(ssm::kalman_filter(sys, y).log_likelihood ==
          Catch::Approx(oracle.log_marginal(y)).margin(1e-9));
}
