#pragma once

#include <cmath>
#include <limits>
#include <numbers>

#include "ssm/kalman.hpp"
#include "ssm/model.hpp"

namespace ssm {

// Scalar linear-Gaussian test model with tractable likelihood:
//   x_t = a x_{t-1} + theta + q u_t,   y_t = x_t + r e_t,
// theta ~ N(theta_mean, theta_sd^2), x_0 ~ N(m0, s0^2). Used to validate the
// particle filter and PMMH against exact Kalman computations.
struct LinearGaussianOptions {
    double a = 0.9;
    double q = 0.5;
    double r = 0.3;
    double m0 = 0.0;
    double s0 = 1.0;
    double theta_mean = 0.0;
    double theta_sd = 1.0;
    int horizon = 50;
};

inline LinearGaussianSystem linear_gaussian_system(const LinearGaussianOptions& o, double x0,
                                                   double theta) {
    LinearGaussianSystem sys;
    sys.A = MatrixXd::Constant(1, 1, o.a);
    sys.b = VectorXd::Constant(1, theta);
    sys.Lq = MatrixXd::Constant(1, 1, o.q);
    sys.H = MatrixXd::Identity(1, 1);
    sys.d = VectorXd::Zero(1);
    sys.Lr = MatrixXd::Constant(1, 1, o.r);
    sys.m0 = VectorXd::Constant(1, x0);
    sys.P0chol = MatrixXd::Zero(1, 1);
    return sys;
}

inline ModelSpec make_linear_gaussian_model(const LinearGaussianOptions& opts = {}) {
    ModelSpec m;
    m.name = "linear_gaussian_test";
    m.n_x = 1;
    m.n_u = 1;
    m.n_theta = 1;
    m.n_y = 1;
    m.default_horizon = opts.horizon;
    m.factorization = Factorization::X0InChain;

    m.transition = [opts](const VectorXd& u, const VectorXd& x, const VectorXd& theta) {
        VectorXd out(1);
        out << opts.a * x[0] + theta[0] + opts.q * u[0];
        return out;
    };
    const auto normal_logpdf = [](double y, double mean, double sd) {
        const double z = (y - mean) / sd;
        return -std::log(sd) - 0.5 * std::log(2.0 * std::numbers::pi) - 0.5 * z * z;
    };
    m.obs_logdensity = [opts, normal_logpdf](const VectorXd& y, const VectorXd& x,
                                             const VectorXd&) {
        if (!std::isfinite(x[0])) return -std::numeric_limits<double>::infinity();
        return normal_logpdf(y[0], x[0], opts.r);
    };
    m.obs_mean = [](const VectorXd& x, const VectorXd&) { return x; };
    m.obs_sample = [opts](const VectorXd& x, const VectorXd&, RngStream& stream) {
        VectorXd y(1);
        y << x[0] + opts.r * stream.normal();
        return y;
    };

    m.theta_prior.sample = [opts](RngStream& stream) {
        VectorXd t(1);
        t << opts.theta_mean + opts.theta_sd * stream.normal();
        return t;
    };
    m.theta_prior.logpdf = [opts, normal_logpdf](const VectorXd& t) {
        return normal_logpdf(t[0], opts.theta_mean, opts.theta_sd);
    };
    m.x0_prior.sample = [opts](const VectorXd&, RngStream& stream) {
        VectorXd x(1);
        x << opts.m0 + opts.s0 * stream.normal();
        return x;
    };
    m.x0_prior.logpdf = [opts, normal_logpdf](const VectorXd& x, const VectorXd&) {
        return normal_logpdf(x[0], opts.m0, opts.s0);
    };

    m.gauss_obs.mean = [](const VectorXd& x, const VectorXd&) { return x; };
    m.gauss_obs.noise_chol = [opts](const VectorXd&) {
        return MatrixXd::Constant(1, 1, opts.r);
    };
    m.gauss_obs.to_gauss = [](const VectorXd& y) { return y; };
    m.gauss_obs.log_jacobian = [](const VectorXd&) { return 0.0; };

    m.x0_belief = [opts](const VectorXd&) {
        GaussianBelief b;
        b.mean = VectorXd::Constant(1, opts.m0);
        b.chol = MatrixXd::Constant(1, 1, opts.s0);
        return b;
    };
    m.theta_sampling_prior = [opts]() {
        GaussianBelief b;
        b.mean = VectorXd::Constant(1, opts.theta_mean);
        b.chol = MatrixXd::Constant(1, 1, opts.theta_sd);
        return b;
    };
    m.theta_transform = ParamTransform::identity(1);
    m.x0_transform = ParamTransform::identity(1);

    m.exact_loglik = [opts](const VectorXd& x0, const VectorXd& theta, const MatrixXd& y) {
        return kalman_filter(linear_gaussian_system(opts, x0[0], theta[0]), y).log_likelihood;
    };

    m.metadata = {{"integrator", "exact"},
                  {"state_order", "x"},
                  {"theta_order", "shift"}};
    return m;
}

} // namespace ssm
