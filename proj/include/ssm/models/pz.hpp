#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "ssm/model.hpp"

namespace ssm {

// Phytoplankton-zooplankton predator-prey model. State x = (P, Z, alpha):
// concentrations plus the stochastic growth rate redrawn daily as
// alpha = mu + sigma * u. Dynamics over one day:
//   dP/dt = alpha P - c P Z
//   dZ/dt = e c P Z - m_l Z - m_q Z^2
// Parameters theta = (mu, sigma) with uniform priors on [0,1] x [0,0.5];
// P observed with log-normal noise (sd 0.2 on ln P).
struct PzOptions {
    double c = 0.25;
    double e = 0.3;
    double m_l = 0.1;
    double m_q = 0.1;
    double obs_sd = 0.2;
    double ln_p0_mean = std::numbers::ln2;
    double ln_p0_sd = 0.2;
    double ln_z0_mean = std::numbers::ln2;
    double ln_z0_sd = 0.1;
    double substep = 0.1; // RK4 step in days inside the one-day transition
};

// One day of PZ dynamics with alpha fixed; integrates (ln P, ln Z) so the
// trajectory stays positive for positive starts. P = 0 is an absorbing
// boundary and flows through as ln P = -inf.
inline void pz_advance_day(double& p, double& z, double alpha, const PzOptions& o) {
    double lp = std::log(p);
    double lz = std::log(z);
    const double h = o.substep;
    const int n = static_cast<int>(std::lround(1.0 / h));
    const auto rhs = [&](double a, double b, double& da, double& db) {
        const double pp = std::exp(a);
        const double zz = std::exp(b);
        da = alpha - o.c * zz;
        db = o.e * o.c * pp - o.m_l - o.m_q * zz;
    };
    for (int s = 0; s < n; ++s) {
        double k1p, k1z, k2p, k2z, k3p, k3z, k4p, k4z;
        rhs(lp, lz, k1p, k1z);
        rhs(lp + 0.5 * h * k1p, lz + 0.5 * h * k1z, k2p, k2z);
        rhs(lp + 0.5 * h * k2p, lz + 0.5 * h * k2z, k3p, k3z);
        rhs(lp + h * k3p, lz + h * k3z, k4p, k4z);
        lp += h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
        lz += h / 6.0 * (k1z + 2.0 * k2z + 2.0 * k3z + k4z);
    }
    p = std::exp(lp);
    z = std::exp(lz);
}

inline VectorXd pz_transition(const VectorXd& u, const VectorXd& x, const VectorXd& theta,
                              const PzOptions& o) {
    const double alpha = theta[0] + theta[1] * u[0];
    double p = x[0];
    double z = x[1];
    pz_advance_day(p, z, alpha, o);
    VectorXd out(3);
    out << p, z, alpha;
    return out;
}

inline double pz_obs_logdensity(const VectorXd& y, const VectorXd& x, const PzOptions& o) {
    if (!(y[0] > 0.0)) throw std::invalid_argument("pz_obs_logdensity: observation must be > 0");
    if (!(x[0] > 0.0) || !std::isfinite(x[0]))
        return -std::numeric_limits<double>::infinity();
    return detail::lognormal_logpdf(y[0], std::log(x[0]), o.obs_sd);
}

inline ModelSpec make_pz_model(const PzOptions& opts = {}) {
    ModelSpec m;
    m.name = "pz";
    m.n_x = 3;
    m.n_u = 1;
    m.n_theta = 2;
    m.n_y = 1;
    m.default_horizon = 100;
    m.factorization = Factorization::X0InFilter;

    m.transition = [opts](const VectorXd& u, const VectorXd& x, const VectorXd& theta) {
        return pz_transition(u, x, theta, opts);
    };
    m.obs_logdensity = [opts](const VectorXd& y, const VectorXd& x, const VectorXd&) {
        return pz_obs_logdensity(y, x, opts);
    };
    m.obs_mean = [](const VectorXd& x, const VectorXd&) {
        VectorXd y(1);
        y << x[0];
        return y;
    };
    m.obs_sample = [opts](const VectorXd& x, const VectorXd&, RngStream& stream) {
        VectorXd y(1);
        y << std::exp(std::log(x[0]) + opts.obs_sd * stream.normal());
        return y;
    };

    m.theta_prior.sample = [](RngStream& stream) {
        VectorXd t(2);
        t << stream.uniform(), 0.5 * stream.uniform();
        return t;
    };
    m.theta_prior.logpdf = [](const VectorXd& t) {
        if (t[0] < 0.0 || t[0] > 1.0 || t[1] < 0.0 || t[1] > 0.5)
            return -std::numeric_limits<double>::infinity();
        return std::numbers::ln2; // 1 / (1 * 0.5)
    };

    // alpha_0 is a bookkeeping slot (every transition overwrites it); it is
    // pinned to mu and carries no prior mass.
    m.x0_prior.sample = [opts](const VectorXd& theta, RngStream& stream) {
        VectorXd x(3);
        x << std::exp(opts.ln_p0_mean + opts.ln_p0_sd * stream.normal()),
            std::exp(opts.ln_z0_mean + opts.ln_z0_sd * stream.normal()), theta[0];
        return x;
    };
    m.x0_prior.logpdf = [opts](const VectorXd& x, const VectorXd&) {
        if (!(x[0] > 0.0) || !(x[1] > 0.0)) return -std::numeric_limits<double>::infinity();
        return detail::lognormal_logpdf(x[0], opts.ln_p0_mean, opts.ln_p0_sd) +
               detail::lognormal_logpdf(x[1], opts.ln_z0_mean, opts.ln_z0_sd);
    };

    m.gauss_obs.mean = [](const VectorXd& x, const VectorXd&) {
        VectorXd z(1);
        z << std::log(x[0]);
        return z;
    };
    m.gauss_obs.noise_chol = [opts](const VectorXd&) {
        MatrixXd r(1, 1);
        r << opts.obs_sd;
        return r;
    };
    m.gauss_obs.to_gauss = [](const VectorXd& y) {
        VectorXd z(1);
        z << std::log(y[0]);
        return z;
    };
    m.gauss_obs.log_jacobian = [](const VectorXd& y) { return -std::log(y[0]); };

    m.x_to_belief = [](const VectorXd& x) {
        VectorXd b(3);
        b << std::log(x[0]), std::log(x[1]), x[2];
        return b;
    };
    m.belief_to_x = [](const VectorXd& b) {
        VectorXd x(3);
        x << std::exp(b[0]), std::exp(b[1]), b[2];
        return x;
    };
    m.x0_belief = [opts](const VectorXd& theta) {
        GaussianBelief b;
        b.mean = VectorXd(3);
        b.mean << opts.ln_p0_mean, opts.ln_z0_mean, theta[0];
        b.chol = MatrixXd::Zero(3, 3);
        b.chol.diagonal() << opts.ln_p0_sd, opts.ln_z0_sd, std::max(theta[1], 1e-6);
        return b;
    };
    m.theta_sampling_prior = []() {
        GaussianBelief b;
        b.mean = VectorXd(2);
        b.mean << 0.5, 0.25;
        b.chol = MatrixXd::Zero(2, 2);
        const double s = 1.0 / std::sqrt(12.0);
        b.chol.diagonal() << s, 0.5 * s;
        return b;
    };
    m.theta_transform = ParamTransform::identity(2);
    m.x0_transform = ParamTransform{{true, true, false}};

    m.metadata = {{"integrator", "rk4"},
                  {"integrator_step_days", "0.1"},
                  {"noise", "daily growth rate alpha = mu + sigma*u, constant within the day"},
                  {"state_order", "P,Z,alpha"},
                  {"theta_order", "mu,sigma"}};
    return m;
}

} // namespace ssm
