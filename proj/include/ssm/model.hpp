#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ssm/linalg.hpp"
#include "ssm/random.hpp"

namespace ssm {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace detail {

inline double normal_logpdf(double y, double mean, double sd) {
    const double z = (y - mean) / sd;
    return -std::log(sd) - 0.5 * std::log(2.0 * std::numbers::pi) - 0.5 * z * z;
}

inline double lognormal_logpdf(double y, double log_mean, double sd) {
    return normal_logpdf(std::log(y), log_mean, sd) - std::log(y);
}

} // namespace detail

// Which factor of the target the particle filter owns: either x0 is
// importance-sampled inside the filter, or it is a coordinate of the outer
// chain and the filter conditions on it.
enum class Factorization { X0InFilter, X0InChain };

// Gaussian belief: mean plus lower-triangular Cholesky factor of the
// covariance. The factor may be semi-definite (zero columns) for point
// beliefs fed into the unscented transform.
struct GaussianBelief {
    VectorXd mean;
    MatrixXd chol;

    Eigen::Index dim() const { return mean.size(); }

    MatrixXd covariance() const { return chol * chol.transpose(); }

    static GaussianBelief standard(Eigen::Index n) {
        return {VectorXd::Zero(n), MatrixXd::Identity(n, n)};
    }

    static GaussianBelief point(VectorXd mean) {
        const Eigen::Index n = mean.size();
        return {std::move(mean), MatrixXd::Zero(n, n)};
    }

    // Factor a covariance, flooring the diagonal at diag_floor. Belief
    // recursions pass a tiny floor so degenerate directions (e.g. a
    // zero-noise-scale coordinate) do not kill the factorization.
    static GaussianBelief from_moments(const VectorXd& mean, const MatrixXd& cov,
                                       double diag_floor = 0.0) {
        MatrixXd sym = 0.5 * (cov + cov.transpose());
        if (diag_floor > 0.0) sym.diagonal().array() += diag_floor;
        auto f = CholeskyFactor::try_from_covariance(sym);
        if (!f) throw NonPositiveDefiniteError("GaussianBelief: covariance not positive definite");
        return {mean, std::move(f->L)};
    }

    VectorXd sample(RngStream& stream) const {
        return mean + chol * stream.normal_vector(dim());
    }

    double log_density(const VectorXd& x) const {
        const VectorXd r = chol.triangularView<Eigen::Lower>().solve(x - mean);
        double log_det = 0.0;
        for (Eigen::Index i = 0; i < chol.rows(); ++i) log_det += std::log(chol(i, i));
        return -0.5 * static_cast<double>(dim()) * std::log(2.0 * std::numbers::pi) - log_det -
               0.5 * r.squaredNorm();
    }
};

// Per-coordinate sampling transform for chain parameters: positive
// parameters are sampled on the log scale, everything else untransformed.
// log_jacobian is log|d natural / d sampling| so that densities over natural
// coordinates can be carried into sampling space.
struct ParamTransform {
    std::vector<bool> log_scale;

    Eigen::Index dim() const { return static_cast<Eigen::Index>(log_scale.size()); }

    static ParamTransform identity(Eigen::Index n) {
        return {std::vector<bool>(static_cast<std::size_t>(n), false)};
    }
    static ParamTransform all_log(Eigen::Index n) {
        return {std::vector<bool>(static_cast<std::size_t>(n), true)};
    }

    VectorXd to_sampling(const VectorXd& natural) const {
        VectorXd s = natural;
        for (Eigen::Index i = 0; i < s.size(); ++i)
            if (log_scale[static_cast<std::size_t>(i)]) s[i] = std::log(natural[i]);
        return s;
    }

    VectorXd to_natural(const VectorXd& sampling) const {
        VectorXd x = sampling;
        for (Eigen::Index i = 0; i < x.size(); ++i)
            if (log_scale[static_cast<std::size_t>(i)]) x[i] = std::exp(sampling[i]);
        return x;
    }

    double log_jacobian(const VectorXd& sampling) const {
        double j = 0.0;
        for (Eigen::Index i = 0; i < sampling.size(); ++i)
            if (log_scale[static_cast<std::size_t>(i)]) j += sampling[i];
        return j;
    }
};

// Prior over theta.
struct Prior {
    std::function<VectorXd(RngStream&)> sample;
    std::function<double(const VectorXd&)> logpdf; // -inf outside support
};

// Prior over x0, possibly conditional on theta.
struct StatePrior {
    std::function<VectorXd(const VectorXd& theta, RngStream&)> sample;
    std::function<double(const VectorXd& x0, const VectorXd& theta)> logpdf;
};

// Observation written as z = mean(x, theta) + noise_chol(theta) * eps in a
// conditioning space, with z = to_gauss(y). The UKF-informed proposal schemes
// condition Gaussian beliefs in this space; log_jacobian(y) = log|dz/dy|
// turns the Gaussian predictive into a density over y itself.
struct GaussianObservation {
    std::function<VectorXd(const VectorXd& x, const VectorXd& theta)> mean;
    std::function<MatrixXd(const VectorXd& theta)> noise_chol;
    std::function<VectorXd(const VectorXd& y)> to_gauss;
    std::function<double(const VectorXd& y)> log_jacobian;
};

// A state-space model collapsed to its noise terms: x_t = transition(u_t,
// x_{t-1}, theta) with u_t ~ N(0, I_{n_u}) a priori. The transition is
// deterministic; all stochasticity enters through u.
struct ModelSpec {
    std::string name;
    int n_x = 0;
    int n_u = 0;
    int n_theta = 0;
    int n_y = 0;
    int default_horizon = 100;
    Factorization factorization = Factorization::X0InChain;

    std::function<VectorXd(const VectorXd& u, const VectorXd& x, const VectorXd& theta)> transition;
    std::function<double(const VectorXd& y, const VectorXd& x, const VectorXd& theta)>
        obs_logdensity;
    std::function<VectorXd(const VectorXd& x, const VectorXd& theta)> obs_mean;
    std::function<VectorXd(const VectorXd& x, const VectorXd& theta, RngStream&)> obs_sample;

    Prior theta_prior;
    StatePrior x0_prior;
    GaussianObservation gauss_obs;

    // Coordinates in which Gaussian beliefs over the state are maintained
    // (log coordinates for positive concentrations). Identity by default.
    std::function<VectorXd(const VectorXd& x)> x_to_belief;
    std::function<VectorXd(const VectorXd& xb)> belief_to_x;

    // Moment-matched Gaussian priors used to seed UKF recursions: over the
    // state in belief coordinates (given theta) and over theta in sampling
    // coordinates.
    std::function<GaussianBelief(const VectorXd& theta)> x0_belief;
    std::function<GaussianBelief()> theta_sampling_prior;

    ParamTransform theta_transform;
    ParamTransform x0_transform;

    // Exact likelihood, available only for the linear-Gaussian test model.
    std::function<double(const VectorXd& x0, const VectorXd& theta, const MatrixXd& y)>
        exact_loglik;

    // Provenance that survives into output manifests (integrator, step,
    // noise ordering, ...).
    std::map<std::string, std::string> metadata;

    VectorXd to_belief(const VectorXd& x) const { return x_to_belief ? x_to_belief(x) : x; }
    VectorXd from_belief(const VectorXd& xb) const { return belief_to_x ? belief_to_x(xb) : xb; }
};

// Recover the state trajectory x_{1:t} from x0 and the noise sequence by
// recursive application of the transition map.
inline std::vector<VectorXd> noise_to_state(const ModelSpec& model, const VectorXd& x0,
                                            const VectorXd& theta,
                                            const std::vector<VectorXd>& u_seq) {
    if (x0.size() != model.n_x)
        throw std::invalid_argument("noise_to_state: x0 has dimension " + std::to_string(x0.size()) +
                                    ", expected " + std::to_string(model.n_x));
    if (theta.size() != model.n_theta)
        throw std::invalid_argument("noise_to_state: theta has dimension " +
                                    std::to_string(theta.size()) + ", expected " +
                                    std::to_string(model.n_theta));
    std::vector<VectorXd> path;
    path.reserve(u_seq.size());
    VectorXd x = x0;
    for (std::size_t s = 0; s < u_seq.size(); ++s) {
        if (u_seq[s].size() != model.n_u)
            throw std::invalid_argument("noise_to_state: u[" + std::to_string(s) +
                                        "] has dimension " + std::to_string(u_seq[s].size()) +
                                        ", expected " + std::to_string(model.n_u));
        x = model.transition(u_seq[s], x, theta);
        path.push_back(x);
    }
    return path;
}

} // namespace ssm
