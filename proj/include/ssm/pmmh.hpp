#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

#include "ssm/apf.hpp"
#include "ssm/model.hpp"
#include "ssm/ukf.hpp"

namespace ssm {

// Chain coordinate layout: z = [x0 (sampling coords); theta (sampling
// coords)] under X0InChain, z = [theta] under X0InFilter. Sampling
// coordinates are log for positive parameters, so Gaussian random walks stay
// in-support there and the log-density Jacobian rides along in the prior.
inline Eigen::Index chain_dim(const ModelSpec& model) {
    return (model.factorization == Factorization::X0InChain ? model.n_x : 0) + model.n_theta;
}

struct ChainPoint {
    std::optional<VectorXd> x0; // natural coordinates; absent under X0InFilter
    VectorXd theta;             // natural coordinates
};

inline ChainPoint split_chain_state(const ModelSpec& model, const VectorXd& z) {
    ChainPoint p;
    if (model.factorization == Factorization::X0InChain) {
        p.x0 = model.x0_transform.to_natural(z.head(model.n_x));
        p.theta = model.theta_transform.to_natural(z.tail(model.n_theta));
    } else {
        p.theta = model.theta_transform.to_natural(z);
    }
    return p;
}

// Log prior over the chain state, Jacobian-corrected so the chain samples
// the posterior over the original (natural) parameters.
inline double chain_log_prior(const ModelSpec& model, const VectorXd& z) {
    const ChainPoint p = split_chain_state(model, z);
    double lp = model.theta_prior.logpdf(p.theta);
    if (!std::isfinite(lp)) return -std::numeric_limits<double>::infinity();
    if (model.factorization == Factorization::X0InChain) {
        const double lx = model.x0_prior.logpdf(*p.x0, p.theta);
        if (!std::isfinite(lx)) return -std::numeric_limits<double>::infinity();
        lp += lx + model.x0_transform.log_jacobian(z.head(model.n_x));
        lp += model.theta_transform.log_jacobian(z.tail(model.n_theta));
    } else {
        lp += model.theta_transform.log_jacobian(z);
    }
    return lp;
}

// Moment-matched prior belief over the chain state; used when no UKF
// initialization is requested.
inline GaussianBelief chain_prior_belief(const ModelSpec& model) {
    const GaussianBelief tb = model.theta_sampling_prior();
    if (model.factorization == Factorization::X0InFilter) return tb;
    const GaussianBelief xb = model.x0_belief(model.theta_transform.to_natural(tb.mean));
    GaussianBelief out;
    const Eigen::Index nx = xb.dim();
    const Eigen::Index nt = tb.dim();
    out.mean = VectorXd(nx + nt);
    out.mean << xb.mean, tb.mean;
    out.chol = MatrixXd::Zero(nx + nt, nx + nt);
    out.chol.topLeftCorner(nx, nx) = xb.chol;
    out.chol.bottomRightCorner(nt, nt) = tb.chol;
    return out;
}

// Chain-dimension marginal of the joint UKF's smoothed time-0 belief: the
// full (x0, theta) block under X0InChain, the theta block otherwise.
inline GaussianBelief chain_start_from_ukf(const ModelSpec& model, const JointUkfResult& ukf) {
    if (model.factorization == Factorization::X0InChain) return ukf.smoothed0;
    const Eigen::Index nt = model.n_theta;
    const MatrixXd cov = ukf.smoothed0.covariance();
    return GaussianBelief::from_moments(ukf.smoothed0.mean.tail(nt),
                                        cov.bottomRightCorner(nt, nt), 1e-12);
}

// A likelihood estimator at a chain point. APF-backed by default; the exact
// Kalman plug-in serves the linear-Gaussian validation paths.
struct LikelihoodEvaluator {
    std::function<LikelihoodEstimate(const std::optional<VectorXd>& x0, const VectorXd& theta,
                                     RngStream stream)>
        eval;
};

inline LikelihoodEvaluator make_apf_evaluator(ModelSpec model, MatrixXd y, ProposalScheme scheme,
                                              int m_particles, FilterOptions options = {}) {
    LikelihoodEvaluator ev;
    ev.eval = [model = std::move(model), y = std::move(y), scheme, m_particles,
               options](const std::optional<VectorXd>& x0, const VectorXd& theta,
                        RngStream stream) {
        return run_filter(model, scheme, m_particles, x0, theta, y, stream, options).estimate;
    };
    return ev;
}

inline LikelihoodEvaluator make_exact_evaluator(ModelSpec model, MatrixXd y) {
    if (!model.exact_loglik)
        throw std::invalid_argument("make_exact_evaluator: model has no exact likelihood");
    LikelihoodEvaluator ev;
    ev.eval = [model = std::move(model), y = std::move(y)](const std::optional<VectorXd>& x0,
                                                           const VectorXd& theta, RngStream) {
        LikelihoodEstimate est;
        est.log_likelihood = model.exact_loglik(x0 ? *x0 : VectorXd(), theta, y);
        est.per_time = VectorXd();
        return est;
    };
    return ev;
}

struct ChainSample {
    VectorXd z; // sampling coordinates
    double log_prior = 0.0;
    double log_likelihood = 0.0;
    bool accepted = false;
};

struct ChainSummary {
    int n_steps = 0;
    int accepted = 0;
    double acceptance_rate = 0.0;
    long long filter_runs = 0;          // evaluator invocations (incl. the initial one)
    long long oob_rejections = 0;       // proposals outside prior support, no filter run
    long long collapse_rejections = 0;  // -inf estimates at the proposal
    double runtime_seconds = 0.0;
};

struct ChainConfig {
    int n_steps = 1000;
    std::uint64_t seed = 0;
    int chain_id = 0;
    MatrixXd proposal_chol; // lower-triangular factor of the proposal covariance
    GaussianBelief start;
    int max_init_tries = 1000;
};

struct ChainResult {
    std::vector<ChainSample> samples;
    ChainSummary summary;
};

// One Metropolis-Hastings step with a symmetric Gaussian random walk (the
// proposal densities cancel in the ratio). The stored likelihood at the
// current point is never recomputed; proposals off the prior support are
// rejected without running the filter.
inline ChainSample mh_step(const ModelSpec& model, const ChainSample& current,
                           const MatrixXd& proposal_chol, const LikelihoodEvaluator& evaluator,
                           RngStream step_stream, ChainSummary& tally) {
    ChainSample next = current;
    next.accepted = false;
    RngStream ps = step_stream.child(0);
    const VectorXd xi = ps.normal_vector(current.z.size());
    const VectorXd zp = current.z + proposal_chol * xi;
    const double lp = chain_log_prior(model, zp);
    if (!std::isfinite(lp)) {
        ++tally.oob_rejections;
        return next;
    }
    const ChainPoint point = split_chain_state(model, zp);
    const LikelihoodEstimate est = evaluator.eval(point.x0, point.theta, step_stream.child(1));
    ++tally.filter_runs;
    if (!std::isfinite(est.log_likelihood)) {
        ++tally.collapse_rejections;
        return next;
    }
    const double log_ratio =
        (lp + est.log_likelihood) - (current.log_prior + current.log_likelihood);
    RngStream as = step_stream.child(2);
    if (std::log(as.uniform()) < log_ratio) {
        next.z = zp;
        next.log_prior = lp;
        next.log_likelihood = est.log_likelihood;
        next.accepted = true;
    }
    return next;
}

inline ChainResult run_chain(const ModelSpec& model, const LikelihoodEvaluator& evaluator,
                             const ChainConfig& config) {
    if (config.proposal_chol.rows() != chain_dim(model))
        throw std::invalid_argument("run_chain: proposal covariance dimension mismatch");
    const auto t0 = std::chrono::steady_clock::now();
    RngStream chain = RngStream(config.seed).child(static_cast<std::uint64_t>(config.chain_id));

    ChainResult out;
    out.samples.reserve(static_cast<std::size_t>(config.n_steps) + 1);

    RngStream init = chain.child(0);
    ChainSample first;
    bool found = false;
    for (int attempt = 0; attempt < config.max_init_tries; ++attempt) {
        first.z = config.start.sample(init);
        first.log_prior = chain_log_prior(model, first.z);
        if (std::isfinite(first.log_prior)) {
            found = true;
            break;
        }
    }
    if (!found)
        throw std::runtime_error("run_chain: could not draw a start inside the prior support");
    const ChainPoint point = split_chain_state(model, first.z);
    first.log_likelihood = evaluator.eval(point.x0, point.theta, chain.child(1)).log_likelihood;
    out.summary.filter_runs = 1;
    out.samples.push_back(first);

    for (int s = 1; s <= config.n_steps; ++s) {
        out.samples.push_back(mh_step(model, out.samples.back(), config.proposal_chol, evaluator,
                                      chain.child(1 + static_cast<std::uint64_t>(s)),
                                      out.summary));
        if (out.samples.back().accepted) ++out.summary.accepted;
    }
    out.summary.n_steps = config.n_steps;
    out.summary.acceptance_rate =
        config.n_steps > 0 ? static_cast<double>(out.summary.accepted) / config.n_steps : 0.0;
    out.summary.runtime_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

struct ScaleTuneOptions {
    double target = 0.23;
    double band = 0.10;
    int pilot_steps = 500;
    int max_halvings = 4;
};

struct ScaleTuneResult {
    double scale = 0.0;
    int halvings = 0;
    std::vector<double> acceptance;
    bool in_band = false;
};

// Pilot-run scale selection: starting from the rule-of-thumb 2.4^2 / d, the
// scale is halved (up to max_halvings times) until a pilot chain's
// acceptance rate lands within band of the target; if none lands, the
// smallest scale is returned with in_band = false.
inline ScaleTuneResult tune_scale(const ModelSpec& model, const MatrixXd& base_cov,
                                  const LikelihoodEvaluator& evaluator,
                                  const GaussianBelief& start, std::uint64_t seed,
                                  const ScaleTuneOptions& options = {}) {
    const double d = static_cast<double>(chain_dim(model));
    ScaleTuneResult out;
    for (int k = 0; k <= options.max_halvings; ++k) {
        const double scale = (2.4 * 2.4 / d) * std::pow(2.0, -k);
        ChainConfig cfg;
        cfg.n_steps = options.pilot_steps;
        cfg.seed = seed;
        cfg.chain_id = k;
        cfg.proposal_chol = CholeskyFactor::from_covariance(scale * base_cov).L;
        cfg.start = start;
        const ChainResult pilot = run_chain(model, evaluator, cfg);
        out.acceptance.push_back(pilot.summary.acceptance_rate);
        out.scale = scale;
        out.halvings = k;
        if (std::abs(pilot.summary.acceptance_rate - options.target) <= options.band) {
            out.in_band = true;
            return out;
        }
    }
    return out;
}

} // namespace ssm
