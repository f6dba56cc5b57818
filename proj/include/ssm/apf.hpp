#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ssm/errors.hpp"
#include "ssm/linalg.hpp"
#include "ssm/model.hpp"
#include "ssm/thread_pool.hpp"
#include "ssm/ukf.hpp"

namespace ssm {

// The six proposal schemes: bootstrap (PF), marginal-UKF (MUPF) and
// per-particle conditional-UKF (CUPF) stage-two proposals, each without (*0)
// or with (*1) a stage-one look-behind.
enum class ProposalScheme { PF0, PF1, MUPF0, MUPF1, CUPF0, CUPF1 };

inline const char* to_string(ProposalScheme s) {
    switch (s) {
        case ProposalScheme::PF0: return "PF0";
        case ProposalScheme::PF1: return "PF1";
        case ProposalScheme::MUPF0: return "MUPF0";
        case ProposalScheme::MUPF1: return "MUPF1";
        case ProposalScheme::CUPF0: return "CUPF0";
        case ProposalScheme::CUPF1: return "CUPF1";
    }
    return "?";
}

inline ProposalScheme parse_scheme(const std::string& name) {
    for (ProposalScheme s : {ProposalScheme::PF0, ProposalScheme::PF1, ProposalScheme::MUPF0,
                             ProposalScheme::MUPF1, ProposalScheme::CUPF0, ProposalScheme::CUPF1})
        if (name == to_string(s)) return s;
    throw std::invalid_argument("unknown proposal scheme: " + name);
}

inline bool scheme_is_mupf(ProposalScheme s) {
    return s == ProposalScheme::MUPF0 || s == ProposalScheme::MUPF1;
}
inline bool scheme_is_cupf(ProposalScheme s) {
    return s == ProposalScheme::CUPF0 || s == ProposalScheme::CUPF1;
}
inline bool scheme_has_pilot(ProposalScheme s) {
    return s == ProposalScheme::PF1 || s == ProposalScheme::MUPF1;
}
inline bool scheme_has_lookbehind(ProposalScheme s) {
    return scheme_has_pilot(s) || s == ProposalScheme::CUPF1;
}

enum class ResampleKind { Multinomial, Stratified, Systematic };

struct FilterOptions {
    bool store_history = false;
    UtParams ut{};
    int workers = 1;
    ResampleKind resample = ResampleKind::Multinomial;
    // Test hook: pin MUPF/CUPF proposals to the prior N(0, I), which must
    // reduce them to PF0 under matched streams.
    bool force_prior_proposal = false;
};

struct ParticleSystem {
    MatrixXd states;      // n_x x M
    MatrixXd noise;       // n_u x M, the last draws
    VectorXd stage_one;   // omega (on the shifted pilot scale)
    VectorXd log_weights; // ln w (shifted)
    VectorXd normalized;  // \tilde w, sums to 1
    std::vector<int> ancestors;
};

struct LikelihoodEstimate {
    double log_likelihood = 0.0;
    VectorXd per_time;
    bool collapsed = false;
    int collapse_time = -1; // 1-based time of collapse
};

struct FilterHistory {
    std::vector<MatrixXd> states;
    std::vector<MatrixXd> noise;
    std::vector<std::vector<int>> ancestors;
};

struct FilterResult {
    LikelihoodEstimate estimate;
    ParticleSystem particles;
    FilterHistory history;
    int ukf_fallbacks = 0;
    long long propagations = 0;
};

// Multinomial ancestors: P(a^m = j) = w_j / sum w. Sequential draws from the
// supplied stream, so a fixed stream fixes the ancestor vector.
inline std::vector<int> resample_multinomial(const VectorXd& weights, int m, RngStream& stream) {
    const double total = weights.sum();
    if (!(total > 0.0)) throw FilterCollapseError("resample: all weights zero");
    VectorXd cdf(weights.size());
    double acc = 0.0;
    for (Eigen::Index i = 0; i < weights.size(); ++i) {
        acc += weights[i];
        cdf[i] = acc;
    }
    std::vector<int> ancestors(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
        const double v = stream.uniform() * total;
        const auto it = std::upper_bound(cdf.data(), cdf.data() + cdf.size(), v);
        ancestors[static_cast<std::size_t>(i)] =
            static_cast<int>(std::min<std::ptrdiff_t>(it - cdf.data(), cdf.size() - 1));
    }
    return ancestors;
}

inline std::vector<int> resample_quasi(const VectorXd& weights, int m, RngStream& stream,
                                       bool stratified) {
    const double total = weights.sum();
    if (!(total > 0.0)) throw FilterCollapseError("resample: all weights zero");
    std::vector<int> ancestors(static_cast<std::size_t>(m));
    double acc = weights[0];
    Eigen::Index j = 0;
    const double base = stratified ? 0.0 : stream.uniform();
    for (int i = 0; i < m; ++i) {
        const double offset = stratified ? stream.uniform() : base;
        const double v = (static_cast<double>(i) + offset) / static_cast<double>(m) * total;
        while (v > acc && j + 1 < weights.size()) acc += weights[++j];
        ancestors[static_cast<std::size_t>(i)] = static_cast<int>(j);
    }
    return ancestors;
}

// ln upsilon = ln|L| + (xi^T xi - u^T u) / 2: the prior-to-proposal density
// ratio for u = L xi + mu with u ~ N(0, I) a priori.
inline double log_weight_correction(const GaussianBelief& proposal, const VectorXd& xi,
                                    const VectorXd& u) {
    double log_det = 0.0;
    for (Eigen::Index i = 0; i < proposal.chol.rows(); ++i)
        log_det += std::log(proposal.chol(i, i));
    return log_det + 0.5 * (xi.squaredNorm() - u.squaredNorm());
}

// Per-time likelihood increment (1/M sum w) (sum omega); plain-scale form.
inline double likelihood_increment(const VectorXd& w, const VectorXd& omega) {
    if (w.size() != omega.size())
        throw std::invalid_argument("likelihood_increment: weight vectors differ in length");
    return w.mean() * omega.sum();
}

// Propagation budget per the per-scheme accounting: pilots and UKF sigma
// points count alongside the M particle propagations of every step.
inline long long count_propagations(ProposalScheme scheme, long long m, int n_u, int n_x, int n_y,
                                    int T) {
    const long long mupf_sigma = 2LL * (n_u + n_x + n_y) + 1;
    const long long cupf_sigma = 2LL * (n_u + n_y) + 1;
    long long per_step = 0;
    switch (scheme) {
        case ProposalScheme::PF0: per_step = m; break;
        case ProposalScheme::PF1: per_step = 2 * m; break;
        case ProposalScheme::MUPF0: per_step = m + mupf_sigma; break;
        case ProposalScheme::MUPF1: per_step = 2 * m + mupf_sigma; break;
        case ProposalScheme::CUPF0:
        case ProposalScheme::CUPF1: per_step = m + m * cupf_sigma; break;
    }
    return per_step * T;
}

// Largest M whose per-step propagation count stays within the budget of a
// PF0 run at budget_m particles; compute-matched configurations resolve
// per-scheme particle counts through this.
inline int compute_matched_particles(ProposalScheme scheme, int budget_m, int n_u, int n_x,
                                     int n_y) {
    const long long budget = budget_m;
    const long long mupf_sigma = 2LL * (n_u + n_x + n_y) + 1;
    const long long cupf_sigma = 2LL * (n_u + n_y) + 1;
    long long m = 0;
    switch (scheme) {
        case ProposalScheme::PF0: m = budget; break;
        case ProposalScheme::PF1: m = budget / 2; break;
        case ProposalScheme::MUPF0: m = budget - mupf_sigma; break;
        case ProposalScheme::MUPF1: m = (budget - mupf_sigma) / 2; break;
        case ProposalScheme::CUPF0:
        case ProposalScheme::CUPF1: m = budget / (1 + cupf_sigma); break;
    }
    return static_cast<int>(std::max<long long>(m, 1));
}

namespace detail {

struct StageOne {
    VectorXd log_g;        // shifted so max = 0 (collapse if none finite)
    VectorXd omega;        // normalized_prev * exp(log_g)
    double log_sum_omega;  // on the original scale
    bool collapsed;
};

} // namespace detail

// Auxiliary particle filter over noise terms. Under X0InChain the filter
// conditions on the supplied x0; under X0InFilter x0 must be absent and is
// importance-sampled from its prior per particle.
inline FilterResult run_filter(const ModelSpec& model, ProposalScheme scheme, int m_particles,
                               const std::optional<VectorXd>& x0, const VectorXd& theta,
                               const MatrixXd& y, RngStream stream,
                               const FilterOptions& options = {}) {
    if (m_particles < 1) throw std::invalid_argument("run_filter: need at least one particle");
    if (y.rows() != model.n_y) throw std::invalid_argument("run_filter: observation dimension");
    const bool x0_in_filter = model.factorization == Factorization::X0InFilter;
    if (x0_in_filter && x0)
        throw std::invalid_argument("run_filter: x0 is importance-sampled under X0InFilter");
    if (!x0_in_filter && !x0)
        throw std::invalid_argument("run_filter: x0 required under X0InChain");
    const bool uses_ukf = (scheme_is_mupf(scheme) || scheme_is_cupf(scheme)) &&
                          !options.force_prior_proposal;
    if (uses_ukf && !model.gauss_obs.mean)
        throw std::invalid_argument("run_filter: scheme needs the model's Gaussian observation");

    const int T = static_cast<int>(y.cols());
    const int M = m_particles;
    const Eigen::Index nu = model.n_u;
    FilterResult out;
    out.estimate.per_time = VectorXd::Zero(T);

    ParticleSystem& ps = out.particles;
    ps.states.resize(model.n_x, M);
    ps.noise = MatrixXd::Zero(nu, M);
    ps.normalized = VectorXd::Constant(M, 1.0 / M);
    ps.stage_one = ps.normalized;
    ps.log_weights = VectorXd::Constant(M, -std::log(static_cast<double>(M)));
    ps.ancestors.resize(static_cast<std::size_t>(M));
    for (int i = 0; i < M; ++i) ps.ancestors[static_cast<std::size_t>(i)] = i;

    GaussianBelief x_belief; // MUPF marginal recursion
    if (x0_in_filter) {
        RngStream init = stream.child(0);
        parallel_for(M, options.workers, [&](std::int64_t i) {
            RngStream s = init.child(static_cast<std::uint64_t>(i));
            ps.states.col(i) = model.x0_prior.sample(theta, s);
        });
        if (scheme_is_mupf(scheme)) x_belief = model.x0_belief(theta);
    } else {
        for (int i = 0; i < M; ++i) ps.states.col(i) = *x0;
        if (scheme_is_mupf(scheme)) x_belief = GaussianBelief::point(model.to_belief(*x0));
    }

    const auto collapse_at = [&](int t) {
        out.estimate.collapsed = true;
        out.estimate.collapse_time = t;
        out.estimate.per_time[t - 1] = -std::numeric_limits<double>::infinity();
        out.estimate.log_likelihood = -std::numeric_limits<double>::infinity();
    };

    std::vector<CupfStep> cupf(scheme_is_cupf(scheme) && !options.force_prior_proposal
                                   ? static_cast<std::size_t>(M)
                                   : 0);

    for (int t = 1; t <= T; ++t) {
        const VectorXd y_t = y.col(t - 1);

        // Look-ahead context.
        MupfStep mupf;
        if (scheme_is_mupf(scheme)) {
            if (options.force_prior_proposal) {
                mupf.u_proposal = GaussianBelief::standard(nu);
                mupf.mu_hat = VectorXd::Zero(nu);
            } else {
                mupf = mupf_lookahead(model, x_belief, theta, y_t, options.ut);
                x_belief = mupf.x_belief;
                if (mupf.fallback) ++out.ukf_fallbacks;
                out.propagations += 2 * (model.n_u + model.n_x + model.n_y) + 1;
            }
        }
        if (!cupf.empty()) {
            parallel_for(M, options.workers, [&](std::int64_t i) {
                cupf[static_cast<std::size_t>(i)] =
                    cupf_conditional(model, ps.states.col(i), theta, y_t, options.ut);
            });
            for (const auto& c : cupf)
                if (c.fallback) ++out.ukf_fallbacks;
            out.propagations += static_cast<long long>(M) * (2 * (model.n_u + model.n_y) + 1);
        }

        // Stage one: pilot values and look-behind weights.
        VectorXd log_g = VectorXd::Zero(M);
        if (scheme_has_pilot(scheme)) {
            const VectorXd pilot_u = scheme == ProposalScheme::MUPF1
                                         ? mupf.mu_hat
                                         : VectorXd::Zero(nu).eval();
            parallel_for(M, options.workers, [&](std::int64_t i) {
                const VectorXd xp = model.transition(pilot_u, ps.states.col(i), theta);
                double lg = xp.allFinite() ? model.obs_logdensity(y_t, xp, theta)
                                           : -std::numeric_limits<double>::infinity();
                log_g[i] = std::isnan(lg) ? -std::numeric_limits<double>::infinity() : lg;
            });
            out.propagations += M;
        } else if (scheme == ProposalScheme::CUPF1 && !cupf.empty()) {
            for (int i = 0; i < M; ++i) log_g[i] = cupf[static_cast<std::size_t>(i)].log_pred_y;
        }

        const double shift = log_g.maxCoeff();
        if (!std::isfinite(shift)) {
            collapse_at(t);
            return out;
        }
        VectorXd omega(M);
        for (int i = 0; i < M; ++i)
            omega[i] = ps.normalized[i] * std::exp(log_g[i] - shift);
        const double omega_sum = omega.sum();
        if (!(omega_sum > 0.0)) {
            collapse_at(t);
            return out;
        }
        const double log_sum_omega = std::log(omega_sum) + shift;
        ps.stage_one = omega;

        // Look-behind resample.
        RngStream rs = stream.child(2 * static_cast<std::uint64_t>(t) + 1);
        std::vector<int> ancestors;
        switch (options.resample) {
            case ResampleKind::Multinomial: ancestors = resample_multinomial(omega, M, rs); break;
            case ResampleKind::Stratified: ancestors = resample_quasi(omega, M, rs, true); break;
            case ResampleKind::Systematic: ancestors = resample_quasi(omega, M, rs, false); break;
        }

        // Stage two: propagate from the scheme's proposal and weight.
        RngStream step_stream = stream.child(2 * static_cast<std::uint64_t>(t));
        MatrixXd new_states(model.n_x, M);
        MatrixXd new_noise(nu, M);
        VectorXd log_w(M);
        const GaussianBelief prior_proposal = GaussianBelief::standard(nu);
        parallel_for(M, options.workers, [&](std::int64_t i) {
            const int a = ancestors[static_cast<std::size_t>(i)];
            const GaussianBelief* proposal = &prior_proposal;
            if (scheme_is_mupf(scheme) && !options.force_prior_proposal)
                proposal = &mupf.u_proposal;
            else if (!cupf.empty())
                proposal = &cupf[static_cast<std::size_t>(a)].u_proposal;
            RngStream s = step_stream.child(static_cast<std::uint64_t>(i));
            const VectorXd xi = s.normal_vector(nu);
            VectorXd u;
            double log_upsilon = 0.0;
            if (proposal == &prior_proposal) {
                u = xi;
            } else {
                u = proposal->mean + proposal->chol * xi;
                log_upsilon = log_weight_correction(*proposal, xi, u);
            }
            const VectorXd xn = model.transition(u, ps.states.col(a), theta);
            double lw;
            if (!xn.allFinite()) {
                lw = -std::numeric_limits<double>::infinity();
            } else {
                const double ld = model.obs_logdensity(y_t, xn, theta);
                lw = std::isnan(ld) ? -std::numeric_limits<double>::infinity()
                                    : ld + log_upsilon - log_g[a];
            }
            new_states.col(i) = xn;
            new_noise.col(i) = u;
            log_w[i] = lw;
        });
        out.propagations += M;

        const double lse = log_sum_exp(log_w);
        if (!std::isfinite(lse)) {
            ps.states = std::move(new_states);
            ps.noise = std::move(new_noise);
            ps.ancestors = std::move(ancestors);
            collapse_at(t);
            return out;
        }
        out.estimate.per_time[t - 1] =
            (lse - std::log(static_cast<double>(M))) + log_sum_omega;
        ps.states = std::move(new_states);
        ps.noise = std::move(new_noise);
        ps.log_weights = log_w;
        for (int i = 0; i < M; ++i) ps.normalized[i] = std::exp(log_w[i] - lse);
        ps.ancestors = std::move(ancestors);

        if (options.store_history) {
            out.history.states.push_back(ps.states);
            out.history.noise.push_back(ps.noise);
            out.history.ancestors.push_back(ps.ancestors);
        }
    }
    out.estimate.log_likelihood = out.estimate.per_time.sum();
    return out;
}

struct Trajectory {
    MatrixXd u; // n_u x T
    MatrixXd x; // n_x x T
    int index = 0;
};

// Draw one particle index from the final weights and trace its ancestry
// backward, returning the noise and state path it represents.
inline Trajectory extract_trajectory(const FilterResult& result, RngStream& stream) {
    const auto& h = result.history;
    if (h.states.empty())
        throw std::invalid_argument("extract_trajectory: run_filter needs store_history");
    const std::size_t T = h.states.size();
    const std::vector<int> pick = resample_multinomial(result.particles.normalized, 1, stream);
    Trajectory traj;
    traj.index = pick[0];
    traj.u.resize(h.noise[0].rows(), static_cast<Eigen::Index>(T));
    traj.x.resize(h.states[0].rows(), static_cast<Eigen::Index>(T));
    int idx = pick[0];
    for (std::size_t s = T; s-- > 0;) {
        traj.u.col(static_cast<Eigen::Index>(s)) = h.noise[s].col(idx);
        traj.x.col(static_cast<Eigen::Index>(s)) = h.states[s].col(idx);
        idx = h.ancestors[s][static_cast<std::size_t>(idx)];
    }
    return traj;
}

} // namespace ssm
