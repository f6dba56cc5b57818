#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "ssm/apf.hpp"
#include "ssm/errors.hpp"
#include "ssm/model.hpp"
#include "ssm/pmmh.hpp"
#include "ssm/thread_pool.hpp"

namespace ssm {

namespace detail {

// Normalized likelihoods from log replicates, max-shifted before
// exponentiation. Replicates more than 700 nats below the maximum underflow
// anyway and are treated as exact zeros.
inline VectorXd normalized_likelihoods(const VectorXd& log_l) {
    if (log_l.size() < 2)
        throw std::invalid_argument("conditional acceptance rate needs at least two replicates");
    double shift = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < log_l.size(); ++i)
        if (log_l[i] > shift) shift = log_l[i];
    if (!std::isfinite(shift))
        throw UndefinedCarError("car: every replicate has zero likelihood");
    VectorXd l(log_l.size());
    for (Eigen::Index i = 0; i < log_l.size(); ++i) {
        const double d = log_l[i] - shift;
        l[i] = d < -700.0 ? 0.0 : std::exp(d);
    }
    return l / l.sum();
}

} // namespace detail

// Conditional acceptance rate from replicate log-likelihood estimates via
// the transition-matrix form: T_ij = min(l_j / l_i, 1) / L off the diagonal,
// beta_i = 1 - T_ii + 1/L (the self-proposal counts as an acceptance), and
// alpha = lbar . beta with lbar the normalized likelihoods as stationary
// weights. O(L^2).
inline double car_direct(const VectorXd& log_likelihoods) {
    const VectorXd l = detail::normalized_likelihoods(log_likelihoods);
    const Eigen::Index L = l.size();
    const double inv_l = 1.0 / static_cast<double>(L);
    double alpha = 0.0;
    for (Eigen::Index i = 0; i < L; ++i) {
        if (!(l[i] > 0.0)) continue; // zero stationary weight
        double beta = 0.0;
        for (Eigen::Index j = 0; j < L; ++j) beta += std::min(l[j] / l[i], 1.0) * inv_l;
        alpha += l[i] * beta;
    }
    return alpha;
}

// Same statistic via the sorted prefix-sum closed form alpha = (2 sum c - 1)/L
// with c the inclusive prefix sums of the ascending normalized likelihoods.
// O(L log L).
inline double car_sorted(const VectorXd& log_likelihoods) {
    VectorXd l = detail::normalized_likelihoods(log_likelihoods);
    std::sort(l.data(), l.data() + l.size());
    double acc = 0.0;
    double csum = 0.0;
    for (Eigen::Index i = 0; i < l.size(); ++i) {
        acc += l[i];
        csum += acc;
    }
    return (2.0 * csum - 1.0) / static_cast<double>(l.size());
}

struct CarEstimate {
    VectorXd location;        // (x0, theta) natural coordinates, chain layout
    VectorXd log_likelihoods; // L replicates (-inf marks collapse)
    double alpha = 0.0;
    int replicates = 0;
    int collapsed = 0;
    bool defined = true;
};

struct CarSurveyOptions {
    int workers = 1;
    FilterOptions filter{};
};

// Replicate likelihood estimates and CAR at each survey point. Points are in
// natural coordinates with the chain layout ([x0; theta] under X0InChain,
// [theta] otherwise); replicate (i, j) draws from stream seed/(i, j), so the
// survey is reproducible and worker-count independent.
inline std::vector<CarEstimate> car_survey(const ModelSpec& model, const MatrixXd& y,
                                           ProposalScheme scheme, int m_particles,
                                           const std::vector<VectorXd>& points, int replicates,
                                           std::uint64_t seed,
                                           const CarSurveyOptions& options = {}) {
    std::vector<CarEstimate> out(points.size());
    RngStream root(seed);
    const Eigen::Index nx = model.n_x;
    const bool with_x0 = model.factorization == Factorization::X0InChain;
    const std::int64_t total = static_cast<std::int64_t>(points.size()) * replicates;
    std::vector<double> logl(static_cast<std::size_t>(total));
    parallel_for(total, options.workers, [&](std::int64_t k) {
        const std::int64_t i = k / replicates;
        const std::int64_t j = k % replicates;
        const VectorXd& z = points[static_cast<std::size_t>(i)];
        std::optional<VectorXd> x0;
        VectorXd theta = z;
        if (with_x0) {
            x0 = z.head(nx);
            theta = z.tail(model.n_theta);
        }
        RngStream s = root.child(static_cast<std::uint64_t>(i)).child(static_cast<std::uint64_t>(j));
        const FilterResult r =
            run_filter(model, scheme, m_particles, x0, theta, y, s, options.filter);
        logl[static_cast<std::size_t>(k)] = r.estimate.log_likelihood;
    });
    for (std::size_t i = 0; i < points.size(); ++i) {
        CarEstimate& e = out[i];
        e.location = points[i];
        e.replicates = replicates;
        e.log_likelihoods = VectorXd(replicates);
        for (int j = 0; j < replicates; ++j) {
            const double v = logl[i * static_cast<std::size_t>(replicates) +
                                  static_cast<std::size_t>(j)];
            e.log_likelihoods[j] = v;
            if (!std::isfinite(v)) ++e.collapsed;
        }
        try {
            e.alpha = car_sorted(e.log_likelihoods);
        } catch (const UndefinedCarError&) {
            e.defined = false;
            e.alpha = std::numeric_limits<double>::quiet_NaN();
        }
    }
    return out;
}

struct RhatResult {
    double value = 0.0;
    bool ridged = false; // within-chain covariance needed a 1e-10 ridge
};

// Multivariate potential scale reduction factor over the second halves of K
// chains (each d x n): (n'-1)/n' + (K+1)/K * lambda_max(W^{-1} B/n').
inline RhatResult rhat_multivariate(const std::vector<MatrixXd>& chains) {
    const std::size_t K = chains.size();
    if (K < 2) throw std::invalid_argument("rhat_multivariate: need at least two chains");
    const Eigen::Index d = chains[0].rows();
    const Eigen::Index n = chains[0].cols();
    if (n < 10) throw std::invalid_argument("rhat_multivariate: need at least 10 steps");
    for (const auto& c : chains)
        if (c.rows() != d || c.cols() != n)
            throw std::invalid_argument("rhat_multivariate: chains must share shape");

    const Eigen::Index half = n / 2;
    const Eigen::Index m = n - half;
    MatrixXd within = MatrixXd::Zero(d, d);
    MatrixXd means(d, static_cast<Eigen::Index>(K));
    for (std::size_t k = 0; k < K; ++k) {
        const MatrixXd seg = chains[k].rightCols(m);
        const VectorXd mu = seg.rowwise().mean();
        means.col(static_cast<Eigen::Index>(k)) = mu;
        const MatrixXd centered = seg.colwise() - mu;
        within += centered * centered.transpose() / static_cast<double>(m - 1);
    }
    within /= static_cast<double>(K);
    const VectorXd grand = means.rowwise().mean();
    const MatrixXd mc = means.colwise() - grand;
    const MatrixXd between_over_n = mc * mc.transpose() / static_cast<double>(K - 1);

    RhatResult out;
    Eigen::LLT<MatrixXd> llt(within);
    MatrixXd w = within;
    if (llt.info() != Eigen::Success) {
        w.diagonal().array() += 1e-10;
        out.ridged = true;
    }
    Eigen::GeneralizedSelfAdjointEigenSolver<MatrixXd> es(between_over_n, w);
    const double lambda_max = es.eigenvalues().maxCoeff();
    out.value = static_cast<double>(m - 1) / static_cast<double>(m) +
                (static_cast<double>(K) + 1.0) / static_cast<double>(K) * std::max(lambda_max, 0.0);
    return out;
}

// Average ranks scaled to (0, 1]; ties get the mean of their rank span.
inline VectorXd empirical_cdf_ranks(const VectorXd& values) {
    const Eigen::Index n = values.size();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](Eigen::Index a, Eigen::Index b) { return values[a] < values[b]; });
    VectorXd ranks(n);
    Eigen::Index i = 0;
    while (i < n) {
        Eigen::Index j = i;
        while (j + 1 < n && values[order[static_cast<std::size_t>(j + 1)]] ==
                               values[order[static_cast<std::size_t>(i)]])
            ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0; // mean of ranks i+1..j+1
        for (Eigen::Index k = i; k <= j; ++k)
            ranks[order[static_cast<std::size_t>(k)]] = avg / static_cast<double>(n);
        i = j + 1;
    }
    return ranks;
}

struct RankExport {
    MatrixXd param_ranks; // n x d
    VectorXd car_ranks;   // n
};

// Empirical-CDF transform of parameter draws and CAR values, paired row-wise
// for external copula-style plotting.
inline RankExport rank_export(const MatrixXd& params, const VectorXd& cars) {
    if (params.rows() != cars.size())
        throw std::invalid_argument("rank_export: row count mismatch");
    RankExport out;
    out.param_ranks.resize(params.rows(), params.cols());
    for (Eigen::Index j = 0; j < params.cols(); ++j)
        out.param_ranks.col(j) = empirical_cdf_ranks(params.col(j));
    out.car_ranks = empirical_cdf_ranks(cars);
    return out;
}

inline double spearman_correlation(const VectorXd& a, const VectorXd& b) {
    const VectorXd ra = empirical_cdf_ranks(a);
    const VectorXd rb = empirical_cdf_ranks(b);
    const double ma = ra.mean();
    const double mb = rb.mean();
    const VectorXd da = ra.array() - ma;
    const VectorXd db = rb.array() - mb;
    const double denom = std::sqrt(da.squaredNorm() * db.squaredNorm());
    return denom > 0.0 ? da.dot(db) / denom : 0.0;
}

} // namespace ssm
