#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "ssm/errors.hpp"
#include "ssm/linalg.hpp"
#include "ssm/model.hpp"

namespace ssm {

// Scaled unscented transform tuning. kappa_ut defaults to max(3 - n, 0),
// resolved against the belief dimension at the point of use.
struct UtParams {
    double alpha_ut = 1.0;
    double beta_ut = 2.0;
    double kappa_ut = std::numeric_limits<double>::quiet_NaN();

    double kappa(Eigen::Index n) const {
        return std::isnan(kappa_ut) ? std::max(3.0 - static_cast<double>(n), 0.0) : kappa_ut;
    }
    double lambda(Eigen::Index n) const {
        const double nn = static_cast<double>(n);
        return alpha_ut * alpha_ut * (nn + kappa(n)) - nn;
    }
};

struct SigmaPointSet {
    MatrixXd points;        // n x (2n+1)
    VectorXd mean_weights;
    VectorXd cov_weights;
};

// 2n+1 points at the mean and mean +- sqrt(n+lambda) L e_i.
inline SigmaPointSet sigma_points(const GaussianBelief& belief, const UtParams& p) {
    const Eigen::Index n = belief.dim();
    if (n < 1) throw std::invalid_argument("sigma_points: belief dimension must be >= 1");
    const double lam = p.lambda(n);
    const double nlam = static_cast<double>(n) + lam;
    if (!(nlam > 0.0)) throw std::invalid_argument("sigma_points: n + lambda must be positive");
    const double gamma = std::sqrt(nlam);
    SigmaPointSet s;
    s.points.resize(n, 2 * n + 1);
    s.points.col(0) = belief.mean;
    for (Eigen::Index i = 0; i < n; ++i) {
        const VectorXd shift = gamma * belief.chol.col(i);
        s.points.col(1 + i) = belief.mean + shift;
        s.points.col(1 + n + i) = belief.mean - shift;
    }
    s.mean_weights.setConstant(2 * n + 1, 1.0 / (2.0 * nlam));
    s.cov_weights = s.mean_weights;
    s.mean_weights[0] = lam / nlam;
    s.cov_weights[0] = lam / nlam + (1.0 - p.alpha_ut * p.alpha_ut + p.beta_ut);
    return s;
}

struct UtMoments {
    VectorXd mean;
    MatrixXd cov;
    MatrixXd cross; // Cov(input, g(input)), n_in x n_out
};

// Push the belief through g and estimate mean, covariance and input-output
// cross-covariance from the weighted sigma points.
template <typename Fn>
UtMoments unscented_transform(const GaussianBelief& belief, const UtParams& p, Fn&& g,
                              Eigen::Index out_dim) {
    const SigmaPointSet s = sigma_points(belief, p);
    const Eigen::Index cols = s.points.cols();
    MatrixXd out(out_dim, cols);
    for (Eigen::Index j = 0; j < cols; ++j) {
        out.col(j) = g(s.points.col(j));
        if (!out.col(j).allFinite())
            throw PropagationError("unscented_transform: non-finite output at sigma point " +
                                   std::to_string(j));
    }
    UtMoments m;
    m.mean = out * s.mean_weights;
    m.cov = MatrixXd::Zero(out_dim, out_dim);
    m.cross = MatrixXd::Zero(belief.dim(), out_dim);
    for (Eigen::Index j = 0; j < cols; ++j) {
        const VectorXd dy = out.col(j) - m.mean;
        m.cov.noalias() += s.cov_weights[j] * dy * dy.transpose();
        m.cross.noalias() += s.cov_weights[j] * (s.points.col(j) - belief.mean) * dy.transpose();
    }
    return m;
}

struct ConditionResult {
    GaussianBelief belief;
    bool degenerate = false; // posterior covariance needed flooring to factor
};

// Gaussian conditioning of the leading head_dim block on the trailing block
// observed at y_obs, from joint moments.
inline ConditionResult condition_on_moments(const VectorXd& mean, const MatrixXd& cov,
                                            Eigen::Index head_dim, const VectorXd& y_obs) {
    const Eigen::Index n = mean.size();
    const Eigen::Index ny = n - head_dim;
    if (ny < 1 || y_obs.size() != ny)
        throw std::invalid_argument("condition_on_moments: dimension mismatch");
    const MatrixXd s_yy = cov.bottomRightCorner(ny, ny);
    Eigen::LLT<MatrixXd> llt(s_yy);
    if (llt.info() != Eigen::Success)
        throw SingularObservationError("condition_on_moments: singular observation block");
    const MatrixXd s_ay = cov.topRightCorner(head_dim, ny);
    const MatrixXd gain = llt.solve(s_ay.transpose()).transpose();
    ConditionResult out;
    out.belief.mean = mean.head(head_dim) + gain * (y_obs - mean.tail(ny));
    MatrixXd post = cov.topLeftCorner(head_dim, head_dim) - gain * s_ay.transpose();
    post = 0.5 * (post + post.transpose());
    auto f = CholeskyFactor::try_from_covariance(post);
    if (!f) {
        // Degenerate posterior (e.g. perfectly informative observation):
        // floor the spectrum at zero plus a tiny jitter so a factor exists.
        Eigen::SelfAdjointEigenSolver<MatrixXd> es(post);
        VectorXd ev = es.eigenvalues().cwiseMax(0.0);
        const double jitter = 1e-14 * std::max(1.0, ev.maxCoeff());
        ev.array() += jitter;
        post = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
        f = CholeskyFactor::try_from_covariance(0.5 * (post + post.transpose()));
        if (!f) throw NonPositiveDefiniteError("condition_on_moments: flooring failed");
        out.degenerate = true;
    }
    out.belief.chol = std::move(f->L);
    return out;
}

inline ConditionResult condition_on_observation(const GaussianBelief& joint, Eigen::Index head_dim,
                                                const VectorXd& y_obs) {
    return condition_on_moments(joint.mean, joint.covariance(), head_dim, y_obs);
}

namespace detail {

inline MatrixXd block_diag_chol(const std::vector<const MatrixXd*>& blocks) {
    Eigen::Index n = 0;
    for (const auto* b : blocks) n += b->rows();
    MatrixXd out = MatrixXd::Zero(n, n);
    Eigen::Index at = 0;
    for (const auto* b : blocks) {
        out.block(at, at, b->rows(), b->cols()) = *b;
        at += b->rows();
    }
    return out;
}

} // namespace detail

// --- marginal look-ahead (MUPF) -------------------------------------------

struct MupfStep {
    GaussianBelief u_proposal; // \hat p_N(u_t | x_0, theta, y_{1:t})
    GaussianBelief x_belief;   // updated marginal over x_t, belief coordinates
    VectorXd mu_hat;           // proposal mean, the MUPF1 pilot point
    bool fallback = false;
};

// One step of the marginal UKF over (u_t, x_t): sigma points on the
// block-diagonal (u, x_{t-1}, observation-noise) belief are pushed through
// transition + observation and the joint is conditioned on y_t. The updated
// x marginal feeds the next step's recursion. Conditioning failures fall
// back to the prior N(0, I) proposal and are flagged.
inline MupfStep mupf_lookahead(const ModelSpec& model, const GaussianBelief& x_belief,
                               const VectorXd& theta, const VectorXd& y_t, const UtParams& p) {
    const Eigen::Index nu = model.n_u;
    const Eigen::Index nx = model.n_x;
    const Eigen::Index ny = model.n_y;
    MupfStep out;
    out.x_belief = x_belief;

    const MatrixXd iu = MatrixXd::Identity(nu, nu);
    const MatrixXd lr = model.gauss_obs.noise_chol(theta);
    GaussianBelief aug;
    aug.mean = VectorXd::Zero(nu + nx + ny);
    aug.mean.segment(nu, nx) = x_belief.mean;
    aug.chol = detail::block_diag_chol({&iu, &x_belief.chol, &lr});

    const auto propagate = [&](const VectorXd& a) {
        VectorXd z(nu + nx + ny);
        const VectorXd u = a.head(nu);
        const VectorXd x_prev = model.from_belief(a.segment(nu, nx));
        const VectorXd x_next = model.transition(u, x_prev, theta);
        z.head(nu) = u;
        z.segment(nu, nx) = model.to_belief(x_next);
        z.tail(ny) = model.gauss_obs.mean(x_next, theta) + a.tail(ny);
        return z;
    };

    std::optional<UtMoments> joint;
    try {
        joint = unscented_transform(aug, p, propagate, nu + nx + ny);
    } catch (const NumericalError&) {
    }
    if (joint) {
        try {
            const ConditionResult cond = condition_on_moments(joint->mean, joint->cov, nu + nx,
                                                              model.gauss_obs.to_gauss(y_t));
            const MatrixXd post = cond.belief.covariance();
            out.u_proposal = GaussianBelief::from_moments(cond.belief.mean.head(nu),
                                                          post.topLeftCorner(nu, nu), 1e-12);
            out.x_belief = GaussianBelief::from_moments(cond.belief.mean.tail(nx),
                                                        post.bottomRightCorner(nx, nx), 1e-10);
            out.mu_hat = out.u_proposal.mean;
            return out;
        } catch (const NumericalError&) {
        }
    }
    out.fallback = true;
    out.u_proposal = GaussianBelief::standard(nu);
    out.mu_hat = VectorXd::Zero(nu);
    // Keep the recursion alive with the predicted x marginal if it can be
    // formed, otherwise carry the previous belief.
    if (joint) {
        try {
            out.x_belief = GaussianBelief::from_moments(joint->mean.segment(nu, nx),
                                                        joint->cov.block(nu, nu, nx, nx), 1e-10);
        } catch (const NumericalError&) {
            out.x_belief = x_belief;
        }
    }
    return out;
}

// --- per-particle conditional look-ahead (CUPF) ----------------------------

struct CupfStep {
    GaussianBelief u_proposal; // \hat p_N(u_t | u_{1:t-1}, x_0, theta, y_{1:t})
    double log_pred_y = 0.0;   // log \hat p_N(y_t | u_{1:t-1}, x_0, theta)
    bool fallback = false;
    bool used_downdate = false;
    MatrixXd downdate_cols; // V with posterior cov = I - V V^T (empty on fallback)
};

// Conditional UKF step from a single particle state. The uncorrected
// prediction of the u covariance is exactly I, so the measurement update is
// I - C S^{-1} C^T, factored by N_y rank-1 downdates of I over the columns
// of V = C L_S^{-T}; a failed downdate falls back to a full factorization of
// the explicitly formed matrix.
inline CupfStep cupf_conditional(const ModelSpec& model, const VectorXd& x_prev,
                                 const VectorXd& theta, const VectorXd& y_t, const UtParams& p) {
    const Eigen::Index nu = model.n_u;
    const Eigen::Index ny = model.n_y;
    CupfStep out;

    const MatrixXd iu = MatrixXd::Identity(nu, nu);
    const MatrixXd lr = model.gauss_obs.noise_chol(theta);
    GaussianBelief aug;
    aug.mean = VectorXd::Zero(nu + ny);
    aug.chol = detail::block_diag_chol({&iu, &lr});

    const auto observe = [&](const VectorXd& a) {
        const VectorXd x_next = model.transition(a.head(nu), x_prev, theta);
        return VectorXd(model.gauss_obs.mean(x_next, theta) + a.tail(ny));
    };

    try {
        const UtMoments ut = unscented_transform(aug, p, observe, ny);
        Eigen::LLT<MatrixXd> llt(ut.cov);
        if (llt.info() != Eigen::Success)
            throw SingularObservationError("cupf_conditional: predictive covariance not PD");
        const MatrixXd l_y = llt.matrixL();
        const VectorXd innov = model.gauss_obs.to_gauss(y_t) - ut.mean;
        const VectorXd w = l_y.triangularView<Eigen::Lower>().solve(innov);
        double log_det = 0.0;
        for (Eigen::Index i = 0; i < ny; ++i) log_det += std::log(l_y(i, i));
        out.log_pred_y = -0.5 * static_cast<double>(ny) * std::log(2.0 * std::numbers::pi) -
                         log_det - 0.5 * w.squaredNorm() + model.gauss_obs.log_jacobian(y_t);

        const MatrixXd c_uy = ut.cross.topRows(nu);
        // V^T = L_S^{-1} C^T, so V V^T = C S^{-1} C^T.
        const MatrixXd vt = l_y.triangularView<Eigen::Lower>().solve(c_uy.transpose());
        const MatrixXd v = vt.transpose();
        out.u_proposal.mean = v * w;
        out.downdate_cols = v;

        CholeskyFactor fac{MatrixXd::Identity(nu, nu)};
        bool ok = true;
        for (Eigen::Index j = 0; j < ny && ok; ++j) {
            auto next = chol_rank1_downdate(fac, v.col(j));
            if (next)
                fac = std::move(*next);
            else
                ok = false;
        }
        if (ok) {
            out.u_proposal.chol = std::move(fac.L);
            out.used_downdate = true;
        } else {
            const MatrixXd post = MatrixXd::Identity(nu, nu) - v * v.transpose();
            out.u_proposal =
                GaussianBelief::from_moments(out.u_proposal.mean, post, 1e-12);
        }
        return out;
    } catch (const NumericalError&) {
        out.fallback = true;
        out.u_proposal = GaussianBelief::standard(nu);
        out.log_pred_y = -std::numeric_limits<double>::infinity();
        out.downdate_cols.resize(0, 0);
        return out;
    }
}

// --- joint parameter-augmented filter and smoother -------------------------

struct JointUkfResult {
    GaussianBelief smoothed0;             // over (x_0 belief coords, theta sampling coords)
    std::vector<GaussianBelief> filtered; // index 0..T over the augmented state
    int time_steps = 0;
};

// UKF over the augmented state z = (x in belief coordinates, theta in
// sampling coordinates), followed by an unscented Rauch-Tung-Striebel
// backward pass. The smoothed time-0 belief seeds PMMH chain starts and the
// random-walk proposal covariance.
inline JointUkfResult joint_ukf_init(const ModelSpec& model, const MatrixXd& y,
                                     const UtParams& p) {
    const Eigen::Index nx = model.n_x;
    const Eigen::Index nt = model.n_theta;
    const Eigen::Index nu = model.n_u;
    const Eigen::Index ny = model.n_y;
    const Eigen::Index nz = nx + nt;
    const Eigen::Index T = y.cols();

    const GaussianBelief theta_belief = model.theta_sampling_prior();
    const VectorXd theta_bar = model.theta_transform.to_natural(theta_belief.mean);
    const GaussianBelief x_belief = model.x0_belief(theta_bar);

    GaussianBelief z;
    z.mean = VectorXd(nz);
    z.mean.head(nx) = x_belief.mean;
    z.mean.tail(nt) = theta_belief.mean;
    z.chol = detail::block_diag_chol({&x_belief.chol, &theta_belief.chol});

    JointUkfResult out;
    out.filtered.push_back(z);

    std::vector<VectorXd> filt_mean{z.mean}, pred_mean;
    std::vector<MatrixXd> filt_cov{z.covariance()}, pred_cov, cross_zz;

    const MatrixXd iu = MatrixXd::Identity(nu, nu);
    for (Eigen::Index t = 0; t < T; ++t) {
        // Predict through the transition with the u block appended.
        GaussianBelief aug;
        aug.mean = VectorXd::Zero(nz + nu);
        aug.mean.head(nz) = z.mean;
        aug.chol = detail::block_diag_chol({&z.chol, &iu});
        const auto step = [&](const VectorXd& a) {
            const VectorXd theta_nat = model.theta_transform.to_natural(a.segment(nx, nt));
            const VectorXd x_prev = model.from_belief(a.head(nx));
            VectorXd zn(nz);
            zn.head(nx) = model.to_belief(model.transition(a.tail(nu), x_prev, theta_nat));
            zn.tail(nt) = a.segment(nx, nt);
            return zn;
        };
        UtMoments pred;
        try {
            pred = unscented_transform(aug, p, step, nz);
        } catch (const NumericalError& err) {
            throw FilterDivergenceError("joint_ukf_init: prediction failed at time " +
                                        std::to_string(t + 1) + ": " + err.what());
        }
        if (!pred.mean.allFinite() || !pred.cov.allFinite())
            throw FilterDivergenceError("joint_ukf_init: non-finite moments at time " +
                                        std::to_string(t + 1));
        pred_mean.push_back(pred.mean);
        pred_cov.push_back(pred.cov);
        cross_zz.push_back(pred.cross.topRows(nz));

        // Update on y_t through the observation map.
        GaussianBelief zpred = GaussianBelief::from_moments(pred.mean, pred.cov, 1e-10);
        const MatrixXd lr = model.gauss_obs.noise_chol(theta_bar);
        GaussianBelief obs_aug;
        obs_aug.mean = VectorXd::Zero(nz + ny);
        obs_aug.mean.head(nz) = zpred.mean;
        obs_aug.chol = detail::block_diag_chol({&zpred.chol, &lr});
        const auto observe = [&](const VectorXd& a) {
            const VectorXd theta_nat = model.theta_transform.to_natural(a.segment(nx, nt));
            const VectorXd x_now = model.from_belief(a.head(nx));
            VectorXd zy(nz + ny);
            zy.head(nz) = a.head(nz);
            zy.tail(ny) = model.gauss_obs.mean(x_now, theta_nat) + a.tail(ny);
            return zy;
        };
        try {
            const UtMoments joint = unscented_transform(obs_aug, p, observe, nz + ny);
            const ConditionResult cond = condition_on_moments(
                joint.mean, joint.cov, nz, model.gauss_obs.to_gauss(y.col(t)));
            z = GaussianBelief::from_moments(cond.belief.mean, cond.belief.covariance(), 1e-10);
        } catch (const NumericalError& err) {
            throw FilterDivergenceError("joint_ukf_init: update failed at time " +
                                        std::to_string(t + 1) + ": " + err.what());
        }
        out.filtered.push_back(z);
        filt_mean.push_back(z.mean);
        filt_cov.push_back(z.covariance());
    }

    // Unscented RTS backward pass.
    VectorXd sm = filt_mean[static_cast<std::size_t>(T)];
    MatrixXd sp = filt_cov[static_cast<std::size_t>(T)];
    for (Eigen::Index t = T; t-- > 0;) {
        const std::size_t ti = static_cast<std::size_t>(t);
        Eigen::LLT<MatrixXd> llt(pred_cov[ti]);
        if (llt.info() != Eigen::Success)
            throw FilterDivergenceError("joint_ukf_init: smoother failed at time " +
                                        std::to_string(t));
        const MatrixXd gain = llt.solve(cross_zz[ti].transpose()).transpose();
        sm = filt_mean[ti] + gain * (sm - pred_mean[ti]);
        MatrixXd cov = filt_cov[ti] + gain * (sp - pred_cov[ti]) * gain.transpose();
        sp = 0.5 * (cov + cov.transpose());
    }
    out.smoothed0 = GaussianBelief::from_moments(sm, sp, 1e-12);
    out.time_steps = static_cast<int>(T);
    return out;
}

} // namespace ssm
