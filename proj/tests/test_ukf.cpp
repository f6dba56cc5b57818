#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "ssm/random.hpp"
#include "ssm/ukf.hpp"

using Eigen::MatrixXd;
using Eigen::VectorXd;
using ssm::GaussianBelief;
using ssm::RngStream;
using ssm::UtParams;

namespace {

GaussianBelief random_belief(int n, RngStream& s) {
    MatrixXd a(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) a(i, j) = s.normal();
    const MatrixXd cov = a * a.transpose() + 0.3 * MatrixXd::Identity(n, n);
    return GaussianBelief::from_moments(s.normal_vector(n), cov);
}

} // namespace

TEST_CASE("scalar sigma points land at 0 and +-sqrt(3) for lambda = 2", "[ukf]") {
    UtParams p;
    p.kappa_ut = 2.0; // n = 1, alpha = 1 -> lambda = 2
    const auto set = ssm::sigma_points(GaussianBelief::standard(1), p);
    REQUIRE(set.points.cols() == 3);
    CHECK(set.points(0, 0) == 0.0);
    CHECK(set.points(0, 1) == Catch::Approx(std::sqrt(3.0)));
    CHECK(set.points(0, 2) == Catch::Approx(-std::sqrt(3.0)));
    CHECK(set.mean_weights[0] == Catch::Approx(2.0 / 3.0));
    CHECK(set.mean_weights[1] == Catch::Approx(1.0 / 6.0));
}

TEST_CASE("sigma points reproduce the source mean and covariance", "[ukf]") {
    RngStream s(41);
    for (int n = 1; n <= 6; ++n) {
        const GaussianBelief b = random_belief(n, s);
        const auto set = ssm::sigma_points(b, UtParams{});
        const VectorXd mean = set.points * set.mean_weights;
        CHECK((mean - b.mean).norm() < 1e-12 * std::max(1.0, b.mean.norm()));
        MatrixXd scatter = MatrixXd::Zero(n, n);
        for (Eigen::Index j = 0; j < set.points.cols(); ++j) {
            const VectorXd d = set.points.col(j) - b.mean;
            scatter += set.cov_weights[j] * d * d.transpose();
        }
        const MatrixXd cov = b.covariance();
        CHECK((scatter - cov).norm() / cov.norm() < 1e-12);
    }
}

TEST_CASE("invalid scaling is rejected", "[ukf]") {
    UtParams p;
    p.alpha_ut = 0.0;
    CHECK_THROWS_AS(ssm::sigma_points(GaussianBelief::standard(2), p), std::invalid_argument);
}

TEST_CASE("the transform is exact on affine maps", "[ukf]") {
    RngStream s(43);
    for (int rep = 0; rep < 100; ++rep) {
        const int n = 1 + rep % 8;
        const int m = 1 + (rep / 2) % 4;
        const GaussianBelief b = random_belief(n, s);
        MatrixXd a(m, n);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) a(i, j) = s.normal();
        const VectorXd shift = s.normal_vector(m);
        const auto ut = ssm::unscented_transform(
            b, UtParams{}, [&](const VectorXd& x) { return VectorXd(a * x + shift); }, m);
        const MatrixXd cov = b.covariance();
        CHECK((ut.mean - (a * b.mean + shift)).norm() < 1e-8);
        CHECK((ut.cov - a * cov * a.transpose()).norm() < 1e-8);
        CHECK((ut.cross - cov * a.transpose()).norm() < 1e-8);
    }
}

TEST_CASE("the identity map returns the input belief", "[ukf]") {
    RngStream s(44);
    const GaussianBelief b = random_belief(3, s);
    const auto ut = ssm::unscented_transform(
        b, UtParams{}, [](const VectorXd& x) { return x; }, 3);
    CHECK((ut.mean - b.mean).norm() < 1e-12);
    CHECK((ut.cov - b.covariance()).norm() < 1e-10);
}

TEST_CASE("E[x^2] = 1 under the standard normal for any lambda", "[ukf]") {
    for (double kappa : {0.5, 2.0, 3.0}) {
        UtParams p;
        p.kappa_ut = kappa;
        const auto ut = ssm::unscented_transform(
            GaussianBelief::standard(1), p,
            [](const VectorXd& x) { return VectorXd(x.array().square().matrix()); }, 1);
        CHECK(ut.mean[0] == Catch::Approx(1.0).epsilon(1e-10));
    }
}

TEST_CASE("non-finite outputs raise a propagation error", "[ukf]") {
    CHECK_THROWS_AS(ssm::unscented_transform(
                        GaussianBelief::standard(1), UtParams{},
                        [](const VectorXd&) {
                            return VectorXd::Constant(1, std::numeric_limits<double>::quiet_NaN())
                                .eval();
                        },
                        1),
                    ssm::PropagationError);
}

TEST_CASE("conditioning with zero cross-covariance leaves the belief unchanged", "[ukf]") {
    RngStream s(45);
    const GaussianBelief a = random_belief(2, s);
    const GaussianBelief y = random_belief(1, s);
    VectorXd mean(3);
    mean << a.mean, y.mean;
    MatrixXd cov = MatrixXd::Zero(3, 3);
    cov.topLeftCorner(2, 2) = a.covariance();
    cov.bottomRightCorner(1, 1) = y.covariance();
    const auto cond = ssm::condition_on_moments(mean, cov, 2, VectorXd::Constant(1, 0.7));
    CHECK((cond.belief.mean - a.mean).norm() < 1e-12);
    CHECK((cond.belief.covariance() - a.covariance()).norm() < 1e-12);
    CHECK_FALSE(cond.degenerate);
}

TEST_CASE("perfect correlation collapses the posterior variance", "[ukf]") {
    VectorXd mean = VectorXd::Zero(2);
    MatrixXd cov(2, 2);
    cov << 1.0, 1.0, 1.0, 1.0;
    const auto cond = ssm::condition_on_moments(mean, cov, 1, VectorXd::Constant(1, 0.5));
    CHECK(cond.degenerate);
    CHECK(cond.belief.mean[0] == Catch::Approx(0.5));
    CHECK(cond.belief.covariance()(0, 0) < 1e-10);
}

TEST_CASE("two-dimensional conditioning matches the Schur complement", "[ukf]") {
    RngStream s(46);
    for (int rep = 0; rep < 25; ++rep) {
        const GaussianBelief joint = random_belief(3, s);
        const VectorXd y_obs = s.normal_vector(1);
        const auto cond = ssm::condition_on_observation(joint, 2, y_obs);
        const MatrixXd cov = joint.covariance();
        const MatrixXd saa = cov.topLeftCorner(2, 2);
        const MatrixXd say = cov.topRightCorner(2, 1);
        const double syy = cov(2, 2);
        const VectorXd mean = joint.mean.head(2) + say / syy * (y_obs[0] - joint.mean[2]);
        const MatrixXd post = saa - say * say.transpose() / syy;
        REQUIRE((cond.belief.mean - mean).norm() < 1e-10);
        REQUIRE((cond.belief.covariance() - post).norm() < 1e-10);
    }
}

TEST_CASE("a singular observation block is an error", "[ukf]") {
    VectorXd mean = VectorXd::Zero(2);
    MatrixXd cov = MatrixXd::Zero(2, 2);
    cov(0, 0) = 1.0;
    CHECK_THROWS_AS(ssm::condition_on_moments(mean, cov, 1, VectorXd::Zero(1)),
                    ssm::SingularObservationError);
}
