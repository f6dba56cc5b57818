#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "ssm/linalg.hpp"
#include "ssm/random.hpp"

using Eigen::MatrixXd;
using Eigen::VectorXd;
using ssm::CholeskyFactor;
using ssm::RngStream;

namespace {

MatrixXd random_spd(int n, RngStream& s, double diag = 0.5) {
    MatrixXd a(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) a(i, j) = s.normal();
    return a * a.transpose() + diag * MatrixXd::Identity(n, n);
}

} // namespace

TEST_CASE("downdate with a zero vector is the identity", "[linalg]") {
    CholeskyFactor f{MatrixXd::Identity(2, 2)};
    auto g = ssm::chol_rank1_downdate(f, VectorXd::Zero(2));
    REQUIRE(g.has_value());
    CHECK((g->L - MatrixXd::Identity(2, 2)).norm() == 0.0);
}

TEST_CASE("scalar downdate: 1 - 0.36 = 0.64", "[linalg]") {
    CholeskyFactor f{MatrixXd::Identity(1, 1)};
    auto g = ssm::chol_rank1_downdate(f, VectorXd::Constant(1, 0.6));
    REQUIRE(g.has_value());
    CHECK(g->L(0, 0) == Catch::Approx(0.8).epsilon(1e-14));
}

TEST_CASE("downdate matches refactorization of the explicit matrix", "[linalg]") {
    RngStream s(11);
    for (int rep = 0; rep < 50; ++rep) {
        const MatrixXd cov = random_spd(4, s, 1.0);
        const CholeskyFactor f = CholeskyFactor::from_covariance(cov);
        const VectorXd v = 0.2 * s.normal_vector(4);
        auto g = ssm::chol_rank1_downdate(f, v);
        REQUIRE(g.has_value());
        const MatrixXd expected = cov - v * v.transpose();
        const double err = (g->covariance() - expected).norm() / expected.norm();
        CHECK(err < 1e-10);
    }
}

TEST_CASE("composed downdates equal one factorization of the summed downdate", "[linalg]") {
    RngStream s(13);
    for (int rep = 0; rep < 20; ++rep) {
        const int n = 3 + rep % 4;
        const MatrixXd cov = random_spd(n, s, 2.0);
        CholeskyFactor f = CholeskyFactor::from_covariance(cov);
        MatrixXd removed = MatrixXd::Zero(n, n);
        for (int k = 0; k < 3; ++k) {
            const VectorXd v = 0.15 * s.normal_vector(n);
            auto g = ssm::chol_rank1_downdate(f, v);
            REQUIRE(g.has_value());
            f = std::move(*g);
            removed += v * v.transpose();
        }
        const CholeskyFactor direct = CholeskyFactor::from_covariance(cov - removed);
        CHECK((f.covariance() - direct.covariance()).norm() / direct.covariance().norm() < 1e-9);
    }
}

TEST_CASE("losing positive definiteness is reported, not silently produced", "[linalg]") {
    CholeskyFactor f{MatrixXd::Identity(2, 2)};
    VectorXd v(2);
    v << 1.5, 0.0;
    CHECK_FALSE(ssm::chol_rank1_downdate(f, v).has_value());
}

TEST_CASE("factorization rejects non-SPD input", "[linalg]") {
    MatrixXd bad(2, 2);
    bad << 1.0, 2.0, 2.0, 1.0;
    CHECK_FALSE(CholeskyFactor::try_from_covariance(bad).has_value());
    CHECK_THROWS_AS(CholeskyFactor::from_covariance(bad), ssm::NonPositiveDefiniteError);
}

TEST_CASE("log_sum_exp handles shifts and empty input", "[linalg]") {
    VectorXd x(3);
    x << 1000.0, 1000.0, 1000.0;
    CHECK(ssm::log_sum_exp(x) == Catch::Approx(1000.0 + std::log(3.0)));
    CHECK(std::isinf(ssm::log_sum_exp(VectorXd())));
    VectorXd y = VectorXd::Constant(2, -std::numeric_limits<double>::infinity());
    CHECK(std::isinf(ssm::log_sum_exp(y)));
}
