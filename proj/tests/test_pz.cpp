#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "ssm/models/pz.hpp"
#include "ssm/models/simulate.hpp"

using Eigen::VectorXd;
using ssm::RngStream;

namespace {

// Reference integrator for the oracle: classical RK4 on (P, Z) directly, at
// a far finer step than the production path (which integrates logs).
void reference_day(double& p, double& z, double alpha, double h) {
    const ssm::PzOptions o;
    const auto rhs = [&](double pp, double zz, double& dp, double& dz) {
        dp = alpha * pp - o.c * pp * zz;
        dz = o.e * o.c * pp * zz - o.m_l * zz - o.m_q * zz * zz;
    };
    const int n = static_cast<int>(std::lround(1.0 / h));
    for (int s = 0; s < n; ++s) {
        double k1p, k1z, k2p, k2z, k3p, k3z, k4p, k4z;
        rhs(p, z, k1p, k1z);
        rhs(p + 0.5 * h * k1p, z + 0.5 * h * k1z, k2p, k2z);
        rhs(p + 0.5 * h * k2p, z + 0.5 * h * k2z, k3p, k3z);
        rhs(p + h * k3p, z + h * k3z, k4p, k4z);
        p += h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
        z += h / 6.0 * (k1z + 2.0 * k2z + 2.0 * k3z + k4z);
    }
}

} // namespace

TEST_CASE("extinct phytoplankton stays extinct and zooplankton decays", "[pz]") {
    const auto model = ssm::make_pz_model();
    VectorXd theta(2);
    theta << 0.0, 0.0;
    VectorXd x(3);
    x << 0.0, 3.0, 0.0;
    double z_prev = x[1];
    for (int day = 0; day < 20; ++day) {
        x = model.transition(VectorXd::Zero(1), x, theta);
        CHECK(x[0] == 0.0);
        CHECK(x[1] < z_prev);
        z_prev = x[1];
    }
}

TEST_CASE("sigma = 0 removes the noise dependence", "[pz]") {
    const auto model = ssm::make_pz_model();
    VectorXd theta(2);
    theta << 0.3, 0.0;
    VectorXd x(3);
    x << 1.5, 0.7, 0.3;
    const VectorXd up = VectorXd::Constant(1, 1.0);
    const VectorXd um = VectorXd::Constant(1, -1.0);
    CHECK((model.transition(up, x, theta) - model.transition(um, x, theta)).norm() == 0.0);
}

TEST_CASE("one day of dynamics matches a fine-step reference integrator", "[pz]") {
    const auto model = ssm::make_pz_model();
    VectorXd theta(2);
    theta << 0.3, 0.1;
    VectorXd x(3);
    x << 2.0, 2.0, 0.0;
    const VectorXd out = model.transition(VectorXd::Zero(1), x, theta);
    double p = 2.0, z = 2.0;
    reference_day(p, z, 0.3, 1e-4);
    CHECK(out[0] == Catch::Approx(p).epsilon(1e-6));
    CHECK(out[1] == Catch::Approx(z).epsilon(1e-6));
    CHECK(out[2] == 0.3);
}

TEST_CASE("observation log-density evaluates the log-normal exactly", "[pz]") {
    const auto model = ssm::make_pz_model();
    VectorXd theta(2);
    theta << 0.3, 0.1;
    VectorXd x(3);
    x << 2.0, 1.0, 0.3;
    VectorXd y(1);
    y << 2.0;
    const double expected =
        -std::log(0.2) - 0.5 * std::log(2.0 * std::numbers::pi) - std::log(2.0);
    CHECK(model.obs_logdensity(y, x, theta) == Catch::Approx(expected).epsilon(1e-13));

    // One sd away in log space: 0.5 lower, minus the Jacobian difference.
    VectorXd y1(1);
    y1 << std::exp(std::log(2.0) + 0.2);
    const double got = model.obs_logdensity(y1, x, theta);
    CHECK(got == Catch::Approx(expected - 0.5 - (std::log(y1[0]) - std::log(2.0))).epsilon(1e-12));
}

TEST_CASE("observation density depends on the log ratio only, modulo the jacobian", "[pz]") {
    const auto model = ssm::make_pz_model();
    VectorXd theta(2);
    theta << 0.5, 0.2;
    RngStream s(8);
    for (int rep = 0; rep < 20; ++rep) {
        const double y = std::exp(s.normal());
        const double p = std::exp(s.normal());
        const double c = std::exp(s.normal());
        VectorXd yv(1), xv(3), yc(1), xc(3);
        yv << y;
        xv << p, 1.0, 0.0;
        yc << c * y;
        xc << c * p, 1.0, 0.0;
        const double base = model.obs_logdensity(yv, xv, theta);
        const double scaled = model.obs_logdensity(yc, xc, theta);
        REQUIRE(scaled == Catch::Approx(base - std::log(c)).epsilon(1e-10));
    }
}

TEST_CASE("nonpositive observations are rejected", "[pz]") {
    const auto model = ssm::make_pz_model();
    VectorXd theta(2);
    theta << 0.3, 0.1;
    VectorXd x(3);
    x << 2.0, 1.0, 0.3;
    CHECK_THROWS_AS(model.obs_logdensity(VectorXd::Zero(1), x, theta), std::invalid_argument);
}

TEST_CASE("positive starts stay positive across the prior", "[pz]") {
    const auto model = ssm::make_pz_model();
    RngStream root(99);
    for (int rep = 0; rep < 1000; ++rep) {
        RngStream s = root.child(static_cast<std::uint64_t>(rep));
        const VectorXd theta = model.theta_prior.sample(s);
        VectorXd x = model.x0_prior.sample(theta, s);
        for (int day = 0; day < 100; ++day) {
            x = model.transition(s.normal_vector(1), x, theta);
            REQUIRE(std::isfinite(x[0]));
            REQUIRE(std::isfinite(x[1]));
            REQUIRE(x[0] > 0.0);
            REQUIRE(x[1] > 0.0);
        }
    }
}

TEST_CASE("the simulated dataset observes P only, daily", "[pz]") {
    const auto model = ssm::make_pz_model();
    VectorXd theta(2);
    theta << 0.3, 0.1;
    VectorXd x0(3);
    x0 << 2.0, 2.0, 0.3;
    const auto data = ssm::simulate_dataset(model, theta, x0, 100, 1);
    CHECK(data.y.rows() == 1);
    CHECK(data.y.cols() == 100);
    CHECK(data.x_path.size() == 100);
    // zero observation noise reproduces the observation map exactly
    const auto clean = ssm::simulate_dataset(model, theta, x0, 10, 1, true);
    for (int t = 0; t < 10; ++t)
        CHECK(clean.y(0, t) == clean.x_path[static_cast<std::size_t>(t)][0]);
}
