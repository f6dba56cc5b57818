#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <fstream>
#include <numbers>

#include "ssm/models/npzd.hpp"
#include "ssm/models/simulate.hpp"

using Eigen::VectorXd;
using ssm::NpzdConstants;
using ssm::RngStream;

namespace {

VectorXd default_state() {
    const auto prior = ssm::npzd_default_priors();
    return ssm::npzd_default_x0(ssm::npzd_default_theta(), prior);
}

} // namespace

TEST_CASE("AR step holds the stationary mean fixed under zero noise", "[npzd]") {
    CHECK(ssm::npzd_ar_step(1.3, 1.3, 0.5, 2.0, 0.0, 1.0, 10.0) == Catch::Approx(1.3));
}

TEST_CASE("AR step with dt = tau replaces the value outright", "[npzd]") {
    CHECK(ssm::npzd_ar_step(7.0, 1.0, 0.5, 2.0, 1.5, 10.0, 10.0) ==
          Catch::Approx(1.0 + 2.0 * 0.5 * 1.5));
}

TEST_CASE("AR step scalar arithmetic", "[npzd]") {
    // B=0, mu=1, DF=2, sigma=0.5, xi=1, dt/tau=0.1 -> 0.9*0 + (1+1)*0.1 = 0.2
    CHECK(ssm::npzd_ar_step(0.0, 1.0, 0.5, 2.0, 1.0, 1.0, 10.0) == Catch::Approx(0.2));
    CHECK_THROWS_AS(ssm::npzd_ar_step(0.0, 1.0, 0.5, 2.0, 1.0, 2.0, 1.0), std::invalid_argument);
}

TEST_CASE("reference temperature gives unit correction for any Q10", "[npzd]") {
    NpzdConstants k;
    k.q10 = 3.7;
    k.temperature = k.t_ref;
    const auto rates = ssm::npzd_rates(default_state(), ssm::npzd_default_theta(), k);
    CHECK(rates.tc == 1.0);
}

TEST_CASE("functional-response midpoint halves the ingestion rate", "[npzd]") {
    NpzdConstants k;
    k.upsilon = 1.0;
    VectorXd x = default_state();
    VectorXd theta = ssm::npzd_default_theta();
    // arrange Cl_Z * P = I_Z
    x[ssm::npzd::iB0 + 4] = 0.8; // I_Z
    x[ssm::npzd::iB0 + 5] = 0.4; // Cl_Z
    x[ssm::npzd::iP] = 2.0;
    const auto rates = ssm::npzd_rates(x, theta, k);
    CHECK(rates.a == Catch::Approx(1.0));
    CHECK(rates.gr == Catch::Approx(rates.tc * 0.8 / 2.0));
}

TEST_CASE("light limitation saturates monotonically toward 1", "[npzd]") {
    VectorXd x = default_state();
    VectorXd theta = ssm::npzd_default_theta();
    double prev = 0.0;
    for (double e0 : {10.0, 100.0, 1000.0, 10000.0, 100000.0}) {
        NpzdConstants k;
        k.e0 = e0;
        const auto rates = ssm::npzd_rates(x, theta, k);
        CHECK(rates.h_e > prev);
        prev = rates.h_e;
    }
    CHECK(prev > 0.95);
    CHECK(prev <= 1.0);
}

TEST_CASE("total nitrogen is conserved without mixing or sinking", "[npzd]") {
    NpzdConstants k;
    k.kappa = 0.0;
    VectorXd theta = ssm::npzd_default_theta();
    theta[ssm::npzd::iSD] = 0.0;
    const auto model = ssm::make_npzd_model(k);
    RngStream s(31);
    VectorXd x = default_state();
    const double total0 = x.head(4).sum();
    for (int day = 0; day < 100; ++day) {
        x = model.transition(s.normal_vector(9), x, theta);
        REQUIRE(x.allFinite());
    }
    CHECK(std::abs(x.head(4).sum() - total0) / total0 < 1e-6);
}

TEST_CASE("with only nutrient present N relaxes exponentially to the boundary", "[npzd]") {
    NpzdConstants k;
    const auto model = ssm::make_npzd_model(k);
    VectorXd theta = ssm::npzd_default_theta();
    VectorXd x = default_state();
    x[ssm::npzd::iP] = 0.0;
    x[ssm::npzd::iZ] = 0.0;
    x[ssm::npzd::iD] = 0.0;
    const double n0 = x[ssm::npzd::iN];
    const double rate = k.kappa / k.mld;
    for (int day = 1; day <= 10; ++day) {
        x = model.transition(VectorXd::Zero(9), x, theta);
        const double expected = k.bcn + (n0 - k.bcn) * std::exp(-rate * day);
        REQUIRE(x[ssm::npzd::iP] == 0.0);
        REQUIRE(x[ssm::npzd::iZ] == 0.0);
        REQUIRE(x[ssm::npzd::iD] == 0.0);
        REQUIRE(x[ssm::npzd::iN] == Catch::Approx(expected).epsilon(1e-8));
    }
}

TEST_CASE("zero noise with AR processes at their means is deterministic", "[npzd]") {
    const auto model = ssm::make_npzd_model();
    const VectorXd theta = ssm::npzd_default_theta();
    VectorXd a = default_state(), b = default_state();
    for (int day = 0; day < 25; ++day) {
        a = model.transition(VectorXd::Zero(9), a, theta);
        b = model.transition(VectorXd::Zero(9), b, theta);
    }
    CHECK((a - b).norm() == 0.0);
    CHECK(a.allFinite());
}

TEST_CASE("observation log-density is the sum of two log-normal terms", "[npzd]") {
    NpzdConstants k;
    const auto model = ssm::make_npzd_model(k);
    const VectorXd theta = ssm::npzd_default_theta();
    const VectorXd x = default_state();
    const auto rates = ssm::npzd_rates(x, theta, k);
    VectorXd y(2);
    y << x[ssm::npzd::iN], rates.chla;
    const double expected = 2.0 * (-std::log(0.4) - 0.5 * std::log(2.0 * std::numbers::pi)) -
                            std::log(y[0]) - std::log(y[1]);
    CHECK(model.obs_logdensity(y, x, theta) == Catch::Approx(expected).epsilon(1e-12));

    // Missing Chla: only the N term contributes.
    VectorXd ym(2);
    ym << y[0], std::numeric_limits<double>::quiet_NaN();
    const double n_term =
        -std::log(0.4) - 0.5 * std::log(2.0 * std::numbers::pi) - std::log(y[0]);
    CHECK(model.obs_logdensity(ym, x, theta) == Catch::Approx(n_term).epsilon(1e-12));

    // One sd away in ln N: exactly 0.5 below, minus the Jacobian difference.
    VectorXd y1 = y;
    y1[0] = std::exp(std::log(y[0]) + 0.4);
    CHECK(model.obs_logdensity(y1, x, theta) ==
          Catch::Approx(expected - 0.5 - (std::log(y1[0]) - std::log(y[0]))).epsilon(1e-12));

    VectorXd bad(2);
    bad << -1.0, 1.0;
    CHECK_THROWS_AS(model.obs_logdensity(bad, x, theta), std::invalid_argument);
}

TEST_CASE("the simulated NPZD dataset has daily (N, Chla) pairs", "[npzd]") {
    const auto model = ssm::make_npzd_model();
    const VectorXd theta = ssm::npzd_default_theta();
    const auto data = ssm::simulate_dataset(model, theta, default_state(), 100, 5);
    CHECK(data.y.rows() == 2);
    CHECK(data.y.cols() == 100);
    CHECK(data.y.allFinite());
    CHECK((data.y.array() > 0.0).all());
}

TEST_CASE("defaults files override constants and prior medians", "[npzd]") {
    const std::string path = "/tmp/ssm_npzd_defaults_test.txt";
    {
        std::ofstream out(path);
        out << "# comment line\n";
        out << "tau_P = 12.5\n";
        out << "sigma_ClZ = 0.07   # inline comment\n";
        out << "mu_gmax = 2.25\n";
        out << "N0 = 55\n";
        out << "prior_cv = 0.25\n";
    }
    NpzdConstants k;
    auto prior = ssm::npzd_default_priors();
    ssm::apply_npzd_overrides(k, prior, ssm::parse_key_value_file(path));
    CHECK(k.tau_p == 12.5);
    CHECK(k.sigma[5] == 0.07);
    CHECK(prior.theta_median[ssm::npzd::iMU0] == 2.25);
    CHECK(prior.conc_median[3] == 55.0);
    CHECK(prior.cv == 0.25);
}
