#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>

#include "ssm/model.hpp"

namespace ssm {

// Nutrient-phytoplankton-zooplankton-detritus box model in nitrogen
// currency. State X = (P, Z, D, N, B_1..B_9) where the B_i are the nine
// autoregressive community processes (gmax, lmax, RN, aN, IZ, ClZ, EZ, rD,
// mQ); the matching noise terms u_1..u_9 follow the same order. Parameters
// Theta = (K_W, a_Ch, S_D, f_D, mu_1..mu_9, PDF, ZDF).
//
// Prescribed constants not fixed by the experiments here (time scales, noise
// scales, temperature and light forcing, N:C bounds) ship with overridable
// defaults; see npzd_defaults.txt. The defaults are placeholders chosen for
// bounded 100-day trajectories, not field estimates.
struct NpzdConstants {
    double tau_p = 10.0;
    double tau_z = 10.0;
    std::array<double, 9> sigma{0.15, 0.002, 0.1, 0.03, 0.1, 0.02, 0.03, 0.01, 0.001};
    double q10 = 2.0;
    double t_ref = 15.0;
    double temperature = 15.0;
    double upsilon = 1.0;
    double q_yield = 12.0; // maximum quantum yield, used as alpha = a_Ch * Q
    double chi_min = 0.05;
    double chi_max = 0.17;
    double e0 = 40.0; // PAR just below the surface
    double kappa = 2.0; // mixing: lower two metres replenished daily
    double mld = 40.0;
    double bcn = 200.0;
    double bcp = 0.0;
    double bcd = 0.0;
    double substep = 0.1;
};

namespace npzd {

enum StateIndex { iP = 0, iZ = 1, iD = 2, iN = 3, iB0 = 4 }; // B block is 4..12
enum ParamIndex { iKW = 0, iACH = 1, iSD = 2, iFD = 3, iMU0 = 4, iPDF = 13, iZDF = 14 };

inline const std::array<const char*, 9>& process_names() {
    static const std::array<const char*, 9> names{"gmax", "lmax", "RN", "aN", "IZ",
                                                  "ClZ",  "EZ",   "rD", "mQ"};
    return names;
}

} // namespace npzd

// One autoregressive community-process step over dt:
//   B' = B (1 - dt/tau) + (mu + DF sigma xi) dt/tau.
inline double npzd_ar_step(double b, double mu, double sigma, double df, double xi, double dt,
                           double tau) {
    if (!(dt > 0.0) || !(dt <= tau))
        throw std::invalid_argument("npzd_ar_step: require 0 < dt <= tau");
    const double rho = dt / tau;
    return b * (1.0 - rho) + (mu + df * sigma * xi) * rho;
}

struct NpzdRates {
    double tc;   // temperature correction
    double a;    // relative availability of phytoplankton
    double gr;   // zooplankton specific grazing rate
    double m;    // zooplankton specific mortality rate
    double r;    // detrital remineralisation rate
    double g;    // phytoplankton specific growth rate
    double h_e;  // light limitation factor
    double h_n;  // nutrient limitation factor
    double e;    // mean PAR over the mixed layer
    double kz;   // attenuation depth scale
    double chi;  // phytoplankton N:C ratio
    double chla; // predicted chlorophyll-a concentration
};

inline NpzdRates npzd_rates(const VectorXd& x, const VectorXd& theta, const NpzdConstants& k) {
    using namespace npzd;
    NpzdRates out{};
    const double p = x[iP];
    const double z = x[iZ];
    const double n = x[iN];
    const double gmax = x[iB0 + 0];
    const double lmax = x[iB0 + 1];
    const double rn = x[iB0 + 2];
    const double an = x[iB0 + 3];
    const double iz = x[iB0 + 4];
    const double clz = x[iB0 + 5];
    const double mq = x[iB0 + 8];
    const double rd = x[iB0 + 7];

    out.tc = std::pow(k.q10, (k.temperature - k.t_ref) / 10.0);

    // Nutrient limitation; shut off for nonpositive nutrient or affinity.
    const double half_sat = (an > 0.0) ? gmax * out.tc / an : std::numeric_limits<double>::infinity();
    out.h_n = (n > 0.0 && half_sat + n > 0.0) ? n / (half_sat + n) : 0.0;

    // Light limitation couples to Chla through self-shading (Kz depends on
    // Chla, Chla on h_E). The map Chla -> h_E -> Chla is increasing and
    // bounded, so a fixed point is reached from Chla = 0.
    const double alpha_slope = theta[iACH] * k.q_yield;
    double chla = 0.0;
    double h_e = 0.0;
    double e_mean = k.e0;
    double kz = 0.0;
    for (int it = 0; it < 64; ++it) {
        kz = (theta[iKW] + theta[iACH] * chla) * k.mld;
        e_mean = (std::abs(kz) > 1e-12) ? k.e0 * (-std::expm1(-kz)) / kz : k.e0;
        h_e = (gmax != 0.0) ? -std::expm1(-alpha_slope * lmax * e_mean / gmax) : 0.0;
        const double denom = rn * h_e + out.h_n;
        const double next = (denom > 0.0 && p > 0.0)
                                ? p * (lmax / k.chi_max) * out.h_n * out.tc / denom
                                : 0.0;
        if (std::abs(next - chla) <= 1e-13 * std::max(1.0, std::abs(next))) {
            chla = next;
            break;
        }
        chla = next;
    }
    out.chla = chla;
    out.kz = kz;
    out.e = e_mean;
    out.h_e = h_e;

    out.g = (out.h_e + out.h_n > 0.0) ? out.tc * gmax * out.h_e * out.h_n / (out.h_e + out.h_n)
                                      : 0.0;
    out.chi = (out.h_e + out.h_n > 0.0)
                  ? (k.chi_min * out.h_e + k.chi_max * out.h_n) / (out.h_e + out.h_n)
                  : 0.0;

    out.a = (iz > 0.0) ? clz * p / iz : 0.0;
    const double au = std::pow(std::max(out.a, 0.0), k.upsilon);
    out.gr = std::isfinite(au) ? out.tc * iz * au / (1.0 + au) : out.tc * iz;
    out.m = out.tc * mq * z;
    out.r = out.tc * rd;
    return out;
}

// One day of NPZD dynamics: the nine AR processes step once (piecewise
// constant over the day), then (P, Z, D, N) advance by RK4 substeps. After
// each substep, negative concentrations are clipped with the clipped mass
// returned to N so total nitrogen is conserved exactly when kappa = S_D = 0.
inline VectorXd npzd_transition(const VectorXd& u, const VectorXd& x, const VectorXd& theta,
                                const NpzdConstants& k) {
    using namespace npzd;
    VectorXd out = x;
    for (int i = 0; i < 9; ++i) {
        const double df = i < 4 ? theta[iPDF] : theta[iZDF];
        const double tau = i < 4 ? k.tau_p : k.tau_z;
        out[iB0 + i] = npzd_ar_step(x[iB0 + i], theta[iMU0 + i], k.sigma[static_cast<std::size_t>(i)],
                                    df, u[i], 1.0, tau);
    }

    const double fd = theta[iFD];
    const double sd = theta[iSD];
    const double mix = k.kappa / k.mld;
    const auto rhs = [&](const Eigen::Vector4d& c, Eigen::Vector4d& dc) {
        VectorXd state = out;
        state[iP] = c[0];
        state[iZ] = c[1];
        state[iD] = c[2];
        state[iN] = c[3];
        const NpzdRates rt = npzd_rates(state, theta, k);
        const double ez = out[iB0 + 6];
        const double graze = rt.gr * c[1];
        dc[0] = rt.g * c[0] - graze + mix * (k.bcp - c[0]);
        dc[1] = ez * graze - rt.m * c[1];
        dc[2] = (1.0 - ez) * fd * graze + rt.m * c[1] - rt.r * c[2] - sd * c[2] / k.mld +
                mix * (k.bcd - c[2]);
        dc[3] = -rt.g * c[0] + (1.0 - ez) * (1.0 - fd) * graze + rt.r * c[2] + mix * (k.bcn - c[3]);
    };

    Eigen::Vector4d c(x[iP], x[iZ], x[iD], x[iN]);
    const double h = k.substep;
    const int nsub = static_cast<int>(std::lround(1.0 / h));
    Eigen::Vector4d k1, k2, k3, k4;
    for (int s = 0; s < nsub; ++s) {
        rhs(c, k1);
        rhs(c + 0.5 * h * k1, k2);
        rhs(c + 0.5 * h * k2, k3);
        rhs(c + h * k3, k4);
        c += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        for (int j = 0; j < 3; ++j) {
            if (c[j] < 0.0) {
                c[3] += c[j];
                c[j] = 0.0;
            }
        }
    }
    out[iP] = c[0];
    out[iZ] = c[1];
    out[iD] = c[2];
    out[iN] = c[3];
    return out;
}

inline double npzd_obs_logdensity(const VectorXd& y, const VectorXd& x, const VectorXd& theta,
                                  const NpzdConstants& k, double obs_sd = 0.4) {
    const NpzdRates rt = npzd_rates(x, theta, k);
    const double preds[2] = {x[npzd::iN], rt.chla};
    double total = 0.0;
    for (int j = 0; j < 2; ++j) {
        if (std::isnan(y[j])) continue; // missing entry: only the other term contributes
        if (!(y[j] > 0.0))
            throw std::invalid_argument("npzd_obs_logdensity: observations must be > 0");
        if (!(preds[j] > 0.0) || !std::isfinite(preds[j]))
            return -std::numeric_limits<double>::infinity();
        total += detail::lognormal_logpdf(y[j], std::log(preds[j]), obs_sd);
    }
    return total;
}

// Priors: log-normal over all 15 parameters and the 4 initial concentrations
// (median at the defaults, coefficient of variation cv); the AR processes
// start from their stationary distribution given theta.
struct NpzdPriorConfig {
    VectorXd theta_median;   // 15
    VectorXd conc_median;    // P, Z, D, N at time 0
    double cv = 0.5;
    double sigma_ln() const { return std::sqrt(std::log1p(cv * cv)); }
};

inline VectorXd npzd_default_theta() {
    VectorXd t(15);
    t << 0.04, 0.02, 5.0, 0.4, // K_W, a_Ch, S_D, f_D
        1.5, 0.02, 1.0, 0.3, 1.0, 0.2, 0.3, 0.1, 0.01, // mu_gmax .. mu_mQ
        1.0, 1.0; // PDF, ZDF
    return t;
}

inline NpzdPriorConfig npzd_default_priors() {
    NpzdPriorConfig p;
    p.theta_median = npzd_default_theta();
    p.conc_median = VectorXd(4);
    p.conc_median << 1.0, 1.0, 1.0, 100.0;
    return p;
}

inline double npzd_ar_stationary_sd(int i, const VectorXd& theta, const NpzdConstants& k) {
    const double df = i < 4 ? theta[npzd::iPDF] : theta[npzd::iZDF];
    const double tau = i < 4 ? k.tau_p : k.tau_z;
    const double rho = 1.0 / tau;
    return std::abs(df) * k.sigma[static_cast<std::size_t>(i)] * std::sqrt(rho / (2.0 - rho));
}

inline VectorXd npzd_default_x0(const VectorXd& theta, const NpzdPriorConfig& prior) {
    VectorXd x(13);
    x.head(4) = prior.conc_median;
    x.tail(9) = theta.segment(npzd::iMU0, 9);
    return x;
}

inline ModelSpec make_npzd_model(const NpzdConstants& constants = {},
                                 const NpzdPriorConfig& prior = npzd_default_priors()) {
    using namespace npzd;
    ModelSpec m;
    m.name = "npzd";
    m.n_x = 13;
    m.n_u = 9;
    m.n_theta = 15;
    m.n_y = 2;
    m.default_horizon = 100;
    m.factorization = Factorization::X0InChain;
    const NpzdConstants k = constants;
    const double obs_sd = 0.4;

    m.transition = [k](const VectorXd& u, const VectorXd& x, const VectorXd& theta) {
        return npzd_transition(u, x, theta, k);
    };
    m.obs_logdensity = [k, obs_sd](const VectorXd& y, const VectorXd& x, const VectorXd& theta) {
        return npzd_obs_logdensity(y, x, theta, k, obs_sd);
    };
    m.obs_mean = [k](const VectorXd& x, const VectorXd& theta) {
        VectorXd y(2);
        y << x[iN], npzd_rates(x, theta, k).chla;
        return y;
    };
    m.obs_sample = [k, obs_sd](const VectorXd& x, const VectorXd& theta, RngStream& stream) {
        VectorXd y(2);
        y << std::exp(std::log(x[iN]) + obs_sd * stream.normal()),
            std::exp(std::log(npzd_rates(x, theta, k).chla) + obs_sd * stream.normal());
        return y;
    };

    const double s_ln = prior.sigma_ln();
    m.theta_prior.sample = [prior, s_ln](RngStream& stream) {
        VectorXd t(15);
        for (int i = 0; i < 15; ++i)
            t[i] = std::exp(std::log(prior.theta_median[i]) + s_ln * stream.normal());
        return t;
    };
    m.theta_prior.logpdf = [prior, s_ln](const VectorXd& t) {
        double lp = 0.0;
        for (int i = 0; i < 15; ++i) {
            if (!(t[i] > 0.0)) return -std::numeric_limits<double>::infinity();
            lp += detail::lognormal_logpdf(t[i], std::log(prior.theta_median[i]), s_ln);
        }
        return lp;
    };

    m.x0_prior.sample = [k, prior, s_ln](const VectorXd& theta, RngStream& stream) {
        VectorXd x(13);
        for (int i = 0; i < 4; ++i)
            x[i] = std::exp(std::log(prior.conc_median[i]) + s_ln * stream.normal());
        for (int i = 0; i < 9; ++i)
            x[iB0 + i] = theta[iMU0 + i] + npzd_ar_stationary_sd(i, theta, k) * stream.normal();
        return x;
    };
    m.x0_prior.logpdf = [k, prior, s_ln](const VectorXd& x, const VectorXd& theta) {
        double lp = 0.0;
        for (int i = 0; i < 4; ++i) {
            if (!(x[i] > 0.0)) return -std::numeric_limits<double>::infinity();
            lp += detail::lognormal_logpdf(x[i], std::log(prior.conc_median[i]), s_ln);
        }
        for (int i = 0; i < 9; ++i) {
            const double sd = npzd_ar_stationary_sd(i, theta, k);
            if (!(sd > 0.0)) return -std::numeric_limits<double>::infinity();
            const double r = (x[iB0 + i] - theta[iMU0 + i]) / sd;
            lp += -std::log(sd) - 0.5 * std::log(2.0 * std::numbers::pi) - 0.5 * r * r;
        }
        return lp;
    };

    m.gauss_obs.mean = [k](const VectorXd& x, const VectorXd& theta) {
        VectorXd z(2);
        z << std::log(x[iN]), std::log(npzd_rates(x, theta, k).chla);
        return z;
    };
    m.gauss_obs.noise_chol = [obs_sd](const VectorXd&) {
        return (MatrixXd(2, 2) << obs_sd, 0.0, 0.0, obs_sd).finished();
    };
    m.gauss_obs.to_gauss = [](const VectorXd& y) {
        return VectorXd(y.array().log().matrix());
    };
    m.gauss_obs.log_jacobian = [](const VectorXd& y) {
        return -std::log(y[0]) - std::log(y[1]);
    };

    m.x_to_belief = [](const VectorXd& x) {
        VectorXd b = x;
        b.head(4) = x.head(4).array().max(1e-300).log();
        return b;
    };
    m.belief_to_x = [](const VectorXd& b) {
        VectorXd x = b;
        x.head(4) = b.head(4).array().exp();
        return x;
    };
    m.x0_belief = [k, prior, s_ln](const VectorXd& theta) {
        GaussianBelief b;
        b.mean = VectorXd(13);
        b.mean.head(4) = prior.conc_median.array().log();
        b.mean.tail(9) = theta.segment(iMU0, 9);
        b.chol = MatrixXd::Zero(13, 13);
        for (int i = 0; i < 4; ++i) b.chol(i, i) = s_ln;
        for (int i = 0; i < 9; ++i)
            b.chol(iB0 + i, iB0 + i) = std::max(npzd_ar_stationary_sd(i, theta, k), 1e-6);
        return b;
    };
    m.theta_sampling_prior = [prior, s_ln]() {
        GaussianBelief b;
        b.mean = prior.theta_median.array().log();
        b.chol = s_ln * MatrixXd::Identity(15, 15);
        return b;
    };
    m.theta_transform = ParamTransform::all_log(15);
    {
        std::vector<bool> flags(13, false);
        for (int i = 0; i < 4; ++i) flags[static_cast<std::size_t>(i)] = true;
        m.x0_transform = ParamTransform{flags};
    }

    m.metadata = {{"integrator", "rk4"},
                  {"integrator_step_days", "0.1"},
                  {"noise_order", "xi_gmax,xi_lmax,xi_RN,xi_aN,xi_IZ,xi_ClZ,xi_EZ,xi_rD,xi_mQ"},
                  {"state_order", "P,Z,D,N,gmax,lmax,RN,aN,IZ,ClZ,EZ,rD,mQ"},
                  {"theta_order", "K_W,a_Ch,S_D,f_D,mu_gmax,mu_lmax,mu_RN,mu_aN,mu_IZ,mu_ClZ,"
                                  "mu_EZ,mu_rD,mu_mQ,PDF,ZDF"},
                  {"constants_note", "tau/sigma/forcing constants are overridable defaults, "
                                     "not values fitted in this work"}};
    return m;
}

// --- key = value defaults file ------------------------------------------

inline std::map<std::string, double> parse_key_value_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::map<std::string, double> kv;
    std::string line;
    while (std::getline(in, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        std::string key = line.substr(0, eq);
        std::string value = line.substr(eq + 1);
        const auto trim = [](std::string& s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            s = (b == std::string::npos) ? "" : s.substr(b, e - b + 1);
        };
        trim(key);
        trim(value);
        if (key.empty()) continue;
        kv[key] = std::stod(value);
    }
    return kv;
}

inline void apply_npzd_overrides(NpzdConstants& k, NpzdPriorConfig& prior,
                                 const std::map<std::string, double>& kv) {
    const auto get = [&](const char* key, double& slot) {
        auto it = kv.find(key);
        if (it != kv.end()) slot = it->second;
    };
    get("tau_P", k.tau_p);
    get("tau_Z", k.tau_z);
    for (int i = 0; i < 9; ++i)
        get(("sigma_" + std::string(npzd::process_names()[static_cast<std::size_t>(i)])).c_str(),
            k.sigma[static_cast<std::size_t>(i)]);
    get("Q10", k.q10);
    get("T_ref", k.t_ref);
    get("temperature", k.temperature);
    get("upsilon", k.upsilon);
    get("Q_yield", k.q_yield);
    get("chi_min", k.chi_min);
    get("chi_max", k.chi_max);
    get("E0", k.e0);
    get("kappa", k.kappa);
    get("MLD", k.mld);
    get("BCN", k.bcn);
    get("BCP", k.bcp);
    get("BCD", k.bcd);
    get("substep", k.substep);
    static const char* theta_keys[15] = {"K_W",    "a_Ch",   "S_D",   "f_D",   "mu_gmax",
                                         "mu_lmax", "mu_RN",  "mu_aN", "mu_IZ", "mu_ClZ",
                                         "mu_EZ",   "mu_rD",  "mu_mQ", "PDF",   "ZDF"};
    for (int i = 0; i < 15; ++i) get(theta_keys[i], prior.theta_median[i]);
    get("P0", prior.conc_median[0]);
    get("Z0", prior.conc_median[1]);
    get("D0", prior.conc_median[2]);
    get("N0", prior.conc_median[3]);
    get("prior_cv", prior.cv);
}

} // namespace ssm
