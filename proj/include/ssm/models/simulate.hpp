#pragma once

#include <cstdint>
#include <vector>

#include "ssm/model.hpp"

namespace ssm {

struct Dataset {
    MatrixXd y;                    // n_y x T, one column per day
    std::vector<VectorXd> x_path;  // ground-truth states x_1..x_T
    std::vector<VectorXd> u_path;  // ground-truth noise u_1..u_T
    VectorXd x0;
    VectorXd theta;
    std::uint64_t seed = 0;
};

// Integrate a single trajectory for T days and observe it daily through the
// model's observation noise. With zero_obs_noise the observations are the
// deterministic observation map of the trajectory.
inline Dataset simulate_dataset(const ModelSpec& model, const VectorXd& theta_true,
                                const VectorXd& x0_true, int T, std::uint64_t seed,
                                bool zero_obs_noise = false) {
    Dataset out;
    out.theta = theta_true;
    out.x0 = x0_true;
    out.seed = seed;
    out.y.resize(model.n_y, T);
    out.x_path.reserve(static_cast<std::size_t>(T));
    out.u_path.reserve(static_cast<std::size_t>(T));
    RngStream root(seed);
    VectorXd x = x0_true;
    for (int t = 1; t <= T; ++t) {
        RngStream us = root.child(1).child(static_cast<std::uint64_t>(t));
        const VectorXd u = us.normal_vector(model.n_u);
        x = model.transition(u, x, theta_true);
        out.u_path.push_back(u);
        out.x_path.push_back(x);
        if (zero_obs_noise) {
            out.y.col(t - 1) = model.obs_mean(x, theta_true);
        } else {
            RngStream ys = root.child(2).child(static_cast<std::uint64_t>(t));
            out.y.col(t - 1) = model.obs_sample(x, theta_true, ys);
        }
    }
    return out;
}

} // namespace ssm
