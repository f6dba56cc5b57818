#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ssm/apf.hpp"
#include "ssm/diagnostics.hpp"
#include "ssm/io/csv.hpp"
#include "ssm/models/linear_gaussian.hpp"
#include "ssm/models/npzd.hpp"
#include "ssm/models/pz.hpp"
#include "ssm/models/simulate.hpp"
#include "ssm/pmmh.hpp"
#include "ssm/ukf.hpp"
#include "ssm/version.hpp"

namespace ssm::cli {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

struct ModelBundle {
    ModelSpec spec;
    VectorXd default_theta;
    VectorXd default_x0;
    std::vector<std::string> theta_names;
    std::vector<std::string> state_names;
};

inline std::vector<std::string> split_csv_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(item);
    return out;
}

inline ModelBundle make_model(const json& config) {
    const std::string name = config.value("model", "pz");
    ModelBundle b;
    if (name == "pz") {
        b.spec = make_pz_model();
        b.default_theta = VectorXd(2);
        b.default_theta << 0.3, 0.1;
        b.default_x0 = VectorXd(3);
        b.default_x0 << 2.0, 2.0, 0.3;
    } else if (name == "npzd") {
        NpzdConstants constants;
        NpzdPriorConfig prior = npzd_default_priors();
        if (config.contains("constants_file"))
            apply_npzd_overrides(constants, prior,
                                 parse_key_value_file(config["constants_file"].get<std::string>()));
        if (config.contains("constants")) {
            std::map<std::string, double> kv;
            for (const auto& [key, value] : config["constants"].items())
                kv[key] = value.get<double>();
            apply_npzd_overrides(constants, prior, kv);
        }
        b.spec = make_npzd_model(constants, prior);
        b.default_theta = prior.theta_median;
        b.default_x0 = npzd_default_x0(b.default_theta, prior);
    } else if (name == "linear_gaussian_test") {
        b.spec = make_linear_gaussian_model();
        b.default_theta = VectorXd::Constant(1, 0.4);
        b.default_x0 = VectorXd::Constant(1, 0.7);
    } else {
        throw std::invalid_argument("unknown model: " + name);
    }
    if (config.contains("factorization")) {
        const std::string f = config["factorization"].get<std::string>();
        if (f == "x0_in_filter")
            b.spec.factorization = Factorization::X0InFilter;
        else if (f == "x0_in_chain")
            b.spec.factorization = Factorization::X0InChain;
        else
            throw std::invalid_argument("factorization must be x0_in_filter or x0_in_chain");
    }
    b.theta_names = split_csv_list(b.spec.metadata.at("theta_order"));
    b.state_names = split_csv_list(b.spec.metadata.at("state_order"));
    return b;
}

inline VectorXd vector_from_json(const json& j) {
    VectorXd v(j.size());
    Eigen::Index i = 0;
    for (const auto& x : j) v[i++] = x.get<double>();
    return v;
}

inline json json_from_vector(const VectorXd& v) {
    json j = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) j.push_back(v[i]);
    return j;
}

// --- run context -----------------------------------------------------------

struct RunContext {
    json config;      // fully resolved; echoed into the manifest
    fs::path out;
    bool force = false;
    std::uint64_t seed = 1;
    int workers = 1;
};

inline void write_manifest(const RunContext& ctx, const std::string& command,
                           const ModelBundle& bundle) {
    json manifest = ctx.config;
    manifest["command"] = command;
    manifest["version"] = kVersion;
    json meta;
    for (const auto& [k, v] : bundle.spec.metadata) meta[k] = v;
    manifest["model_metadata"] = meta;
    std::ofstream out(ctx.out / "manifest.json");
    out << manifest.dump(2) << "\n";
}

inline void prepare_out_dir(const RunContext& ctx) {
    if (fs::exists(ctx.out / "manifest.json") && !ctx.force)
        throw std::runtime_error("output directory " + ctx.out.string() +
                                 " already holds a run; use --force to overwrite");
    fs::create_directories(ctx.out);
}

// --- dataset I/O -----------------------------------------------------------

struct LoadedDataset {
    MatrixXd y;
    std::optional<VectorXd> truth_theta;
    std::optional<VectorXd> truth_x0;
};

inline LoadedDataset load_dataset(const json& config) {
    if (!config.contains("data"))
        throw std::invalid_argument("config needs a 'data' key pointing at a simulate output");
    fs::path base(config["data"].get<std::string>());
    fs::path csv = fs::is_directory(base) ? base / "data.csv" : base;
    const CsvTable table = read_csv(csv.string());
    LoadedDataset out;
    const Eigen::Index ny = static_cast<Eigen::Index>(table.columns.size()) - 1;
    out.y.resize(ny, table.values.rows());
    for (Eigen::Index t = 0; t < table.values.rows(); ++t)
        for (Eigen::Index j = 0; j < ny; ++j) out.y(j, t) = table.values(t, j + 1);
    const fs::path truth = (fs::is_directory(base) ? base : base.parent_path()) / "truth.json";
    if (fs::exists(truth)) {
        std::ifstream in(truth);
        json tj = json::parse(in);
        out.truth_theta = vector_from_json(tj["theta"]);
        out.truth_x0 = vector_from_json(tj["x0"]);
    }
    return out;
}

inline VectorXd resolve_point(const json& config, const char* key,
                              const std::optional<VectorXd>& truth, const VectorXd& fallback) {
    if (config.contains(key) && config[key].is_array()) return vector_from_json(config[key]);
    if (truth) return *truth;
    return fallback;
}

inline int resolve_particles(const json& config, const ModelSpec& model, ProposalScheme scheme) {
    const int m = config.value("particles", 64);
    const std::string mode =
        config.contains("budget") ? config["budget"].value("mode", "particle_matched")
                                  : "particle_matched";
    if (mode == "particle_matched") return m;
    if (mode == "compute_matched")
        return compute_matched_particles(scheme, m, model.n_u, model.n_x, model.n_y);
    throw std::invalid_argument("budget.mode must be particle_matched or compute_matched");
}

// --- commands --------------------------------------------------------------

inline int cmd_simulate(RunContext& ctx) {
    ModelBundle bundle = make_model(ctx.config);
    const int horizon = ctx.config.value("horizon", bundle.spec.default_horizon);
    const VectorXd theta = resolve_point(ctx.config, "theta_true", std::nullopt, bundle.default_theta);
    const VectorXd x0 = resolve_point(ctx.config, "x0_true", std::nullopt, bundle.default_x0);
    const bool zero_noise = ctx.config.value("zero_obs_noise", false);
    ctx.config["horizon"] = horizon;
    ctx.config["theta_true"] = json_from_vector(theta);
    ctx.config["x0_true"] = json_from_vector(x0);
    ctx.config["zero_obs_noise"] = zero_noise;

    const Dataset data = simulate_dataset(bundle.spec, theta, x0, horizon, ctx.seed, zero_noise);

    prepare_out_dir(ctx);
    CsvWriter writer((ctx.out / "data.csv").string());
    std::vector<std::string> header{"t"};
    for (int j = 0; j < bundle.spec.n_y; ++j) header.push_back("y_" + std::to_string(j + 1));
    writer.header(header);
    for (int t = 0; t < horizon; ++t) {
        std::vector<double> row{static_cast<double>(t + 1)};
        for (int j = 0; j < bundle.spec.n_y; ++j) row.push_back(data.y(j, t));
        writer.row(row);
    }

    json truth;
    truth["model"] = ctx.config.value("model", "pz");
    truth["seed"] = ctx.seed;
    truth["theta"] = json_from_vector(theta);
    truth["x0"] = json_from_vector(x0);
    truth["horizon"] = horizon;
    json traj = json::array(), noise = json::array();
    for (const auto& x : data.x_path) traj.push_back(json_from_vector(x));
    for (const auto& u : data.u_path) noise.push_back(json_from_vector(u));
    truth["trajectory"] = traj;
    truth["noise"] = noise;
    std::ofstream tf(ctx.out / "truth.json");
    tf << truth.dump(2) << "\n";

    write_manifest(ctx, "simulate", bundle);
    return 0;
}

inline int cmd_filter(RunContext& ctx) {
    ModelBundle bundle = make_model(ctx.config);
    const LoadedDataset data = load_dataset(ctx.config);
    const ProposalScheme scheme = parse_scheme(ctx.config.value("scheme", "PF0"));
    const int particles = resolve_particles(ctx.config, bundle.spec, scheme);
    const int replicates = ctx.config.value("replicates", 1);
    const VectorXd theta = resolve_point(ctx.config, "theta", data.truth_theta, bundle.default_theta);
    std::optional<VectorXd> x0;
    if (bundle.spec.factorization == Factorization::X0InChain)
        x0 = resolve_point(ctx.config, "x0", data.truth_x0, bundle.default_x0);
    ctx.config["scheme"] = to_string(scheme);
    ctx.config["resolved_particles"] = particles;
    ctx.config["replicates"] = replicates;
    ctx.config["theta"] = json_from_vector(theta);
    if (x0) ctx.config["x0"] = json_from_vector(*x0);

    FilterOptions options;
    options.workers = 1; // replicates fan out instead
    VectorXd logl(replicates);
    std::vector<int> collapsed(static_cast<std::size_t>(replicates), 0);
    RngStream root(ctx.seed);
    parallel_for(replicates, ctx.workers, [&](std::int64_t i) {
        const FilterResult r =
            run_filter(bundle.spec, scheme, particles, x0, theta, data.y,
                       root.child(static_cast<std::uint64_t>(i)), options);
        logl[i] = r.estimate.log_likelihood;
        collapsed[static_cast<std::size_t>(i)] = r.estimate.collapsed ? 1 : 0;
    });

    prepare_out_dir(ctx);
    CsvWriter writer((ctx.out / "replicates.csv").string());
    writer.header({"replicate", "log_likelihood", "collapsed"});
    for (int i = 0; i < replicates; ++i)
        writer.row({static_cast<double>(i), logl[i],
                    static_cast<double>(collapsed[static_cast<std::size_t>(i)])});

    json summary;
    int n_collapsed = 0;
    for (int c : collapsed) n_collapsed += c;
    VectorXd finite = logl;
    double mean = std::numeric_limits<double>::quiet_NaN();
    double sd = std::numeric_limits<double>::quiet_NaN();
    if (n_collapsed < replicates) {
        std::vector<double> vals;
        for (int i = 0; i < replicates; ++i)
            if (std::isfinite(logl[i])) vals.push_back(logl[i]);
        mean = 0.0;
        for (double v : vals) mean += v;
        mean /= static_cast<double>(vals.size());
        sd = 0.0;
        for (double v : vals) sd += (v - mean) * (v - mean);
        sd = vals.size() > 1 ? std::sqrt(sd / (static_cast<double>(vals.size()) - 1.0)) : 0.0;
    }
    summary["replicates"] = replicates;
    summary["collapsed"] = n_collapsed;
    summary["log_likelihood_mean"] = mean;
    summary["log_likelihood_sd"] = sd;
    if (replicates >= 2) {
        try {
            summary["car"] = car_sorted(logl);
        } catch (const UndefinedCarError&) {
            summary["car"] = nullptr;
        }
    }
    summary["propagations_per_replicate"] = count_propagations(
        scheme, particles, bundle.spec.n_u, bundle.spec.n_x, bundle.spec.n_y,
        static_cast<int>(data.y.cols()));
    std::ofstream sf(ctx.out / "summary.json");
    sf << summary.dump(2) << "\n";

    write_manifest(ctx, "filter", bundle);
    return 0;
}

inline int cmd_pmmh(RunContext& ctx) {
    ModelBundle bundle = make_model(ctx.config);
    const LoadedDataset data = load_dataset(ctx.config);
    const ProposalScheme scheme = parse_scheme(ctx.config.value("scheme", "PF0"));
    const int particles = resolve_particles(ctx.config, bundle.spec, scheme);
    const int steps = ctx.config.value("steps", 1000);
    const int chains = ctx.config.value("chains", 1);
    const std::string init = ctx.config.value("init", "ukf");
    ctx.config["scheme"] = to_string(scheme);
    ctx.config["resolved_particles"] = particles;
    ctx.config["steps"] = steps;
    ctx.config["chains"] = chains;
    ctx.config["init"] = init;

    GaussianBelief start;
    if (init == "ukf") {
        const JointUkfResult ukf = joint_ukf_init(bundle.spec, data.y, UtParams{});
        start = chain_start_from_ukf(bundle.spec, ukf);
    } else if (init == "prior") {
        start = chain_prior_belief(bundle.spec);
    } else {
        throw std::invalid_argument("init must be ukf or prior");
    }
    const MatrixXd base_cov = start.covariance();

    const LikelihoodEvaluator evaluator =
        make_apf_evaluator(bundle.spec, data.y, scheme, particles);

    double scale = 0.0;
    json tune_info;
    if (!ctx.config.contains("proposal_scale") || ctx.config["proposal_scale"] == "tune") {
        ScaleTuneOptions topts;
        if (ctx.config.contains("tune")) {
            topts.target = ctx.config["tune"].value("target", topts.target);
            topts.band = ctx.config["tune"].value("band", topts.band);
            topts.pilot_steps = ctx.config["tune"].value("pilot_steps", topts.pilot_steps);
        }
        const ScaleTuneResult tuned = tune_scale(bundle.spec, base_cov, evaluator, start,
                                                 ctx.seed ^ 0x9E3779B97F4A7C15ull, topts);
        scale = tuned.scale;
        tune_info["halvings"] = tuned.halvings;
        tune_info["in_band"] = tuned.in_band;
        tune_info["pilot_acceptance"] = tuned.acceptance;
        if (!tuned.in_band)
            std::cerr << "tune_scale: no pilot hit the acceptance band; using smallest scale "
                      << scale << "\n";
    } else {
        scale = ctx.config["proposal_scale"].get<double>();
    }
    ctx.config["resolved_proposal_scale"] = scale;

    const MatrixXd proposal_chol = CholeskyFactor::from_covariance(scale * base_cov).L;

    std::vector<ChainResult> results(static_cast<std::size_t>(chains));
    parallel_for(chains, ctx.workers, [&](std::int64_t k) {
        ChainConfig cfg;
        cfg.n_steps = steps;
        cfg.seed = ctx.seed;
        cfg.chain_id = static_cast<int>(k);
        cfg.proposal_chol = proposal_chol;
        cfg.start = start;
        results[static_cast<std::size_t>(k)] = run_chain(bundle.spec, evaluator, cfg);
    });

    prepare_out_dir(ctx);
    std::vector<std::string> header{"step"};
    const bool with_x0 = bundle.spec.factorization == Factorization::X0InChain;
    if (with_x0)
        for (const auto& n : bundle.state_names) header.push_back("x0_" + n);
    for (const auto& n : bundle.theta_names) header.push_back(n);
    header.insert(header.end(), {"log_prior", "log_likelihood", "accepted"});

    json summary;
    summary["chains"] = json::array();
    const long long props_per_run = count_propagations(scheme, particles, bundle.spec.n_u,
                                                       bundle.spec.n_x, bundle.spec.n_y,
                                                       static_cast<int>(data.y.cols()));
    for (int k = 0; k < chains; ++k) {
        char name[32];
        std::snprintf(name, sizeof name, "chain_%03d.csv", k);
        CsvWriter writer((ctx.out / name).string());
        writer.header(header);
        const auto& samples = results[static_cast<std::size_t>(k)].samples;
        for (std::size_t s = 0; s < samples.size(); ++s) {
            std::vector<double> row{static_cast<double>(s)};
            const ChainPoint p = split_chain_state(bundle.spec, samples[s].z);
            if (with_x0)
                for (Eigen::Index i = 0; i < p.x0->size(); ++i) row.push_back((*p.x0)[i]);
            for (Eigen::Index i = 0; i < p.theta.size(); ++i) row.push_back(p.theta[i]);
            row.push_back(samples[s].log_prior);
            row.push_back(samples[s].log_likelihood);
            row.push_back(samples[s].accepted ? 1.0 : 0.0);
            writer.row(row);
        }
        const ChainSummary& cs = results[static_cast<std::size_t>(k)].summary;
        json cj;
        cj["chain"] = k;
        cj["acceptance_rate"] = cs.acceptance_rate;
        cj["accepted"] = cs.accepted;
        cj["steps"] = cs.n_steps;
        cj["filter_runs"] = cs.filter_runs;
        cj["oob_rejections"] = cs.oob_rejections;
        cj["collapse_rejections"] = cs.collapse_rejections;
        cj["runtime_seconds"] = cs.runtime_seconds;
        cj["propagations"] = cs.filter_runs * props_per_run;
        summary["chains"].push_back(cj);
    }
    if (!tune_info.is_null()) summary["tune"] = tune_info;
    std::ofstream sf(ctx.out / "summary.json");
    sf << summary.dump(2) << "\n";

    write_manifest(ctx, "pmmh", bundle);
    return 0;
}

inline std::vector<VectorXd> survey_points(const json& config, const ModelBundle& bundle,
                                           std::uint64_t seed) {
    if (!config.contains("points"))
        throw std::invalid_argument("car config needs a 'points' object");
    const json& pts = config["points"];
    const std::string type = pts.value("type", "grid");
    std::vector<VectorXd> out;
    if (type == "grid") {
        if (bundle.spec.name != "pz")
            throw std::invalid_argument("grid points are defined over the pz prior box");
        const int per_dim = pts.value("per_dim", 8);
        for (int i = 0; i < per_dim; ++i) {
            for (int j = 0; j < per_dim; ++j) {
                VectorXd p(2);
                p << (i + 0.5) / per_dim, 0.5 * (j + 0.5) / per_dim;
                out.push_back(p);
            }
        }
    } else if (type == "prior") {
        const int count = pts.value("count", 64);
        RngStream root(seed);
        for (int i = 0; i < count; ++i) {
            RngStream s = root.child(0xFFFFFFFF00000001ull).child(static_cast<std::uint64_t>(i));
            const VectorXd theta = bundle.spec.theta_prior.sample(s);
            if (bundle.spec.factorization == Factorization::X0InChain) {
                const VectorXd x0 = bundle.spec.x0_prior.sample(theta, s);
                VectorXd p(x0.size() + theta.size());
                p << x0, theta;
                out.push_back(p);
            } else {
                out.push_back(theta);
            }
        }
    } else {
        throw std::invalid_argument("points.type must be grid or prior");
    }
    return out;
}

inline int cmd_car(RunContext& ctx) {
    ModelBundle bundle = make_model(ctx.config);
    const LoadedDataset data = load_dataset(ctx.config);
    const ProposalScheme scheme = parse_scheme(ctx.config.value("scheme", "PF0"));
    const int particles = resolve_particles(ctx.config, bundle.spec, scheme);
    const int replicates = ctx.config.value("replicates", 50);
    ctx.config["scheme"] = to_string(scheme);
    ctx.config["resolved_particles"] = particles;
    ctx.config["replicates"] = replicates;

    const std::vector<VectorXd> points = survey_points(ctx.config, bundle, ctx.seed);

    CarSurveyOptions options;
    options.workers = ctx.workers;
    const std::vector<CarEstimate> survey =
        car_survey(bundle.spec, data.y, scheme, particles, points, replicates, ctx.seed, options);

    prepare_out_dir(ctx);
    std::vector<std::string> header;
    const bool with_x0 = bundle.spec.factorization == Factorization::X0InChain;
    if (with_x0)
        for (const auto& n : bundle.state_names) header.push_back("x0_" + n);
    for (const auto& n : bundle.theta_names) header.push_back(n);
    header.insert(header.end(), {"alpha", "L", "collapsed_count"});
    CsvWriter writer((ctx.out / "car.csv").string());
    writer.header(header);
    for (const auto& e : survey) {
        std::vector<double> row;
        for (Eigen::Index i = 0; i < e.location.size(); ++i) row.push_back(e.location[i]);
        row.push_back(e.alpha);
        row.push_back(static_cast<double>(e.replicates));
        row.push_back(static_cast<double>(e.collapsed));
        writer.row(row);
    }

    if (ctx.config.value("rank_export", false)) {
        MatrixXd params(static_cast<Eigen::Index>(survey.size()),
                        bundle.spec.factorization == Factorization::X0InChain
                            ? bundle.spec.n_x + bundle.spec.n_theta
                            : bundle.spec.n_theta);
        VectorXd cars(static_cast<Eigen::Index>(survey.size()));
        for (std::size_t i = 0; i < survey.size(); ++i) {
            params.row(static_cast<Eigen::Index>(i)) = survey[i].location.transpose();
            cars[static_cast<Eigen::Index>(i)] = survey[i].alpha;
        }
        const RankExport ranks = rank_export(params, cars);
        std::vector<std::string> rh;
        for (std::size_t j = 0; j + 3 < header.size(); ++j) rh.push_back("rank_" + header[j]);
        rh.push_back("rank_alpha");
        CsvWriter rw((ctx.out / "ranks.csv").string());
        rw.header(rh);
        for (Eigen::Index i = 0; i < ranks.car_ranks.size(); ++i) {
            std::vector<double> row;
            for (Eigen::Index j = 0; j < ranks.param_ranks.cols(); ++j)
                row.push_back(ranks.param_ranks(i, j));
            row.push_back(ranks.car_ranks[i]);
            rw.row(row);
        }
    }

    write_manifest(ctx, "car", bundle);
    return 0;
}

inline int cmd_rhat(RunContext& ctx) {
    ModelBundle bundle = make_model(ctx.config);
    if (!ctx.config.contains("chains"))
        throw std::invalid_argument("rhat config needs 'chains': a pmmh output directory");
    const fs::path dir(ctx.config["chains"].get<std::string>());
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name.rfind("chain_", 0) == 0 && entry.path().extension() == ".csv")
            files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.size() < 2) throw std::runtime_error("rhat needs at least two chain files");

    std::vector<MatrixXd> chains;
    Eigen::Index d = 0;
    for (const auto& f : files) {
        const CsvTable table = read_csv(f.string());
        const Eigen::Index first = table.column(
            bundle.spec.factorization == Factorization::X0InChain
                ? "x0_" + bundle.state_names[0]
                : bundle.theta_names[0]);
        const Eigen::Index last = table.column("log_prior");
        d = last - first;
        MatrixXd chain(d, table.values.rows());
        for (Eigen::Index t = 0; t < table.values.rows(); ++t)
            chain.col(t) = table.values.row(t).segment(first, d).transpose();
        chains.push_back(std::move(chain));
    }

    const int n = static_cast<int>(chains[0].cols());
    const int interval = ctx.config.value("interval", std::max(10, n / 20));
    ctx.config["interval"] = interval;

    prepare_out_dir(ctx);
    CsvWriter writer((ctx.out / "rhat.csv").string());
    writer.header({"steps", "rhat", "ridged"});
    for (int m = interval; m <= n; m += interval) {
        if (m < 10) continue;
        std::vector<MatrixXd> heads;
        heads.reserve(chains.size());
        for (const auto& c : chains) heads.push_back(c.leftCols(m));
        const RhatResult r = rhat_multivariate(heads);
        writer.row({static_cast<double>(m), r.value, r.ridged ? 1.0 : 0.0});
    }

    write_manifest(ctx, "rhat", bundle);
    return 0;
}

// --- entry point -----------------------------------------------------------

inline int run(std::vector<std::string> args) {
    CLI::App app{"Collapsed state-space particle MCMC toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_dir;
    std::uint64_t seed_flag = 0;
    bool seed_set = false, force = false;
    int workers_flag = 0;

    const auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON run configuration");
        sub->add_option("--out", out_dir, "output directory (overrides config)");
        sub->add_option("--seed", seed_flag, "seed (overrides config)")->each([&](std::string) {
            seed_set = true;
        });
        sub->add_option("--workers", workers_flag, "worker threads (overrides config)");
        sub->add_flag("--force", force, "overwrite an existing output directory");
    };

    CLI::App* sub_simulate = app.add_subcommand("simulate", "generate a synthetic dataset");
    CLI::App* sub_filter = app.add_subcommand("filter", "replicate likelihood estimates");
    CLI::App* sub_pmmh = app.add_subcommand("pmmh", "run PMMH chains");
    CLI::App* sub_car = app.add_subcommand("car", "conditional acceptance rate survey");
    CLI::App* sub_rhat = app.add_subcommand("rhat", "multivariate convergence statistic");
    for (CLI::App* sub : {sub_simulate, sub_filter, sub_pmmh, sub_car, sub_rhat}) add_common(sub);

    std::vector<const char*> argv;
    argv.push_back("ssm");
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        RunContext ctx;
        if (!config_path.empty()) {
            std::ifstream in(config_path);
            if (!in) throw std::runtime_error("cannot open config " + config_path);
            ctx.config = json::parse(in);
            ctx.config.erase("command");
            ctx.config.erase("version");
            ctx.config.erase("model_metadata");
        }
        if (seed_set) ctx.config["seed"] = seed_flag;
        if (!out_dir.empty()) ctx.config["out"] = out_dir;
        if (workers_flag > 0) ctx.config["workers"] = workers_flag;
        if (!ctx.config.contains("out")) throw std::invalid_argument("no output directory given");
        ctx.seed = ctx.config.value("seed", 1ull);
        ctx.config["seed"] = ctx.seed;
        ctx.workers = ctx.config.value("workers", 1);
        ctx.out = fs::path(ctx.config["out"].get<std::string>());
        ctx.force = force;

        if (sub_simulate->parsed()) return cmd_simulate(ctx);
        if (sub_filter->parsed()) return cmd_filter(ctx);
        if (sub_pmmh->parsed()) return cmd_pmmh(ctx);
        if (sub_car->parsed()) return cmd_car(ctx);
        if (sub_rhat->parsed()) return cmd_rhat(ctx);
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

} // namespace ssm::cli
