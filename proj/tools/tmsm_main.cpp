// tmsm: simulate panels, fit the weighted tensor completion estimator,
// run the classical MSM baseline, sweep sensitivity grids, compute ATET.

#include <CLI11.hpp>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "tmsm/io.hpp"
#include "tmsm/sweep.hpp"

using namespace tmsm;
using io::json;

namespace {

void set_threads(int threads) {
    if (threads <= 0) {
        const char* env = std::getenv("TMSM_THREADS");
        if (env != nullptr) threads = std::atoi(env);
    }
#ifdef _OPENMP
    if (threads > 0) omp_set_num_threads(threads);
#else
    (void)threads;
#endif
}

json load_config(const std::string& path, const std::set<std::string>& allowed) {
    json cfg = io::read_json_file(path);
    require(cfg.is_object(), "config file must hold a JSON object");
    for (const auto& [key, value] : cfg.items()) {
        (void)value;
        require(allowed.count(key) == 1, "config file: unknown key '" + key + "'");
    }
    return cfg;
}

template <typename T>
void cfg_override(const json& cfg, const char* key, const CLI::Option* opt, T& var) {
    if (cfg.contains(key) && (opt == nullptr || opt->count() == 0)) var = cfg.at(key).get<T>();
}

struct WorldArgs {
    std::string world = "narrow";
    std::string policy = "simple";
    int n_units = -1;
    int n_periods = -1;
    int true_rank = 10;
    int true_k = 5;
    double noise_sd = 1.0;
    uint64_t seed = 0;

    SimConfig to_sim_config() const {
        SimConfig cfg;
        PolicyKind kind = policy_from_string(policy);
        if (world == "narrow") {
            cfg = SimConfig::narrow(kind, seed);
        } else if (world == "wide") {
            cfg = SimConfig::wide(kind, seed);
        } else if (world == "custom") {
            cfg.policy = kind;
            cfg.seed = seed;
        } else {
            fail_input("unknown world '" + world + "' (expected narrow|wide|custom)");
        }
        if (n_units >= 0) cfg.n_units = n_units;
        if (n_periods >= 0) cfg.n_periods = n_periods;
        cfg.true_rank = true_rank;
        cfg.true_k = true_k;
        cfg.noise_sd = noise_sd;
        cfg.validate();
        return cfg;
    }
};

int cmd_simulate(const WorldArgs& args, const std::string& out_panel,
                 const std::string& out_truth) {
    SimConfig cfg = args.to_sim_config();
    SimTruth truth = simulate_panel(cfg);
    io::write_panel_csv(truth.panel, out_panel);
    if (!out_truth.empty()) io::write_json_file(out_truth, io::truth_to_json(truth));
    double rate = 0.0;
    for (uint8_t a : truth.panel.treatments) rate += a;
    rate /= static_cast<double>(truth.panel.treatments.size());
    std::cout << "simulated " << cfg.n_units << " units x " << cfg.n_periods << " periods ("
              << to_string(cfg.policy) << " policy), treatment rate "
              << io::format_human(rate) << "\n";
    std::cout << "panel -> " << out_panel;
    if (!out_truth.empty()) std::cout << ", truth -> " << out_truth;
    std::cout << "\n";
    return 0;
}

struct FitArgs {
    std::string panel_path;
    std::string truth_path;
    std::string policy = "simple";
    EstimatorConfig est;
    McConfig mc;
    std::string out_fit = "fit.json";
    std::string out_slices;
    std::string out_weights;
};

int cmd_fit(const FitArgs& args) {
    PanelData panel = io::read_panel_csv(args.panel_path);
    require(args.est.k <= panel.n_periods,
            "k=" + std::to_string(args.est.k) + " exceeds panel periods " +
                std::to_string(panel.n_periods));

    bool have_truth = !args.truth_path.empty();
    SimTruth truth;
    SimPolicy policy(policy_from_string(args.policy), SimConfig{}.gamma);
    const PanelData* fit_panel_data = &panel;
    PanelData resid;
    if (have_truth) {
        truth = io::truth_from_json(io::read_json_file(args.truth_path), panel);
        policy = SimPolicy(truth.config.policy, truth.config.gamma);
        resid = residualized_panel(truth);
        fit_panel_data = &resid;
    }

    WeightBundle bundle;
    FitResult fit = fit_panel(*fit_panel_data, policy, policy, args.est, args.mc, &bundle);

    json out = io::fit_to_json(fit);
    out["k"] = args.est.k;
    out["rank"] = args.est.rank;
    double atet_value = atet(fit.reconstruction, panel, args.est.k);
    long s1 = 0;
    for (uint8_t a : panel.treatments) s1 += a;
    out["atet"] = atet_value;
    out["n_treated"] = s1;
    std::cout << "fit: iterations " << fit.iterations << (fit.converged ? " (converged)" : "")
              << ", approximation loss " << io::format_human(fit.loss_trace.back())
              << ", completion loss " << io::format_human(fit.final_completion_loss) << "\n";
    std::cout << "atet " << io::format_human(atet_value) << " over " << s1 << " treated cells\n";
    if (have_truth) {
        auto pred = tensor_predictions(fit.reconstruction, truth, args.est.k);
        double nmse = normalized_mse(pred, truth);
        out["nmse"] = nmse;
        out["atet_with_structural"] = atet_value - 10.0;
        std::cout << "nmse " << io::format_human(nmse) << "\n";
    }
    io::write_json_file(args.out_fit, out);
    if (!args.out_slices.empty()) io::write_slices_csv(fit.reconstruction, args.out_slices);
    if (!args.out_weights.empty()) io::write_weights_csv(panel, bundle.w, args.out_weights);
    return 0;
}

struct BaselineArgs {
    std::string panel_path;
    std::string truth_path;
    std::string policy = "simple";
    McConfig mc;
    std::string out_fit = "msm.json";
    std::string out_weights;
};

int cmd_baseline(const BaselineArgs& args) {
    PanelData panel = io::read_panel_csv(args.panel_path);
    bool have_truth = !args.truth_path.empty();
    SimTruth truth;
    SimPolicy policy(policy_from_string(args.policy), SimConfig{}.gamma);
    if (have_truth) {
        truth = io::truth_from_json(io::read_json_file(args.truth_path), panel);
        policy = SimPolicy(truth.config.policy, truth.config.gamma);
    }

    auto sw = stabilized_weights(policy, policy, panel, args.mc);
    MsmFit fit = fit_msm(panel, sw);
    json out = io::msm_to_json(fit);
    std::cout << "msm: fitted " << panel.n_periods << " per-period regressions"
              << (fit.rank_deficient ? " (rank-deficient designs, ridge-regularized)" : "")
              << "\n";
    if (have_truth) {
        double nmse = normalized_mse(msm_predictions(fit, panel), truth);
        out["nmse"] = nmse;
        std::cout << "nmse " << io::format_human(nmse) << "\n";
    }
    io::write_json_file(args.out_fit, out);
    if (!args.out_weights.empty()) io::write_weights_csv(panel, sw, args.out_weights);
    return 0;
}

struct SweepArgs {
    WorldArgs world;
    std::vector<std::string> policies{"simple", "complex"};
    std::vector<int> ranks{5, 10, 15, 20};
    std::vector<int> ks{2, 3, 4, 5, 6, 7};
    int reps = 20;
    EstimatorConfig est;
    McConfig mc;
    std::string out_raw = "sweep_raw.csv";
    std::string out_agg = "sweep_agg.csv";
};

int cmd_sweep(const SweepArgs& args) {
    SweepConfig cfg;
    cfg.base = args.world.to_sim_config();
    cfg.policies.clear();
    for (const auto& p : args.policies) cfg.policies.push_back(policy_from_string(p));
    cfg.ranks = args.ranks;
    cfg.ks = args.ks;
    cfg.n_reps = args.reps;
    cfg.est = args.est;
    cfg.mc = args.mc;

    std::ofstream raw(args.out_raw, std::ios::binary);
    if (!raw) fail_input("cannot open '" + args.out_raw + "' for writing");
    raw << "policy,r,k,rep,nmse,failed\n" << std::flush;
    auto rows = sensitivity_sweep(cfg, [&raw](const SweepRow& row) {
        raw << to_string(row.policy) << ',' << row.rank << ',' << row.k << ',' << row.rep << ','
            << (row.failed ? "" : io::format_full(row.nmse)) << ',' << (row.failed ? 1 : 0)
            << "\n"
            << std::flush;
    });
    io::write_sweep_cells_csv(aggregate_sweep(rows), args.out_agg);
    std::cout << "sweep: " << rows.size() << " rows -> " << args.out_raw << ", aggregated -> "
              << args.out_agg << "\n";
    return 0;
}

int cmd_atet(const std::string& fit_path, const std::string& panel_path, int k_flag) {
    PanelData panel = io::read_panel_csv(panel_path);
    FitResult fit = io::fit_from_json(io::read_json_file(fit_path));
    int b = fit.reconstruction.dims().n3;
    int k = k_flag;
    if (k <= 0) {
        k = 0;
        while ((1 << k) < b) ++k;
        require((1 << k) == b, "cannot infer k: tensor third dimension is not a power of 2");
    }
    double value = atet(fit.reconstruction, panel, k);
    long s1 = 0;
    for (uint8_t a : panel.treatments) s1 += a;
    std::cout << "atet " << io::format_human(value) << "\n";
    std::cout << "treated cells " << s1 << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Tensorized marginal structural models: weighted low-rank tensor completion "
                 "for heterogeneous treatment effects over time"};
    app.require_subcommand(1);
    int threads = 0;
    app.add_option("--threads", threads, "worker thread cap (or env TMSM_THREADS)");

    // simulate
    auto* sim = app.add_subcommand("simulate", "generate a synthetic panel and its ground truth");
    WorldArgs sim_world;
    std::string sim_out_panel = "panel.csv", sim_out_truth = "truth.json", sim_config;
    auto* sim_world_opt = sim->add_option("--world", sim_world.world, "narrow|wide|custom");
    auto* sim_policy_opt = sim->add_option("--policy", sim_world.policy, "simple|complex");
    auto* sim_n_opt = sim->add_option("--n-units", sim_world.n_units, "units (custom world)");
    auto* sim_t_opt = sim->add_option("--n-periods", sim_world.n_periods, "periods (custom world)");
    auto* sim_rank_opt = sim->add_option("--true-rank", sim_world.true_rank, "true CP rank");
    auto* sim_k_opt = sim->add_option("--true-k", sim_world.true_k, "true history length");
    auto* sim_noise_opt = sim->add_option("--noise-sd", sim_world.noise_sd, "outcome noise sd");
    auto* sim_seed_opt = sim->add_option("--seed", sim_world.seed, "rng seed");
    auto* sim_outp_opt = sim->add_option("--out-panel", sim_out_panel, "panel CSV path");
    auto* sim_outt_opt = sim->add_option("--out-truth", sim_out_truth,
                                         "truth JSON path (empty to skip)");
    sim->add_option("--config", sim_config, "JSON config file");

    // fit
    auto* fit = app.add_subcommand("fit", "weighted tensor completion estimator");
    FitArgs fit_args;
    std::string fit_config;
    auto* fit_panel_opt = fit->add_option("--panel", fit_args.panel_path, "panel CSV");
    auto* fit_truth_opt = fit->add_option("--truth", fit_args.truth_path, "truth JSON");
    auto* fit_policy_opt = fit->add_option("--policy", fit_args.policy, "simple|complex");
    auto* fit_rank_opt = fit->add_option("--rank,-r", fit_args.est.rank, "CP rank");
    auto* fit_k_opt = fit->add_option("--k", fit_args.est.k, "history length");
    auto* fit_step_opt = fit->add_option("--step", fit_args.est.step, "gradient step size");
    auto* fit_iters_opt = fit->add_option("--max-iters", fit_args.est.max_iters, "PGD iterations");
    auto* fit_tol_opt = fit->add_option("--tol", fit_args.est.tol, "relative loss tolerance");
    auto* fit_lbound_opt = fit->add_option("--l-bound", fit_args.est.l_bound,
                                           "singular value clamp (0 = off)");
    std::string fit_objective = "completion";
    auto* fit_obj_opt = fit->add_option("--objective", fit_objective,
                                        "completion|approximation");
    auto* fit_wtrunc_opt = fit->add_option("--w-trunc", fit_args.est.w_trunc_quantile,
                                           "weight truncation quantile (0 = off)");
    auto* fit_seed_opt = fit->add_option("--seed", fit_args.est.seed, "rng seed");
    auto* fit_mcs_opt = fit->add_option("--mc-samples", fit_args.mc.n_samples, "MC sample count");
    auto* fit_mcseed_opt = fit->add_option("--mc-seed", fit_args.mc.seed, "MC seed");
    auto* fit_floor_opt = fit->add_option("--mc-floor", fit_args.mc.prob_floor,
                                          "slice probability floor (<0 = auto)");
    auto* fit_out_opt = fit->add_option("--out", fit_args.out_fit, "fit JSON path");
    fit->add_option("--out-slices", fit_args.out_slices, "reconstructed slices CSV");
    fit->add_option("--out-weights", fit_args.out_weights, "weights CSV");
    fit->add_option("--config", fit_config, "JSON config file");

    // baseline
    auto* base = app.add_subcommand("baseline", "classical MSM baseline");
    BaselineArgs base_args;
    std::string base_config;
    auto* base_panel_opt = base->add_option("--panel", base_args.panel_path, "panel CSV");
    auto* base_truth_opt = base->add_option("--truth", base_args.truth_path, "truth JSON");
    auto* base_policy_opt = base->add_option("--policy", base_args.policy, "simple|complex");
    auto* base_mcs_opt = base->add_option("--mc-samples", base_args.mc.n_samples, "MC samples");
    auto* base_mcseed_opt = base->add_option("--mc-seed", base_args.mc.seed, "MC seed");
    auto* base_out_opt = base->add_option("--out", base_args.out_fit, "MSM JSON path");
    base->add_option("--out-weights", base_args.out_weights, "stabilized weights CSV");
    base->add_option("--config", base_config, "JSON config file");

    // sweep
    auto* sweep = app.add_subcommand("sweep", "sensitivity sweep over rank and history length");
    SweepArgs sweep_args;
    std::string sweep_config;
    sweep->add_option("--world", sweep_args.world.world, "narrow|wide|custom");
    sweep->add_option("--n-units", sweep_args.world.n_units, "units (custom world)");
    sweep->add_option("--n-periods", sweep_args.world.n_periods, "periods (custom world)");
    sweep->add_option("--true-rank", sweep_args.world.true_rank, "true CP rank");
    sweep->add_option("--true-k", sweep_args.world.true_k, "true history length");
    sweep->add_option("--seed", sweep_args.world.seed, "base seed");
    sweep->add_option("--policies", sweep_args.policies, "policy list")->delimiter(',');
    sweep->add_option("--r", sweep_args.ranks, "rank grid")->delimiter(',');
    sweep->add_option("--k", sweep_args.ks, "history grid")->delimiter(',');
    sweep->add_option("--reps", sweep_args.reps, "repetitions per cell");
    sweep->add_option("--max-iters", sweep_args.est.max_iters, "PGD iterations");
    sweep->add_option("--w-trunc", sweep_args.est.w_trunc_quantile,
                      "weight truncation quantile (0 = off)");
    sweep->add_option("--warm-sweeps", sweep_args.est.warm_sweeps,
                      "ALS sweeps per warm projection");
    sweep->add_option("--tol", sweep_args.est.tol, "relative loss tolerance");
    sweep->add_option("--mc-samples", sweep_args.mc.n_samples, "MC samples");
    sweep->add_option("--out-raw", sweep_args.out_raw, "raw rows CSV");
    sweep->add_option("--out-agg", sweep_args.out_agg, "aggregated CSV");
    sweep->add_option("--config", sweep_config, "JSON config file");

    // atet
    auto* at = app.add_subcommand("atet", "ATET of a fitted tensor over a panel");
    std::string atet_fit, atet_panel;
    int atet_k = 0;
    at->add_option("--fit", atet_fit, "fit JSON")->required();
    at->add_option("--panel", atet_panel, "panel CSV")->required();
    at->add_option("--k", atet_k, "history length (default: infer from tensor)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        set_threads(threads);
        if (sim->parsed()) {
            if (!sim_config.empty()) {
                json cfg = load_config(sim_config,
                                       {"world", "policy", "n_units", "n_periods", "true_rank",
                                        "true_k", "noise_sd", "seed", "out_panel", "out_truth"});
                cfg_override(cfg, "world", sim_world_opt, sim_world.world);
                cfg_override(cfg, "policy", sim_policy_opt, sim_world.policy);
                cfg_override(cfg, "n_units", sim_n_opt, sim_world.n_units);
                cfg_override(cfg, "n_periods", sim_t_opt, sim_world.n_periods);
                cfg_override(cfg, "true_rank", sim_rank_opt, sim_world.true_rank);
                cfg_override(cfg, "true_k", sim_k_opt, sim_world.true_k);
                cfg_override(cfg, "noise_sd", sim_noise_opt, sim_world.noise_sd);
                cfg_override(cfg, "seed", sim_seed_opt, sim_world.seed);
                cfg_override(cfg, "out_panel", sim_outp_opt, sim_out_panel);
                cfg_override(cfg, "out_truth", sim_outt_opt, sim_out_truth);
            }
            return cmd_simulate(sim_world, sim_out_panel, sim_out_truth);
        }
        if (fit->parsed()) {
            if (!fit_config.empty()) {
                json cfg = load_config(
                    fit_config, {"panel", "truth", "policy", "rank", "k", "step", "max_iters",
                                 "tol", "l_bound", "seed", "mc_samples", "mc_seed", "mc_floor",
                                 "objective", "w_trunc", "out"});
                cfg_override(cfg, "panel", fit_panel_opt, fit_args.panel_path);
                cfg_override(cfg, "truth", fit_truth_opt, fit_args.truth_path);
                cfg_override(cfg, "policy", fit_policy_opt, fit_args.policy);
                cfg_override(cfg, "rank", fit_rank_opt, fit_args.est.rank);
                cfg_override(cfg, "k", fit_k_opt, fit_args.est.k);
                cfg_override(cfg, "step", fit_step_opt, fit_args.est.step);
                cfg_override(cfg, "max_iters", fit_iters_opt, fit_args.est.max_iters);
                cfg_override(cfg, "tol", fit_tol_opt, fit_args.est.tol);
                cfg_override(cfg, "l_bound", fit_lbound_opt, fit_args.est.l_bound);
                cfg_override(cfg, "objective", fit_obj_opt, fit_objective);
                cfg_override(cfg, "w_trunc", fit_wtrunc_opt, fit_args.est.w_trunc_quantile);
                cfg_override(cfg, "seed", fit_seed_opt, fit_args.est.seed);
                cfg_override(cfg, "mc_samples", fit_mcs_opt, fit_args.mc.n_samples);
                cfg_override(cfg, "mc_seed", fit_mcseed_opt, fit_args.mc.seed);
                cfg_override(cfg, "mc_floor", fit_floor_opt, fit_args.mc.prob_floor);
                cfg_override(cfg, "out", fit_out_opt, fit_args.out_fit);
            }
            require(!fit_args.panel_path.empty(), "fit: --panel is required");
            if (fit_objective == "completion")
                fit_args.est.objective = EstimatorConfig::Objective::completion;
            else if (fit_objective == "approximation")
                fit_args.est.objective = EstimatorConfig::Objective::approximation;
            else
                fail_input("unknown objective '" + fit_objective + "'");
            return cmd_fit(fit_args);
        }
        if (base->parsed()) {
            if (!base_config.empty()) {
                json cfg = load_config(base_config, {"panel", "truth", "policy", "mc_samples",
                                                     "mc_seed", "out"});
                cfg_override(cfg, "panel", base_panel_opt, base_args.panel_path);
                cfg_override(cfg, "truth", base_truth_opt, base_args.truth_path);
                cfg_override(cfg, "policy", base_policy_opt, base_args.policy);
                cfg_override(cfg, "mc_samples", base_mcs_opt, base_args.mc.n_samples);
                cfg_override(cfg, "mc_seed", base_mcseed_opt, base_args.mc.seed);
                cfg_override(cfg, "out", base_out_opt, base_args.out_fit);
            }
            require(!base_args.panel_path.empty(), "baseline: --panel is required");
            return cmd_baseline(base_args);
        }
        if (sweep->parsed()) {
            if (!sweep_config.empty()) {
                json cfg = load_config(sweep_config,
                                       {"world", "n_units", "n_periods", "true_rank", "true_k",
                                        "seed", "policies", "r", "k", "reps", "max_iters",
                                        "mc_samples", "out_raw", "out_agg"});
                cfg_override(cfg, "world", nullptr, sweep_args.world.world);
                cfg_override(cfg, "n_units", nullptr, sweep_args.world.n_units);
                cfg_override(cfg, "n_periods", nullptr, sweep_args.world.n_periods);
                cfg_override(cfg, "true_rank", nullptr, sweep_args.world.true_rank);
                cfg_override(cfg, "true_k", nullptr, sweep_args.world.true_k);
                cfg_override(cfg, "seed", nullptr, sweep_args.world.seed);
                cfg_override(cfg, "policies", nullptr, sweep_args.policies);
                cfg_override(cfg, "r", nullptr, sweep_args.ranks);
                cfg_override(cfg, "k", nullptr, sweep_args.ks);
                cfg_override(cfg, "reps", nullptr, sweep_args.reps);
                cfg_override(cfg, "max_iters", nullptr, sweep_args.est.max_iters);
                cfg_override(cfg, "mc_samples", nullptr, sweep_args.mc.n_samples);
                cfg_override(cfg, "out_raw", nullptr, sweep_args.out_raw);
                cfg_override(cfg, "out_agg", nullptr, sweep_args.out_agg);
            }
            return cmd_sweep(sweep_args);
        }
        if (at->parsed()) return cmd_atet(atet_fit, atet_panel, atet_k);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.kind() == ErrorKind::invalid_input ? 2 : 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
