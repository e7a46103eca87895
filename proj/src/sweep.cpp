#include "tmsm/sweep.hpp"

namespace tmsm {

std::vector<SweepRow> sensitivity_sweep(const SweepConfig& cfg,
                                        const std::function<void(const SweepRow&)>& on_row) {
    require(!cfg.policies.empty() && !cfg.ranks.empty() && !cfg.ks.empty(),
            "sweep: policy, rank and k lists must be nonempty");
    require(cfg.n_reps >= 1, "sweep: n_reps must be >= 1");
    std::vector<SweepRow> rows;
    for (PolicyKind policy : cfg.policies) {
        for (int rep = 0; rep < cfg.n_reps; ++rep) {
            SimConfig sim = cfg.base;
            sim.policy = policy;
            sim.seed = mix64(cfg.base.seed, static_cast<uint64_t>(rep) + 1);
            SimTruth truth = simulate_panel(sim);
            PanelData resid = residualized_panel(truth);
            auto model = truth.make_policy();
            for (int k : cfg.ks) {
                WeightBundle bundle;
                bool bundle_ok = true;
                try {
                    McConfig mc = cfg.mc;
                    mc.seed = mix64(sim.seed, static_cast<uint64_t>(k));
                    if (cfg.est.objective == EstimatorConfig::Objective::completion) {
                        auto w = compute_weights(*model, *model, resid, k, mc);
                        bundle = completion_bundle(resid, w, k, cfg.est.w_trunc_quantile);
                    } else {
                        bundle = build_bundle(*model, *model, resid, k, mc);
                    }
                } catch (const Error&) {
                    bundle_ok = false;
                }
                for (int r : cfg.ranks) {
                    SweepRow row;
                    row.policy = policy;
                    row.rank = r;
                    row.k = k;
                    row.rep = rep;
                    if (!bundle_ok) {
                        row.failed = true;
                    } else {
                        try {
                            EstimatorConfig est = cfg.est;
                            est.rank = r;
                            est.k = k;
                            est.seed = sim.seed;
                            FitResult fit = fit_pgd(bundle, est);
                            auto pred = tensor_predictions(fit.reconstruction, truth, k);
                            row.nmse = normalized_mse(pred, truth);
                        } catch (const Error&) {
                            row.failed = true;
                        }
                    }
                    rows.push_back(row);
                    if (on_row) on_row(row);
                }
            }
        }
    }
    return rows;
}

}  // namespace tmsm
