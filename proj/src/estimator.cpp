#include "tmsm/estimator.hpp"

#include <cmath>

namespace tmsm {

void EstimatorConfig::validate() const {
    require(rank >= 1, "estimator config: rank must be >= 1");
    require(k >= 1 && k <= 20, "estimator config: k out of range");
    require(step >= 0.0, "estimator config: step must be nonnegative");
    require(max_iters >= 1, "estimator config: max_iters must be >= 1");
    require(tol > 0.0, "estimator config: tol must be positive");
    require(als_sweeps >= 1 && warm_sweeps >= 1, "estimator config: ALS sweep caps must be >= 1");
}

double completion_loss(const DenseTensor3& t_hat, const PanelData& panel,
                       std::span<const double> w, int k) {
    const int n = panel.n_units, tt = panel.n_periods;
    require(n >= 1 && tt >= 1, "completion_loss: empty panel");
    require(w.size() == static_cast<std::size_t>(n) * tt, "completion_loss: weight array size");
    require(t_hat.dims().n1 == n && t_hat.dims().n2 == tt && t_hat.dims().n3 == (1 << k),
            "completion_loss: tensor dims " + t_hat.dims().str() + " do not match panel, k=" +
                std::to_string(k));
    double s = 0.0;
    for (int i = 0; i < n; ++i)
        for (int t = 0; t < tt; ++t) {
            int p = realized_history(panel, i, t, k);
            double resid = panel.y(i, t) - t_hat(i, t, p);
            s += w[panel.cell(i, t)] * resid * resid;
        }
    return s / (static_cast<double>(n) * tt);
}

double approximation_loss(const DenseTensor3& t_hat, const WeightBundle& bundle) {
    require(t_hat.same_dims(bundle.Yw), "approximation_loss: dims " + t_hat.dims().str() +
                                            " vs bundle " + bundle.Yw.dims().str());
    const double nt = static_cast<double>(t_hat.dims().n1) * t_hat.dims().n2;
    return weighted_frobenius_sq(subtract(bundle.Yw, t_hat), bundle.W) / nt;
}

FitResult fit_pgd(const WeightBundle& bundle, const EstimatorConfig& cfg) {
    cfg.validate();
    const Dims3 dims = bundle.Yw.dims();
    require(dims.n3 == (1 << cfg.k),
            "fit_pgd: bundle third dimension " + std::to_string(dims.n3) +
                " does not match 2^k with k=" + std::to_string(cfg.k));

    CpAlsConfig cold;
    cold.max_sweeps = cfg.als_sweeps;
    cold.tol = cfg.als_tol;
    cold.seed = cfg.seed;
    CpAlsConfig warm = cold;
    warm.max_sweeps = cfg.warm_sweeps;

    FitResult out;
    CpDecomposition cp = cp_als(bundle.Yw, cfg.rank, cold);
    if (cfg.l_bound > 0.0) cp = spectral_clip(cp, cfg.l_bound);
    DenseTensor3 recon = reconstruct(cp, dims);
    double loss = approximation_loss(recon, bundle);
    if (!std::isfinite(loss)) fail_compute("fit_pgd: non-finite loss at initialization");
    out.loss_trace.push_back(loss);

    CpDecomposition best_cp = cp;
    DenseTensor3 best_recon = recon;
    double best_loss = loss;

    double step = cfg.step;
    double prev_loss = loss;
    for (int iter = 1; iter <= cfg.max_iters; ++iter) {
        CpDecomposition next_cp;
        DenseTensor3 next_recon;
        double next_loss = 0.0;
        int halvings = 0;
        for (;;) {
            DenseTensor3 upd = gradient_step(recon, bundle.Yw, bundle.W, step);
            next_cp = cp_als(upd, cfg.rank, warm, &cp);
            if (cfg.l_bound > 0.0) next_cp = spectral_clip(next_cp, cfg.l_bound);
            next_recon = reconstruct(next_cp, dims);
            next_loss = approximation_loss(next_recon, bundle);
            if (!std::isfinite(next_loss))
                fail_compute("fit_pgd: non-finite loss at iteration " + std::to_string(iter));
            if (!cfg.backtracking || next_loss <= prev_loss + 1e-12 * std::abs(prev_loss) ||
                halvings >= 20)
                break;
            step *= 0.5;
            ++halvings;
        }
        cp = std::move(next_cp);
        recon = std::move(next_recon);
        loss = next_loss;
        out.loss_trace.push_back(loss);
        out.iterations = iter;
        if (loss < best_loss) {
            best_loss = loss;
            best_cp = cp;
            best_recon = recon;
        }
        double denom = std::max(std::abs(prev_loss), 1e-300);
        if (std::abs(prev_loss - loss) / denom <= cfg.tol) {
            out.converged = true;
            break;
        }
        prev_loss = loss;
    }

    out.estimate = std::move(best_cp);
    out.reconstruction = std::move(best_recon);
    return out;
}

FitResult fit_panel(const PanelData& panel, const PropensityModel& pm,
                    const GenerativeModel& gen, const EstimatorConfig& cfg, const McConfig& mc,
                    WeightBundle* out_bundle) {
    require(panel.n_units >= 1 && panel.n_periods >= 1, "fit_panel: empty panel");
    cfg.validate();
    WeightBundle bundle;
    if (cfg.objective == EstimatorConfig::Objective::completion) {
        auto w = compute_weights(pm, gen, panel, cfg.k, mc);
        bundle = completion_bundle(panel, w, cfg.k, cfg.w_trunc_quantile);
    } else {
        bundle = build_bundle(pm, gen, panel, cfg.k, mc);
    }
    FitResult fit = fit_pgd(bundle, cfg);
    fit.final_completion_loss = completion_loss(fit.reconstruction, panel, bundle.w, cfg.k);
    if (out_bundle != nullptr) *out_bundle = std::move(bundle);
    return fit;
}

}  // namespace tmsm
