#include "tmsm/msm.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <limits>

namespace tmsm {

namespace {

constexpr double kRidge = 1e-8;  // always applied, all coefficients

double realized_propensity(const PropensityModel& pm, const PanelData& panel, int i, int s) {
    const int d = panel.cov_dim;
    const uint8_t* a_row = panel.treatments.data() + static_cast<std::size_t>(i) * panel.n_periods;
    const double* l_row =
        panel.covariates.data() + static_cast<std::size_t>(i) * panel.n_periods * d;
    StepContext ctx;
    ctx.unit = i;
    ctx.time = s;
    ctx.cov_dim = d;
    ctx.recent_a = std::span<const uint8_t>(a_row, s - 1);
    ctx.recent_l = std::span<const double>(l_row, static_cast<std::size_t>(s - 1) * d);
    ctx.current_l = std::span<const double>(l_row + static_cast<std::size_t>(s - 1) * d, d);
    return pm.prob_treat(ctx);
}

}  // namespace

std::vector<double> stabilized_weights(const PropensityModel& pm, const GenerativeModel& gen,
                                       const PanelData& panel, const McConfig& mc) {
    panel.validate();
    require(panel.n_units >= 1, "stabilized_weights: empty panel");
    require(pm.unit_invariant() && gen.units_exchangeable(),
            "stabilized_weights: requires a unit-invariant policy and exchangeable units");
    require(gen.cov_dim() == panel.cov_dim, "stabilized_weights: covariate dimension mismatch");

    const int N = panel.n_units, T = panel.n_periods, d = panel.cov_dim;
    const int M = mc.n_samples;
    require(M >= 1, "stabilized_weights: n_samples must be >= 1");
    const double delta = pm.positivity_delta();

    std::vector<double> sw(static_cast<std::size_t>(N) * T, 0.0);
    // Per-path forced trajectories: treatments pinned to the unit's realized
    // sequence, covariates resampled. log-space importance weights keep the
    // long products stable out to large T.
    std::vector<double> logw(M);
    const int lb = std::max({pm.lookback(), gen.lookback(), 1});
    const int ring = lb + 2;
    std::vector<double> lring(static_cast<std::size_t>(M) * ring * d);
    std::vector<double> pi_val(M);
    std::vector<double> hist_buf(static_cast<std::size_t>(M) * lb * d);
    std::vector<double> cur_buf(static_cast<std::size_t>(M) * d);

    for (int i = 0; i < N; ++i) {
        std::fill(logw.begin(), logw.end(), 0.0);
        const uint8_t* a_row =
            panel.treatments.data() + static_cast<std::size_t>(i) * panel.n_periods;
        double log_sw = 0.0;
        for (int s = 1; s <= T; ++s) {
            const int nh = std::min(s - 1, lb);
#pragma omp parallel for schedule(static)
            for (int m = 0; m < M; ++m) {
                double* hist = hist_buf.data() + static_cast<std::size_t>(m) * lb * d;
                double* cur = cur_buf.data() + static_cast<std::size_t>(m) * d;
                for (int j = 0; j < nh; ++j) {
                    int period = s - nh + j;
                    const double* slot =
                        lring.data() + (static_cast<std::size_t>(m) * ring + period % ring) * d;
                    std::copy(slot, slot + d, hist + static_cast<std::size_t>(j) * d);
                }
                StepContext ctx;
                ctx.unit = i;
                ctx.time = s;
                ctx.cov_dim = d;
                ctx.recent_a = std::span<const uint8_t>(a_row, s - 1);
                ctx.recent_l = std::span<const double>(hist, static_cast<std::size_t>(nh) * d);
                RngStream rng(mc.seed, StreamId::sw_cov, static_cast<uint64_t>(m),
                              mix64(static_cast<uint64_t>(i), static_cast<uint64_t>(s)));
                gen.draw_covariates(ctx, rng, std::span<double>(cur, d));
                ctx.current_l = std::span<const double>(cur, d);
                double pi = pm.prob_treat(ctx);
                pi_val[m] = a_row[s - 1] ? pi : 1.0 - pi;
                std::copy(cur, cur + d,
                          lring.data() + (static_cast<std::size_t>(m) * ring + s % ring) * d);
            }
            double max_logw = -std::numeric_limits<double>::infinity();
            for (int m = 0; m < M; ++m) max_logw = std::max(max_logw, logw[m]);
            double sn = 0.0, sd = 0.0;
            for (int m = 0; m < M; ++m) {
                double scale = std::exp(logw[m] - max_logw);
                sn += scale * pi_val[m];
                sd += scale;
            }
            double numerator = sn / sd;
            double den = realized_propensity(pm, panel, i, s);
            if (!(den > delta && den < 1.0 - delta))
                fail_compute("stabilized_weights: positivity violation at unit " +
                             std::to_string(i) + ", time " + std::to_string(s));
            double den_val = a_row[s - 1] ? den : 1.0 - den;
            for (int m = 0; m < M; ++m) logw[m] += std::log(pi_val[m]);
            log_sw += std::log(numerator) - std::log(den_val);
            double clamped = std::clamp(log_sw, -690.0, 690.0);
            sw[panel.cell(i, s - 1)] = std::exp(clamped);
        }
    }
    return sw;
}

MsmFit fit_msm(const PanelData& panel, std::span<const double> sw) {
    panel.validate();
    const int N = panel.n_units, T = panel.n_periods;
    require(N >= 1 && T >= 1, "fit_msm: empty panel");
    require(sw.size() == static_cast<std::size_t>(N) * T, "fit_msm: weight array size mismatch");
    for (double v : sw) require(std::isfinite(v) && v >= 0.0, "fit_msm: bad stabilized weight");

    MsmFit fit;
    fit.sw.assign(sw.begin(), sw.end());
    fit.intercepts.resize(T);
    fit.betas.resize(T);

    for (int t = 0; t < T; ++t) {
        const int p = t + 2;  // intercept + treatments a_{1..t+1}
        Matrix xtx = Matrix::Zero(p, p);
        Vector xty = Vector::Zero(p);
        Vector row(p);
        for (int i = 0; i < N; ++i) {
            row(0) = 1.0;
            for (int s = 0; s <= t; ++s) row(s + 1) = panel.a(i, s);
            double wi = sw[panel.cell(i, t)];
            xtx.selfadjointView<Eigen::Lower>().rankUpdate(row, wi);
            xty += wi * panel.y(i, t) * row;
        }
        xtx = xtx.selfadjointView<Eigen::Lower>();

        // Rank check on the unregularized system.
        Eigen::LDLT<Matrix> ldlt(xtx);
        double max_d = ldlt.vectorD().cwiseAbs().maxCoeff();
        if (ldlt.info() != Eigen::Success || max_d <= 0.0 ||
            ldlt.vectorD().minCoeff() < 1e-10 * max_d)
            fit.rank_deficient = true;

        Matrix reg = xtx;
        reg.diagonal().array() += kRidge;
        Vector beta = Eigen::LLT<Matrix>(reg).solve(xty);
        if (!beta.allFinite()) fail_compute("fit_msm: non-finite solution at period " +
                                            std::to_string(t));
        fit.intercepts[t] = beta(0);
        fit.betas[t].assign(beta.data() + 1, beta.data() + p);
    }
    return fit;
}

double predict_msm(const MsmFit& fit, std::span<const uint8_t> a_seq) {
    const std::size_t t = a_seq.size();
    require(t >= 1 && t <= fit.betas.size(),
            "predict_msm: sequence length " + std::to_string(t) + " has no fitted period");
    require(fit.betas[t - 1].size() == t, "predict_msm: fit is malformed");
    double y = fit.intercepts[t - 1];
    for (std::size_t s = 0; s < t; ++s) y += fit.betas[t - 1][s] * a_seq[s];
    return y;
}

std::vector<double> msm_predictions(const MsmFit& fit, const PanelData& panel) {
    std::vector<double> pred(static_cast<std::size_t>(panel.n_units) * panel.n_periods);
    for (int i = 0; i < panel.n_units; ++i) {
        const uint8_t* a_row =
            panel.treatments.data() + static_cast<std::size_t>(i) * panel.n_periods;
        for (int t = 0; t < panel.n_periods; ++t)
            pred[panel.cell(i, t)] =
                predict_msm(fit, std::span<const uint8_t>(a_row, t + 1));
    }
    return pred;
}

}  // namespace tmsm
