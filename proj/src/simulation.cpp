#include "tmsm/simulation.hpp"

#include <cmath>

namespace tmsm {

namespace {
constexpr double kMeanAbsNormal = 0.7978845608028654;  // E|Z|, Z ~ N(0,1)
constexpr double kProbClamp = 1e-12;

double clamp_prob(double p) {
    return std::min(1.0 - kProbClamp, std::max(kProbClamp, p));
}
}  // namespace

std::string to_string(PolicyKind p) {
    return p == PolicyKind::simple ? "simple" : "complex";
}

PolicyKind policy_from_string(const std::string& s) {
    if (s == "simple") return PolicyKind::simple;
    if (s == "complex") return PolicyKind::complex;
    fail_input("unknown policy '" + s + "' (expected simple|complex)");
}

SimConfig SimConfig::narrow(PolicyKind p, uint64_t seed) {
    SimConfig cfg;
    cfg.n_units = 500;
    cfg.n_periods = 10;
    cfg.policy = p;
    cfg.seed = seed;
    return cfg;
}

SimConfig SimConfig::wide(PolicyKind p, uint64_t seed) {
    SimConfig cfg;
    cfg.n_units = 10;
    cfg.n_periods = 500;
    cfg.policy = p;
    cfg.seed = seed;
    return cfg;
}

void SimConfig::validate() const {
    require(n_units >= 1 && n_periods >= 1, "sim config: need n_units, n_periods >= 1");
    require(true_rank >= 1, "sim config: true_rank must be >= 1");
    require(true_k >= 1 && true_k <= n_periods, "sim config: need 1 <= true_k <= n_periods");
    require(true_k <= 20, "sim config: true_k too large (2^k slices)");
    require(lambda_min >= 0 && lambda_max >= lambda_min, "sim config: bad lambda range");
    require(noise_sd >= 0, "sim config: noise_sd must be >= 0");
}

SimPolicy::SimPolicy(PolicyKind kind, std::array<double, 4> gamma)
    : kind_(kind), gamma_(gamma) {}

double SimPolicy::u_factor(const StepContext& ctx) const {
    const int t = ctx.time;
    if (t <= 1) return 1.0;
    if (kind_ == PolicyKind::simple)
        return 2.0 + (2.0 * ctx.a_at(t - 1) - 1.0) / 3.0;
    double u = 1.0;
    for (int tp = t - 3; tp <= t - 1; ++tp) u *= 2.0 + (2.0 * ctx.a_at(tp) - 3.0);
    return u;
}

double SimPolicy::prob_treat(const StepContext& ctx) const {
    const int t = ctx.time;
    double arg = std::pow(-0.5, t);
    if (kind_ == PolicyKind::simple) {
        arg -= ctx.a_at(t - 1);
        for (int c = 0; c < 4; ++c) arg += gamma_[c] * ctx.l_at(t, c);
    } else {
        for (int tp = t - 2; tp <= t; ++tp) {
            arg += ctx.a_at(tp - 1);
            if (tp >= 1)
                for (int c = 0; c < 4; ++c) arg += gamma_[c] * ctx.l_at(tp, c);
        }
    }
    return clamp_prob(expit(arg));
}

void SimPolicy::draw_covariates(const StepContext& ctx, RngStream& rng,
                                std::span<double> out) const {
    const double u = u_factor(ctx);
    double z0 = rng.normal(), z1 = rng.normal(), z2 = rng.normal(), z3 = rng.normal();
    out[0] = z0 * u;
    out[1] = z1 * u;
    out[2] = std::abs(z2 * u);
    out[3] = std::abs(z3 * u);
}

double simple_policy_prob(uint8_t a_prev, std::span<const double> l_t, int time,
                          std::span<const double, 4> gamma) {
    double arg = -static_cast<double>(a_prev) + std::pow(-0.5, time);
    for (int c = 0; c < 4; ++c) arg += gamma[c] * l_t[c];
    return clamp_prob(expit(arg));
}

double complex_policy_prob(std::span<const uint8_t, 3> a_lags,
                           std::span<const double> l_window, int time,
                           std::span<const double, 4> gamma) {
    // a_lags are A_{t-3}, A_{t-2}, A_{t-1}; l_window holds L_{t-2}, L_{t-1},
    // L_t flattened (zeros standing in for pre-study periods).
    double arg = std::pow(-0.5, time);
    for (int j = 0; j < 3; ++j) {
        arg += a_lags[j];
        for (int c = 0; c < 4; ++c) arg += gamma[c] * l_window[static_cast<std::size_t>(j) * 4 + c];
    }
    return clamp_prob(expit(arg));
}

CpDecomposition gen_true_tensor(const SimConfig& cfg) {
    cfg.validate();
    RngStream rng(cfg.seed, StreamId::true_factors);
    const int b = 1 << cfg.true_k;
    CpDecomposition cp;
    cp.rank = cfg.true_rank;
    cp.U = Matrix(cfg.n_units, cp.rank);
    cp.V = Matrix(cfg.n_periods, cp.rank);
    cp.W = Matrix(b, cp.rank);
    for (auto* f : {&cp.U, &cp.V, &cp.W})
        for (int l = 0; l < cp.rank; ++l) {
            for (int i = 0; i < f->rows(); ++i) (*f)(i, l) = rng.uniform();
            f->col(l) /= f->col(l).norm();
        }
    cp.lambdas = Vector(cp.rank);
    for (int l = 0; l < cp.rank; ++l) cp.lambdas(l) = rng.uniform(cfg.lambda_min, cfg.lambda_max);
    canonicalize(cp);
    return cp;
}

SimTruth simulate_panel(const SimConfig& cfg) {
    cfg.validate();
    SimTruth truth;
    truth.config = cfg;
    truth.true_cp = gen_true_tensor(cfg);
    truth.true_tensor = reconstruct(truth.true_cp, truth.true_cp.dims());

    const int n = cfg.n_units, tt = cfg.n_periods, k = cfg.true_k;
    SimPolicy policy(cfg.policy, cfg.gamma);

    PanelData panel;
    panel.n_units = n;
    panel.n_periods = tt;
    panel.cov_dim = 4;
    panel.treatments.assign(static_cast<std::size_t>(n) * tt, 0);
    panel.covariates.assign(static_cast<std::size_t>(n) * tt * 4, 0.0);
    panel.outcomes.assign(static_cast<std::size_t>(n) * tt, 0.0);

    const std::size_t cells = static_cast<std::size_t>(n) * tt;
    truth.structural_base.assign(cells, 0.0);
    truth.covterm_realized.assign(cells, 0.0);
    truth.covterm_expected.assign(cells, 0.0);
    truth.tensor_term.assign(cells, 0.0);
    truth.noise.assign(cells, 0.0);
    truth.true_marginal_mean.assign(cells, 0.0);

    const double exp_cov_scale = (cfg.delta[2] + cfg.delta[3]) * kMeanAbsNormal;

    for (int i = 0; i < n; ++i) {
        uint8_t* a_row = panel.treatments.data() + static_cast<std::size_t>(i) * tt;
        double* l_row = panel.covariates.data() + static_cast<std::size_t>(i) * tt * 4;
        std::vector<double> u_abs(tt, 0.0);  // |U_{i,t}| per period, realized
        for (int t = 1; t <= tt; ++t) {
            StepContext ctx;
            ctx.unit = i;
            ctx.time = t;
            ctx.cov_dim = 4;
            ctx.recent_a = std::span<const uint8_t>(a_row, t - 1);
            ctx.recent_l = std::span<const double>(l_row, static_cast<std::size_t>(t - 1) * 4);

            u_abs[t - 1] = std::abs(policy.u_factor(ctx));
            RngStream cov_rng(cfg.seed, StreamId::covariate_z, static_cast<uint64_t>(i), t);
            policy.draw_covariates(ctx, cov_rng, std::span<double>(l_row + (t - 1) * 4, 4));
            ctx.current_l = std::span<const double>(l_row + (t - 1) * 4, 4);

            double pi = policy.prob_treat(ctx);
            RngStream a_rng(cfg.seed, StreamId::treatment, static_cast<uint64_t>(i), t);
            a_row[t - 1] = a_rng.bernoulli(pi) ? 1 : 0;

            const std::size_t c = panel.cell(i, t - 1);
            double base = 250.0, cov_real = 0.0, cov_exp = 0.0;
            for (int tp = t - 2; tp <= t; ++tp) {
                if (tp < 1) continue;
                base -= 10.0 * a_row[tp - 1];
                for (int cc = 0; cc < 4; ++cc)
                    cov_real += cfg.delta[cc] * l_row[static_cast<std::size_t>(tp - 1) * 4 + cc];
                cov_exp += exp_cov_scale * u_abs[tp - 1];
            }
            int p = 0;
            for (int j = 0; j < k; ++j) {
                int s = t - k + 1 + j;
                p = (p << 1) | (s >= 1 ? a_row[s - 1] : 0);
            }
            RngStream nu_rng(cfg.seed, StreamId::outcome_noise, static_cast<uint64_t>(i), t);
            double nu = cfg.noise_sd * nu_rng.normal();
            double tensor_entry = truth.true_tensor(i, t - 1, p);

            truth.structural_base[c] = base;
            truth.covterm_realized[c] = cov_real;
            truth.covterm_expected[c] = cov_exp;
            truth.tensor_term[c] = tensor_entry;
            truth.noise[c] = nu;
            truth.true_marginal_mean[c] = base + cov_real + tensor_entry;
            panel.outcomes[c] = base + cov_real + tensor_entry + nu;
        }
    }
    panel.validate();
    truth.panel = std::move(panel);
    return truth;
}

std::unique_ptr<SimPolicy> SimTruth::make_policy() const {
    return std::make_unique<SimPolicy>(config.policy, config.gamma);
}

double normalized_mse(std::span<const double> predicted, const SimTruth& truth) {
    require(predicted.size() == truth.true_marginal_mean.size(),
            "normalized_mse: prediction count " + std::to_string(predicted.size()) +
                " does not match " + std::to_string(truth.true_marginal_mean.size()) + " cells");
    double s = 0.0;
    for (std::size_t c = 0; c < predicted.size(); ++c) {
        double d = predicted[c] - truth.true_marginal_mean[c];
        s += d * d;
    }
    return s / static_cast<double>(predicted.size());
}

PanelData residualized_panel(const SimTruth& truth) {
    PanelData panel = truth.panel;
    for (std::size_t c = 0; c < panel.outcomes.size(); ++c)
        panel.outcomes[c] -= truth.structural_base[c] + truth.covterm_realized[c];
    return panel;
}

std::vector<double> tensor_predictions(const DenseTensor3& t_hat, const SimTruth& truth, int k) {
    const PanelData& panel = truth.panel;
    require(t_hat.dims().n1 == panel.n_units && t_hat.dims().n2 == panel.n_periods &&
                t_hat.dims().n3 == (1 << k),
            "tensor_predictions: tensor dims do not match panel with k=" + std::to_string(k));
    std::vector<double> pred(truth.true_marginal_mean.size());
    for (int i = 0; i < panel.n_units; ++i)
        for (int t = 0; t < panel.n_periods; ++t) {
            int p = realized_history(panel, i, t, k);
            std::size_t c = panel.cell(i, t);
            pred[c] = t_hat(i, t, p) + truth.structural_base[c] + truth.covterm_realized[c];
        }
    return pred;
}

std::vector<SweepCell> aggregate_sweep(const std::vector<SweepRow>& rows) {
    std::vector<SweepCell> cells;
    auto find = [&](PolicyKind p, int r, int k) -> SweepCell& {
        for (auto& c : cells)
            if (c.policy == p && c.rank == r && c.k == k) return c;
        cells.push_back({p, r, k, 0.0, 0.0, 0});
        return cells.back();
    };
    for (const auto& row : rows) {
        if (row.failed) continue;
        SweepCell& c = find(row.policy, row.rank, row.k);
        c.mean_nmse += row.nmse;
        ++c.reps;
    }
    for (auto& c : cells)
        if (c.reps > 0) c.mean_nmse /= c.reps;
    for (const auto& row : rows) {
        if (row.failed) continue;
        SweepCell& c = find(row.policy, row.rank, row.k);
        double d = row.nmse - c.mean_nmse;
        c.std_error += d * d;
    }
    for (auto& c : cells)
        c.std_error = c.reps > 1 ? std::sqrt(c.std_error / (c.reps * (c.reps - 1.0))) : 0.0;
    return cells;
}

}  // namespace tmsm
