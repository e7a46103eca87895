#include "tmsm/weights.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace tmsm {

namespace {

// Propensity of the realized treatment at 1-based time s, from observed data.
double realized_step_propensity(const PropensityModel& pm, const PanelData& panel, int i,
                                int s) {
    const int d = panel.cov_dim;
    const uint8_t* a_row = panel.treatments.data() + static_cast<std::size_t>(i) * panel.n_periods;
    const double* l_row = panel.covariates.data() +
                          static_cast<std::size_t>(i) * panel.n_periods * d;
    StepContext ctx;
    ctx.unit = i;
    ctx.time = s;
    ctx.cov_dim = d;
    ctx.recent_a = std::span<const uint8_t>(a_row, s - 1);
    ctx.recent_l = std::span<const double>(l_row, static_cast<std::size_t>(s - 1) * d);
    ctx.current_l = std::span<const double>(l_row + static_cast<std::size_t>(s - 1) * d, d);
    return pm.prob_treat(ctx);
}

void check_positivity(double p, double delta, int i, int s) {
    if (!(p > delta && p < 1.0 - delta))
        fail_compute("positivity violation: propensity " + std::to_string(p) + " at unit " +
                     std::to_string(i) + ", time " + std::to_string(s) +
                     " outside (delta, 1-delta) with delta=" + std::to_string(delta));
}

// Shared Monte-Carlo driver. A pool of free paths for one generic unit is
// advanced period by period; the numerator for a window ending at 1-based
// time t forks off the pool state at period t-k with the window treatments
// forced and importance weights equal to the product of forced-step
// propensities. Draws are keyed by (seed, purpose, path, time), so any
// subset of the computation reproduces identical values regardless of which
// cells were requested or how many threads ran.
class PathEngine {
public:
    PathEngine(const PropensityModel& pm, const GenerativeModel& gen, int n_periods, int k,
               const McConfig& mc)
        : pm_(pm), gen_(gen), T_(n_periods), k_(k), B_(1 << k), d_(gen.cov_dim()),
          M_(mc.n_samples), seed_(mc.seed) {
        require(M_ >= 1, "mc config: n_samples must be >= 1");
        require(k_ >= 1 && k_ <= 20, "weights: k out of range");
        require(d_ >= 1, "weights: generative model must have cov_dim >= 1");
        lb_ = std::max({pm.lookback(), gen.lookback(), 1});
        ring_ = lb_ + 2;
        pool_a_.assign(static_cast<std::size_t>(M_) * std::max(T_, 1), 0);
        pool_l_.assign(static_cast<std::size_t>(M_) * ring_ * d_, 0.0);
        hist_buf_.assign(static_cast<std::size_t>(M_) * lb_ * d_, 0.0);
        cur_buf_.assign(static_cast<std::size_t>(M_) * d_, 0.0);
        const int la_cap = lb_ + k_;
        fork_a_.assign(static_cast<std::size_t>(M_) * la_cap, 0);
        fork_l_.assign(static_cast<std::size_t>(M_) * la_cap * d_, 0.0);
    }

    // wanted[t0] lists window indexes needed at 0-based period t0. Fills the
    // numerator table and, if requested, the slice-probability table.
    void run(const std::vector<std::vector<int>>& wanted, bool want_slices) {
        numerators_.assign(static_cast<std::size_t>(T_) * B_,
                           std::numeric_limits<double>::quiet_NaN());
        if (want_slices) slice_probs_.assign(static_cast<std::size_t>(T_) * B_, 0.0);
        const int pool_end = want_slices ? T_ : std::max(0, T_ - k_);
        for (int u = 0; u <= pool_end; ++u) {
            if (u >= 1) {
                advance_pool(u);
                if (want_slices) tally_windows(u);
            }
            if (u == 0) {
                for (int t = 1; t <= std::min(k_, T_); ++t)
                    for (int p : wanted[t - 1]) store_numerator(t, p);
            } else if (u + k_ <= T_) {
                for (int p : wanted[u + k_ - 1]) store_numerator(u + k_, p);
            }
        }
    }

    double numerator(int t0, int p) const {
        return numerators_[static_cast<std::size_t>(t0) * B_ + p];
    }
    double slice_prob(int t0, int p) const {
        return slice_probs_[static_cast<std::size_t>(t0) * B_ + p];
    }
    double min_prop() const { return min_prop_; }
    double max_prop() const { return max_prop_; }

private:
    void store_numerator(int t, int p) {
        numerators_[static_cast<std::size_t>(t - 1) * B_ + p] = fork_window(t, p);
    }

    void advance_pool(int u) {
        double mn = min_prop_, mx = max_prop_;
        const int nh = std::min(u - 1, lb_);
#pragma omp parallel for schedule(static) reduction(min : mn) reduction(max : mx)
        for (int m = 0; m < M_; ++m) {
            uint8_t* a_path = pool_a_.data() + static_cast<std::size_t>(m) * T_;
            double* hist = hist_buf_.data() + static_cast<std::size_t>(m) * lb_ * d_;
            double* cur = cur_buf_.data() + static_cast<std::size_t>(m) * d_;
            for (int j = 0; j < nh; ++j) {
                const double* slot = ring_slot(m, u - nh + j);
                std::copy(slot, slot + d_, hist + static_cast<std::size_t>(j) * d_);
            }
            StepContext ctx;
            ctx.unit = 0;
            ctx.time = u;
            ctx.cov_dim = d_;
            ctx.recent_a = std::span<const uint8_t>(a_path, u - 1);
            ctx.recent_l = std::span<const double>(hist, static_cast<std::size_t>(nh) * d_);
            RngStream cov_rng(seed_, StreamId::pool_cov, static_cast<uint64_t>(m), u);
            gen_.draw_covariates(ctx, cov_rng, std::span<double>(cur, d_));
            ctx.current_l = std::span<const double>(cur, d_);
            double pi = pm_.prob_treat(ctx);
            mn = std::min(mn, pi);
            mx = std::max(mx, pi);
            RngStream a_rng(seed_, StreamId::pool_treat, static_cast<uint64_t>(m), u);
            a_path[u - 1] = a_rng.bernoulli(pi) ? 1 : 0;
            std::copy(cur, cur + d_, ring_slot(m, u));
        }
        min_prop_ = mn;
        max_prop_ = mx;
    }

    void tally_windows(int u) {
        std::vector<long> counts(B_, 0);
        for (int m = 0; m < M_; ++m) {
            const uint8_t* a_path = pool_a_.data() + static_cast<std::size_t>(m) * T_;
            int p = 0;
            for (int j = 0; j < k_; ++j) {
                int s = u - k_ + 1 + j;
                p = (p << 1) | (s >= 1 ? a_path[s - 1] : 0);
            }
            ++counts[p];
        }
        for (int p = 0; p < B_; ++p)
            slice_probs_[static_cast<std::size_t>(u - 1) * B_ + p] =
                static_cast<double>(counts[p]) / static_cast<double>(M_);
    }

    // Product over window steps of the self-normalized conditional
    // probability estimates; pool state must be at period t-k.
    double fork_window(int t, int p) {
        const int s_start = std::max(1, t - k_ + 1);
        const int steps = t - s_start + 1;
        const int pre_start = std::max(1, s_start - lb_);
        const int pre_len = s_start - pre_start;
        const int la_cap = lb_ + k_;
        std::array<uint8_t, 32> bits{};
        for (int j = 0; j < k_; ++j) {
            bits[j] = static_cast<uint8_t>((p >> (k_ - 1 - j)) & 1);
            int s = t - k_ + 1 + j;
            if (s < 1 && bits[j] != 0)
                fail_input("numerator window sets a treatment before the study start");
        }

        std::vector<double> num(static_cast<std::size_t>(M_) * steps);
        std::vector<double> den(static_cast<std::size_t>(M_) * steps);
        double mn = min_prop_, mx = max_prop_;
#pragma omp parallel for schedule(static) reduction(min : mn) reduction(max : mx)
        for (int m = 0; m < M_; ++m) {
            const uint8_t* a_path = pool_a_.data() + static_cast<std::size_t>(m) * T_;
            uint8_t* la = fork_a_.data() + static_cast<std::size_t>(m) * la_cap;
            double* ll = fork_l_.data() + static_cast<std::size_t>(m) * la_cap * d_;
            double* cur = cur_buf_.data() + static_cast<std::size_t>(m) * d_;
            int len = pre_len;
            for (int s = pre_start; s < s_start; ++s) {
                la[s - pre_start] = a_path[s - 1];
                const double* slot = ring_slot(m, s);
                std::copy(slot, slot + d_, ll + static_cast<std::size_t>(s - pre_start) * d_);
            }
            double omega = 1.0;
            for (int s = s_start; s <= t; ++s) {
                const int j = s - s_start;
                StepContext ctx;
                ctx.unit = 0;
                ctx.time = s;
                ctx.cov_dim = d_;
                ctx.recent_a = std::span<const uint8_t>(la, len);
                ctx.recent_l = std::span<const double>(ll, static_cast<std::size_t>(len) * d_);
                RngStream cov_rng(seed_, StreamId::fork_cov, static_cast<uint64_t>(m),
                                  static_cast<uint64_t>(t) * 4096 + s);
                gen_.draw_covariates(ctx, cov_rng, std::span<double>(cur, d_));
                ctx.current_l = std::span<const double>(cur, d_);
                double pi = pm_.prob_treat(ctx);
                mn = std::min(mn, pi);
                mx = std::max(mx, pi);
                const uint8_t bit = bits[s - (t - k_ + 1)];
                double pi_val = bit ? pi : 1.0 - pi;
                num[static_cast<std::size_t>(m) * steps + j] = omega * pi_val;
                den[static_cast<std::size_t>(m) * steps + j] = omega;
                omega *= pi_val;
                la[len] = bit;
                std::copy(cur, cur + d_, ll + static_cast<std::size_t>(len) * d_);
                ++len;
            }
        }
        min_prop_ = mn;
        max_prop_ = mx;

        double product = 1.0;
        for (int j = 0; j < steps; ++j) {
            double sn = 0.0, sd = 0.0;
            for (int m = 0; m < M_; ++m) {
                sn += num[static_cast<std::size_t>(m) * steps + j];
                sd += den[static_cast<std::size_t>(m) * steps + j];
            }
            if (sd <= 0.0)
                fail_compute("numerator MC: no paths consistent with the conditioning window; "
                             "raise n_samples");
            product *= sn / sd;
        }
        return product;
    }

    double* ring_slot(int m, int period) {
        return pool_l_.data() + (static_cast<std::size_t>(m) * ring_ + period % ring_) * d_;
    }

    const PropensityModel& pm_;
    const GenerativeModel& gen_;
    int T_, k_, B_, d_, M_;
    uint64_t seed_;
    int lb_ = 0, ring_ = 0;
    std::vector<uint8_t> pool_a_;
    std::vector<double> pool_l_;
    std::vector<double> hist_buf_, cur_buf_;
    std::vector<uint8_t> fork_a_;
    std::vector<double> fork_l_;
    std::vector<double> numerators_;
    std::vector<double> slice_probs_;
    double min_prop_ = 1.0, max_prop_ = 0.0;
};

void check_exchangeable(const PropensityModel& pm, const GenerativeModel& gen) {
    require(pm.unit_invariant() && gen.units_exchangeable(),
            "weights: Monte-Carlo engine requires a unit-invariant policy and exchangeable "
            "units");
}

std::vector<std::vector<int>> realized_windows(const PanelData& panel, int k) {
    std::vector<std::vector<int>> wanted(panel.n_periods);
    for (int t = 0; t < panel.n_periods; ++t) {
        auto& v = wanted[t];
        for (int i = 0; i < panel.n_units; ++i) v.push_back(realized_history(panel, i, t, k));
        std::sort(v.begin(), v.end());
        v.erase(std::unique(v.begin(), v.end()), v.end());
    }
    return wanted;
}

}  // namespace

double denominator_prob(const PropensityModel& pm, const PanelData& panel, int i, int t, int k) {
    require(i >= 0 && i < panel.n_units && t >= 0 && t < panel.n_periods,
            "denominator_prob: cell out of range");
    require(k >= 1, "denominator_prob: k must be >= 1");
    const double delta = pm.positivity_delta();
    double prod = 1.0;
    const int t_math = t + 1;
    for (int s = std::max(1, t_math - k + 1); s <= t_math; ++s) {
        double pi = realized_step_propensity(pm, panel, i, s);
        check_positivity(pi, delta, i, s);
        prod *= panel.a(i, s - 1) ? pi : 1.0 - pi;
    }
    return prod;
}

double numerator_prob_mc(const PropensityModel& pm, const GenerativeModel& gen, int t,
                         std::span<const uint8_t> window, const McConfig& mc) {
    check_exchangeable(pm, gen);
    const int k = static_cast<int>(window.size());
    require(k >= 1, "numerator_prob_mc: empty window");
    require(t >= 0, "numerator_prob_mc: negative period");
    const int t_math = t + 1;
    const int p = history_index(window);
    PathEngine engine(pm, gen, t_math, k, mc);
    std::vector<std::vector<int>> wanted(t_math);
    wanted[t].push_back(p);
    engine.run(wanted, /*want_slices=*/false);
    return engine.numerator(t, p);
}

double numerator_prob_mc(const PropensityModel& pm, const GenerativeModel& gen,
                         const PanelData& panel, int i, int t, int k, const McConfig& mc) {
    auto window = window_at(panel, i, t, k);
    return numerator_prob_mc(pm, gen, t, window, mc);
}

std::vector<double> compute_weights(const PropensityModel& pm, const GenerativeModel& gen,
                                    const PanelData& panel, int k, const McConfig& mc) {
    check_exchangeable(pm, gen);
    panel.validate();
    require(panel.n_units >= 1, "compute_weights: empty panel");
    require(k >= 1 && k <= panel.n_periods, "compute_weights: need 1 <= k <= n_periods");
    require(gen.cov_dim() == panel.cov_dim, "compute_weights: covariate dimension mismatch");

    PathEngine engine(pm, gen, panel.n_periods, k, mc);
    engine.run(realized_windows(panel, k), /*want_slices=*/false);

    const double delta = pm.positivity_delta();
    const double bound = std::pow((1.0 - delta) / delta, k);
    std::vector<double> w(static_cast<std::size_t>(panel.n_units) * panel.n_periods);
    for (int i = 0; i < panel.n_units; ++i)
        for (int t = 0; t < panel.n_periods; ++t) {
            double num = engine.numerator(t, realized_history(panel, i, t, k));
            double den = denominator_prob(pm, panel, i, t, k);
            double wit = num / den;
            if (!(wit > 0.0) || !(wit <= bound))
                fail_compute("weight bound violated at unit " + std::to_string(i) + ", period " +
                             std::to_string(t) + ": w=" + std::to_string(wit));
            w[panel.cell(i, t)] = wit;
        }
    return w;
}

DenseTensor3 slice_probabilities(const PropensityModel& pm, const GenerativeModel& gen,
                                 int n_units, int n_periods, int k, const McConfig& mc) {
    check_exchangeable(pm, gen);
    require(n_units >= 1 && n_periods >= 1, "slice_probabilities: need positive dims");
    require(k >= 1 && k <= n_periods, "slice_probabilities: need 1 <= k <= n_periods");
    const int B = 1 << k;
    PathEngine engine(pm, gen, n_periods, k, mc);
    engine.run(std::vector<std::vector<int>>(n_periods), /*want_slices=*/true);
    DenseTensor3 probs(n_units, n_periods, B, 0.0);
    for (int i = 0; i < n_units; ++i)
        for (int t = 0; t < n_periods; ++t)
            for (int p = 0; p < B; ++p) probs(i, t, p) = engine.slice_prob(t, p);
    return probs;
}

WeightBundle build_bundle(const PropensityModel& pm, const GenerativeModel& gen,
                          const PanelData& panel, int k, const McConfig& mc) {
    check_exchangeable(pm, gen);
    panel.validate();
    require(panel.n_units >= 1, "build_bundle: empty panel");
    require(k >= 1 && k <= panel.n_periods, "build_bundle: need 1 <= k <= n_periods");
    require(gen.cov_dim() == panel.cov_dim, "build_bundle: covariate dimension mismatch");

    const int N = panel.n_units, T = panel.n_periods, B = 1 << k;
    PathEngine engine(pm, gen, T, k, mc);
    engine.run(realized_windows(panel, k), /*want_slices=*/true);

    WeightBundle bundle;
    bundle.k = k;
    bundle.slice_probs = DenseTensor3(N, T, B, 0.0);
    bundle.W = DenseTensor3(N, T, B, 0.0);
    bundle.Yw = DenseTensor3(N, T, B, 0.0);
    bundle.w.assign(static_cast<std::size_t>(N) * T, 0.0);

    const double delta = pm.positivity_delta();
    const double bound = std::pow((1.0 - delta) / delta, k);
    const double floor = mc.resolved_floor();
    double min_prop = engine.min_prop(), max_prop = engine.max_prop();

    for (int t = 0; t < T; ++t)
        for (int p = 0; p < B; ++p) {
            double prob = engine.slice_prob(t, p);
            double root = std::sqrt(prob);
            for (int i = 0; i < N; ++i) {
                bundle.slice_probs(i, t, p) = prob;
                bundle.W(i, t, p) = root;
            }
        }
    for (int i = 0; i < N; ++i)
        for (int t = 0; t < T; ++t) {
            for (int s = std::max(1, t + 2 - k); s <= t + 1; ++s) {
                double pi = realized_step_propensity(pm, panel, i, s);
                min_prop = std::min(min_prop, pi);
                max_prop = std::max(max_prop, pi);
            }
            int p = realized_history(panel, i, t, k);
            double num = engine.numerator(t, p);
            double den = denominator_prob(pm, panel, i, t, k);
            double wit = num / den;
            if (!(wit > 0.0) || !(wit <= bound))
                fail_compute("weight bound violated at unit " + std::to_string(i) + ", period " +
                             std::to_string(t) + ": w=" + std::to_string(wit));
            bundle.w[panel.cell(i, t)] = wit;
            double prob = std::max(bundle.slice_probs(i, t, p), floor);
            bundle.Yw(i, t, p) = wit * panel.y(i, t) / prob;
        }
    if (mc.yw_trunc_quantile > 0.0 && mc.yw_trunc_quantile < 1.0) {
        std::vector<double> magnitudes;
        magnitudes.reserve(static_cast<std::size_t>(N) * T);
        for (int i = 0; i < N; ++i)
            for (int t = 0; t < T; ++t)
                magnitudes.push_back(
                    std::abs(bundle.Yw(i, t, realized_history(panel, i, t, k))));
        std::size_t idx = static_cast<std::size_t>(mc.yw_trunc_quantile *
                                                   (magnitudes.size() - 1));
        std::nth_element(magnitudes.begin(), magnitudes.begin() + idx, magnitudes.end());
        double cap = magnitudes[idx];
        for (double& v : bundle.Yw.values()) v = std::clamp(v, -cap, cap);
    }
    bundle.min_propensity = min_prop;
    bundle.max_propensity = max_prop;
    return bundle;
}

WeightBundle completion_bundle(const PanelData& panel, std::span<const double> w, int k,
                               double w_trunc_quantile) {
    panel.validate();
    const int N = panel.n_units, T = panel.n_periods;
    require(N >= 1 && T >= 1, "completion_bundle: empty panel");
    require(k >= 1 && k <= T, "completion_bundle: need 1 <= k <= n_periods");
    require(w.size() == static_cast<std::size_t>(N) * T, "completion_bundle: weight array size");
    const int B = 1 << k;

    double cap = std::numeric_limits<double>::infinity();
    if (w_trunc_quantile > 0.0 && w_trunc_quantile < 1.0) {
        std::vector<double> sorted(w.begin(), w.end());
        std::size_t idx = static_cast<std::size_t>(w_trunc_quantile * (sorted.size() - 1));
        std::nth_element(sorted.begin(), sorted.begin() + idx, sorted.end());
        cap = sorted[idx];
    }
    double w_max = 0.0;
    for (double v : w) w_max = std::max(w_max, std::min(v, cap));
    require(w_max > 0.0, "completion_bundle: all weights are zero");

    WeightBundle bundle;
    bundle.k = k;
    bundle.w.assign(w.begin(), w.end());
    bundle.W = DenseTensor3(N, T, B, 0.0);
    bundle.Yw = DenseTensor3(N, T, B, 0.0);
    bundle.slice_probs = DenseTensor3(N, T, B, 0.0);
    for (int i = 0; i < N; ++i)
        for (int t = 0; t < T; ++t) {
            int p = realized_history(panel, i, t, k);
            double wt = std::min(w[panel.cell(i, t)], cap) / w_max;
            bundle.W(i, t, p) = std::sqrt(wt);
            bundle.Yw(i, t, p) = panel.y(i, t);
        }
    return bundle;
}

void DiscreteGenerativeModel::draw_covariates(const StepContext& ctx, RngStream& rng,
                                              std::span<double> out) const {
    const int s = n_states();
    double u = rng.uniform();
    double acc = 0.0;
    int pick = s - 1;
    for (int z = 0; z < s; ++z) {
        acc += state_prob(z, ctx);
        if (u < acc) {
            pick = z;
            break;
        }
    }
    state_covariates(pick, ctx, out);
}

namespace {

// Depth-first enumeration of all (L, A) paths up to 1-based time t_end.
void enumerate_paths(const PropensityModel& pm, const DiscreteGenerativeModel& gen, int t_end,
                     int s, std::vector<uint8_t>& a_path, std::vector<double>& l_path,
                     double prob, int k, std::vector<double>& window_probs) {
    const int d = gen.cov_dim();
    if (s > t_end) {
        int p = 0;
        for (int j = 0; j < k; ++j) {
            int sp = t_end - k + 1 + j;
            p = (p << 1) | (sp >= 1 ? a_path[sp - 1] : 0);
        }
        window_probs[p] += prob;
        return;
    }
    std::vector<double> cov(d);
    for (int z = 0; z < gen.n_states(); ++z) {
        // Spans rebuilt per branch; path vectors have reserved capacity so
        // the recursion below never reallocates under them.
        StepContext ctx;
        ctx.unit = 0;
        ctx.time = s;
        ctx.cov_dim = d;
        ctx.recent_a = std::span<const uint8_t>(a_path.data(), s - 1);
        ctx.recent_l = std::span<const double>(l_path.data(), static_cast<std::size_t>(s - 1) * d);
        double pz = gen.state_prob(z, ctx);
        if (pz <= 0.0) continue;
        gen.state_covariates(z, ctx, cov);
        l_path.insert(l_path.end(), cov.begin(), cov.end());
        ctx.current_l = std::span<const double>(cov.data(), d);
        double pi = pm.prob_treat(ctx);
        for (uint8_t a = 0; a <= 1; ++a) {
            a_path.push_back(a);
            enumerate_paths(pm, gen, t_end, s + 1, a_path, l_path,
                            prob * pz * (a ? pi : 1.0 - pi), k, window_probs);
            a_path.pop_back();
        }
        l_path.resize(l_path.size() - d);
    }
}

}  // namespace

std::vector<double> exact_window_distribution(const PropensityModel& pm,
                                              const DiscreteGenerativeModel& gen, int t, int k) {
    require(t >= 0 && k >= 1, "exact_window_distribution: bad arguments");
    require(t + 1 <= 16, "exact_window_distribution: horizon too long to enumerate");
    std::vector<double> probs(static_cast<std::size_t>(1) << k, 0.0);
    std::vector<uint8_t> a_path;
    std::vector<double> l_path;
    a_path.reserve(t + 1);
    l_path.reserve(static_cast<std::size_t>(t + 1) * gen.cov_dim());
    enumerate_paths(pm, gen, t + 1, 1, a_path, l_path, 1.0, k, probs);
    return probs;
}

double exact_numerator_prob(const PropensityModel& pm, const DiscreteGenerativeModel& gen, int t,
                            std::span<const uint8_t> window) {
    const int k = static_cast<int>(window.size());
    auto probs = exact_window_distribution(pm, gen, t, k);
    return probs[history_index(window)];
}

}  // namespace tmsm
