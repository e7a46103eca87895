#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "tmsm/simulation.hpp"
#include "tmsm/weights.hpp"

using namespace tmsm;

namespace {

// Policy with a fixed treatment probability; independent of everything.
class ConstPolicy final : public PropensityModel, public GenerativeModel {
public:
    explicit ConstPolicy(double p, double delta = 1e-6) : p_(p), delta_(delta) {}
    double prob_treat(const StepContext&) const override { return p_; }
    double positivity_delta() const override { return delta_; }
    int lookback() const override { return 0; }
    int cov_dim() const override { return 1; }
    void draw_covariates(const StepContext&, RngStream& rng, std::span<double> out) const override {
        out[0] = rng.normal();
    }

private:
    double p_, delta_;
};

// Two-state covariate toy: L in {0,1} fair coin, P(A=1|L=0)=p0, P(A=1|L=1)=p1.
class BinaryToy final : public PropensityModel, public DiscreteGenerativeModel {
public:
    BinaryToy(double p0, double p1) : p0_(p0), p1_(p1) {}
    double prob_treat(const StepContext& ctx) const override {
        return ctx.current_l[0] > 0.5 ? p1_ : p0_;
    }
    double positivity_delta() const override { return 1e-6; }
    int lookback() const override { return 0; }
    int cov_dim() const override { return 1; }
    int n_states() const override { return 2; }
    double state_prob(int, const StepContext&) const override { return 0.5; }
    void state_covariates(int state, const StepContext&, std::span<double> out) const override {
        out[0] = state;
    }

private:
    double p0_, p1_;
};

// Treatment depends on the previous covariate and treatment; discrete L so
// exact enumeration is available.
class MarkovToy final : public PropensityModel, public DiscreteGenerativeModel {
public:
    double prob_treat(const StepContext& ctx) const override {
        double base = 0.3 + 0.3 * ctx.current_l[0] + 0.2 * ctx.a_at(ctx.time - 1);
        return std::min(0.9, std::max(0.1, base));
    }
    double positivity_delta() const override { return 0.05; }
    int lookback() const override { return 1; }
    int cov_dim() const override { return 1; }
    int n_states() const override { return 2; }
    double state_prob(int state, const StepContext& ctx) const override {
        double p1 = ctx.time == 1 ? 0.5 : 0.4 + 0.2 * ctx.a_at(ctx.time - 1);
        return state == 1 ? p1 : 1.0 - p1;
    }
    void state_covariates(int state, const StepContext&, std::span<double> out) const override {
        out[0] = state;
    }
};

PanelData tiny_panel(int n, int t, uint64_t seed, const PropensityModel& pm,
                     const GenerativeModel& gen) {
    PanelData panel;
    panel.n_units = n;
    panel.n_periods = t;
    panel.cov_dim = gen.cov_dim();
    const int d = panel.cov_dim;
    panel.treatments.assign(static_cast<std::size_t>(n) * t, 0);
    panel.covariates.assign(static_cast<std::size_t>(n) * t * d, 0.0);
    panel.outcomes.assign(static_cast<std::size_t>(n) * t, 1.0);
    for (int i = 0; i < n; ++i) {
        uint8_t* a_row = panel.treatments.data() + static_cast<std::size_t>(i) * t;
        double* l_row = panel.covariates.data() + static_cast<std::size_t>(i) * t * d;
        for (int s = 1; s <= t; ++s) {
            StepContext ctx;
            ctx.unit = i;
            ctx.time = s;
            ctx.cov_dim = d;
            ctx.recent_a = std::span<const uint8_t>(a_row, s - 1);
            ctx.recent_l = std::span<const double>(l_row, static_cast<std::size_t>(s - 1) * d);
            RngStream rng(seed, StreamId::covariate_z, i, s);
            gen.draw_covariates(ctx, rng, std::span<double>(l_row + (s - 1) * d, d));
            ctx.current_l = std::span<const double>(l_row + (s - 1) * d, d);
            RngStream arng(seed, StreamId::treatment, i, s);
            a_row[s - 1] = arng.bernoulli(pm.prob_treat(ctx)) ? 1 : 0;
        }
    }
    return panel;
}

}  // namespace

TEST_CASE("denominator is the plain propensity at k=1") {
    ConstPolicy policy(0.37);
    PanelData panel = tiny_panel(3, 4, 1, policy, policy);
    for (int i = 0; i < 3; ++i)
        for (int t = 0; t < 4; ++t) {
            double want = panel.a(i, t) ? 0.37 : 0.63;
            CHECK(denominator_prob(policy, panel, i, t, 1) == doctest::Approx(want).epsilon(1e-15));
        }
}

TEST_CASE("constant half policy gives denominator 0.125 at k=3") {
    ConstPolicy policy(0.5);
    PanelData panel = tiny_panel(4, 5, 2, policy, policy);
    for (int i = 0; i < 4; ++i)
        CHECK(denominator_prob(policy, panel, i, 4, 3) == doctest::Approx(0.125).epsilon(1e-15));
}

TEST_CASE("denominator matches a step-by-step oracle on the simple policy") {
    SimConfig cfg = SimConfig::narrow(PolicyKind::simple, 5);
    cfg.n_units = 6;
    cfg.n_periods = 8;
    SimTruth truth = simulate_panel(cfg);
    SimPolicy policy(cfg.policy, cfg.gamma);
    const PanelData& panel = truth.panel;
    const int k = 3;
    for (int i = 0; i < panel.n_units; ++i)
        for (int t = k - 1; t < panel.n_periods; ++t) {
            double oracle = 1.0;
            for (int s = t - k + 2; s <= t + 1; ++s) {  // 1-based window steps
                uint8_t a_prev = s >= 2 ? panel.a(i, s - 2) : 0;
                std::span<const double> l_s(panel.l(i, s - 1), 4);
                double pi = simple_policy_prob(a_prev, l_s, s, std::span<const double, 4>(
                                                                   cfg.gamma.data(), 4));
                oracle *= panel.a(i, s - 1) ? pi : 1.0 - pi;
            }
            CHECK(denominator_prob(policy, panel, i, t, k) ==
                  doctest::Approx(oracle).epsilon(1e-12));
        }
}

TEST_CASE("positivity violations are reported") {
    ConstPolicy policy(0.999, 0.01);  // probability outside (delta, 1-delta)
    PanelData panel = tiny_panel(2, 3, 3, policy, policy);
    CHECK_THROWS_WITH_AS(denominator_prob(policy, panel, 0, 2, 2),
                         doctest::Contains("positivity"), Error);
}

TEST_CASE("toy marginal numerator approaches the closed form") {
    // L ~ Bernoulli(1/2), P(A=1|L) in {0.3, 0.7}: marginal P(A=1) = 0.5.
    BinaryToy toy(0.3, 0.7);
    McConfig mc;
    mc.n_samples = 100000;
    mc.seed = 11;
    std::vector<uint8_t> window{1};
    double est = numerator_prob_mc(toy, toy, 0, window, mc);
    // SE of the propensity average is 0.2/sqrt(n)
    CHECK(std::abs(est - 0.5) <= 3.0 * 0.2 / std::sqrt(100000.0));

    // exact enumeration agrees
    CHECK(exact_numerator_prob(toy, toy, 0, window) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("numerator is deterministic for a fixed seed") {
    MarkovToy toy;
    McConfig mc;
    mc.n_samples = 500;
    mc.seed = 77;
    std::vector<uint8_t> window{1, 0};
    double a = numerator_prob_mc(toy, toy, 4, window, mc);
    double b = numerator_prob_mc(toy, toy, 4, window, mc);
    CHECK(a == b);
    mc.seed = 78;
    CHECK(numerator_prob_mc(toy, toy, 4, window, mc) != a);
}

TEST_CASE("numerator MC converges to the enumerated truth") {
    MarkovToy toy;
    std::vector<uint8_t> window{1, 1};
    double exact = exact_numerator_prob(toy, toy, 3, window);
    McConfig coarse{.n_samples = 200, .seed = 5};
    McConfig fine{.n_samples = 50000, .seed = 5};
    double est_fine = numerator_prob_mc(toy, toy, 3, window, fine);
    CHECK(std::abs(est_fine - exact) < 0.01);
    double est_coarse = numerator_prob_mc(toy, toy, 3, window, coarse);
    CHECK(std::abs(est_fine - exact) <= std::abs(est_coarse - exact) + 0.01);
}

TEST_CASE("fully independent policy yields unit weights exactly") {
    ConstPolicy policy(0.42);
    PanelData panel = tiny_panel(5, 6, 7, policy, policy);
    McConfig mc;
    mc.n_samples = 50;
    auto w = compute_weights(policy, policy, panel, 2, mc);
    for (double v : w) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("weights respect the positivity bound") {
    // Probabilities confined to (0.2, 0.8): bound ((1-d)/d)^k = 16 at k=2.
    MarkovToy toy;  // probs in [0.1, 0.9]; use its delta=0.05 -> bound 361
    PanelData panel = tiny_panel(50, 8, 13, toy, toy);
    McConfig mc;
    mc.n_samples = 2000;
    mc.seed = 3;
    auto w = compute_weights(toy, toy, panel, 2, mc);
    double bound = std::pow((1.0 - 0.05) / 0.05, 2);
    double mean = 0.0;
    for (double v : w) {
        CHECK(v > 0.0);
        CHECK(v <= bound);
        mean += v;
    }
    mean /= w.size();
    CHECK(mean > 0.5);
    CHECK(mean < 2.0);
}

TEST_CASE("slice probabilities: degenerate and coin policies") {
    ConstPolicy treat_all(1.0);  // pool never draws 0
    McConfig mc;
    mc.n_samples = 400;
    DenseTensor3 probs = slice_probabilities(treat_all, treat_all, 2, 4, 2, mc);
    for (int t = 1; t < 4; ++t) CHECK(probs(0, t, 3) == 1.0);
    CHECK(probs(0, 0, 1) == 1.0);  // padded leading zero at t=0

    ConstPolicy coin(0.5);
    McConfig mc2;
    mc2.n_samples = 40000;
    mc2.seed = 21;
    DenseTensor3 cp = slice_probabilities(coin, coin, 1, 3, 2, mc2);
    double se = 3.0 * std::sqrt(0.25 * 0.75 / 40000.0);
    for (int p = 0; p < 4; ++p) CHECK(std::abs(cp(0, 2, p) - 0.25) <= se);
}

TEST_CASE("slice probability rows sum to one") {
    SimConfig cfg = SimConfig::narrow(PolicyKind::complex, 3);
    cfg.n_units = 4;
    cfg.n_periods = 6;
    SimPolicy policy(cfg.policy, cfg.gamma);
    McConfig mc;
    mc.n_samples = 3000;
    mc.seed = 9;
    DenseTensor3 probs = slice_probabilities(policy, policy, 4, 6, 3, mc);
    for (int i = 0; i < 4; ++i)
        for (int t = 0; t < 6; ++t) {
            double sum = 0.0;
            for (int p = 0; p < 8; ++p) {
                CHECK(probs(i, t, p) >= 0.0);
                CHECK(probs(i, t, p) <= 1.0);
                sum += probs(i, t, p);
            }
            CHECK(std::abs(sum - 1.0) < 1e-8);
        }
}

TEST_CASE("slice distribution matches exhaustive enumeration on a discrete toy") {
    MarkovToy toy;
    McConfig mc;
    mc.n_samples = 60000;
    mc.seed = 31;
    DenseTensor3 probs = slice_probabilities(toy, toy, 1, 4, 2, mc);
    auto exact = exact_window_distribution(toy, toy, 3, 2);
    double total = 0.0;
    for (double p : exact) total += p;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    for (int p = 0; p < 4; ++p) {
        double se = 3.0 * std::sqrt(exact[p] * (1.0 - exact[p]) / mc.n_samples) + 1e-6;
        CHECK(std::abs(probs(0, 3, p) - exact[p]) <= se);
    }
}

TEST_CASE("build_bundle on a near-deterministic policy reduces to the panel") {
    ConstPolicy policy(1.0 - 1e-13, 1e-14);
    PanelData panel = tiny_panel(3, 4, 17, policy, policy);
    for (uint8_t a : panel.treatments) REQUIRE(a == 1);
    McConfig mc;
    mc.n_samples = 200;
    WeightBundle bundle = build_bundle(policy, policy, panel, 2, mc);
    for (int i = 0; i < 3; ++i)
        for (int t = 0; t < 4; ++t) {
            CHECK(bundle.w[panel.cell(i, t)] == doctest::Approx(1.0).epsilon(1e-9));
            int p = realized_history(panel, i, t, 2);
            CHECK(bundle.Yw(i, t, p) == doctest::Approx(panel.y(i, t)).epsilon(1e-9));
            CHECK(bundle.W(i, t, p) == doctest::Approx(1.0).epsilon(1e-9));
            for (int q = 0; q < 4; ++q)
                if (q != p) {
                    CHECK(bundle.Yw(i, t, q) == 0.0);
                    CHECK(bundle.W(i, t, q) == doctest::Approx(0.0).epsilon(1e-6));
                }
        }
}

TEST_CASE("Yw is zero off the realized slice") {
    MarkovToy toy;
    PanelData panel = tiny_panel(6, 5, 19, toy, toy);
    McConfig mc;
    mc.n_samples = 800;
    mc.seed = 123;
    WeightBundle bundle = build_bundle(toy, toy, panel, 2, mc);
    for (int i = 0; i < 6; ++i)
        for (int t = 0; t < 5; ++t) {
            int realized = realized_history(panel, i, t, 2);
            for (int p = 0; p < 4; ++p)
                if (p != realized) CHECK(bundle.Yw(i, t, p) == 0.0);
        }
}

TEST_CASE("bundles are bit-identical for a fixed seed") {
    MarkovToy toy;
    PanelData panel = tiny_panel(4, 5, 23, toy, toy);
    McConfig mc;
    mc.n_samples = 300;
    mc.seed = 99;
    WeightBundle a = build_bundle(toy, toy, panel, 2, mc);
    WeightBundle b = build_bundle(toy, toy, panel, 2, mc);
    CHECK(a.w == b.w);
    for (std::size_t i = 0; i < a.Yw.size(); ++i) {
        CHECK(a.Yw.values()[i] == b.Yw.values()[i]);
        CHECK(a.W.values()[i] == b.W.values()[i]);
    }
}

TEST_CASE("engine and public numerator op agree bit-for-bit") {
    MarkovToy toy;
    PanelData panel = tiny_panel(5, 6, 29, toy, toy);
    McConfig mc;
    mc.n_samples = 400;
    mc.seed = 7;
    auto w = compute_weights(toy, toy, panel, 2, mc);
    for (int i = 0; i < 5; ++i)
        for (int t = 0; t < 6; ++t) {
            double num = numerator_prob_mc(toy, toy, panel, i, t, 2, mc);
            double den = denominator_prob(toy, panel, i, t, 2);
            CHECK(w[panel.cell(i, t)] == num / den);
        }
}

TEST_CASE("approximation objective matches the completion objective in expectation") {
    // On a discrete toy with exact probabilities both objectives have the
    // same expectation at any tensor; with MC bundles the gap shrinks as
    // n_samples grows.
    MarkovToy toy;
    PanelData panel = tiny_panel(60, 5, 41, toy, toy);
    DenseTensor3 probe(60, 5, 4, 0.0);
    for (int i = 0; i < 60; ++i)
        for (int t = 0; t < 5; ++t)
            for (int p = 0; p < 4; ++p) probe(i, t, p) = 0.1 * i - 0.2 * t + 0.3 * p;

    auto objective_gap = [&](int n_samples) {
        McConfig mc;
        mc.n_samples = n_samples;
        mc.seed = 13;
        WeightBundle bundle = build_bundle(toy, toy, panel, 2, mc);
        double completion = 0.0;
        for (int i = 0; i < 60; ++i)
            for (int t = 0; t < 5; ++t) {
                int p = realized_history(panel, i, t, 2);
                double r = panel.y(i, t) - probe(i, t, p);
                completion += bundle.w[panel.cell(i, t)] * r * r;
            }
        completion /= 60.0 * 5.0;
        double approx = weighted_frobenius_sq(subtract(bundle.Yw, probe), bundle.W) / (60.0 * 5.0);
        return std::abs(approx - completion);
    };
    // Small panel: the two realized objectives differ by sampling noise in
    // the bundle's MC probabilities plus finite-sample effects; more MC
    // samples must not make it worse.
    double coarse = objective_gap(100);
    double fine = objective_gap(20000);
    CHECK(fine <= coarse + 0.05);
}

TEST_CASE("completion bundle reproduces the completion objective exactly") {
    MarkovToy toy;
    PanelData panel = tiny_panel(8, 5, 47, toy, toy);
    RngStream rng(3, StreamId::generic, 7);
    for (auto& y : panel.outcomes) y = rng.normal();
    McConfig mc;
    mc.n_samples = 400;
    mc.seed = 19;
    auto w = compute_weights(toy, toy, panel, 2, mc);
    WeightBundle bundle = completion_bundle(panel, w, 2, 0.0);

    // unnormalized completion loss over realized cells
    DenseTensor3 probe(8, 5, 4, 0.0);
    for (double& v : probe.values()) v = rng.normal();
    double completion = 0.0;
    double w_max = 0.0;
    for (double v : w) w_max = std::max(w_max, v);
    for (int i = 0; i < 8; ++i)
        for (int t = 0; t < 5; ++t) {
            int p = realized_history(panel, i, t, 2);
            double r = panel.y(i, t) - probe(i, t, p);
            completion += w[panel.cell(i, t)] * r * r;
        }
    completion /= 8.0 * 5.0;
    // the bundle's weight tensor is scaled by 1/max(w)
    double masked = weighted_frobenius_sq(subtract(bundle.Yw, probe), bundle.W) / (8.0 * 5.0);
    CHECK(masked * w_max == doctest::Approx(completion).epsilon(1e-12));

    // off-slice cells carry no weight and no target
    for (int i = 0; i < 8; ++i)
        for (int t = 0; t < 5; ++t) {
            int realized = realized_history(panel, i, t, 2);
            for (int p = 0; p < 4; ++p)
                if (p != realized) {
                    CHECK(bundle.W(i, t, p) == 0.0);
                    CHECK(bundle.Yw(i, t, p) == 0.0);
                }
        }
}

TEST_CASE("completion bundle truncates heavy weights") {
    PanelData panel;
    panel.n_units = 4;
    panel.n_periods = 3;
    panel.cov_dim = 0;
    panel.treatments.assign(12, 0);
    panel.outcomes.assign(12, 1.0);
    std::vector<double> w(12, 1.0);
    w[5] = 1000.0;  // single extreme weight
    WeightBundle plain = completion_bundle(panel, w, 1, 0.0);
    WeightBundle trunc = completion_bundle(panel, w, 1, 0.9);
    // untruncated: the heavy cell dominates the normalization
    CHECK(plain.W(0, 0, 0) == doctest::Approx(std::sqrt(1.0 / 1000.0)).epsilon(1e-12));
    // truncated: the cap is the 90th percentile (= 1), so weights are flat
    CHECK(trunc.W(0, 0, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(trunc.W(1, 2, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK_THROWS_AS(completion_bundle(panel, std::vector<double>(3, 1.0), 1, 0.0), Error);
}
