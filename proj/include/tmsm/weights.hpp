#pragma once

#include <cstdint>
#include <vector>

#include "tmsm/panel.hpp"
#include "tmsm/policy.hpp"
#include "tmsm/tensor.hpp"

namespace tmsm {

struct McConfig {
    int n_samples = 10000;
    uint64_t seed = 0;
    double prob_floor = -1.0;  // < 0: defaults to 1 / (2 * n_samples)
    // Winsorize the realized Y_w entries at this quantile of their absolute
    // values (0 disables). Inverse-propensity targets are heavy-tailed when
    // a realized treatment step was very unlikely given its covariates;
    // truncation is the usual variance control.
    double yw_trunc_quantile = 0.0;

    double resolved_floor() const {
        return prob_floor >= 0.0 ? prob_floor : 0.5 / static_cast<double>(n_samples);
    }
};

// Everything the weighted approximation problem needs: short-window IPTW
// weights w_{i,t}, the slice-probability tensor, W = sqrt(slice prob), and
// the target tensor Y_w (nonzero only on realized slices).
struct WeightBundle {
    int k = 0;
    std::vector<double> w;     // n_units * n_periods
    DenseTensor3 W;            // n_units x n_periods x 2^k
    DenseTensor3 Yw;
    DenseTensor3 slice_probs;
    // Extremes of every treatment propensity evaluated while building the
    // bundle (pool, forks, denominators); an empirical positivity range.
    double min_propensity = 1.0;
    double max_propensity = 0.0;
};

// Product over the k realized window steps of the policy propensity for the
// realized treatment, evaluated on the observed data. Throws on a
// positivity violation (propensity outside (delta, 1-delta)).
double denominator_prob(const PropensityModel& pm, const PanelData& panel, int i, int t, int k);

// Monte-Carlo covariate-marginalized probability of the treatment window:
// product over window steps s of P(A_s = a_s | earlier window treatments).
// Paths are simulated under the policy with window treatments forced and
// importance-reweighted; `t` is the 0-based period the window ends at.
double numerator_prob_mc(const PropensityModel& pm, const GenerativeModel& gen, int t,
                         std::span<const uint8_t> window, const McConfig& mc);
double numerator_prob_mc(const PropensityModel& pm, const GenerativeModel& gen,
                         const PanelData& panel, int i, int t, int k, const McConfig& mc);

std::vector<double> compute_weights(const PropensityModel& pm, const GenerativeModel& gen,
                                    const PanelData& panel, int k, const McConfig& mc);

// Per-cell distribution over the 2^k history windows under policy and
// covariate model; rows (i,t,:) sum to 1. Units are exchangeable, so the
// distribution is shared across i.
DenseTensor3 slice_probabilities(const PropensityModel& pm, const GenerativeModel& gen, int n_units,
                                 int n_periods, int k, const McConfig& mc);

WeightBundle build_bundle(const PropensityModel& pm, const GenerativeModel& gen,
                          const PanelData& panel, int k, const McConfig& mc);

// Bundle carrying the weighted completion objective itself: the target
// tensor holds the outcome on the realized slice and the weight tensor is
// sqrt(w_{i,t}) there, zero elsewhere, so the masked approximation loss
// equals the completion loss exactly. Weights above the given quantile are
// truncated (efficiency control, no bias under a well-specified model), and
// the weight tensor is normalized by its maximum so a step size of 1/2
// stays contractive.
WeightBundle completion_bundle(const PanelData& panel, std::span<const double> w, int k,
                               double w_trunc_quantile = 0.0);

// Exact counterparts for small discrete covariate models, used as oracles
// and available when Monte Carlo is unnecessary.
class DiscreteGenerativeModel : public GenerativeModel {
public:
    virtual int n_states() const = 0;
    virtual double state_prob(int state, const StepContext& ctx) const = 0;
    virtual void state_covariates(int state, const StepContext& ctx,
                                  std::span<double> out) const = 0;

    void draw_covariates(const StepContext& ctx, RngStream& rng,
                         std::span<double> out) const override;
};

// Exhaustive-enumeration window distribution at 0-based period t.
std::vector<double> exact_window_distribution(const PropensityModel& pm,
                                              const DiscreteGenerativeModel& gen, int t, int k);
double exact_numerator_prob(const PropensityModel& pm, const DiscreteGenerativeModel& gen, int t,
                            std::span<const uint8_t> window);

}  // namespace tmsm
