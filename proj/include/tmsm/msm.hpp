#pragma once

#include <vector>

#include "tmsm/panel.hpp"
#include "tmsm/policy.hpp"
#include "tmsm/weights.hpp"

namespace tmsm {

// Classical MSM baseline: per-period weighted least squares with a linear
// link over the full treatment sequence, weighted by stabilized IPTW.
struct MsmFit {
    std::vector<double> intercepts;          // one per period
    std::vector<std::vector<double>> betas;  // betas[t] has length t+1
    std::vector<double> sw;                  // stabilized weights used, n_units * n_periods
    bool rank_deficient = false;             // some period design was singular
};

// sw_{i,t} = prod_{s=1..t} P(A_s | A_{1:s-1}) / P(A_s | A_{1:s-1}, L_{1:s});
// full-history product, numerator marginalized over covariates by forced-path
// Monte Carlo.
std::vector<double> stabilized_weights(const PropensityModel& pm, const GenerativeModel& gen,
                                       const PanelData& panel, const McConfig& mc);

MsmFit fit_msm(const PanelData& panel, std::span<const double> sw);

// Linear link: intercept + <a_seq, beta^t> with t = a_seq length.
double predict_msm(const MsmFit& fit, std::span<const uint8_t> a_seq);

std::vector<double> msm_predictions(const MsmFit& fit, const PanelData& panel);

}  // namespace tmsm
