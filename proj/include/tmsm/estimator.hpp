#pragma once

#include <limits>
#include <vector>

#include "tmsm/cp.hpp"
#include "tmsm/panel.hpp"
#include "tmsm/weights.hpp"

namespace tmsm {

struct EstimatorConfig {
    // Objective the gradient/projection loop runs on. `approximation` is the
    // converted problem (target Y_w, weights sqrt of slice probabilities);
    // `completion` binds the loop to the weighted completion loss directly
    // (realized outcomes as targets, sqrt IPTW weights), which has bounded
    // targets and is the better-behaved choice on heavy-tailed weights.
    enum class Objective { approximation, completion };

    int rank = 10;
    int k = 5;
    double step = 0.5;       // gradient step size
    int max_iters = 300;     // R
    double tol = 1e-6;       // stop when relative loss change <= tol
    double l_bound = 0.0;    // singular-value clamp; <= 0 disables
    Objective objective = Objective::completion;
    double w_trunc_quantile = 0.90;  // completion-objective weight truncation
    bool backtracking = false;
    int als_sweeps = 50;     // ALS sweeps for the initial projection
    int warm_sweeps = 4;     // ALS sweeps per warm-started projection
    double als_tol = 1e-8;
    uint64_t seed = 0;

    void validate() const;
};

struct FitResult {
    CpDecomposition estimate;
    DenseTensor3 reconstruction;
    std::vector<double> loss_trace;  // approximation loss per iterate (first = init)
    int iterations = 0;
    bool converged = false;
    double final_completion_loss = std::numeric_limits<double>::quiet_NaN();
};

// Weighted completion loss over realized cells:
// (1/NT) sum_{i,t} w_{i,t} (Y_{i,t} - T(i,t,p_{i,t}))^2.
double completion_loss(const DenseTensor3& t_hat, const PanelData& panel,
                       std::span<const double> w, int k);

// (1/NT) ||Yw - T||^2_W.
double approximation_loss(const DenseTensor3& t_hat, const WeightBundle& bundle);

// Projected gradient descent: gradient step toward Yw, then rank-r CP
// projection (warm-started from the previous iterate), optional spectral
// clip. Returns the best-loss iterate.
FitResult fit_pgd(const WeightBundle& bundle, const EstimatorConfig& cfg);

// build_bundle + fit_pgd; also reports the completion loss of the final
// estimate. The bundle is written to *out_bundle when requested.
FitResult fit_panel(const PanelData& panel, const PropensityModel& pm,
                    const GenerativeModel& gen, const EstimatorConfig& cfg, const McConfig& mc,
                    WeightBundle* out_bundle = nullptr);

}  // namespace tmsm
