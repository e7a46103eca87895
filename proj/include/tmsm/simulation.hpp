#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "tmsm/cp.hpp"
#include "tmsm/panel.hpp"
#include "tmsm/policy.hpp"

namespace tmsm {

enum class PolicyKind { simple, complex };

std::string to_string(PolicyKind p);
PolicyKind policy_from_string(const std::string& s);

struct SimConfig {
    int n_units = 500;    // narrow world default
    int n_periods = 10;
    PolicyKind policy = PolicyKind::simple;
    int true_rank = 10;
    int true_k = 5;
    double lambda_min = 50.0;
    double lambda_max = 200.0;
    double noise_sd = 1.0;
    std::array<double, 4> gamma{1.0, -0.5, 0.25, 0.1};
    std::array<double, 4> delta{1.0, -0.5, 0.25, 0.1};
    uint64_t seed = 0;

    static SimConfig narrow(PolicyKind p, uint64_t seed);
    static SimConfig wide(PolicyKind p, uint64_t seed);
    void validate() const;
};

// Both simulated policies generate the treatment and the covariates, so one
// object serves as PropensityModel and GenerativeModel.
class SimPolicy final : public PropensityModel, public GenerativeModel {
public:
    SimPolicy(PolicyKind kind, std::array<double, 4> gamma);

    double prob_treat(const StepContext& ctx) const override;
    double positivity_delta() const override { return 1e-12; }
    int lookback() const override { return kind_ == PolicyKind::simple ? 1 : 3; }

    int cov_dim() const override { return 4; }
    void draw_covariates(const StepContext& ctx, RngStream& rng,
                         std::span<double> out) const override;

    // Deterministic covariate scale factor U_{i,t} given the treatment history.
    double u_factor(const StepContext& ctx) const;
    PolicyKind kind() const { return kind_; }

private:
    PolicyKind kind_;
    std::array<double, 4> gamma_;
};

// Scalar forms of the treatment probabilities, exposed for direct checks.
double simple_policy_prob(uint8_t a_prev, std::span<const double> l_t, int time,
                          std::span<const double, 4> gamma);
double complex_policy_prob(std::span<const uint8_t, 3> a_lags,
                           std::span<const double> l_window, int time,
                           std::span<const double, 4> gamma);

// Ground truth for one simulated world. Per-cell arrays are row-major
// (unit, period) like PanelData.
struct SimTruth {
    SimConfig config;
    CpDecomposition true_cp;
    DenseTensor3 true_tensor;                // n_units x n_periods x 2^true_k
    PanelData panel;
    std::vector<double> structural_base;     // 250 - 10 * sum of last-3 treatments
    std::vector<double> covterm_realized;    // realized sum of delta' L over last 3
    std::vector<double> covterm_expected;    // its expectation given the treatment path
    std::vector<double> tensor_term;         // T*(i,t,realized history)
    std::vector<double> noise;               // nu
    std::vector<double> true_marginal_mean;  // outcome minus noise: base + covterm_realized + tensor_term

    std::unique_ptr<SimPolicy> make_policy() const;
};

CpDecomposition gen_true_tensor(const SimConfig& cfg);
SimTruth simulate_panel(const SimConfig& cfg);

// Mean squared gap between per-cell predictions and the true marginal means.
double normalized_mse(std::span<const double> predicted, const SimTruth& truth);

// Panel with outcomes residualized by the observable structural part
// (base + realized covariate term), so the fitted tensor estimates the
// heterogeneous component alone; what the tensor method is fit on when
// scored against simulation truth.
PanelData residualized_panel(const SimTruth& truth);

// Predicted marginal means: fitted tensor entry at the realized history plus
// the observable structural part.
std::vector<double> tensor_predictions(const DenseTensor3& t_hat, const SimTruth& truth, int k);

struct SweepRow {
    PolicyKind policy;
    int rank = 0;
    int k = 0;
    int rep = 0;
    double nmse = 0.0;
    bool failed = false;
};

struct SweepCell {
    PolicyKind policy;
    int rank = 0;
    int k = 0;
    double mean_nmse = 0.0;
    double std_error = 0.0;
    int reps = 0;
};

std::vector<SweepCell> aggregate_sweep(const std::vector<SweepRow>& rows);

}  // namespace tmsm
