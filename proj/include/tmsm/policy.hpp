#pragma once

#include <cstdint>
#include <span>

#include "tmsm/error.hpp"
#include "tmsm/rng.hpp"

namespace tmsm {

// One step of a unit's trajectory as seen by a policy or covariate model.
// `time` is the 1-based period of the generating formulas. History is passed
// as bounded suffixes: models declare via lookback() how many trailing
// periods they read, and anything before the provided window (or before the
// study start) is the pre-study convention A=0 / L=0.
struct StepContext {
    int unit = 0;
    int time = 1;
    std::span<const uint8_t> recent_a;  // periods [time-n .. time-1], oldest first
    std::span<const double> recent_l;   // periods [time-m .. time-1], cov_dim per period
    std::span<const double> current_l;  // L at `time` (empty while drawing covariates)
    int cov_dim = 0;

    uint8_t a_at(int t) const {
        if (t <= 0) return 0;
        int idx = t - (time - static_cast<int>(recent_a.size()));
        return idx >= 0 && idx < static_cast<int>(recent_a.size()) ? recent_a[idx] : 0;
    }

    double l_at(int t, int c) const {
        if (t <= 0) return 0.0;
        if (t == time) return current_l.empty() ? 0.0 : current_l[c];
        int idx = t - (time - static_cast<int>(recent_l.size()) / (cov_dim > 0 ? cov_dim : 1));
        if (idx < 0) return 0.0;
        return recent_l[static_cast<std::size_t>(idx) * cov_dim + c];
    }
};

// The treatment-assignment policy, assumed known. Probabilities must stay
// inside (delta, 1-delta); values outside are a data/model error surfaced by
// the weighting code.
class PropensityModel {
public:
    virtual ~PropensityModel() = default;
    virtual double prob_treat(const StepContext& ctx) const = 0;  // P(A_time = 1 | history)
    virtual double positivity_delta() const = 0;
    virtual int lookback() const = 0;
    virtual bool unit_invariant() const { return true; }
};

// Draws the time-varying covariates given the history; used to marginalize
// covariate paths in the weight numerators.
class GenerativeModel {
public:
    virtual ~GenerativeModel() = default;
    virtual int cov_dim() const = 0;
    virtual int lookback() const = 0;
    virtual void draw_covariates(const StepContext& ctx, RngStream& rng,
                                 std::span<double> out) const = 0;
    virtual bool units_exchangeable() const { return true; }
};

inline double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace tmsm
