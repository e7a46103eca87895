#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "tmsm/tensor.hpp"

namespace tmsm {

// Observed longitudinal dataset. Arrays are row-major over (unit, period);
// periods are 0-based here, while the generating formulas' time index t is
// 1-based (period = t - 1). Treatments before period 0 are 0 by convention.
struct PanelData {
    int n_units = 0;
    int n_periods = 0;
    int cov_dim = 0;
    std::vector<uint8_t> treatments;  // n_units * n_periods
    std::vector<double> covariates;   // n_units * n_periods * cov_dim
    std::vector<double> outcomes;     // n_units * n_periods

    std::size_t cell(int i, int t) const {
        return static_cast<std::size_t>(i) * n_periods + t;
    }
    uint8_t a(int i, int t) const { return treatments[cell(i, t)]; }
    double y(int i, int t) const { return outcomes[cell(i, t)]; }
    const double* l(int i, int t) const {
        return covariates.data() + cell(i, t) * cov_dim;
    }

    void validate() const;
};

// Treatment-history window of length k as an index into [0, 2^k): oldest
// treatment is the most significant bit.
struct HistoryIndex {
    int k = 0;
    int p = 0;
};

int history_index(std::span<const uint8_t> window);
std::vector<uint8_t> history_decode(int p, int k);

// Realized window a_{i,t-k+1..t} with zero padding before period 0.
std::vector<uint8_t> window_at(const PanelData& panel, int i, int t, int k);
int realized_history(const PanelData& panel, int i, int t, int k);

// Partition of all (i,t) cells by realized history index.
std::vector<std::vector<std::pair<int, int>>> slice_sets(const PanelData& panel, int k);

// Mean over treated cells of t_hat at the realized history minus t_hat at
// the same history with the final treatment bit zeroed.
double atet(const DenseTensor3& t_hat, const PanelData& panel, int k);

using CellFilter = std::function<bool(int unit, int period)>;

double general_contrast(const DenseTensor3& t_hat, const PanelData& panel, int k,
                        HistoryIndex h1, HistoryIndex h2, const CellFilter& filter);

}  // namespace tmsm
