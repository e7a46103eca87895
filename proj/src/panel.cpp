#include "tmsm/panel.hpp"

#include <cmath>

namespace tmsm {

void PanelData::validate() const {
    require(n_units >= 0 && n_periods >= 0 && cov_dim >= 0, "panel: negative dimensions");
    const std::size_t nt = static_cast<std::size_t>(n_units) * n_periods;
    require(treatments.size() == nt, "panel: treatment array size mismatch");
    require(outcomes.size() == nt, "panel: outcome array size mismatch");
    require(covariates.size() == nt * cov_dim, "panel: covariate array size mismatch");
    for (std::size_t c = 0; c < nt; ++c) {
        require(treatments[c] == 0 || treatments[c] == 1, "panel: non-binary treatment");
        require(std::isfinite(outcomes[c]), "panel: non-finite outcome");
    }
    for (double v : covariates) require(std::isfinite(v), "panel: non-finite covariate");
}

int history_index(std::span<const uint8_t> window) {
    require(!window.empty() && window.size() <= 30, "history_index: window length out of range");
    int p = 0;
    for (uint8_t a : window) {
        require(a == 0 || a == 1, "history_index: non-binary entry");
        p = (p << 1) | a;
    }
    return p;
}

std::vector<uint8_t> history_decode(int p, int k) {
    require(k >= 1 && k <= 30, "history_decode: k out of range");
    require(p >= 0 && p < (1 << k), "history_decode: index out of range for k");
    std::vector<uint8_t> w(k);
    for (int j = 0; j < k; ++j) w[j] = static_cast<uint8_t>((p >> (k - 1 - j)) & 1);
    return w;
}

std::vector<uint8_t> window_at(const PanelData& panel, int i, int t, int k) {
    require(k >= 1, "window_at: k must be >= 1");
    require(i >= 0 && i < panel.n_units && t >= 0 && t < panel.n_periods,
            "window_at: cell out of range");
    std::vector<uint8_t> w(k, 0);
    for (int j = 0; j < k; ++j) {
        int s = t - k + 1 + j;
        if (s >= 0) w[j] = panel.a(i, s);
    }
    return w;
}

int realized_history(const PanelData& panel, int i, int t, int k) {
    // Same MSB-first encoding as history_index, inlined over the padded window.
    int p = 0;
    for (int j = 0; j < k; ++j) {
        int s = t - k + 1 + j;
        p = (p << 1) | (s >= 0 ? panel.a(i, s) : 0);
    }
    return p;
}

std::vector<std::vector<std::pair<int, int>>> slice_sets(const PanelData& panel, int k) {
    require(k >= 1 && k <= panel.n_periods, "slice_sets: need 1 <= k <= n_periods");
    std::vector<std::vector<std::pair<int, int>>> sets(static_cast<std::size_t>(1) << k);
    for (int i = 0; i < panel.n_units; ++i)
        for (int t = 0; t < panel.n_periods; ++t)
            sets[realized_history(panel, i, t, k)].emplace_back(i, t);
    return sets;
}

double atet(const DenseTensor3& t_hat, const PanelData& panel, int k) {
    require(t_hat.dims().n1 == panel.n_units && t_hat.dims().n2 == panel.n_periods &&
                t_hat.dims().n3 == (1 << k),
            "atet: tensor dims " + t_hat.dims().str() + " do not match panel with k=" +
                std::to_string(k));
    double sum = 0.0;
    long count = 0;
    for (int i = 0; i < panel.n_units; ++i)
        for (int t = 0; t < panel.n_periods; ++t) {
            if (panel.a(i, t) != 1) continue;
            int p = realized_history(panel, i, t, k);
            // Last treatment is the low bit; the counterfactual zeroes it.
            sum += t_hat(i, t, p) - t_hat(i, t, p & ~1);
            ++count;
        }
    if (count == 0) fail_compute("atet: no treated cells");
    return sum / static_cast<double>(count);
}

double general_contrast(const DenseTensor3& t_hat, const PanelData& panel, int k,
                        HistoryIndex h1, HistoryIndex h2, const CellFilter& filter) {
    require(h1.k == k && h2.k == k, "general_contrast: history length mismatch");
    require(h1.p >= 0 && h1.p < (1 << k) && h2.p >= 0 && h2.p < (1 << k),
            "general_contrast: history index out of range");
    require(t_hat.dims().n1 == panel.n_units && t_hat.dims().n2 == panel.n_periods &&
                t_hat.dims().n3 == (1 << k),
            "general_contrast: tensor dims do not match panel");
    double sum = 0.0;
    long count = 0;
    for (int i = 0; i < panel.n_units; ++i)
        for (int t = 0; t < panel.n_periods; ++t) {
            if (!filter(i, t)) continue;
            sum += t_hat(i, t, h1.p) - t_hat(i, t, h2.p);
            ++count;
        }
    if (count == 0) fail_compute("general_contrast: empty cell selection");
    return sum / static_cast<double>(count);
}

}  // namespace tmsm
