#pragma once

#include <functional>
#include <vector>

#include "tmsm/estimator.hpp"
#include "tmsm/simulation.hpp"

namespace tmsm {

struct SweepConfig {
    SimConfig base;  // world + truth parameters; policy/seed overridden per run
    std::vector<PolicyKind> policies{PolicyKind::simple, PolicyKind::complex};
    std::vector<int> ranks{5, 10, 15, 20};
    std::vector<int> ks{2, 3, 4, 5, 6, 7};
    int n_reps = 20;
    EstimatorConfig est;  // rank/k overridden per cell
    McConfig mc;
};

// One simulated panel per (policy, rep); each k rebuilds the weight bundle,
// each r refits. Rows stream through on_row as they finish so callers can
// flush partial output; per-cell failures produce a row with failed=true.
std::vector<SweepRow> sensitivity_sweep(
    const SweepConfig& cfg, const std::function<void(const SweepRow&)>& on_row = {});

}  // namespace tmsm
