#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "tmsm/tensor.hpp"

namespace tmsm {

// Rank-r canonical polyadic decomposition: sum_l lambda_l u_l (x) v_l (x) w_l.
// Canonical form: factor columns unit-norm, lambdas >= 0 (signs absorbed into
// U columns) and sorted nonincreasing.
struct CpDecomposition {
    int rank = 0;
    Vector lambdas;  // length rank
    Matrix U, V, W;  // n1 x rank, n2 x rank, n3 x rank

    Dims3 dims() const {
        return {static_cast<int>(U.rows()), static_cast<int>(V.rows()),
                static_cast<int>(W.rows())};
    }
    static CpDecomposition empty(Dims3 dims);
};

struct CpAlsConfig {
    int max_sweeps = 200;
    double tol = 1e-8;  // relative change in squared reconstruction error
    enum class Init { svd, random } init = Init::svd;
    uint64_t seed = 0;
};

struct CpAlsResult {
    CpDecomposition cp;
    std::vector<double> sweep_errors;  // squared reconstruction error per sweep
    int sweeps = 0;
    bool converged = false;
};

DenseTensor3 reconstruct(const CpDecomposition& cp, Dims3 dims);

// Enforce canonical form in place; zero-norm columns are replaced by basis
// vectors with lambda 0.
void canonicalize(CpDecomposition& cp);

CpAlsResult cp_als_traced(const DenseTensor3& t, int rank, const CpAlsConfig& cfg = {},
                          const CpDecomposition* warm_start = nullptr);

inline CpDecomposition cp_als(const DenseTensor3& t, int rank, const CpAlsConfig& cfg = {},
                              const CpDecomposition* warm_start = nullptr) {
    return cp_als_traced(t, rank, cfg, warm_start).cp;
}

// Clamp each lambda into [-l_bound, l_bound]; factors untouched.
CpDecomposition spectral_clip(CpDecomposition cp, double l_bound);

}  // namespace tmsm
