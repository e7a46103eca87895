#pragma once

#include "tmsm/cp.hpp"
#include "tmsm/tensor.hpp"

// Serial reference implementations: plain nested loops, no OpenMP, no shared
// helpers beyond the data types. Kept as independent oracles for the
// optimized kernels and as the baseline side of the kernel benchmark.

namespace tmsm::ref {

DenseTensor3 reconstruct(const CpDecomposition& cp, Dims3 dims);
Matrix unfold(const DenseTensor3& t, int mode);
Matrix khatri_rao(const Matrix& a, const Matrix& b);
Matrix mttkrp(const DenseTensor3& t, int mode, const Matrix& f1, const Matrix& f2);
double weighted_frobenius_sq(const DenseTensor3& x, const DenseTensor3& w);
DenseTensor3 gradient_step(const DenseTensor3& t, const DenseTensor3& s,
                           const DenseTensor3& w, double step);

}  // namespace tmsm::ref
