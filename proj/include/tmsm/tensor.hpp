#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "tmsm/error.hpp"

namespace tmsm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct Dims3 {
    int n1 = 0, n2 = 0, n3 = 0;
    std::size_t count() const {
        return static_cast<std::size_t>(n1) * n2 * n3;
    }
    bool operator==(const Dims3&) const = default;
    std::string str() const;
};

// Dense 3-way tensor, flat row-major buffer: (i,j,k) -> i*n2*n3 + j*n3 + k.
class DenseTensor3 {
public:
    DenseTensor3() = default;
    DenseTensor3(int n1, int n2, int n3, double fill = 0.0);
    DenseTensor3(Dims3 dims, std::vector<double> values);

    const Dims3& dims() const { return dims_; }
    std::size_t size() const { return v_.size(); }

    double operator()(int i, int j, int k) const {
        return v_[flat(i, j, k)];
    }
    double& operator()(int i, int j, int k) {
        return v_[flat(i, j, k)];
    }

    std::span<const double> values() const { return v_; }
    std::span<double> values() { return v_; }
    const double* data() const { return v_.data(); }
    double* data() { return v_.data(); }

    bool same_dims(const DenseTensor3& other) const { return dims_ == other.dims_; }
    bool all_finite() const;

    std::size_t flat(int i, int j, int k) const {
        return (static_cast<std::size_t>(i) * dims_.n2 + j) * dims_.n3 + k;
    }

private:
    Dims3 dims_;
    std::vector<double> v_;
};

// mode in {1,2,3}; rows are mode-m fibers, columns ordered lexicographically
// over the remaining two indices.
Matrix unfold(const DenseTensor3& t, int mode);
DenseTensor3 refold(const Matrix& m, int mode, Dims3 dims);

// Columnwise Kronecker product: (pq x r) from (p x r) and (q x r).
Matrix khatri_rao(const Matrix& a, const Matrix& b);

// MTTKRP: unfold(t, mode) * khatri_rao of the other two factors, computed
// without materializing either. For mode 1 the factors are (V, W), for
// mode 2 (U, W), for mode 3 (U, V).
Matrix mttkrp(const DenseTensor3& t, int mode, const Matrix& f1, const Matrix& f2);

// sum of w^2 * x^2 over all entries.
double weighted_frobenius_sq(const DenseTensor3& x, const DenseTensor3& w);

double frobenius_sq(const DenseTensor3& x);
double dot(const DenseTensor3& a, const DenseTensor3& b);

// Elementwise t + step * 2 * w^2 * (s - t).
DenseTensor3 gradient_step(const DenseTensor3& t, const DenseTensor3& s,
                           const DenseTensor3& w, double step);

DenseTensor3 subtract(const DenseTensor3& a, const DenseTensor3& b);
DenseTensor3 add_scalar(const DenseTensor3& a, double c);

namespace detail {
// Deterministic reduction: per-block partial sums in parallel, blocks
// combined in index order so the result is bit-identical to a serial
// left-to-right pass over blocks for any thread count.
double block_sum(std::span<const double> values);
constexpr std::size_t kReduceBlock = 4096;
}  // namespace detail

}  // namespace tmsm
