#include "tmsm/tensor.hpp"

#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace tmsm {

std::string Dims3::str() const {
    return std::to_string(n1) + "x" + std::to_string(n2) + "x" + std::to_string(n3);
}

DenseTensor3::DenseTensor3(int n1, int n2, int n3, double fill) {
    require(n1 > 0 && n2 > 0 && n3 > 0,
            "tensor dims must be positive, got " + Dims3{n1, n2, n3}.str());
    dims_ = {n1, n2, n3};
    v_.assign(dims_.count(), fill);
}

DenseTensor3::DenseTensor3(Dims3 dims, std::vector<double> values) {
    require(dims.n1 > 0 && dims.n2 > 0 && dims.n3 > 0,
            "tensor dims must be positive, got " + dims.str());
    require(values.size() == dims.count(),
            "tensor value count " + std::to_string(values.size()) +
                " does not match dims " + dims.str());
    dims_ = dims;
    v_ = std::move(values);
}

bool DenseTensor3::all_finite() const {
    for (double x : v_)
        if (!std::isfinite(x)) return false;
    return true;
}

namespace {

void check_mode(int mode) {
    require(mode >= 1 && mode <= 3, "unfold mode must be 1, 2 or 3, got " + std::to_string(mode));
}

}  // namespace

Matrix unfold(const DenseTensor3& t, int mode) {
    check_mode(mode);
    const int n1 = t.dims().n1, n2 = t.dims().n2, n3 = t.dims().n3;
    const double* x = t.data();
    if (mode == 1) {
        Matrix m(n1, static_cast<std::ptrdiff_t>(n2) * n3);
#pragma omp parallel for schedule(static)
        for (int i = 0; i < n1; ++i)
            for (int j = 0; j < n2; ++j)
                for (int k = 0; k < n3; ++k)
                    m(i, j * n3 + k) = x[(static_cast<std::size_t>(i) * n2 + j) * n3 + k];
        return m;
    }
    if (mode == 2) {
        Matrix m(n2, static_cast<std::ptrdiff_t>(n1) * n3);
#pragma omp parallel for schedule(static)
        for (int j = 0; j < n2; ++j)
            for (int i = 0; i < n1; ++i)
                for (int k = 0; k < n3; ++k)
                    m(j, i * n3 + k) = x[(static_cast<std::size_t>(i) * n2 + j) * n3 + k];
        return m;
    }
    Matrix m(n3, static_cast<std::ptrdiff_t>(n1) * n2);
#pragma omp parallel for schedule(static)
    for (int k = 0; k < n3; ++k)
        for (int i = 0; i < n1; ++i)
            for (int j = 0; j < n2; ++j)
                m(k, i * n2 + j) = x[(static_cast<std::size_t>(i) * n2 + j) * n3 + k];
    return m;
}

DenseTensor3 refold(const Matrix& m, int mode, Dims3 dims) {
    check_mode(mode);
    const int n1 = dims.n1, n2 = dims.n2, n3 = dims.n3;
    std::ptrdiff_t want_rows = mode == 1 ? n1 : mode == 2 ? n2 : n3;
    std::ptrdiff_t want_cols = static_cast<std::ptrdiff_t>(dims.count()) / want_rows;
    require(m.rows() == want_rows && m.cols() == want_cols,
            "refold: matrix " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                " incompatible with mode " + std::to_string(mode) + " of dims " + dims.str());
    DenseTensor3 t(n1, n2, n3);
    double* x = t.data();
    if (mode == 1) {
#pragma omp parallel for schedule(static)
        for (int i = 0; i < n1; ++i)
            for (int j = 0; j < n2; ++j)
                for (int k = 0; k < n3; ++k)
                    x[(static_cast<std::size_t>(i) * n2 + j) * n3 + k] = m(i, j * n3 + k);
    } else if (mode == 2) {
#pragma omp parallel for schedule(static)
        for (int j = 0; j < n2; ++j)
            for (int i = 0; i < n1; ++i)
                for (int k = 0; k < n3; ++k)
                    x[(static_cast<std::size_t>(i) * n2 + j) * n3 + k] = m(j, i * n3 + k);
    } else {
#pragma omp parallel for schedule(static)
        for (int k = 0; k < n3; ++k)
            for (int i = 0; i < n1; ++i)
                for (int j = 0; j < n2; ++j)
                    x[(static_cast<std::size_t>(i) * n2 + j) * n3 + k] = m(k, i * n2 + j);
    }
    return t;
}

Matrix khatri_rao(const Matrix& a, const Matrix& b) {
    require(a.cols() == b.cols(),
            "khatri_rao: column counts differ (" + std::to_string(a.cols()) + " vs " +
                std::to_string(b.cols()) + ")");
    const std::ptrdiff_t p = a.rows(), q = b.rows(), r = a.cols();
    Matrix out(p * q, r);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < p; ++i)
        for (std::ptrdiff_t l = 0; l < r; ++l) {
            double ai = a(i, l);
            for (std::ptrdiff_t j = 0; j < q; ++j)
                out(i * q + j, l) = ai * b(j, l);
        }
    return out;
}

Matrix mttkrp(const DenseTensor3& t, int mode, const Matrix& f1, const Matrix& f2) {
    check_mode(mode);
    const int n1 = t.dims().n1, n2 = t.dims().n2, n3 = t.dims().n3;
    const std::ptrdiff_t r = f1.cols();
    require(f2.cols() == r, "mttkrp: factor column counts differ");
    // Unfolding times Khatri-Rao as a GEMM; mode 1 maps the flat buffer
    // directly, the other modes materialize the unfolding first.
    using RowMajorMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                                       Eigen::RowMajor>>;
    if (mode == 1) {
        require(f1.rows() == n2 && f2.rows() == n3, "mttkrp mode 1: factor rows mismatch");
        RowMajorMap x(t.data(), n1, static_cast<std::ptrdiff_t>(n2) * n3);
        return x * khatri_rao(f1, f2);
    }
    if (mode == 2) {
        require(f1.rows() == n1 && f2.rows() == n3, "mttkrp mode 2: factor rows mismatch");
        return unfold(t, 2) * khatri_rao(f1, f2);
    }
    require(f1.rows() == n1 && f2.rows() == n2, "mttkrp mode 3: factor rows mismatch");
    return unfold(t, 3) * khatri_rao(f1, f2);
}

namespace detail {

double block_sum(std::span<const double> values) {
    const std::size_t n = values.size();
    const std::size_t nblocks = (n + kReduceBlock - 1) / kReduceBlock;
    if (nblocks <= 1) {
        double s = 0.0;
        for (double v : values) s += v;
        return s;
    }
    std::vector<double> partial(nblocks, 0.0);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(nblocks); ++b) {
        std::size_t lo = b * kReduceBlock;
        std::size_t hi = std::min(n, lo + kReduceBlock);
        double s = 0.0;
        for (std::size_t i = lo; i < hi; ++i) s += values[i];
        partial[b] = s;
    }
    double total = 0.0;
    for (double s : partial) total += s;
    return total;
}

// Same fixed block structure, summing f(i) without materializing it.
template <typename F>
double block_sum_f(std::size_t n, F&& f) {
    const std::size_t nblocks = (n + kReduceBlock - 1) / kReduceBlock;
    std::vector<double> partial(nblocks, 0.0);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(nblocks); ++b) {
        std::size_t lo = b * kReduceBlock;
        std::size_t hi = std::min(n, lo + kReduceBlock);
        double s = 0.0;
        for (std::size_t i = lo; i < hi; ++i) s += f(i);
        partial[b] = s;
    }
    double total = 0.0;
    for (double s : partial) total += s;
    return total;
}

}  // namespace detail

double weighted_frobenius_sq(const DenseTensor3& x, const DenseTensor3& w) {
    require(x.same_dims(w), "weighted_frobenius_sq: dims " + x.dims().str() + " vs " +
                                w.dims().str());
    const double* xv = x.data();
    const double* wv = w.data();
    return detail::block_sum_f(x.size(), [&](std::size_t i) {
        double t = wv[i] * xv[i];
        return t * t;
    });
}

double frobenius_sq(const DenseTensor3& x) {
    const double* xv = x.data();
    return detail::block_sum_f(x.size(), [&](std::size_t i) { return xv[i] * xv[i]; });
}

double dot(const DenseTensor3& a, const DenseTensor3& b) {
    require(a.same_dims(b), "dot: dims mismatch");
    const double* av = a.data();
    const double* bv = b.data();
    return detail::block_sum_f(a.size(), [&](std::size_t i) { return av[i] * bv[i]; });
}

DenseTensor3 gradient_step(const DenseTensor3& t, const DenseTensor3& s,
                           const DenseTensor3& w, double step) {
    require(t.same_dims(s) && t.same_dims(w),
            "gradient_step: dims mismatch (" + t.dims().str() + ", " + s.dims().str() + ", " +
                w.dims().str() + ")");
    DenseTensor3 out = t;
    double* ov = out.data();
    const double* tv = t.data();
    const double* sv = s.data();
    const double* wv = w.data();
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(t.size());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i)
        ov[i] = tv[i] + step * 2.0 * wv[i] * wv[i] * (sv[i] - tv[i]);
    return out;
}

DenseTensor3 subtract(const DenseTensor3& a, const DenseTensor3& b) {
    require(a.same_dims(b), "subtract: dims mismatch");
    DenseTensor3 out = a;
    double* ov = out.data();
    const double* bv = b.data();
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(a.size());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) ov[i] -= bv[i];
    return out;
}

DenseTensor3 add_scalar(const DenseTensor3& a, double c) {
    DenseTensor3 out = a;
    for (double& v : out.values()) v += c;
    return out;
}

}  // namespace tmsm
