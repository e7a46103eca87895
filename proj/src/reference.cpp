#include "tmsm/reference.hpp"

namespace tmsm::ref {

DenseTensor3 reconstruct(const CpDecomposition& cp, Dims3 dims) {
    DenseTensor3 out(dims.n1, dims.n2, dims.n3, 0.0);
    for (int i = 0; i < dims.n1; ++i)
        for (int j = 0; j < dims.n2; ++j)
            for (int k = 0; k < dims.n3; ++k) {
                double s = 0.0;
                for (int l = 0; l < cp.rank; ++l)
                    s += cp.lambdas(l) * cp.U(i, l) * cp.V(j, l) * cp.W(k, l);
                out(i, j, k) = s;
            }
    return out;
}

Matrix unfold(const DenseTensor3& t, int mode) {
    const int n1 = t.dims().n1, n2 = t.dims().n2, n3 = t.dims().n3;
    int rows = mode == 1 ? n1 : mode == 2 ? n2 : n3;
    Matrix m(rows, static_cast<std::ptrdiff_t>(t.size()) / rows);
    for (int i = 0; i < n1; ++i)
        for (int j = 0; j < n2; ++j)
            for (int k = 0; k < n3; ++k) {
                if (mode == 1)
                    m(i, j * n3 + k) = t(i, j, k);
                else if (mode == 2)
                    m(j, i * n3 + k) = t(i, j, k);
                else
                    m(k, i * n2 + j) = t(i, j, k);
            }
    return m;
}

Matrix khatri_rao(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows() * b.rows(), a.cols());
    for (std::ptrdiff_t l = 0; l < a.cols(); ++l)
        for (std::ptrdiff_t i = 0; i < a.rows(); ++i)
            for (std::ptrdiff_t j = 0; j < b.rows(); ++j)
                out(i * b.rows() + j, l) = a(i, l) * b(j, l);
    return out;
}

Matrix mttkrp(const DenseTensor3& t, int mode, const Matrix& f1, const Matrix& f2) {
    Matrix m = ref::unfold(t, mode);
    return m * ref::khatri_rao(f1, f2);
}

double weighted_frobenius_sq(const DenseTensor3& x, const DenseTensor3& w) {
    const int n1 = x.dims().n1, n2 = x.dims().n2, n3 = x.dims().n3;
    double s = 0.0;
    for (int i = 0; i < n1; ++i)
        for (int j = 0; j < n2; ++j)
            for (int k = 0; k < n3; ++k)
                s += w(i, j, k) * w(i, j, k) * x(i, j, k) * x(i, j, k);
    return s;
}

DenseTensor3 gradient_step(const DenseTensor3& t, const DenseTensor3& s,
                           const DenseTensor3& w, double step) {
    DenseTensor3 out = t;
    const int n1 = t.dims().n1, n2 = t.dims().n2, n3 = t.dims().n3;
    for (int i = 0; i < n1; ++i)
        for (int j = 0; j < n2; ++j)
            for (int k = 0; k < n3; ++k)
                out(i, j, k) =
                    t(i, j, k) + step * 2.0 * w(i, j, k) * w(i, j, k) * (s(i, j, k) - t(i, j, k));
    return out;
}

}  // namespace tmsm::ref
