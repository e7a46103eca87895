#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "tmsm/cp.hpp"
#include "tmsm/reference.hpp"
#include "tmsm/rng.hpp"

using namespace tmsm;

// The OpenMP kernels against the serial reference loops, plus thread-count
// independence of the results.

namespace {

DenseTensor3 random_tensor(int n1, int n2, int n3, uint64_t seed) {
    DenseTensor3 t(n1, n2, n3);
    RngStream rng(seed, StreamId::generic);
    for (double& v : t.values()) v = rng.normal();
    return t;
}

Matrix random_matrix(int rows, int cols, uint64_t seed) {
    Matrix m(rows, cols);
    RngStream rng(seed, StreamId::generic, 1);
    for (int j = 0; j < cols; ++j)
        for (int i = 0; i < rows; ++i) m(i, j) = rng.normal();
    return m;
}

}  // namespace

TEST_CASE("parallel kernels agree with the serial reference") {
    DenseTensor3 x = random_tensor(17, 9, 13, 1);
    DenseTensor3 w = random_tensor(17, 9, 13, 2);
    DenseTensor3 s = random_tensor(17, 9, 13, 3);
    Matrix u = random_matrix(17, 4, 4);
    Matrix v = random_matrix(9, 4, 5);
    Matrix wf = random_matrix(13, 4, 6);

    CpDecomposition cp;
    cp.rank = 4;
    cp.lambdas = Vector::LinSpaced(4, 1.0, 2.5);
    cp.U = u;
    cp.V = v;
    cp.W = wf;

    DenseTensor3 rec_p = reconstruct(cp, x.dims());
    DenseTensor3 rec_s = ref::reconstruct(cp, x.dims());
    for (std::size_t i = 0; i < rec_p.size(); ++i)
        CHECK(rec_p.values()[i] == doctest::Approx(rec_s.values()[i]).epsilon(1e-12));

    for (int mode : {1, 2, 3}) {
        Matrix a = unfold(x, mode), b = ref::unfold(x, mode);
        CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);

        const Matrix& f1 = mode == 1 ? v : u;
        const Matrix& f2 = mode == 3 ? v : wf;
        Matrix g = mttkrp(x, mode, f1, f2);
        Matrix gr = ref::mttkrp(x, mode, f1, f2);
        CHECK((g - gr).cwiseAbs().maxCoeff() < 1e-10);
    }

    Matrix kr = khatri_rao(u, wf), krr = ref::khatri_rao(u, wf);
    CHECK((kr - krr).cwiseAbs().maxCoeff() == 0.0);

    CHECK(weighted_frobenius_sq(x, w) ==
          doctest::Approx(ref::weighted_frobenius_sq(x, w)).epsilon(1e-12));

    DenseTensor3 gp = gradient_step(x, s, w, 0.37);
    DenseTensor3 gs = ref::gradient_step(x, s, w, 0.37);
    for (std::size_t i = 0; i < gp.size(); ++i) CHECK(gp.values()[i] == gs.values()[i]);
}

TEST_CASE("results do not depend on the thread count") {
#ifdef _OPENMP
    DenseTensor3 x = random_tensor(31, 8, 16, 11);
    DenseTensor3 w = random_tensor(31, 8, 16, 12);
    Matrix v = random_matrix(8, 5, 13);
    Matrix wf = random_matrix(16, 5, 14);

    int saved = omp_get_max_threads();
    omp_set_num_threads(1);
    Matrix g1 = mttkrp(x, 1, v, wf);
    double f1 = weighted_frobenius_sq(x, w);
    omp_set_num_threads(4);
    Matrix g4 = mttkrp(x, 1, v, wf);
    double f4 = weighted_frobenius_sq(x, w);
    omp_set_num_threads(saved);

    CHECK((g1 - g4).cwiseAbs().maxCoeff() == 0.0);
    CHECK(f1 == f4);
#endif
}
