// Kernel benchmark: OpenMP implementations against the serial reference
// loops, with a correctness check on each pair. Sizes mimic the narrow and
// wide simulation worlds.

#include <chrono>
#include <cstdio>
#include <functional>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "tmsm/cp.hpp"
#include "tmsm/reference.hpp"
#include "tmsm/rng.hpp"
#include "tmsm/tensor.hpp"

using namespace tmsm;

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

double time_ms(const std::function<void()>& fn, int reps) {
    auto start = std::chrono::steady_clock::now();
    for (int r = 0; r < reps; ++r) fn();
    auto stop = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(stop - start).count() / reps;
}

void report(const char* name, double serial_ms, double parallel_ms, double max_diff) {
    std::printf("%-24s serial %9.3f ms   omp %9.3f ms   speedup %5.2fx   max|diff| %.3g\n", name,
                serial_ms, parallel_ms, serial_ms / parallel_ms, max_diff);
}

}  // namespace

int main() {
#ifdef _OPENMP
    std::printf("threads: %d\n", omp_get_max_threads());
#else
    std::printf("threads: 1 (no OpenMP)\n");
#endif
    const int reps = 5;
    const int n1 = 500, n2 = 10, n3 = 128, r = 20;

    DenseTensor3 x = random_tensor(n1, n2, n3, 1);
    DenseTensor3 w = random_tensor(n1, n2, n3, 2);
    DenseTensor3 s = random_tensor(n1, n2, n3, 3);
    Matrix u = random_matrix(n1, r, 4);
    Matrix v = random_matrix(n2, r, 5);
    Matrix wf = random_matrix(n3, r, 6);

    CpDecomposition cp;
    cp.rank = r;
    cp.lambdas = Vector::Ones(r);
    cp.U = u;
    cp.V = v;
    cp.W = wf;

    {
        DenseTensor3 a, b;
        double ts = time_ms([&] { a = ref::reconstruct(cp, x.dims()); }, reps);
        double tp = time_ms([&] { b = reconstruct(cp, x.dims()); }, reps);
        double diff = 0;
        for (std::size_t i = 0; i < a.size(); ++i)
            diff = std::max(diff, std::abs(a.values()[i] - b.values()[i]));
        report("reconstruct", ts, tp, diff);
    }
    {
        Matrix a, b;
        double ts = time_ms([&] { a = ref::mttkrp(x, 1, v, wf); }, reps);
        double tp = time_ms([&] { b = mttkrp(x, 1, v, wf); }, reps);
        report("mttkrp mode 1", ts, tp, (a - b).cwiseAbs().maxCoeff());
    }
    {
        Matrix a, b;
        double ts = time_ms([&] { a = ref::khatri_rao(v, wf); }, reps);
        double tp = time_ms([&] { b = khatri_rao(v, wf); }, reps);
        report("khatri_rao", ts, tp, (a - b).cwiseAbs().maxCoeff());
    }
    {
        Matrix a, b;
        double ts = time_ms([&] { a = ref::unfold(x, 2); }, reps);
        double tp = time_ms([&] { b = unfold(x, 2); }, reps);
        report("unfold mode 2", ts, tp, (a - b).cwiseAbs().maxCoeff());
    }
    {
        double a = 0, b = 0;
        double ts = time_ms([&] { a = ref::weighted_frobenius_sq(x, w); }, reps);
        double tp = time_ms([&] { b = weighted_frobenius_sq(x, w); }, reps);
        report("weighted_frobenius_sq", ts, tp, std::abs(a - b) / std::abs(a));
    }
    {
        DenseTensor3 a, b;
        double ts = time_ms([&] { a = ref::gradient_step(x, s, w, 0.5); }, reps);
        double tp = time_ms([&] { b = gradient_step(x, s, w, 0.5); }, reps);
        double diff = 0;
        for (std::size_t i = 0; i < a.size(); ++i)
            diff = std::max(diff, std::abs(a.values()[i] - b.values()[i]));
        report("gradient_step", ts, tp, diff);
    }
    return 0;
}
