#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "tmsm/cp.hpp"
#include "tmsm/reference.hpp"
#include "tmsm/rng.hpp"

using namespace tmsm;

namespace {

Matrix random_unit_columns(int rows, int cols, uint64_t seed) {
    Matrix m(rows, cols);
    RngStream rng(seed, StreamId::generic, 2);
    for (int j = 0; j < cols; ++j) {
        for (int i = 0; i < rows; ++i) m(i, j) = rng.normal();
        m.col(j) /= m.col(j).norm();
    }
    return m;
}

CpDecomposition make_cp(Dims3 dims, std::vector<double> lambdas, uint64_t seed) {
    CpDecomposition cp;
    cp.rank = static_cast<int>(lambdas.size());
    cp.lambdas = Eigen::Map<const Vector>(lambdas.data(), lambdas.size());
    cp.U = random_unit_columns(dims.n1, cp.rank, seed);
    cp.V = random_unit_columns(dims.n2, cp.rank, seed + 1);
    cp.W = random_unit_columns(dims.n3, cp.rank, seed + 2);
    return cp;
}

double rel_recon_error(const DenseTensor3& t, const CpDecomposition& cp) {
    DenseTensor3 rec = reconstruct(cp, t.dims());
    return std::sqrt(frobenius_sq(subtract(t, rec)) / frobenius_sq(t));
}

}  // namespace

TEST_CASE("rank-1 basis reconstruction puts a single one at the origin") {
    CpDecomposition cp;
    cp.rank = 1;
    cp.lambdas = Vector::Ones(1);
    cp.U = Matrix::Zero(3, 1);
    cp.V = Matrix::Zero(4, 1);
    cp.W = Matrix::Zero(5, 1);
    cp.U(0, 0) = cp.V(0, 0) = cp.W(0, 0) = 1.0;
    DenseTensor3 rec = reconstruct(cp, {3, 4, 5});
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 4; ++j)
            for (int k = 0; k < 5; ++k)
                CHECK(rec(i, j, k) == (i == 0 && j == 0 && k == 0 ? 1.0 : 0.0));
}

TEST_CASE("empty decomposition reconstructs to zero") {
    DenseTensor3 rec = reconstruct(CpDecomposition::empty({2, 3, 2}), {2, 3, 2});
    for (double v : rec.values()) CHECK(v == 0.0);
}

TEST_CASE("reconstruct matches the scalar triple loop") {
    CpDecomposition cp = make_cp({2, 2, 2}, {3.0, 2.0}, 7);
    DenseTensor3 rec = reconstruct(cp, {2, 2, 2});
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
            for (int k = 0; k < 2; ++k) {
                double want = 0.0;
                for (int l = 0; l < 2; ++l)
                    want += cp.lambdas(l) * cp.U(i, l) * cp.V(j, l) * cp.W(k, l);
                CHECK(rec(i, j, k) == doctest::Approx(want).epsilon(1e-12));
            }
}

TEST_CASE("reconstruct rejects dimension mismatches by mode") {
    CpDecomposition cp = make_cp({2, 3, 4}, {1.0}, 9);
    CHECK_THROWS_WITH_AS(reconstruct(cp, {5, 3, 4}), doctest::Contains("U"), Error);
    CHECK_THROWS_WITH_AS(reconstruct(cp, {2, 5, 4}), doctest::Contains("V"), Error);
    CHECK_THROWS_WITH_AS(reconstruct(cp, {2, 3, 5}), doctest::Contains("W"), Error);
}

TEST_CASE("cp_als recovers an exact rank-1 tensor") {
    CpDecomposition truth = make_cp({5, 4, 3}, {2.5}, 21);
    DenseTensor3 t = reconstruct(truth, {5, 4, 3});
    CpDecomposition fit = cp_als(t, 1);
    CHECK(rel_recon_error(t, fit) < 1e-10);
}

TEST_CASE("cp_als recovers an exact rank-3 tensor with separated spectrum") {
    CpDecomposition truth = make_cp({8, 8, 8}, {10.0, 5.0, 1.0}, 33);
    DenseTensor3 t = reconstruct(truth, {8, 8, 8});
    CpAlsConfig cfg;
    cfg.max_sweeps = 200;
    CpDecomposition fit = cp_als(t, 3, cfg);
    CHECK(rel_recon_error(t, fit) < 1e-6);
}

TEST_CASE("cp_als on the zero tensor returns zero lambdas") {
    DenseTensor3 zeros(4, 4, 4, 0.0);
    CpDecomposition fit = cp_als(zeros, 2);
    REQUIRE(fit.rank == 2);
    CHECK(fit.lambdas(0) == 0.0);
    CHECK(fit.lambdas(1) == 0.0);
    DenseTensor3 rec = reconstruct(fit, {4, 4, 4});
    for (double v : rec.values()) CHECK(v == 0.0);
}

TEST_CASE("cp_als output is canonical") {
    DenseTensor3 t = reconstruct(make_cp({6, 5, 4}, {4.0, 2.0, 1.0}, 55), {6, 5, 4});
    CpDecomposition fit = cp_als(t, 3);
    for (int l = 0; l < fit.rank; ++l) {
        CHECK(std::abs(fit.U.col(l).norm() - 1.0) < 1e-10);
        CHECK(std::abs(fit.V.col(l).norm() - 1.0) < 1e-10);
        CHECK(std::abs(fit.W.col(l).norm() - 1.0) < 1e-10);
        CHECK(fit.lambdas(l) >= 0.0);
        if (l > 0) CHECK(std::abs(fit.lambdas(l)) <= std::abs(fit.lambdas(l - 1)));
    }
}

TEST_CASE("ALS sweep errors never increase beyond slack") {
    RngStream rng(99, StreamId::generic);
    for (int trial = 0; trial < 100; ++trial) {
        DenseTensor3 t(4, 3, 5);
        for (double& v : t.values()) v = rng.normal();
        CpAlsConfig cfg;
        cfg.max_sweeps = 30;
        cfg.seed = trial;
        cfg.init = trial % 2 == 0 ? CpAlsConfig::Init::svd : CpAlsConfig::Init::random;
        CpAlsResult res = cp_als_traced(t, 2, cfg);
        for (std::size_t s = 1; s < res.sweep_errors.size(); ++s)
            CHECK(res.sweep_errors[s] <= res.sweep_errors[s - 1] + 1e-9);
    }
}

TEST_CASE("exact recovery across random separated instances") {
    for (uint64_t seed = 0; seed < 10; ++seed) {
        CpDecomposition truth = make_cp({7, 6, 5}, {8.0, 4.0, 2.0}, 100 + seed);
        DenseTensor3 t = reconstruct(truth, {7, 6, 5});
        CpAlsConfig cfg;
        cfg.max_sweeps = 300;
        cfg.seed = seed;
        CHECK(rel_recon_error(t, cp_als(t, 3, cfg)) < 1e-6);
    }
}

TEST_CASE("warm start converges at least as well") {
    CpDecomposition truth = make_cp({6, 6, 6}, {5.0, 3.0}, 77);
    DenseTensor3 t = reconstruct(truth, {6, 6, 6});
    CpDecomposition cold = cp_als(t, 2);
    CpAlsConfig warm_cfg;
    warm_cfg.max_sweeps = 5;
    CpDecomposition warm = cp_als(t, 2, warm_cfg, &cold);
    CHECK(rel_recon_error(t, warm) <= rel_recon_error(t, cold) + 1e-12);
    CHECK(rel_recon_error(t, warm) < 1e-5);
}

TEST_CASE("spectral_clip clamps lambdas and nothing else") {
    CpDecomposition cp = make_cp({3, 3, 3}, {300.0, -250.0, 50.0}, 61);
    CpDecomposition clipped = spectral_clip(cp, 200.0);
    CHECK(clipped.lambdas(0) == 200.0);
    CHECK(clipped.lambdas(1) == -200.0);
    CHECK(clipped.lambdas(2) == 50.0);
    CHECK((clipped.U - cp.U).cwiseAbs().maxCoeff() == 0.0);

    CpDecomposition small = make_cp({3, 3, 3}, {10.0, -5.0}, 62);
    CpDecomposition same = spectral_clip(small, 200.0);
    CHECK(same.lambdas(0) == 10.0);
    CHECK(same.lambdas(1) == -5.0);

    // reconstruction of a clipped decomposition is loosely bounded by r * L
    DenseTensor3 rec = reconstruct(clipped, {3, 3, 3});
    double max_abs = 0.0;
    for (double v : rec.values()) max_abs = std::max(max_abs, std::abs(v));
    CHECK(max_abs <= 3 * 200.0);
    CHECK_THROWS_AS(spectral_clip(cp, 0.0), Error);
}

TEST_CASE("cp_als validates its inputs") {
    DenseTensor3 t(2, 2, 2);
    CHECK_THROWS_AS(cp_als(t, 0), Error);
    CHECK_THROWS_AS(cp_als(t, 5), Error);  // exceeds the 2x2 pair bound
    CpAlsConfig bad;
    bad.tol = 0.0;
    CHECK_THROWS_AS(cp_als(t, 1, bad), Error);
}
