#include "tmsm/cp.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "tmsm/rng.hpp"

namespace tmsm {

CpDecomposition CpDecomposition::empty(Dims3 dims) {
    CpDecomposition cp;
    cp.rank = 0;
    cp.lambdas = Vector::Zero(0);
    cp.U = Matrix::Zero(dims.n1, 0);
    cp.V = Matrix::Zero(dims.n2, 0);
    cp.W = Matrix::Zero(dims.n3, 0);
    return cp;
}

DenseTensor3 reconstruct(const CpDecomposition& cp, Dims3 dims) {
    auto check_mode = [&](const Matrix& f, int n, const char* name) {
        require(static_cast<int>(f.rows()) == n,
                std::string("reconstruct: factor ") + name + " has " +
                    std::to_string(f.rows()) + " rows, dims want " + std::to_string(n));
    };
    check_mode(cp.U, dims.n1, "U");
    check_mode(cp.V, dims.n2, "V");
    check_mode(cp.W, dims.n3, "W");
    require(cp.lambdas.size() == cp.rank && cp.U.cols() == cp.rank &&
                cp.V.cols() == cp.rank && cp.W.cols() == cp.rank,
            "reconstruct: inconsistent rank");
    DenseTensor3 out(dims.n1, dims.n2, dims.n3, 0.0);
    if (cp.rank > 0) {
        // (U diag(lambda)) KR(V,W)^T written straight into the flat buffer.
        Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> x(
            out.data(), dims.n1, static_cast<std::ptrdiff_t>(dims.n2) * dims.n3);
        x.noalias() = (cp.U * cp.lambdas.asDiagonal()) * khatri_rao(cp.V, cp.W).transpose();
    }
    return out;
}

void canonicalize(CpDecomposition& cp) {
    const int r = cp.rank;
    for (int l = 0; l < r; ++l) {
        // Fold column norms into lambda.
        double nu = cp.U.col(l).norm(), nv = cp.V.col(l).norm(), nw = cp.W.col(l).norm();
        double scale = nu * nv * nw;
        if (scale > 0.0 && std::isfinite(scale)) {
            cp.U.col(l) /= nu;
            cp.V.col(l) /= nv;
            cp.W.col(l) /= nw;
            cp.lambdas(l) *= scale;
        } else {
            // Degenerate component: pin to basis vectors, contributes nothing.
            cp.lambdas(l) = 0.0;
            cp.U.col(l).setZero();
            cp.V.col(l).setZero();
            cp.W.col(l).setZero();
            cp.U(l % cp.U.rows(), l) = 1.0;
            cp.V(l % cp.V.rows(), l) = 1.0;
            cp.W(l % cp.W.rows(), l) = 1.0;
        }
        if (cp.lambdas(l) < 0.0) {
            cp.lambdas(l) = -cp.lambdas(l);
            cp.U.col(l) = -cp.U.col(l);
        }
    }
    std::vector<int> order(r);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return std::abs(cp.lambdas(a)) > std::abs(cp.lambdas(b));
    });
    CpDecomposition sorted = cp;
    for (int l = 0; l < r; ++l) {
        sorted.lambdas(l) = cp.lambdas(order[l]);
        sorted.U.col(l) = cp.U.col(order[l]);
        sorted.V.col(l) = cp.V.col(order[l]);
        sorted.W.col(l) = cp.W.col(order[l]);
    }
    cp = std::move(sorted);
}

CpDecomposition spectral_clip(CpDecomposition cp, double l_bound) {
    require(l_bound > 0.0, "spectral_clip: l_bound must be positive");
    for (int l = 0; l < cp.rank; ++l)
        cp.lambdas(l) = std::clamp(cp.lambdas(l), -l_bound, l_bound);
    return cp;
}

namespace {

Matrix random_factor(int rows, int rank, RngStream& rng) {
    Matrix f(rows, rank);
    for (int j = 0; j < rank; ++j)
        for (int i = 0; i < rows; ++i) f(i, j) = rng.normal();
    return f;
}

// Leading `rank` left singular vectors of unfold(t, mode) via the Gram
// matrix; columns beyond the mode dimension are padded with seeded noise.
Matrix svd_init_factor(const DenseTensor3& t, int mode, int rank, RngStream& rng) {
    Matrix m = unfold(t, mode);
    const int n = static_cast<int>(m.rows());
    Matrix gram = m * m.transpose();
    Eigen::SelfAdjointEigenSolver<Matrix> eig(gram);
    Matrix f(n, rank);
    const int take = std::min(rank, n);
    for (int l = 0; l < take; ++l)
        f.col(l) = eig.eigenvectors().col(n - 1 - l);  // eigenvalues ascend
    for (int l = take; l < rank; ++l) {
        for (int i = 0; i < n; ++i) f(i, l) = rng.normal();
        double nrm = f.col(l).norm();
        if (nrm > 0) f.col(l) /= nrm;
    }
    return f;
}

// Solve X * (gram + maybe ridge) = G for X, row by row via LLT. The gram is
// PSD by construction; ridge 1e-10 I is added on factorization failure and
// escalated until it succeeds.
Matrix solve_normal_eq(const Matrix& g, Matrix gram) {
    double ridge = 0.0;
    for (;;) {
        Matrix a = gram;
        if (ridge > 0.0) a.diagonal().array() += ridge;
        Eigen::LLT<Matrix> llt(a);
        if (llt.info() == Eigen::Success) {
            Matrix sol = llt.solve(g.transpose()).transpose();
            if (sol.allFinite()) return sol;
        }
        ridge = ridge == 0.0 ? 1e-10 : ridge * 10.0;
        if (ridge > 1.0) fail_compute("cp_als: normal equations unsolvable");
    }
}

}  // namespace

CpAlsResult cp_als_traced(const DenseTensor3& t, int rank, const CpAlsConfig& cfg,
                          const CpDecomposition* warm_start) {
    const Dims3 dims = t.dims();
    require(rank >= 1, "cp_als: rank must be >= 1");
    require(cfg.max_sweeps >= 1, "cp_als: max_sweeps must be >= 1");
    require(cfg.tol > 0.0, "cp_als: tol must be positive");
    const long pair_min = std::min({static_cast<long>(dims.n1) * dims.n2,
                                    static_cast<long>(dims.n1) * dims.n3,
                                    static_cast<long>(dims.n2) * dims.n3});
    require(rank <= pair_min, "cp_als: rank " + std::to_string(rank) +
                                  " exceeds dimension product bound " + std::to_string(pair_min));

    Matrix U, V, W;
    if (warm_start != nullptr && warm_start->rank == rank && warm_start->dims() == dims) {
        U = warm_start->U * warm_start->lambdas.asDiagonal();
        V = warm_start->V;
        W = warm_start->W;
    } else {
        RngStream rng(cfg.seed, StreamId::als_init);
        if (cfg.init == CpAlsConfig::Init::svd) {
            U = svd_init_factor(t, 1, rank, rng);
            V = svd_init_factor(t, 2, rank, rng);
            W = svd_init_factor(t, 3, rank, rng);
        } else {
            U = random_factor(dims.n1, rank, rng);
            V = random_factor(dims.n2, rank, rng);
            W = random_factor(dims.n3, rank, rng);
        }
    }

    const double x_sq = frobenius_sq(t);
    Vector lambdas = Vector::Ones(rank);

    auto normalize_cols = [](Matrix& f) {
        Vector norms(f.cols());
        for (int l = 0; l < f.cols(); ++l) {
            double n = f.col(l).norm();
            norms(l) = n;
            if (n > 0 && std::isfinite(n)) f.col(l) /= n;
        }
        return norms;
    };

    CpAlsResult result;
    double prev_err = -1.0;
    for (int sweep = 0; sweep < cfg.max_sweeps; ++sweep) {
        Matrix g1 = mttkrp(t, 1, V, W);
        U = solve_normal_eq(g1, (V.transpose() * V).cwiseProduct(W.transpose() * W).eval());
        normalize_cols(U);

        Matrix g2 = mttkrp(t, 2, U, W);
        V = solve_normal_eq(g2, (U.transpose() * U).cwiseProduct(W.transpose() * W).eval());
        normalize_cols(V);

        Matrix g3 = mttkrp(t, 3, U, V);
        W = solve_normal_eq(g3, (U.transpose() * U).cwiseProduct(V.transpose() * V).eval());
        lambdas = normalize_cols(W);

        // err^2 = ||X||^2 - 2 <X, rec> + ||rec||^2 without reconstructing.
        double inner = 0.0;
        for (int l = 0; l < rank; ++l) inner += lambdas(l) * g3.col(l).dot(W.col(l));
        Matrix cross = (U.transpose() * U)
                           .cwiseProduct(V.transpose() * V)
                           .cwiseProduct(W.transpose() * W);
        double rec_sq = lambdas.dot(cross * lambdas);
        double err = x_sq - 2.0 * inner + rec_sq;
        if (err < 0.0 && err > -1e-9 * std::max(1.0, x_sq)) err = 0.0;
        result.sweep_errors.push_back(err);
        result.sweeps = sweep + 1;

        if (prev_err >= 0.0) {
            double denom = std::max(prev_err, 1e-300);
            if (std::abs(prev_err - err) / denom < cfg.tol) {
                result.converged = true;
                break;
            }
        }
        prev_err = err;
    }

    result.cp.rank = rank;
    result.cp.lambdas = lambdas;
    result.cp.U = std::move(U);
    result.cp.V = std::move(V);
    result.cp.W = std::move(W);
    canonicalize(result.cp);
    return result;
}

}  // namespace tmsm
