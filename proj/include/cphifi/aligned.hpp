#pragma once

#include <Eigen/Dense>
#include <memory>
#include <stdexcept>

#include "cphifi/kernel.hpp"
#include "cphifi/matrix_ops.hpp"
#include "cphifi/solvers.hpp"

namespace cphifi {

/// Mode-k aligned infinite-dimensional subproblem:
///   (V kron K + lambda I) vec(W) = vec(B),
/// with B the MTTKRP and V the Khatri-Rao Gram.
struct AlignedSubproblem {
    Matrix b;                        // n x r
    Matrix v;                        // r x r, symmetric PSD
    std::shared_ptr<RkhsMode> mode;  // K, lambda, cached eig
    Eigen::Index direct_cap = 6000;  // guard on rn for the materialized path

    Eigen::Index n() const { return b.rows(); }
    Eigen::Index r() const { return b.cols(); }
    double lambda() const { return mode->lambda(); }
};

/// Baseline: materialize the rn x rn system and Cholesky-solve it.
inline Matrix solve_aligned_direct(const AlignedSubproblem& p) {
    const Eigen::Index rn = p.n() * p.r();
    if (rn > p.direct_cap)
        throw std::invalid_argument("solve_aligned_direct: rn exceeds memory cap");
    Matrix sys = kronecker(p.v, p.mode->kernel());
    sys.diagonal().array() += p.lambda();
    Eigen::Map<const Vector> rhs(p.b.data(), rn);
    Matrix w = cholesky_solve(sys, rhs);
    return Eigen::Map<Matrix>(w.data(), p.n(), p.r());
}

/// Decoupled direct solve via the eigendecompositions of K and V:
///   W = U_K ((U_K' B U_V) had D) U_V',  D(i,j) = 1 / (dV(j) dK(i) + lambda).
inline Matrix solve_aligned_decoupled(const AlignedSubproblem& p) {
    const SymEig& ek = p.mode->eig();
    SymEig ev = sym_eig(p.v);
    Matrix core = ek.u.transpose() * p.b * ev.u;
    for (Eigen::Index j = 0; j < p.r(); ++j)
        for (Eigen::Index i = 0; i < p.n(); ++i) {
            const double denom = ev.d(j) * ek.d(i) + p.lambda();
            if (denom == 0.0)
                throw std::runtime_error(
                    "solve_aligned_decoupled: zero eigenvalue pair; use lambda > 0");
            core(i, j) /= denom;
        }
    return ek.u * core * ev.u.transpose();
}

/// Matvec of the transformed system: (V kron D_K + lambda I) vec(X)
/// = vec(D_K X V + lambda X) with X of size n x r.
inline Vector aligned_matvec(const Vector& x, const Vector& d_k, const Matrix& v,
                             double lambda) {
    const Eigen::Index n = d_k.size();
    const Eigen::Index r = v.rows();
    if (x.size() != n * r) throw std::invalid_argument("aligned_matvec: size mismatch");
    Eigen::Map<const Matrix> xm(x.data(), n, r);
    Matrix y = d_k.asDiagonal() * (xm * v) + lambda * xm;
    return Eigen::Map<Vector>(y.data(), n * r);
}

/// PCG on the transformed system (V kron D_K + lambda I) vec(Wbar) = vec(U_K' B)
/// with diagonal preconditioner diag(diag(V)) kron D_K + lambda I; recovers
/// W = U_K Wbar.
inline Matrix solve_aligned_pcg(const AlignedSubproblem& p, const PcgConfig& cfg,
                                SolveReport* report = nullptr,
                                const Matrix* warm_start = nullptr) {
    const SymEig& ek = p.mode->eig();
    const Eigen::Index n = p.n(), r = p.r();
    Matrix bbar = ek.u.transpose() * p.b;
    Eigen::Map<Vector> bvec(bbar.data(), n * r);

    LinearOperator a{n * r, [&](const Vector& x) {
        return aligned_matvec(x, ek.d, p.v, p.lambda());
    }};
    Vector dinv(n * r);
    for (Eigen::Index j = 0; j < r; ++j)
        for (Eigen::Index i = 0; i < n; ++i)
            dinv(i + n * j) = 1.0 / (p.v(j, j) * ek.d(i) + p.lambda());
    LinearOperator m_inv{n * r, [dinv](const Vector& x) -> Vector {
        return dinv.cwiseProduct(x);
    }};

    Vector x0;
    const Vector* x0p = nullptr;
    if (warm_start) {
        Matrix wbar0 = ek.u.transpose() * (*warm_start);
        x0 = Eigen::Map<Vector>(wbar0.data(), n * r);
        x0p = &x0;
    }
    Vector wbar = pcg(a, m_inv, bvec, cfg, report, x0p);
    Eigen::Map<Matrix> wbar_m(wbar.data(), n, r);
    return ek.u * wbar_m;
}

/// Relative residual of the original system, computed without Kronecker
/// materialization as vec(K W V + lambda W) - vec(B).
inline double aligned_residual(const AlignedSubproblem& p, const Matrix& w) {
    Matrix res = p.mode->kernel() * w * p.v + p.lambda() * w - p.b;
    const double bn = p.b.norm();
    return bn == 0.0 ? res.norm() : res.norm() / bn;
}

}  // namespace cphifi
