#pragma once

#include <Eigen/Dense>
#include <memory>
#include <stdexcept>

#include "cphifi/kernel.hpp"
#include "cphifi/matrix_ops.hpp"
#include "cphifi/observations.hpp"
#include "cphifi/solvers.hpp"

namespace cphifi {

/// Mode-k unaligned infinite-dimensional subproblem. The symmetric form is
///   (F'F + lambda (I kron K) + rho I) vec(W) = vec(K B)
/// with F = S'(Z kron K); the nonsymmetric baseline replaces F'F by G'F
/// and drops the rho shift.
struct UnalignedSubproblem {
    const ObservationSet* obs = nullptr;
    int mode_index = 0;
    Matrix zhat;                     // q x r
    std::shared_ptr<RkhsMode> mode;  // K, lambda, cached eig
    Matrix b;                        // n x r sampled MTTKRP
    Matrix v;                        // r x r Gram of the full Z
    double rho = 1e-6;
    Eigen::Index dense_cap = 6000;   // guard on rn for materialized paths

    Eigen::Index n() const { return mode->size(); }
    Eigen::Index r() const { return zhat.cols(); }
    Eigen::Index q() const { return obs->num_obs(); }
    double lambda() const { return mode->lambda(); }
    double density() const { return obs->density(); }
};

inline UnalignedSubproblem make_unaligned_subproblem(const ObservationSet& obs,
                                                     const KruskalModel& model, int k,
                                                     std::shared_ptr<RkhsMode> mode,
                                                     double rho) {
    UnalignedSubproblem p;
    p.obs = &obs;
    p.mode_index = k;
    p.zhat = build_zhat(model, k, obs);
    p.mode = std::move(mode);
    p.b = sampled_mttkrp(obs, p.zhat, k);
    p.v = gram_khatri_rao(model, k);
    p.rho = rho;
    return p;
}

/// F = S'(Z kron K), row l = zhat(l,:) kron khat(l,:). Materialized only in
/// the direct baseline and test oracles.
inline Matrix build_F(const UnalignedSubproblem& p) {
    if (p.n() * p.r() > p.dense_cap)
        throw std::invalid_argument("build_F: rn exceeds memory cap");
    const Eigen::Index n = p.n(), r = p.r(), q = p.q();
    Matrix khat = build_khat(p.mode->kernel(), p.mode_index, *p.obs);
    Matrix f(q, r * n);
    for (Eigen::Index l = 0; l < q; ++l)
        for (Eigen::Index j = 0; j < r; ++j)
            f.row(l).segment(j * n, n) = p.zhat(l, j) * khat.row(l);
    return f;
}

/// G = S'(Z kron I), row l = zhat(l,:) kron e_{i_k^(l)}'.
inline Matrix build_G(const UnalignedSubproblem& p) {
    if (p.n() * p.r() > p.dense_cap)
        throw std::invalid_argument("build_G: rn exceeds memory cap");
    const Eigen::Index n = p.n(), r = p.r(), q = p.q();
    Matrix g = Matrix::Zero(q, r * n);
    for (Eigen::Index l = 0; l < q; ++l) {
        const Eigen::Index i = p.obs->index(l, p.mode_index);
        for (Eigen::Index j = 0; j < r; ++j)
            g(l, j * n + i) = p.zhat(l, j);
    }
    return g;
}

/// Direct baseline: LU solve of (G'F + lambda I) vec(W) = vec(B).
inline Matrix solve_unaligned_direct_nonsym(const UnalignedSubproblem& p,
                                            SolveReport* report = nullptr) {
    const auto t0 = std::chrono::steady_clock::now();
    const Eigen::Index rn = p.n() * p.r();
    Matrix sys = build_G(p).transpose() * build_F(p);
    sys.diagonal().array() += p.lambda();
    Eigen::Map<const Vector> rhs(p.b.data(), rn);
    Vector w = lu_solve(sys, rhs);
    if (report) {
        report->iterations = 1;
        report->relative_residual =
            rhs.norm() == 0.0 ? 0.0 : (sys * w - rhs).norm() / rhs.norm();
        report->converged = true;
        report->wall_time_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
    return Eigen::Map<Matrix>(w.data(), p.n(), p.r());
}

/// Three-stage structured matvec y = (F'F + lambda (I kron K) + rho I) x:
/// xhat = vec(KX), gather to xbar (one dot product per observation),
/// scatter back through the mode-k buckets, then a final multiply by K.
inline Vector unaligned_matvec(const UnalignedSubproblem& p, const Vector& x) {
    const Eigen::Index n = p.n(), r = p.r();
    if (x.size() != n * r) throw std::invalid_argument("unaligned_matvec: size mismatch");
    Eigen::Map<const Matrix> xm(x.data(), n, r);
    const Matrix& k = p.mode->kernel();
    Matrix xhat = k * xm;                                            // O(n^2 r)
    // reused buffer: a fresh q-sized allocation per call would dominate at
    // large q through mmap and page-fault churn
    thread_local std::vector<double> xbar;
    gather_rows(xhat, p.zhat, *p.obs, p.mode_index, xbar);           // O(qr)
    Matrix yhat1 = sampled_mttkrp(*p.obs, p.zhat, p.mode_index, xbar);           // O(qr)
    Matrix y = k * yhat1 + p.lambda() * xhat;                        // O(n^2 r)
    Eigen::Map<Vector> yv(y.data(), n * r);
    return yv + p.rho * x;
}

/// Kronecker preconditioner M = gamma (V kron K^2) + lambda (I kron K) + rho I,
/// applied via the eigendecompositions of K and V:
///   M^-1 x = U_K ((U_K' X U_V) had D) U_V'.
inline LinearOperator build_preconditioner(const UnalignedSubproblem& p) {
    const SymEig& ek = p.mode->eig();
    SymEig ev = sym_eig(p.v);
    const Eigen::Index n = p.n(), r = p.r();
    const double gamma = p.density();
    Matrix d(n, r);
    for (Eigen::Index j = 0; j < r; ++j)
        for (Eigen::Index i = 0; i < n; ++i) {
            const double denom =
                gamma * ev.d(j) * ek.d(i) * ek.d(i) + p.lambda() * ek.d(i) + p.rho;
            if (denom <= 0.0)
                throw std::runtime_error("build_preconditioner: nonpositive denominator");
            d(i, j) = 1.0 / denom;
        }
    Matrix uk = ek.u, uv = ev.u;
    return {n * r, [uk, uv, d, n, r](const Vector& x) -> Vector {
        Eigen::Map<const Matrix> xm(x.data(), n, r);
        Matrix y = uk * (uk.transpose() * xm * uv).cwiseProduct(d) * uv.transpose();
        return Eigen::Map<Vector>(y.data(), n * r);
    }};
}

/// PCG on the rho-regularized symmetric system with right-hand side vec(KB).
inline Matrix solve_unaligned_pcg(const UnalignedSubproblem& p, const PcgConfig& cfg,
                                  SolveReport* report = nullptr,
                                  const Matrix* warm_start = nullptr) {
    if (p.rho <= 0.0)
        throw std::invalid_argument("solve_unaligned_pcg: rho must be positive");
    const Eigen::Index n = p.n(), r = p.r();
    Matrix kb = p.mode->kernel() * p.b;
    Eigen::Map<Vector> rhs(kb.data(), n * r);
    LinearOperator a{n * r, [&p](const Vector& x) { return unaligned_matvec(p, x); }};
    LinearOperator m_inv = build_preconditioner(p);
    Vector x0;
    const Vector* x0p = nullptr;
    if (warm_start) {
        x0 = Eigen::Map<const Vector>(warm_start->data(), n * r);
        x0p = &x0;
    }
    Vector w = pcg(a, m_inv, rhs, cfg, report, x0p);
    return Eigen::Map<Matrix>(w.data(), n, r);
}

/// Test oracle: densely materialized symmetric system and right-hand side.
inline std::pair<Matrix, Vector> assemble_unaligned_sym_dense(const UnalignedSubproblem& p) {
    const Eigen::Index rn = p.n() * p.r();
    if (rn > p.dense_cap)
        throw std::invalid_argument("assemble_unaligned_sym_dense: rn exceeds memory cap");
    Matrix f = build_F(p);
    Matrix sys = f.transpose() * f;
    sys += p.lambda() * kronecker(Matrix::Identity(p.r(), p.r()), p.mode->kernel());
    sys.diagonal().array() += p.rho;
    Matrix kb = p.mode->kernel() * p.b;
    return {sys, Eigen::Map<Vector>(kb.data(), rn)};
}

}  // namespace cphifi
