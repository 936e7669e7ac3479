#pragma once

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <functional>
#include <stdexcept>

#include "cphifi/matrix_ops.hpp"

namespace cphifi {

/// Matrix-free operator; symmetric PSD by contract for PCG use.
struct LinearOperator {
    Eigen::Index dim = 0;
    std::function<Vector(const Vector&)> apply;
};

inline LinearOperator identity_operator(Eigen::Index dim) {
    return {dim, [](const Vector& x) { return x; }};
}

struct PcgConfig {
    double tol = 1e-6;      // relative residual ||b - Ax|| / ||b||
    int max_iter = 75;
    bool record_history = false;
};

struct SolveReport {
    int iterations = 0;
    double relative_residual = 0.0;
    double wall_time_s = 0.0;
    bool converged = false;
    std::vector<double> residual_history;
};

/// Preconditioned conjugate gradients, zero initial guess unless given.
inline Vector pcg(const LinearOperator& a, const LinearOperator& m_inv, const Vector& b,
                  const PcgConfig& cfg, SolveReport* report = nullptr,
                  const Vector* x0 = nullptr) {
    if (a.dim != m_inv.dim || a.dim != b.size())
        throw std::invalid_argument("pcg: dimension mismatch");
    if (cfg.tol <= 0.0 || cfg.max_iter < 1)
        throw std::invalid_argument("pcg: invalid config");
    const auto t0 = std::chrono::steady_clock::now();
    const double bnorm = b.norm();
    SolveReport rep;
    Vector x = x0 ? *x0 : Vector::Zero(a.dim);
    if (bnorm == 0.0) {
        x.setZero();
        rep.converged = true;
        if (report) *report = rep;
        return x;
    }
    Vector r = x0 ? Vector(b - a.apply(x)) : b;
    Vector z = m_inv.apply(r);
    Vector p = z;
    double rz = r.dot(z);
    double rel = r.norm() / bnorm;
    if (cfg.record_history) rep.residual_history.push_back(rel);
    int it = 0;
    while (rel > cfg.tol && it < cfg.max_iter) {
        Vector ap = a.apply(p);
        const double pap = p.dot(ap);
        if (!std::isfinite(pap))
            throw std::runtime_error("pcg: non-finite value encountered");
        if (pap <= 0.0)
            throw std::runtime_error("pcg: operator not positive definite (p'Ap <= 0)");
        const double alpha = rz / pap;
        x += alpha * p;
        r -= alpha * ap;
        ++it;
        rel = r.norm() / bnorm;
        if (cfg.record_history) rep.residual_history.push_back(rel);
        if (rel <= cfg.tol) break;
        z = m_inv.apply(r);
        const double rz_new = r.dot(z);
        p = z + (rz_new / rz) * p;
        rz = rz_new;
    }
    rep.iterations = it;
    rep.relative_residual = rel;
    rep.converged = rel <= cfg.tol;
    rep.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (report) *report = rep;
    return x;
}

/// Dense SPD solve via Cholesky; throws if the factorization fails.
inline Matrix cholesky_solve(const Matrix& a, const Matrix& b) {
    Eigen::LLT<Matrix> llt(a);
    if (llt.info() != Eigen::Success)
        throw std::runtime_error("cholesky_solve: matrix is not positive definite");
    return llt.solve(b);
}

/// Dense square solve via partial-pivot LU.
inline Vector lu_solve(const Matrix& a, const Vector& b) {
    Eigen::PartialPivLU<Matrix> lu(a);
    Vector x = lu.solve(b);
    const double res = (a * x - b).norm();
    if (!std::isfinite(res) || res > 1e-6 * std::max(b.norm(), 1.0))
        throw std::runtime_error("lu_solve: matrix is singular or severely ill-conditioned");
    return x;
}

}  // namespace cphifi
