#pragma once

#include <Eigen/Dense>
#include <atomic>
#include <cmath>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <variant>
#include <vector>

#include "cphifi/matrix_ops.hpp"

namespace cphifi {

/// Squared-exponential kernel K(i,j) = exp(-(x_i - x_j)^2 / (2 sigma^2)).
inline Matrix gaussian_kernel(const std::vector<double>& points, double sigma) {
    if (sigma <= 0.0) throw std::invalid_argument("gaussian_kernel: sigma must be positive");
    const Eigen::Index n = static_cast<Eigen::Index>(points.size());
    Matrix k(n, n);
    const double inv = 1.0 / (2.0 * sigma * sigma);
    for (Eigen::Index i = 0; i < n; ++i) {
        k(i, i) = 1.0;
        for (Eigen::Index j = 0; j < i; ++j) {
            const double d = points[i] - points[j];
            k(i, j) = k(j, i) = std::exp(-d * d * inv);
        }
    }
    return k;
}

struct SymEig {
    Matrix u;   // orthogonal eigenvectors
    Vector d;   // eigenvalues, clamped at zero
};

/// Symmetric eigendecomposition with eigenvalues clamped at zero (the
/// kernel is PSD in exact arithmetic; roundoff-negative eigenvalues would
/// otherwise poison the shifted denominators downstream).
inline SymEig sym_eig(const Matrix& k) {
    const double scale = k.cwiseAbs().maxCoeff();
    if ((k - k.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(scale, 1.0))
        throw std::invalid_argument("sym_eig: matrix is not symmetric");
    Eigen::SelfAdjointEigenSolver<Matrix> es(k);
    if (es.info() != Eigen::Success)
        throw std::runtime_error("sym_eig: eigendecomposition failed");
    SymEig out{es.eigenvectors(), es.eigenvalues().cwiseMax(0.0)};
    return out;
}

/// An infinite-dimensional mode: design points, bandwidth, kernel matrix,
/// and its one-time eigendecomposition shared across all outer iterations.
class RkhsMode {
  public:
    RkhsMode(std::vector<double> design_points, double sigma, double lambda)
        : points_(std::move(design_points)),
          sigma_(sigma),
          lambda_(lambda),
          kernel_(gaussian_kernel(points_, sigma)) {
        if (lambda < 0.0) throw std::invalid_argument("RkhsMode: lambda must be nonnegative");
    }

    /// Design points 1..n on the integer grid.
    static RkhsMode regular_grid(Eigen::Index n, double sigma, double lambda) {
        std::vector<double> pts(n);
        for (Eigen::Index i = 0; i < n; ++i) pts[i] = static_cast<double>(i + 1);
        return RkhsMode(std::move(pts), sigma, lambda);
    }

    Eigen::Index size() const { return kernel_.rows(); }
    double sigma() const { return sigma_; }
    double lambda() const { return lambda_; }
    const std::vector<double>& points() const { return points_; }
    const Matrix& kernel() const { return kernel_; }

    /// Cached eigendecomposition, computed at most once.
    const SymEig& eig() const {
        std::call_once(cache_->once, [this] {
            cache_->eig = std::make_unique<SymEig>(sym_eig(kernel_));
            ++cache_->count;
        });
        return *cache_->eig;
    }

    /// Number of factorizations performed so far (0 or 1).
    int eig_factorization_count() const { return cache_->count.load(); }

  private:
    // heap-allocated so the mode stays movable despite the once_flag
    struct EigCache {
        std::once_flag once;
        std::unique_ptr<SymEig> eig;
        std::atomic<int> count{0};
    };

    std::vector<double> points_;
    double sigma_;
    double lambda_;
    Matrix kernel_;
    mutable std::unique_ptr<EigCache> cache_ = std::make_unique<EigCache>();
};

/// A mode is either a plain finite-dimensional factor or an RKHS mode.
struct FiniteMode {};
using ModeKind = std::variant<FiniteMode, std::shared_ptr<RkhsMode>>;

inline bool is_infinite(const ModeKind& m) {
    return std::holds_alternative<std::shared_ptr<RkhsMode>>(m);
}
inline const std::shared_ptr<RkhsMode>& rkhs(const ModeKind& m) {
    return std::get<std::shared_ptr<RkhsMode>>(m);
}

}  // namespace cphifi
