#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "cphifi/tensor.hpp"

namespace cphifi {

/// Planted low-rank model with smooth per-mode profiles: each factor
/// column is a Gaussian bump with a seeded random center. Smoothness keeps
/// the factors well inside the range of a Gaussian kernel matrix.
inline KruskalModel synth_smooth_model(const std::vector<Eigen::Index>& shape,
                                       Eigen::Index rank, double bump_width,
                                       std::uint64_t seed) {
    if (rank < 1) throw std::invalid_argument("synth_smooth_model: rank must be >= 1");
    if (bump_width <= 0.0)
        throw std::invalid_argument("synth_smooth_model: bump width must be positive");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<Matrix> factors;
    for (auto n : shape) {
        Matrix a(n, rank);
        for (Eigen::Index j = 0; j < rank; ++j) {
            const double center = 1.0 + unif(rng) * static_cast<double>(n - 1);
            const double scale = 0.5 + unif(rng);
            for (Eigen::Index i = 0; i < n; ++i) {
                const double d = (static_cast<double>(i + 1) - center) / bump_width;
                a(i, j) = scale * std::exp(-0.5 * d * d);
            }
        }
        factors.push_back(std::move(a));
    }
    return KruskalModel(std::move(factors));
}

/// Dense synthetic tensor: the planted model plus i.i.d. Gaussian noise.
/// Deterministic per seed; exactly Kruskal when noise = 0.
inline DenseTensor synth_smooth_tensor(const std::vector<Eigen::Index>& shape,
                                       Eigen::Index rank, double bump_width,
                                       double noise, std::uint64_t seed) {
    DenseTensor t = kruskal_full(synth_smooth_model(shape, rank, bump_width, seed));
    if (noise > 0.0) {
        std::mt19937_64 rng(seed ^ 0xA5A5A5A5A5A5A5A5ULL);
        std::normal_distribution<double> gauss(0.0, noise);
        for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] += gauss(rng);
    }
    return t;
}

}  // namespace cphifi
