#pragma once

#include <cmath>
#include <random>
#include <set>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "cphifi/tensor.hpp"

namespace cphifi {

/// The set Omega of known entries: multi-indices plus observed values.
/// Stands in for the selection matrix S, which is never materialized.
/// Per-mode index buckets (all l with the same mode-k index) are built at
/// construction since the scatter stage walks them every solver iteration.
class ObservationSet {
  public:
    ObservationSet(std::vector<Eigen::Index> shape,
                   std::vector<std::vector<Eigen::Index>> indices,
                   std::vector<double> values)
        : shape_(std::move(shape)), indices_(std::move(indices)), values_(std::move(values)) {
        if (indices_.size() != values_.size())
            throw std::invalid_argument("ObservationSet: index/value count mismatch");
        const int d = static_cast<int>(shape_.size());
        std::set<Eigen::Index> seen;
        Eigen::Index n_total = DenseTensor::num_entries(shape_);
        for (const auto& idx : indices_) {
            if (static_cast<int>(idx.size()) != d)
                throw std::invalid_argument("ObservationSet: index arity mismatch");
            Eigen::Index lin = 0, stride = 1;
            for (int k = 0; k < d; ++k) {
                if (idx[k] < 0 || idx[k] >= shape_[k])
                    throw std::invalid_argument("ObservationSet: index out of range");
                lin += idx[k] * stride;
                stride *= shape_[k];
            }
            if (!seen.insert(lin).second)
                throw std::invalid_argument("ObservationSet: duplicate index");
        }
        (void)n_total;
        buckets_.resize(d);
        mode_idx_.resize(d);
        for (int k = 0; k < d; ++k) {
            buckets_[k].assign(shape_[k], {});
            mode_idx_[k].resize(indices_.size());
            for (std::size_t l = 0; l < indices_.size(); ++l) {
                buckets_[k][indices_[l][k]].push_back(static_cast<Eigen::Index>(l));
                mode_idx_[k][l] = indices_[l][k];
            }
        }
    }

    const std::vector<Eigen::Index>& shape() const { return shape_; }
    Eigen::Index num_obs() const { return static_cast<Eigen::Index>(values_.size()); }
    Eigen::Index num_entries() const { return DenseTensor::num_entries(shape_); }
    double density() const {
        return static_cast<double>(num_obs()) / static_cast<double>(num_entries());
    }
    bool aligned() const { return num_obs() == num_entries(); }

    const std::vector<std::vector<Eigen::Index>>& indices() const { return indices_; }
    const std::vector<double>& values() const { return values_; }
    // flat per-mode layout: streaming over l touches contiguous memory
    Eigen::Index index(Eigen::Index l, int k) const { return mode_idx_[k][l]; }

    /// All observation positions l with mode-k index i.
    const std::vector<Eigen::Index>& bucket(int k, Eigen::Index i) const {
        return buckets_[k][i];
    }

  private:
    std::vector<Eigen::Index> shape_;
    std::vector<std::vector<Eigen::Index>> indices_;
    std::vector<double> values_;
    std::vector<std::vector<Eigen::Index>> mode_idx_;
    std::vector<std::vector<std::vector<Eigen::Index>>> buckets_;
};

/// sqrt of the sum of squared observed values (the Omega-norm).
inline double omega_norm(const ObservationSet& obs) {
    double s = 0.0;
    for (double v : obs.values()) s += v * v;
    return std::sqrt(s);
}

/// Draws q distinct multi-indices uniformly without replacement and reads
/// their values from the source tensor. Deterministic per seed.
inline ObservationSet sample_uniform(const DenseTensor& source, Eigen::Index q,
                                     std::uint64_t seed) {
    const Eigen::Index n_total = source.size();
    if (q > n_total) throw std::invalid_argument("sample_uniform: q exceeds tensor size");
    std::mt19937_64 rng(seed);
    // partial Fisher-Yates over [0, N) with a sparse map
    std::unordered_map<Eigen::Index, Eigen::Index> remap;
    std::vector<Eigen::Index> picked(q);
    for (Eigen::Index i = 0; i < q; ++i) {
        std::uniform_int_distribution<Eigen::Index> dist(i, n_total - 1);
        Eigen::Index j = dist(rng);
        auto it_j = remap.find(j);
        Eigen::Index val_j = (it_j == remap.end()) ? j : it_j->second;
        auto it_i = remap.find(i);
        Eigen::Index val_i = (it_i == remap.end()) ? i : it_i->second;
        remap[j] = val_i;
        picked[i] = val_j;
    }
    const int d = source.order();
    const auto& shape = source.shape();
    std::vector<std::vector<Eigen::Index>> indices(q, std::vector<Eigen::Index>(d));
    std::vector<double> values(q);
    for (Eigen::Index l = 0; l < q; ++l) {
        Eigen::Index lin = picked[l];
        values[l] = source.data()[lin];
        for (int k = 0; k < d; ++k) {
            indices[l][k] = lin % shape[k];
            lin /= shape[k];
        }
    }
    return ObservationSet(shape, std::move(indices), std::move(values));
}

/// Observation set covering every entry of a dense tensor, in storage order.
inline ObservationSet full_observations(const DenseTensor& t) {
    const int d = t.order();
    const auto& shape = t.shape();
    const Eigen::Index n_total = t.size();
    std::vector<std::vector<Eigen::Index>> indices(n_total, std::vector<Eigen::Index>(d));
    std::vector<double> values(t.data(), t.data() + n_total);
    for (Eigen::Index lin = 0; lin < n_total; ++lin) {
        Eigen::Index rem = lin;
        for (int k = 0; k < d; ++k) {
            indices[lin][k] = rem % shape[k];
            rem /= shape[k];
        }
    }
    return ObservationSet(shape, std::move(indices), std::move(values));
}

/// Zhat: row l is the Hadamard product of the other factors' rows at the
/// l-th observed multi-index, in the same factor order as Z_k.
inline Matrix build_zhat(const KruskalModel& model, int k, const ObservationSet& obs) {
    const int d = model.order();
    const auto mshape = model.shape();
    for (int i = 0; i < d; ++i)
        if (i != k && mshape[i] != obs.shape()[i])
            throw std::invalid_argument("build_zhat: shape mismatch");
    const Eigen::Index q = obs.num_obs();
    const Eigen::Index r = model.rank();
    Matrix zhat = Matrix::Ones(q, r);
    for (int i = 0; i < d; ++i) {
        if (i == k) continue;
        const Matrix& a = model.factors[i];
        for (Eigen::Index l = 0; l < q; ++l)
            zhat.row(l) = zhat.row(l).cwiseProduct(a.row(obs.index(l, i)));
    }
    return zhat;
}

/// Khat: row l is kernel row i_k^(l).
inline Matrix build_khat(const Matrix& kernel, int k, const ObservationSet& obs) {
    const Eigen::Index q = obs.num_obs();
    if (kernel.rows() != obs.shape()[k])
        throw std::invalid_argument("build_khat: kernel size mismatch");
    Matrix khat(q, kernel.cols());
    for (Eigen::Index l = 0; l < q; ++l)
        khat.row(l) = kernel.row(obs.index(l, k));
    return khat;
}

/// Scatter stage: row i of the result accumulates weights[l] * zhat(l,:)
/// over the mode-k bucket of i. With weights = observed values this is the
/// sparse MTTKRP B = T Z (T zero at unknown entries).
inline Matrix sampled_mttkrp(const ObservationSet& obs, const Matrix& zhat, int k,
                             const std::vector<double>& weights) {
    const Eigen::Index q = obs.num_obs();
    if (zhat.rows() != q || static_cast<Eigen::Index>(weights.size()) != q)
        throw std::invalid_argument("sampled_mttkrp: row count mismatch");
    // streams l in storage order; the n x r accumulator stays cache-resident
    Matrix out = Matrix::Zero(obs.shape()[k], zhat.cols());
    for (Eigen::Index l = 0; l < q; ++l)
        out.row(obs.index(l, k)) += weights[l] * zhat.row(l);
    return out;
}

inline Matrix sampled_mttkrp(const ObservationSet& obs, const Matrix& zhat, int k) {
    return sampled_mttkrp(obs, zhat, k, obs.values());
}

/// Gather stage: per-observation dot products xbar_l = xhat(i_k^(l),:) . zhat(l,:).
inline void gather_rows(const Matrix& xhat, const Matrix& zhat,
                        const ObservationSet& obs, int k, std::vector<double>& out) {
    const Eigen::Index q = obs.num_obs();
    if (zhat.rows() != q) throw std::invalid_argument("gather_rows: row count mismatch");
    out.resize(q);
    for (Eigen::Index l = 0; l < q; ++l)
        out[l] = xhat.row(obs.index(l, k)).dot(zhat.row(l));
}

inline std::vector<double> gather_rows(const Matrix& xhat, const Matrix& zhat,
                                       const ObservationSet& obs, int k) {
    std::vector<double> out;
    gather_rows(xhat, zhat, obs, k, out);
    return out;
}

}  // namespace cphifi
