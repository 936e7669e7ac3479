#pragma once

#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "cphifi/matrix_ops.hpp"

namespace cphifi {

/// Dense d-way tensor stored column-major (first index varies fastest).
/// vec() of the tensor is exactly the storage order.
class DenseTensor {
  public:
    DenseTensor() = default;

    explicit DenseTensor(std::vector<Eigen::Index> shape)
        : shape_(std::move(shape)), data_(num_entries(shape_), 0.0) {}

    DenseTensor(std::vector<Eigen::Index> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (static_cast<Eigen::Index>(data_.size()) != num_entries(shape_))
            throw std::invalid_argument("DenseTensor: data length does not match shape");
    }

    static Eigen::Index num_entries(const std::vector<Eigen::Index>& shape) {
        if (shape.empty()) throw std::invalid_argument("DenseTensor: empty shape");
        Eigen::Index n = 1;
        for (auto s : shape) {
            if (s <= 0) throw std::invalid_argument("DenseTensor: nonpositive mode size");
            n *= s;
        }
        return n;
    }

    int order() const { return static_cast<int>(shape_.size()); }
    const std::vector<Eigen::Index>& shape() const { return shape_; }
    Eigen::Index size() const { return static_cast<Eigen::Index>(data_.size()); }
    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    Eigen::Index linear_index(const std::vector<Eigen::Index>& idx) const {
        Eigen::Index lin = 0, stride = 1;
        for (int k = 0; k < order(); ++k) {
            lin += idx[k] * stride;
            stride *= shape_[k];
        }
        return lin;
    }

    double operator()(const std::vector<Eigen::Index>& idx) const {
        return data_[linear_index(idx)];
    }
    double& operator()(const std::vector<Eigen::Index>& idx) {
        return data_[linear_index(idx)];
    }

    Eigen::Map<const Vector> vec() const {
        return Eigen::Map<const Vector>(data_.data(), size());
    }

    double norm() const { return vec().norm(); }

  private:
    std::vector<Eigen::Index> shape_;
    std::vector<double> data_;
};

/// Mode-k unfolding, n_k x (N/n_k). Column index is the column-major
/// linearization of the remaining indices in increasing mode order, so
/// that unfold(full(model), k) = A_k * Z_k' with Z_k the Khatri-Rao
/// product of the other factors in descending mode order.
inline Matrix unfold(const DenseTensor& t, int k) {
    const int d = t.order();
    if (k < 0 || k >= d) throw std::out_of_range("unfold: mode out of range");
    const auto& shape = t.shape();
    const Eigen::Index n = shape[k];
    const Eigen::Index m = t.size() / n;
    Matrix out(n, m);
    // stride of mode k in the linearized storage
    Eigen::Index stride_k = 1;
    for (int i = 0; i < k; ++i) stride_k *= shape[i];
    const double* src = t.data();
    Eigen::Index col = 0;
    // iterate over remaining indices, lower modes fastest
    std::vector<Eigen::Index> idx(d, 0);
    for (Eigen::Index j = 0; j < m; ++j, ++col) {
        Eigen::Index base = 0, stride = 1;
        for (int i = 0; i < d; ++i) {
            if (i == k) { stride *= shape[i]; continue; }
            base += idx[i] * stride;
            stride *= shape[i];
        }
        for (Eigen::Index row = 0; row < n; ++row)
            out(row, col) = src[base + row * stride_k];
        for (int i = 0; i < d; ++i) {
            if (i == k) continue;
            if (++idx[i] < shape[i]) break;
            idx[i] = 0;
        }
    }
    return out;
}

/// Inverse of unfold: reassembles a tensor of the given shape from its
/// mode-k unfolding.
inline DenseTensor fold(const Matrix& m, int k, const std::vector<Eigen::Index>& shape) {
    const int d = static_cast<int>(shape.size());
    if (k < 0 || k >= d) throw std::out_of_range("fold: mode out of range");
    DenseTensor t(shape);
    const Eigen::Index n = shape[k];
    if (m.rows() != n || m.cols() != t.size() / n)
        throw std::invalid_argument("fold: matrix shape mismatch");
    Eigen::Index stride_k = 1;
    for (int i = 0; i < k; ++i) stride_k *= shape[i];
    double* dst = t.data();
    std::vector<Eigen::Index> idx(d, 0);
    for (Eigen::Index col = 0; col < m.cols(); ++col) {
        Eigen::Index base = 0, stride = 1;
        for (int i = 0; i < d; ++i) {
            if (i == k) { stride *= shape[i]; continue; }
            base += idx[i] * stride;
            stride *= shape[i];
        }
        for (Eigen::Index row = 0; row < n; ++row)
            dst[base + row * stride_k] = m(row, col);
        for (int i = 0; i < d; ++i) {
            if (i == k) continue;
            if (++idx[i] < shape[i]) break;
            idx[i] = 0;
        }
    }
    return t;
}

/// Rank-r CP model in Kruskal form: one n_k x r factor matrix per mode.
struct KruskalModel {
    std::vector<Matrix> factors;

    KruskalModel() = default;
    explicit KruskalModel(std::vector<Matrix> f) : factors(std::move(f)) {
        if (factors.empty()) throw std::invalid_argument("KruskalModel: no factors");
        const Eigen::Index r = rank();
        for (const auto& a : factors)
            if (a.cols() != r) throw std::invalid_argument("KruskalModel: rank mismatch");
    }

    int order() const { return static_cast<int>(factors.size()); }
    Eigen::Index rank() const { return factors.front().cols(); }
    std::vector<Eigen::Index> shape() const {
        std::vector<Eigen::Index> s;
        for (const auto& a : factors) s.push_back(a.rows());
        return s;
    }
};

/// Khatri-Rao product of all factors except mode k, in descending mode
/// order (A_d, ..., A_{k+1}, A_{k-1}, ..., A_1).
inline Matrix khatri_rao_excluding(const KruskalModel& model, int k) {
    std::vector<Matrix> mats;
    for (int i = model.order() - 1; i >= 0; --i)
        if (i != k) mats.push_back(model.factors[i]);
    return khatri_rao(mats);
}

inline DenseTensor kruskal_full(const KruskalModel& model) {
    const auto shape = model.shape();
    Matrix unf = model.factors[0] * khatri_rao_excluding(model, 0).transpose();
    return fold(unf, 0, shape);
}

/// Matricized-tensor times Khatri-Rao product: unfold(t,k) * Z_k.
inline Matrix mttkrp(const DenseTensor& t, const KruskalModel& model, int k) {
    const int d = t.order();
    if (d != model.order()) throw std::invalid_argument("mttkrp: order mismatch");
    const auto& shape = t.shape();
    for (int i = 0; i < d; ++i)
        if (i != k && shape[i] != model.factors[i].rows())
            throw std::invalid_argument("mttkrp: shape mismatch");
    return unfold(t, k) * khatri_rao_excluding(model, k);
}

/// Gram matrix V = Z_k' Z_k via the Hadamard product of the per-mode
/// factor Grams A_i' A_i over i != k.
inline Matrix gram_khatri_rao(const KruskalModel& model, int k) {
    const Eigen::Index r = model.rank();
    Matrix v = Matrix::Ones(r, r);
    for (int i = 0; i < model.order(); ++i) {
        if (i == k) continue;
        v = v.cwiseProduct(model.factors[i].transpose() * model.factors[i]);
    }
    return v;
}

}  // namespace cphifi
