#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <vector>

namespace cphifi {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Kronecker product: block (i,j) of the result is a(i,j)*b.
inline Matrix kronecker(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j)
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    return out;
}

/// Columnwise Kronecker product of the given matrices, in the given order.
/// All inputs must share the same column count. In each column, the row
/// index of the last matrix in the list varies fastest.
inline Matrix khatri_rao(const std::vector<Matrix>& mats) {
    if (mats.empty()) throw std::invalid_argument("khatri_rao: empty input");
    const Eigen::Index r = mats.front().cols();
    Eigen::Index rows = 1;
    for (const auto& m : mats) {
        if (m.cols() != r) throw std::invalid_argument("khatri_rao: column count mismatch");
        rows *= m.rows();
    }
    Matrix out = mats.front();
    for (std::size_t t = 1; t < mats.size(); ++t) {
        const Matrix& m = mats[t];
        Matrix next(out.rows() * m.rows(), r);
        for (Eigen::Index j = 0; j < r; ++j)
            for (Eigen::Index i = 0; i < out.rows(); ++i)
                next.col(j).segment(i * m.rows(), m.rows()) = out(i, j) * m.col(j);
        out = std::move(next);
    }
    return out;
}

inline Matrix hadamard(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw std::invalid_argument("hadamard: shape mismatch");
    return a.cwiseProduct(b);
}

}  // namespace cphifi
