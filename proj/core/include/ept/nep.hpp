#pragma once

#include <Eigen/Cholesky>

#include <cstdint>
#include <vector>

#include "ept/errors.hpp"
#include "ept/linalg.hpp"

namespace ept {

// rho* = (K K^T + lambda I)^{-1} K f through an SPD factorization of the
// C x C Gram matrix (C << d_f, so this is the cheap side of the normal
// equations). Never forms an explicit inverse.
template <class S>
VecX<S> solve_ridge_t(const MatX<S>& k, const VecX<S>& f, S lambda) {
    if (!(lambda > S(0))) throw ValidationError("solve_ridge: lambda must be > 0");
    if (k.cols() != f.size()) throw ValidationError("solve_ridge: dimension mismatch");
    if (!k.allFinite() || !f.allFinite()) throw ValidationError("solve_ridge: non-finite input");
    MatX<S> gram = k * k.transpose();
    gram.diagonal().array() += lambda;
    Eigen::LLT<MatX<S>> llt(gram);
    if (llt.info() != Eigen::Success) throw NumericError("solve_ridge: factorization failed");
    return llt.solve(k * f);
}

// Per-class normalized reconstruction residual:
//   R_i = ||f - rho_i K_i|| / (|rho_i| + eps)
// using only class i's own coefficient and prototype row.
template <class S>
VecX<S> residuals_t(const MatX<S>& k, const VecX<S>& f, const VecX<S>& rho, S eps) {
    if (eps < S(0)) throw ValidationError("residuals: eps must be >= 0");
    if (rho.size() != k.rows() || f.size() != k.cols())
        throw ValidationError("residuals: dimension mismatch");
    VecX<S> r(k.rows());
    for (Eigen::Index i = 0; i < k.rows(); ++i) {
        const S num = (f - rho[i] * k.row(i).transpose()).norm();
        r[i] = num / (std::abs(rho[i]) + eps);
    }
    return r;
}

Vec solve_ridge(const Mat& k, const Vec& f, double lambda);
Vec residuals(const Mat& k, const Vec& f, const Vec& rho, double eps);

struct NepDecision {
    Vec coefficients;
    Vec residuals;
    std::uint32_t predicted_class = 0;
};

// Immutable classifier over a stacked calibrated-prototype matrix. One Gram
// factorization at construction is reused for every query.
class NepModel {
public:
    NepModel(Mat prototypes, std::vector<std::uint32_t> class_ids, double lambda_reg, double eps);

    Eigen::Index class_count() const { return k_.rows(); }
    Eigen::Index dim() const { return k_.cols(); }
    const Mat& prototypes() const { return k_; }
    const std::vector<std::uint32_t>& class_ids() const { return ids_; }
    double lambda_reg() const { return lambda_; }
    double eps() const { return eps_; }

    NepDecision classify(const Vec& f) const;
    // One factorized solve against many right-hand sides.
    std::vector<NepDecision> classify_batch(const Mat& queries_rows) const;
    // -R_i / tau
    Vec logits(const Vec& f, double tau) const;

private:
    Mat k_;
    std::vector<std::uint32_t> ids_;
    double lambda_;
    double eps_;
    Eigen::LLT<Mat> llt_;  // of K K^T + lambda I
};

enum class DistanceMetric { Euclidean, SquaredEuclidean, Cosine };

// Argmin distance (argmax similarity for cosine) over prototype rows;
// returns the row index, ties to the lowest one.
Eigen::Index classify_metric(const Mat& prototypes, const Vec& f, DistanceMetric metric);

}  // namespace ept
