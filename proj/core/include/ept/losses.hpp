#pragma once

#include <cmath>
#include <vector>

#include "ept/errors.hpp"
#include "ept/linalg.hpp"

namespace ept {

// logits_i = -R_i / tau; argmax logit == argmin residual.
template <class S>
VecX<S> logits_from_residuals(const VecX<S>& residuals, S tau) {
    if (!(tau > S(0))) throw ValidationError("nep_logits: tau must be > 0");
    return -residuals / tau;
}

// -log softmax(logits)[label], max-subtraction stabilized.
template <class S>
S ce_loss_t(const VecX<S>& logits, Eigen::Index label) {
    if (label < 0 || label >= logits.size()) throw ValidationError("ce_loss: label out of range");
    const S m = logits.maxCoeff();
    S sum = S(0);
    for (Eigen::Index i = 0; i < logits.size(); ++i) sum += std::exp(logits[i] - m);
    return -(logits[label] - m - std::log(sum));
}

// Inter-class discrimination penalty over the rows of `prototypes`,
// skipping `exclude_row`:
//   (1/|P|) * 1 / (sum_j ||f - p_j|| + eps)
// 0 when no negatives exist.
template <class S>
S inter_loss_rows_t(const VecX<S>& f, const MatX<S>& prototypes, Eigen::Index exclude_row, S eps) {
    const Eigen::Index n_neg = prototypes.rows() - (exclude_row >= 0 ? 1 : 0);
    if (n_neg <= 0) return S(0);
    S sum = S(0);
    for (Eigen::Index j = 0; j < prototypes.rows(); ++j) {
        if (j == exclude_row) continue;
        sum += (f - prototypes.row(j).transpose()).norm();
    }
    return S(1) / (S(n_neg) * (sum + eps));
}

double ce_loss(const Vec& logits, Eigen::Index label);
Vec nep_logits_vec(const Vec& residuals, double tau);
// List-of-negatives form of the inter-class penalty.
double inter_loss(const Vec& f, const std::vector<Vec>& negatives, double eps);

}  // namespace ept
