#include "ept/losses.hpp"

namespace ept {

double ce_loss(const Vec& logits, Eigen::Index label) { return ce_loss_t<double>(logits, label); }

Vec nep_logits_vec(const Vec& residuals, double tau) {
    return logits_from_residuals<double>(residuals, tau);
}

double inter_loss(const Vec& f, const std::vector<Vec>& negatives, double eps) {
    if (!(eps > 0)) throw ValidationError("inter_loss: eps must be > 0");
    if (negatives.empty()) return 0.0;
    double sum = 0.0;
    for (const Vec& p : negatives) {
        if (p.size() != f.size()) throw ValidationError("inter_loss: dimension mismatch");
        sum += (f - p).norm();
    }
    return 1.0 / (double(negatives.size()) * (sum + eps));
}

}  // namespace ept
