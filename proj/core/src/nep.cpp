#include "ept/nep.hpp"

#include <cmath>

namespace ept {

Vec solve_ridge(const Mat& k, const Vec& f, double lambda) {
    return solve_ridge_t<double>(k, f, lambda);
}

Vec residuals(const Mat& k, const Vec& f, const Vec& rho, double eps) {
    return residuals_t<double>(k, f, rho, eps);
}

NepModel::NepModel(Mat prototypes, std::vector<std::uint32_t> class_ids, double lambda_reg,
                   double eps)
    : k_(std::move(prototypes)), ids_(std::move(class_ids)), lambda_(lambda_reg), eps_(eps) {
    if (k_.rows() < 1) throw ValidationError("nep model: at least one prototype required");
    if (!k_.allFinite()) throw ValidationError("nep model: non-finite prototype");
    if (!(lambda_ > 0)) throw ValidationError("nep model: lambda_reg must be > 0");
    if (!(eps_ > 0)) throw ValidationError("nep model: eps must be > 0");
    if (Eigen::Index(ids_.size()) != k_.rows())
        throw ValidationError("nep model: one class id per prototype row required");
    for (std::size_t i = 1; i < ids_.size(); ++i)
        if (ids_[i] <= ids_[i - 1])
            throw ValidationError("nep model: class ids must be strictly ascending");

    Mat gram = k_ * k_.transpose();
    gram.diagonal().array() += lambda_;
    llt_.compute(gram);
    if (llt_.info() != Eigen::Success) throw NumericError("nep model: factorization failed");
}

NepDecision NepModel::classify(const Vec& f) const {
    if (f.size() != k_.cols()) throw ValidationError("nep classify: dimension mismatch");
    if (!f.allFinite()) throw ValidationError("nep classify: non-finite query");
    NepDecision d;
    d.coefficients = llt_.solve(k_ * f);
    d.residuals = residuals_t<double>(k_, f, d.coefficients, eps_);
    d.predicted_class = ids_[std::size_t(argmin_with_ties<double>(d.residuals))];
    return d;
}

std::vector<NepDecision> NepModel::classify_batch(const Mat& queries_rows) const {
    if (queries_rows.cols() != k_.cols())
        throw ValidationError("nep classify: dimension mismatch");
    if (!queries_rows.allFinite()) throw ValidationError("nep classify: non-finite query");
    const Mat coefs = llt_.solve(k_ * queries_rows.transpose());  // C x B
    std::vector<NepDecision> out(std::size_t(queries_rows.rows()));
    for (Eigen::Index b = 0; b < queries_rows.rows(); ++b) {
        NepDecision& d = out[std::size_t(b)];
        d.coefficients = coefs.col(b);
        d.residuals =
            residuals_t<double>(k_, queries_rows.row(b).transpose(), d.coefficients, eps_);
        d.predicted_class = ids_[std::size_t(argmin_with_ties<double>(d.residuals))];
    }
    return out;
}

Vec NepModel::logits(const Vec& f, double tau) const {
    if (!(tau > 0)) throw ValidationError("nep logits: tau must be > 0");
    return -classify(f).residuals / tau;
}

Eigen::Index classify_metric(const Mat& prototypes, const Vec& f, DistanceMetric metric) {
    if (prototypes.rows() < 1) throw ValidationError("classify_metric: no prototypes");
    if (prototypes.cols() != f.size())
        throw ValidationError("classify_metric: dimension mismatch");

    Vec score(prototypes.rows());
    switch (metric) {
        case DistanceMetric::Euclidean:
            for (Eigen::Index i = 0; i < prototypes.rows(); ++i)
                score[i] = (f.transpose() - prototypes.row(i)).norm();
            break;
        case DistanceMetric::SquaredEuclidean:
            for (Eigen::Index i = 0; i < prototypes.rows(); ++i)
                score[i] = (f.transpose() - prototypes.row(i)).squaredNorm();
            break;
        case DistanceMetric::Cosine: {
            const double fn = f.norm();
            if (fn == 0) throw ValidationError("classify_metric: zero-norm query under cosine");
            for (Eigen::Index i = 0; i < prototypes.rows(); ++i) {
                const double pn = prototypes.row(i).norm();
                if (pn == 0)
                    throw ValidationError("classify_metric: zero-norm prototype under cosine");
                score[i] = -prototypes.row(i).dot(f) / (pn * fn);  // argmax similarity
            }
            break;
        }
    }
    return argmin_with_ties<double>(score);
}

}  // namespace ept
