#include "ept/grad_check.hpp"

#include <cmath>
#include <random>
#include <vector>

#include "ept/train_kernels.hpp"

namespace ept {

namespace {

template <class S>
struct ParamRef {
    S* ptr;
    std::string name;
};

// Enumerates the trainable scalars of `prob` and the matching entries of
// `grads` in the same order.
template <class S>
void enumerate_params(StageProblemT<S>& prob, GradientsT<S>& grads,
                      std::vector<ParamRef<S>>& params, std::vector<S*>& grad_ptrs) {
    params.clear();
    grad_ptrs.clear();
    for (Eigen::Index c = 0; c < prob.class_offsets.rows(); ++c)
        for (Eigen::Index k = 0; k < prob.class_offsets.cols(); ++k) {
            params.push_back({&prob.class_offsets(c, k),
                              "class_offset[" + std::to_string(prob.class_ids[std::size_t(c)]) +
                                  "][" + std::to_string(k) + "]"});
            grad_ptrs.push_back(&grads.class_offsets(c, k));
        }
    for (Eigen::Index k = 0; k < prob.task_offset.size(); ++k) {
        params.push_back({&prob.task_offset[k], "task_offset[" + std::to_string(k) + "]"});
        grad_ptrs.push_back(&grads.task_offset[k]);
    }
    for (std::size_t pi = 0; pi < prob.projectors.size(); ++pi) {
        auto& p = prob.projectors[pi];
        auto& g = grads.projectors[pi];
        const std::string tag = "mlp[" + std::to_string(pi) + "]";
        for (Eigen::Index r = 0; r < p.w1.rows(); ++r)
            for (Eigen::Index c = 0; c < p.w1.cols(); ++c) {
                params.push_back({&p.w1(r, c), tag + ".w1(" + std::to_string(r) + "," +
                                                   std::to_string(c) + ")"});
                grad_ptrs.push_back(&g.w1(r, c));
            }
        for (Eigen::Index r = 0; r < p.b1.size(); ++r) {
            params.push_back({&p.b1[r], tag + ".b1[" + std::to_string(r) + "]"});
            grad_ptrs.push_back(&g.b1[r]);
        }
        for (Eigen::Index r = 0; r < p.w2.rows(); ++r)
            for (Eigen::Index c = 0; c < p.w2.cols(); ++c) {
                params.push_back({&p.w2(r, c), tag + ".w2(" + std::to_string(r) + "," +
                                                   std::to_string(c) + ")"});
                grad_ptrs.push_back(&g.w2(r, c));
            }
        for (Eigen::Index r = 0; r < p.b2.size(); ++r) {
            params.push_back({&p.b2[r], tag + ".b2[" + std::to_string(r) + "]"});
            grad_ptrs.push_back(&g.b2[r]);
        }
    }
}

// Central differences at step h are only valid away from the rectifier,
// |rho| and ||r|| breakpoints, and the 1/m, 1/n curvature must stay small
// enough that O(h^2) truncation sits well under the tolerance. Margins are
// in units of h.
template <class S>
bool instance_is_smooth(const StageProblemT<S>& prob, const StageBatchT<S>& batch,
                        const LossParamsT<S>& hp, S h) {
    const S kink_margin = S(50) * h;   // |pre1|, |rho|
    const S curve_margin = S(300) * h;  // ||r||
    const StageForward<S> fw = stage_forward(prob, hp, true);
    for (const auto& pre : fw.pre1)
        for (Eigen::Index i = 0; i < pre.size(); ++i)
            if (std::abs(pre[i]) < kink_margin) return false;
    const MatX<S> rho_all = fw.llt.solve(fw.k * batch.features.transpose());
    for (Eigen::Index b = 0; b < batch.features.rows(); ++b) {
        for (Eigen::Index i = 0; i < fw.k.rows(); ++i) {
            const S rho = rho_all(i, b);
            if (std::abs(rho) < kink_margin) return false;
            const S n = (batch.features.row(b) - rho * fw.k.row(i)).norm();
            if (n < curve_margin) return false;
        }
    }
    return true;
}

template <class S>
GradCheckReport check_impl(const GradCheckOptions& opts) {
    const S h = S(opts.step > 0 ? opts.step : (opts.float32 ? 1e-2 : 1e-3));
    const double tol = opts.tolerance > 0 ? opts.tolerance : (opts.float32 ? 1e-2 : 1e-4);
    const S rel_floor = S(opts.float32 ? 1e-2 : 1e-8);

    LossParamsT<S> hp;  // defaults: lambda_reg 0.3, eps 1e-8, tau 1, lambda_inter 0.1, NEP

    GradCheckReport report;
    report.tolerance = tol;
    report.step = double(h);
    report.float32 = opts.float32;

    std::mt19937_64 rng(opts.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto draw = [&](double scale) { return S(scale * gauss(rng)); };

    const Eigen::Index cur = opts.current_classes;
    const Eigen::Index frz = opts.total_classes - cur;
    if (frz < 0 || cur < 1) throw ValidationError("grad check: bad class counts");

    for (int trial = 0; trial < opts.trials; ++trial) {
        StageProblemT<S> prob;
        StageBatchT<S> batch;
        bool smooth = false;
        for (int attempt = 0; attempt < 200 && !smooth; ++attempt) {
            prob = StageProblemT<S>{};
            prob.sharing = trial % 2 == 0 ? ProjectorSharing::PerClass : ProjectorSharing::PerTask;
            prob.frozen_ids.clear();
            prob.class_ids.clear();
            for (Eigen::Index i = 0; i < frz; ++i) prob.frozen_ids.push_back(std::uint32_t(i));
            for (Eigen::Index i = 0; i < cur; ++i)
                prob.class_ids.push_back(std::uint32_t(frz + i));

            prob.frozen_rows.resize(frz, opts.d_f);
            for (Eigen::Index i = 0; i < frz; ++i)
                for (Eigen::Index k = 0; k < opts.d_f; ++k) prob.frozen_rows(i, k) = draw(1.0);
            prob.raw.resize(cur, opts.d_f);
            prob.class_offsets.resize(cur, opts.d_f);
            for (Eigen::Index i = 0; i < cur; ++i)
                for (Eigen::Index k = 0; k < opts.d_f; ++k) {
                    prob.raw(i, k) = draw(1.0);
                    prob.class_offsets(i, k) = draw(0.3);
                }
            prob.task_offset.resize(opts.d_t);
            for (Eigen::Index k = 0; k < opts.d_t; ++k) prob.task_offset[k] = draw(1.0);

            const std::size_t n_proj =
                prob.sharing == ProjectorSharing::PerClass ? std::size_t(cur) : 1u;
            prob.projectors.resize(n_proj);
            for (auto& p : prob.projectors) {
                p.w1.resize(opts.d_h, opts.d_t);
                p.w2.resize(opts.d_f, opts.d_h);
                p.b1.resize(opts.d_h);
                p.b2.resize(opts.d_f);
                const double bw1 = 1.0 / std::sqrt(double(opts.d_t));
                const double bw2 = 1.0 / std::sqrt(double(opts.d_h));
                for (Eigen::Index r = 0; r < p.w1.rows(); ++r)
                    for (Eigen::Index c = 0; c < p.w1.cols(); ++c) p.w1(r, c) = draw(bw1);
                for (Eigen::Index r = 0; r < p.b1.size(); ++r) p.b1[r] = draw(0.5);
                for (Eigen::Index r = 0; r < p.w2.rows(); ++r)
                    for (Eigen::Index c = 0; c < p.w2.cols(); ++c) p.w2(r, c) = draw(bw2);
                for (Eigen::Index r = 0; r < p.b2.size(); ++r) p.b2[r] = draw(0.3);
            }

            batch.features.resize(opts.batch, opts.d_f);
            batch.label_rows.resize(std::size_t(opts.batch));
            std::uniform_int_distribution<Eigen::Index> pick(0, cur - 1);
            for (Eigen::Index b = 0; b < opts.batch; ++b) {
                const Eigen::Index local = pick(rng);
                batch.label_rows[std::size_t(b)] = frz + local;  // merged layout: frozen first
                for (Eigen::Index k = 0; k < opts.d_f; ++k)
                    batch.features(b, k) = prob.raw(local, k) + draw(0.5);
            }
            smooth = instance_is_smooth(prob, batch, hp, h);
        }
        if (!smooth) throw NumericError("grad check: could not sample a smooth instance");

        GradientsT<S> grads = GradientsT<S>::zeros_like(prob);
        stage_loss_backward<S>(prob, batch, hp, &grads);

        std::vector<ParamRef<S>> params;
        std::vector<S*> grad_ptrs;
        enumerate_params(prob, grads, params, grad_ptrs);

        for (std::size_t pi = 0; pi < params.size(); ++pi) {
            S* theta = params[pi].ptr;
            const S saved = *theta;
            *theta = saved + h;
            const S up = stage_loss_backward<S>(prob, batch, hp, nullptr).total;
            *theta = saved - h;
            const S down = stage_loss_backward<S>(prob, batch, hp, nullptr).total;
            *theta = saved;

            const double fd = (double(up) - double(down)) / (2.0 * double(h));
            const double an = double(*grad_ptrs[pi]);
            const double rel = std::abs(an - fd) /
                               std::max({std::abs(an), std::abs(fd), double(rel_floor)});
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_param =
                    "trial " + std::to_string(trial) + ": " + params[pi].name;
            }
        }
        ++report.trials_run;
    }
    report.passed = report.max_rel_err <= tol;
    return report;
}

}  // namespace

GradCheckReport run_gradient_check(const GradCheckOptions& opts) {
    if (opts.trials < 1) throw ValidationError("grad check: trials must be >= 1");
    return opts.float32 ? check_impl<float>(opts) : check_impl<double>(opts);
}

}  // namespace ept
