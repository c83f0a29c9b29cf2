#pragma once

#include <Eigen/Cholesky>

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "ept/calibration.hpp"
#include "ept/errors.hpp"
#include "ept/linalg.hpp"
#include "ept/losses.hpp"

namespace ept {

enum class LogitMode { Nep, Distance };

template <class S>
struct LossParamsT {
    S lambda_reg = S(0.3);
    S eps = S(1e-8);
    S tau = S(1);
    S lambda_inter = S(0.1);
    LogitMode logits = LogitMode::Nep;
};

// One stage's training view: frozen past prototypes and the current raw
// prototypes are constants; offsets and projectors are the trainables.
template <class S>
struct StageProblemT {
    MatX<S> frozen_rows;                    // F x d_f
    std::vector<std::uint32_t> frozen_ids;  // ascending
    MatX<S> raw;                            // C_t x d_f
    MatX<S> class_offsets;                  // C_t x d_f
    VecX<S> task_offset;                    // d_t
    std::vector<ProjectorT<S>> projectors;  // size C_t (per-class) or 1 (shared)
    std::vector<std::uint32_t> class_ids;   // ascending
    ProjectorSharing sharing = ProjectorSharing::PerClass;
    bool train_class_offsets = true;
    bool train_task = true;

    Eigen::Index current_count() const { return raw.rows(); }
    Eigen::Index dim() const { return raw.cols(); }
    bool has_trainables() const { return train_class_offsets || train_task; }

    std::size_t projector_index(Eigen::Index local) const {
        return sharing == ProjectorSharing::PerClass ? std::size_t(local) : 0u;
    }

    // Frozen and current ids merged ascending = the class order of K.
    std::vector<std::uint32_t> merged_ids() const {
        std::vector<std::uint32_t> out(frozen_ids.size() + class_ids.size());
        std::merge(frozen_ids.begin(), frozen_ids.end(), class_ids.begin(), class_ids.end(),
                   out.begin());
        return out;
    }
};

struct RowLayout {
    std::vector<Eigen::Index> frozen_to_row;
    std::vector<Eigen::Index> current_to_row;
    Eigen::Index rows = 0;
};

template <class S>
RowLayout merged_layout(const StageProblemT<S>& p) {
    RowLayout lo;
    lo.frozen_to_row.resize(p.frozen_ids.size());
    lo.current_to_row.resize(p.class_ids.size());
    std::size_t i = 0, j = 0;
    Eigen::Index row = 0;
    while (i < p.frozen_ids.size() || j < p.class_ids.size()) {
        const bool take_frozen = j == p.class_ids.size() ||
                                 (i < p.frozen_ids.size() && p.frozen_ids[i] < p.class_ids[j]);
        if (take_frozen)
            lo.frozen_to_row[i++] = row++;
        else
            lo.current_to_row[j++] = row++;
    }
    lo.rows = row;
    return lo;
}

// Cached forward state shared by every sample of a batch: the assembled
// prototype matrix, projector activations, and (NEP mode) the Gram
// factorization.
template <class S>
struct StageForward {
    MatX<S> k;  // C x d_f, merged ascending class ids
    RowLayout layout;
    std::vector<VecX<S>> pre1;    // w1 * t + b1, per projector
    std::vector<VecX<S>> hidden;  // rectified pre1
    Eigen::LLT<MatX<S>> llt;      // of K K^T + lambda I (NEP mode only)
};

template <class S>
StageForward<S> stage_forward(const StageProblemT<S>& prob, const LossParamsT<S>& hp,
                              bool need_solver) {
    StageForward<S> fw;
    fw.layout = merged_layout(prob);
    const Eigen::Index d = prob.dim();
    fw.k.resize(fw.layout.rows, d);
    for (std::size_t i = 0; i < prob.frozen_ids.size(); ++i)
        fw.k.row(fw.layout.frozen_to_row[i]) = prob.frozen_rows.row(Eigen::Index(i));

    fw.pre1.resize(prob.projectors.size());
    fw.hidden.resize(prob.projectors.size());
    for (std::size_t pi = 0; pi < prob.projectors.size(); ++pi) {
        fw.pre1[pi] = prob.projectors[pi].w1 * prob.task_offset + prob.projectors[pi].b1;
        fw.hidden[pi] = fw.pre1[pi].cwiseMax(S(0));
    }
    for (Eigen::Index c = 0; c < prob.current_count(); ++c) {
        const std::size_t pi = prob.projector_index(c);
        const VecX<S> o = prob.projectors[pi].w2 * fw.hidden[pi] + prob.projectors[pi].b2;
        fw.k.row(fw.layout.current_to_row[std::size_t(c)]) =
            prob.raw.row(c) + prob.class_offsets.row(c) + o.transpose();
    }
    if (need_solver) {
        MatX<S> gram = fw.k * fw.k.transpose();
        gram.diagonal().array() += hp.lambda_reg;
        fw.llt.compute(gram);
        if (fw.llt.info() != Eigen::Success)
            throw NumericError("stage_forward: Gram factorization failed");
    }
    return fw;
}

template <class S>
struct StageBatchT {
    MatX<S> features;                      // B x d_f
    std::vector<Eigen::Index> label_rows;  // row index into the merged K
};

template <class S>
struct ProjectorGradsT {
    MatX<S> w1;
    VecX<S> b1;
    MatX<S> w2;
    VecX<S> b2;
};

template <class S>
struct GradientsT {
    MatX<S> class_offsets;  // zero-shaped like the problem, even when untrained
    VecX<S> task_offset;
    std::vector<ProjectorGradsT<S>> projectors;

    static GradientsT zeros_like(const StageProblemT<S>& p) {
        GradientsT g;
        g.class_offsets = MatX<S>::Zero(p.class_offsets.rows(), p.class_offsets.cols());
        g.task_offset = VecX<S>::Zero(p.task_offset.size());
        g.projectors.resize(p.projectors.size());
        for (std::size_t i = 0; i < p.projectors.size(); ++i) {
            const auto& pr = p.projectors[i];
            g.projectors[i].w1 = MatX<S>::Zero(pr.w1.rows(), pr.w1.cols());
            g.projectors[i].b1 = VecX<S>::Zero(pr.b1.size());
            g.projectors[i].w2 = MatX<S>::Zero(pr.w2.rows(), pr.w2.cols());
            g.projectors[i].b2 = VecX<S>::Zero(pr.b2.size());
        }
        return g;
    }
};

using GradientSet = GradientsT<double>;

template <class S>
struct BatchStats {
    S total = S(0);
    S ce = S(0);
    S inter = S(0);
};

// Mean loss over a batch: CE over logits (-R_i/tau in NEP mode,
// -||f - K_i||^2/tau in distance mode) plus lambda_inter * inter-class
// penalty. When `grads` is non-null, also accumulates the exact
// reverse-mode gradients w.r.t. the current task's trainables; frozen rows
// receive none. The path through rho = (K K^T + lambda I)^{-1} K f uses the
// linear-solve adjoint: s = A^{-1} g, dK += s f^T - (s rho^T + rho s^T) K.
template <class S>
BatchStats<S> stage_loss_backward(const StageProblemT<S>& prob, const StageBatchT<S>& batch,
                                  const LossParamsT<S>& hp, GradientsT<S>* grads) {
    const Eigen::Index bsz = batch.features.rows();
    if (bsz == 0) throw ValidationError("stage batch: empty");
    if (batch.features.cols() != prob.dim())
        throw ValidationError("stage batch: feature dimension mismatch");
    if (Eigen::Index(batch.label_rows.size()) != bsz)
        throw ValidationError("stage batch: label count mismatch");

    const bool nep = hp.logits == LogitMode::Nep;
    const StageForward<S> fw = stage_forward(prob, hp, nep);
    const Eigen::Index n_rows = fw.k.rows();
    for (Eigen::Index y : batch.label_rows)
        if (y < 0 || y >= n_rows) throw ValidationError("stage batch: label row out of range");

    MatX<S> rho_all;
    if (nep) rho_all = fw.llt.solve(fw.k * batch.features.transpose());  // C x B

    MatX<S> dk;
    if (grads) dk = MatX<S>::Zero(n_rows, prob.dim());

    const S inv_b = S(1) / S(bsz);
    const S tiny = std::numeric_limits<S>::min();
    BatchStats<S> stats;

    VecX<S> dist(n_rows), z(n_rows), n(n_rows), m(n_rows);
    MatX<S> rvec(n_rows, prob.dim());
    for (Eigen::Index b = 0; b < bsz; ++b) {
        const VecX<S> f = batch.features.row(b).transpose();
        const Eigen::Index y = batch.label_rows[std::size_t(b)];

        for (Eigen::Index i = 0; i < n_rows; ++i)
            dist[i] = (f.transpose() - fw.k.row(i)).norm();

        VecX<S> rho;
        if (nep) {
            rho = rho_all.col(b);
            for (Eigen::Index i = 0; i < n_rows; ++i) {
                rvec.row(i) = f.transpose() - rho[i] * fw.k.row(i);
                n[i] = rvec.row(i).norm();
                m[i] = std::abs(rho[i]) + hp.eps;
                z[i] = -(n[i] / m[i]) / hp.tau;
            }
        } else {
            z = -dist.array().square() / hp.tau;
        }

        const S mx = z.maxCoeff();
        VecX<S> p = (z.array() - mx).exp();
        const S expsum = p.sum();
        p /= expsum;
        const S ce = -(z[y] - mx - std::log(expsum));

        S dist_sum = S(0);
        for (Eigen::Index j = 0; j < n_rows; ++j)
            if (j != y) dist_sum += dist[j];
        const Eigen::Index n_neg = n_rows - 1;
        const S inter = n_neg > 0 ? S(1) / (S(n_neg) * (dist_sum + hp.eps)) : S(0);

        stats.ce += ce * inv_b;
        stats.inter += inter * inv_b;

        if (!grads) continue;

        VecX<S> dz = p * inv_b;
        dz[y] -= inv_b;

        if (nep) {
            VecX<S> drho = VecX<S>::Zero(n_rows);
            for (Eigen::Index i = 0; i < n_rows; ++i) {
                const S d_resid = dz[i] * (-S(1) / hp.tau);
                if (d_resid == S(0)) continue;
                const S dn = d_resid / m[i];
                const S dm = -d_resid * n[i] / (m[i] * m[i]);
                if (n[i] > tiny) {
                    const VecX<S> dr = (dn / n[i]) * rvec.row(i).transpose();
                    drho[i] -= dr.dot(fw.k.row(i).transpose());
                    dk.row(i) -= rho[i] * dr.transpose();
                }
                drho[i] += dm * (rho[i] > S(0) ? S(1) : (rho[i] < S(0) ? S(-1) : S(0)));
            }
            const VecX<S> s = fw.llt.solve(drho);
            dk.noalias() += s * f.transpose();
            dk.noalias() -= (s * rho.transpose() + rho * s.transpose()) * fw.k;
        } else {
            for (Eigen::Index i = 0; i < n_rows; ++i) {
                if (dz[i] == S(0)) continue;
                dk.row(i) += dz[i] * (S(2) / hp.tau) * (f.transpose() - fw.k.row(i));
            }
        }

        if (n_neg > 0 && hp.lambda_inter != S(0)) {
            const S dd = -hp.lambda_inter * inv_b /
                         (S(n_neg) * (dist_sum + hp.eps) * (dist_sum + hp.eps));
            for (Eigen::Index j = 0; j < n_rows; ++j) {
                if (j == y || dist[j] <= tiny) continue;
                dk.row(j) += dd * (fw.k.row(j) - f.transpose()) / dist[j];
            }
        }
    }
    stats.total = stats.ce + hp.lambda_inter * stats.inter;

    if (grads) {
        for (Eigen::Index c = 0; c < prob.current_count(); ++c) {
            const auto g = dk.row(fw.layout.current_to_row[std::size_t(c)]);
            if (prob.train_class_offsets) grads->class_offsets.row(c) += g;
            if (prob.train_task) {
                const std::size_t pi = prob.projector_index(c);
                auto& pg = grads->projectors[pi];
                const auto& proj = prob.projectors[pi];
                const VecX<S> go = g.transpose();
                pg.w2.noalias() += go * fw.hidden[pi].transpose();
                pg.b2 += go;
                const VecX<S> dh = proj.w2.transpose() * go;
                const VecX<S> du =
                    (fw.pre1[pi].array() > S(0)).select(dh, VecX<S>::Zero(dh.size()));
                pg.w1.noalias() += du * prob.task_offset.transpose();
                pg.b1 += du;
                grads->task_offset.noalias() += proj.w1.transpose() * du;
            }
        }
    }
    return stats;
}

}  // namespace ept
