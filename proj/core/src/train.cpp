#include "ept/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace ept {

void TrainConfig::validate() const {
    if (base_epochs < 1 || inc_epochs < 1) throw ValidationError("train config: epochs must be >= 1");
    if (batch_size < 1) throw ValidationError("train config: batch_size must be >= 1");
    if (lambda_inter < 0) throw ValidationError("train config: lambda_inter must be >= 0");
    if (!(temperature > 0)) throw ValidationError("train config: temperature must be > 0");
    if (!(learning_rate > 0)) throw ValidationError("train config: learning_rate must be > 0");
    if (!(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 >= 0 && adam_beta2 < 1))
        throw ValidationError("train config: adam betas must be in [0, 1)");
    if (!(adam_eps > 0)) throw ValidationError("train config: adam_eps must be > 0");
}

void NepParams::validate() const {
    if (!(lambda_reg > 0)) throw ValidationError("nep params: lambda_reg must be > 0");
    if (!(eps > 0)) throw ValidationError("nep params: eps must be > 0");
}

LossParamsT<double> make_loss_params(const NepParams& nep, const TrainConfig& cfg) {
    LossParamsT<double> hp;
    hp.lambda_reg = nep.lambda_reg;
    hp.eps = nep.eps;
    hp.tau = cfg.temperature;
    hp.lambda_inter = cfg.lambda_inter;
    hp.logits = cfg.train_logits;
    return hp;
}

StageProblemT<double> make_stage_problem(const CalibrationPool& pool, std::size_t task_index) {
    const TaskEntry& task = pool.task(task_index);
    const PoolConfig& cfg = pool.config();

    StageProblemT<double> prob;
    prob.sharing = cfg.sharing;
    prob.train_class_offsets = cfg.class_offsets_enabled;
    prob.train_task = cfg.task_offsets_enabled;
    prob.class_ids = task.class_ids;
    prob.task_offset = task.task_offset;
    prob.projectors = task.projectors;

    prob.raw.resize(Eigen::Index(task.class_ids.size()), cfg.d_f);
    prob.class_offsets.resize(Eigen::Index(task.class_ids.size()), cfg.d_f);
    for (std::size_t i = 0; i < task.class_ids.size(); ++i) {
        const ClassRecord& rec = pool.record(task.class_ids[i]);
        prob.raw.row(Eigen::Index(i)) = rec.raw_prototype.transpose();
        prob.class_offsets.row(Eigen::Index(i)) = rec.class_offset.transpose();
    }

    // Every other class enters as a frozen constant row.
    std::vector<std::uint32_t> others;
    for (std::uint32_t c : pool.known_class_ids())
        if (pool.record(c).task_index != task_index) others.push_back(c);
    prob.frozen_ids = others;
    prob.frozen_rows.resize(Eigen::Index(others.size()), cfg.d_f);
    for (std::size_t i = 0; i < others.size(); ++i) {
        const ClassRecord& rec = pool.record(others[i]);
        if (!rec.frozen_calibrated)
            throw StateError("stage problem: class " + std::to_string(others[i]) +
                             " outside the current task is not frozen");
        prob.frozen_rows.row(Eigen::Index(i)) = rec.frozen_calibrated->transpose();
    }
    return prob;
}

void write_back_stage(const StageProblemT<double>& prob, CalibrationPool& pool,
                      std::size_t task_index) {
    TaskEntry& task = pool.task(task_index);
    if (task.frozen) throw StateError("write_back_stage: task is frozen");
    task.task_offset = prob.task_offset;
    task.projectors = prob.projectors;
    for (std::size_t i = 0; i < task.class_ids.size(); ++i)
        pool.record(task.class_ids[i]).class_offset =
            prob.class_offsets.row(Eigen::Index(i)).transpose();
}

namespace {

// Maps global labels onto rows of the merged prototype matrix; labels must
// belong to the current task.
std::vector<Eigen::Index> label_rows_for(const StageProblemT<double>& prob,
                                         const std::vector<std::uint32_t>& labels) {
    const std::vector<std::uint32_t> merged = prob.merged_ids();
    std::vector<Eigen::Index> rows(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (!std::binary_search(prob.class_ids.begin(), prob.class_ids.end(), labels[i]))
            throw ValidationError("train batch: label " + std::to_string(labels[i]) +
                                  " is not a current-stage class");
        const auto it = std::lower_bound(merged.begin(), merged.end(), labels[i]);
        rows[i] = Eigen::Index(it - merged.begin());
    }
    return rows;
}

StageBatchT<double> make_batch(const StageProblemT<double>& prob, const Mat& features,
                               const std::vector<std::uint32_t>& labels) {
    if (features.rows() != Eigen::Index(labels.size()))
        throw ValidationError("train batch: feature/label count mismatch");
    StageBatchT<double> batch;
    batch.features = features;
    batch.label_rows = label_rows_for(prob, labels);
    return batch;
}

}  // namespace

double total_loss(const Mat& batch_features, const std::vector<std::uint32_t>& batch_labels,
                  const CalibrationPool& pool, std::size_t task_index, const NepParams& nep,
                  const TrainConfig& cfg) {
    const StageProblemT<double> prob = make_stage_problem(pool, task_index);
    const StageBatchT<double> batch = make_batch(prob, batch_features, batch_labels);
    return stage_loss_backward<double>(prob, batch, make_loss_params(nep, cfg), nullptr).total;
}

void check_gradients_finite(const GradientSet& grads, const StageProblemT<double>& prob) {
    auto bad = [](double v) { return !std::isfinite(v); };
    for (Eigen::Index c = 0; c < grads.class_offsets.rows(); ++c)
        for (Eigen::Index k = 0; k < grads.class_offsets.cols(); ++k)
            if (bad(grads.class_offsets(c, k)))
                throw NumericError("backward: non-finite gradient at class_offset[" +
                                   std::to_string(prob.class_ids[std::size_t(c)]) + "][" +
                                   std::to_string(k) + "]");
    for (Eigen::Index k = 0; k < grads.task_offset.size(); ++k)
        if (bad(grads.task_offset[k]))
            throw NumericError("backward: non-finite gradient at task_offset[" +
                               std::to_string(k) + "]");
    for (std::size_t pi = 0; pi < grads.projectors.size(); ++pi) {
        const auto& pg = grads.projectors[pi];
        const std::string tag = "mlp[" + std::to_string(pi) + "]";
        if (!pg.w1.allFinite()) throw NumericError("backward: non-finite gradient at " + tag + ".w1");
        if (!pg.b1.allFinite()) throw NumericError("backward: non-finite gradient at " + tag + ".b1");
        if (!pg.w2.allFinite()) throw NumericError("backward: non-finite gradient at " + tag + ".w2");
        if (!pg.b2.allFinite()) throw NumericError("backward: non-finite gradient at " + tag + ".b2");
    }
}

GradientSet backward(const Mat& batch_features, const std::vector<std::uint32_t>& batch_labels,
                     const CalibrationPool& pool, std::size_t task_index, const NepParams& nep,
                     const TrainConfig& cfg) {
    if (pool.task(task_index).frozen) throw StateError("backward: task is frozen");
    const StageProblemT<double> prob = make_stage_problem(pool, task_index);
    const StageBatchT<double> batch = make_batch(prob, batch_features, batch_labels);
    GradientSet grads = GradientSet::zeros_like(prob);
    stage_loss_backward<double>(prob, batch, make_loss_params(nep, cfg), &grads);
    check_gradients_finite(grads, prob);
    return grads;
}

namespace {

void adam_update(Mat& param, const Mat& grad, Mat& m, Mat& v, double corrected_lr, double b1,
                 double b2, double eps) {
    if (param.rows() != grad.rows() || param.cols() != grad.cols())
        throw ValidationError("optimizer_step: gradient shape mismatch");
    m = b1 * m + (1 - b1) * grad;
    v = b2 * v + (1 - b2) * grad.cwiseProduct(grad);
    param.array() -= corrected_lr * m.array() / (v.array().sqrt() + eps);
}

void adam_update(Vec& param, const Vec& grad, Vec& m, Vec& v, double corrected_lr, double b1,
                 double b2, double eps) {
    if (param.size() != grad.size())
        throw ValidationError("optimizer_step: gradient shape mismatch");
    m = b1 * m + (1 - b1) * grad;
    v = b2 * v + (1 - b2) * grad.cwiseProduct(grad);
    param.array() -= corrected_lr * m.array() / (v.array().sqrt() + eps);
}

}  // namespace

void optimizer_step(StageProblemT<double>& params, const GradientSet& grads, OptimizerState& state,
                    const TrainConfig& cfg) {
    state.step += 1;
    const double b1 = cfg.adam_beta1;
    const double b2 = cfg.adam_beta2;
    // Fold bias correction into the step size.
    const double corrected_lr = cfg.learning_rate *
                                std::sqrt(1.0 - std::pow(b2, double(state.step))) /
                                (1.0 - std::pow(b1, double(state.step)));

    if (params.train_class_offsets)
        adam_update(params.class_offsets, grads.class_offsets, state.m.class_offsets,
                    state.v.class_offsets, corrected_lr, b1, b2, cfg.adam_eps);
    if (params.train_task) {
        adam_update(params.task_offset, grads.task_offset, state.m.task_offset,
                    state.v.task_offset, corrected_lr, b1, b2, cfg.adam_eps);
        if (grads.projectors.size() != params.projectors.size())
            throw ValidationError("optimizer_step: projector count mismatch");
        for (std::size_t i = 0; i < params.projectors.size(); ++i) {
            auto& p = params.projectors[i];
            const auto& g = grads.projectors[i];
            auto& m = state.m.projectors[i];
            auto& v = state.v.projectors[i];
            adam_update(p.w1, g.w1, m.w1, v.w1, corrected_lr, b1, b2, cfg.adam_eps);
            adam_update(p.b1, g.b1, m.b1, v.b1, corrected_lr, b1, b2, cfg.adam_eps);
            adam_update(p.w2, g.w2, m.w2, v.w2, corrected_lr, b1, b2, cfg.adam_eps);
            adam_update(p.b2, g.b2, m.b2, v.b2, corrected_lr, b1, b2, cfg.adam_eps);
        }
    }
}

StageTrainReport train_stage(const Mat& support_features,
                             const std::vector<std::uint32_t>& support_labels,
                             CalibrationPool& pool, std::size_t task_index, const TrainConfig& cfg,
                             const NepParams& nep) {
    cfg.validate();
    nep.validate();
    if (pool.task(task_index).frozen) throw StateError("train_stage: task is frozen");
    if (support_features.rows() != Eigen::Index(support_labels.size()))
        throw ValidationError("train_stage: feature/label count mismatch");

    StageTrainReport report;
    report.task_index = task_index;
    report.trainable_params = pool.trainable_params_of_task(task_index);

    StageProblemT<double> prob = make_stage_problem(pool, task_index);
    const std::vector<Eigen::Index> all_rows = label_rows_for(prob, support_labels);

    if (prob.has_trainables()) {
        const int epochs = task_index == 0 ? cfg.base_epochs : cfg.inc_epochs;
        const LossParamsT<double> hp = make_loss_params(nep, cfg);
        OptimizerState opt = OptimizerState::zeros_like(prob);

        const Eigen::Index n = support_features.rows();
        std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
        std::iota(order.begin(), order.end(), Eigen::Index(0));

        StageBatchT<double> batch;
        for (int epoch = 0; epoch < epochs; ++epoch) {
            std::mt19937_64 rng(
                mix_seed(cfg.seed, 0xE70C000000000000ull + task_index * 100003ull + epoch));
            std::shuffle(order.begin(), order.end(), rng);

            double epoch_loss = 0.0;
            int batches = 0;
            for (Eigen::Index start = 0; start < n; start += cfg.batch_size) {
                const Eigen::Index count = std::min<Eigen::Index>(cfg.batch_size, n - start);
                batch.features.resize(count, support_features.cols());
                batch.label_rows.resize(std::size_t(count));
                for (Eigen::Index i = 0; i < count; ++i) {
                    batch.features.row(i) = support_features.row(order[std::size_t(start + i)]);
                    batch.label_rows[std::size_t(i)] = all_rows[std::size_t(order[std::size_t(start + i)])];
                }
                GradientSet grads = GradientSet::zeros_like(prob);
                const auto stats = stage_loss_backward<double>(prob, batch, hp, &grads);
                check_gradients_finite(grads, prob);
                optimizer_step(prob, grads, opt, cfg);
                epoch_loss += stats.total;
                ++batches;
            }
            report.epoch_loss.push_back(epoch_loss / double(batches));
        }
        write_back_stage(prob, pool, task_index);
    }

    pool.freeze_stage(task_index);
    return report;
}

}  // namespace ept
