#pragma once

#include <cstdint>
#include <vector>

#include "ept/calibration.hpp"
#include "ept/train_kernels.hpp"

namespace ept {

struct TrainConfig {
    int base_epochs = 100;
    int inc_epochs = 60;
    int batch_size = 64;
    double lambda_inter = 0.1;
    double temperature = 1.0;
    double learning_rate = 0.01;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;
    LogitMode train_logits = LogitMode::Nep;

    void validate() const;
};

// NEP hyper-parameters shared by training and inference.
struct NepParams {
    double lambda_reg = 0.3;
    double eps = 1e-8;

    void validate() const;
};

LossParamsT<double> make_loss_params(const NepParams& nep, const TrainConfig& cfg);

// Copies the current task's trainables (and every other task's frozen
// prototypes as constants) out of the pool.
StageProblemT<double> make_stage_problem(const CalibrationPool& pool, std::size_t task_index);
// Writes trained offsets/projectors back into the pool.
void write_back_stage(const StageProblemT<double>& prob, CalibrationPool& pool,
                      std::size_t task_index);

// Mean total loss of a batch under the pool's current parameters. Labels are
// global class ids and must belong to the task's class set.
double total_loss(const Mat& batch_features, const std::vector<std::uint32_t>& batch_labels,
                  const CalibrationPool& pool, std::size_t task_index, const NepParams& nep,
                  const TrainConfig& cfg);

// Exact reverse-mode gradients of total_loss w.r.t. the current task's
// trainables. Throws StateError on a frozen task and NumericError (naming
// the offending parameter) on non-finite output.
GradientSet backward(const Mat& batch_features, const std::vector<std::uint32_t>& batch_labels,
                     const CalibrationPool& pool, std::size_t task_index, const NepParams& nep,
                     const TrainConfig& cfg);

// Adam accumulators, shaped like the gradients they integrate.
struct OptimizerState {
    GradientSet m;
    GradientSet v;
    long step = 0;

    static OptimizerState zeros_like(const StageProblemT<double>& prob) {
        return {GradientSet::zeros_like(prob), GradientSet::zeros_like(prob), 0};
    }
};

// Standard Adam with bias correction over the enabled parameter groups.
void optimizer_step(StageProblemT<double>& params, const GradientSet& grads, OptimizerState& state,
                    const TrainConfig& cfg);

struct StageTrainReport {
    std::size_t task_index = 0;
    std::vector<double> epoch_loss;  // mean batch loss per epoch
    std::int64_t trainable_params = 0;
};

// Runs the stage's epoch/batch schedule (base_epochs for task 0, inc_epochs
// otherwise) over the given support set with per-epoch seeded shuffling,
// writes the trained parameters back, and freezes the stage. A stage with
// nothing trainable is frozen immediately with an empty trace.
StageTrainReport train_stage(const Mat& support_features,
                             const std::vector<std::uint32_t>& support_labels,
                             CalibrationPool& pool, std::size_t task_index, const TrainConfig& cfg,
                             const NepParams& nep);

// Throws NumericError naming the first non-finite gradient entry.
void check_gradients_finite(const GradientSet& grads, const StageProblemT<double>& prob);

}  // namespace ept
