#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "ept/config.hpp"
#include "ept/nep.hpp"
#include "ept/protocol.hpp"

namespace ept {

struct StageMetrics {
    int stage = 0;
    double accuracy = 0.0;                       // correct / total, exact
    std::map<std::uint32_t, double> per_class;   // only classes with test samples
    std::int64_t num_test_samples = 0;
};

struct RunReport {
    std::vector<StageMetrics> stages;  // T+1 entries
    double average = 0.0;              // arithmetic mean of stage accuracies
    std::int64_t params_trainable = 0;
    std::vector<std::int64_t> params_per_stage;
    CliConfig config;
    AblationFlags ablation;
    std::vector<std::vector<double>> loss_traces;  // per stage, per epoch
};

// Serialized with fixed keys: stages (array of {stage, accuracy, per_class,
// num_test_samples}), average, params_trainable, config, seed, ablation,
// loss_traces. Byte-deterministic for identical reports.
std::string to_json(const RunReport& report);

class CalibrationPool;

// Test/CLI hooks. on_support_read fires for every dataset row materialized
// for a stage's training (raw prototypes and batches come from that gather),
// so a test can assert no stage ever touches another stage's support
// samples. on_pool_ready fires once after the final stage froze.
struct RunHooks {
    std::function<void(int stage, std::uint32_t row)> on_support_read;
    std::function<void(const CalibrationPool& pool)> on_pool_ready;
};

enum class EvalMetric { Nep, Euclidean, SquaredEuclidean, Cosine };

// Top-1 accuracy of the stacked frozen prototypes over the given test rows.
// All opened tasks must be frozen; test labels must be known classes.
StageMetrics evaluate_stage(const CalibrationPool& pool, const EmbeddingDataset& dataset,
                            const std::vector<std::uint32_t>& test_indices, int stage,
                            EvalMetric metric, const NepParams& nep, int threads);

// Full run: base stage + T incremental stages, each opened, trained, frozen
// and evaluated on the cumulative test set. Ablation flags pin components;
// with NEP off both training logits and evaluation fall back to distances.
RunReport run_protocol(const EmbeddingDataset& dataset, const CliConfig& cfg,
                       const RunHooks* hooks = nullptr);

struct CompareCell {
    std::string metric;  // nep | euclidean | squared_euclidean | cosine
    bool offsets_on = false;
    double last_acc = 0.0;
    double avg_acc = 0.0;
    std::int64_t params = 0;
};

struct CompareReport {
    std::vector<CompareCell> cells;  // 4 metrics x {on, off}

    // avg(offsets on) - avg(offsets off) for a metric.
    double delta_avg(const std::string& metric) const;
};

// Shared StagePlan (same seed) across every cell; differences are
// attributable to metric/offsets only.
CompareReport compare_baselines(const EmbeddingDataset& dataset, const CliConfig& cfg);

// Header `metric,offsets,last_acc,avg_acc,params` + 8 data rows.
std::string compare_csv(const CompareReport& report);

}  // namespace ept
