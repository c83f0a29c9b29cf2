#include "ept/runner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <numeric>
#include <thread>

#include <json.hpp>

#include "ept/train.hpp"

namespace ept {

using nlohmann::json;

namespace {

struct EvalCounters {
    std::int64_t correct = 0;
    std::int64_t total = 0;
    std::map<std::uint32_t, std::pair<std::int64_t, std::int64_t>> per_class;  // correct, total

    void merge(const EvalCounters& o) {
        correct += o.correct;
        total += o.total;
        for (const auto& [c, ct] : o.per_class) {
            per_class[c].first += ct.first;
            per_class[c].second += ct.second;
        }
    }
};

EvalCounters eval_range(const Mat& prototypes, const std::vector<std::uint32_t>& ids,
                        const NepModel* model, EvalMetric metric, const EmbeddingDataset& dataset,
                        const std::vector<std::uint32_t>& rows, std::size_t begin,
                        std::size_t end) {
    EvalCounters out;
    if (begin >= end) return out;

    Mat queries(Eigen::Index(end - begin), dataset.dim());
    for (std::size_t i = begin; i < end; ++i)
        queries.row(Eigen::Index(i - begin)) =
            dataset.features.row(Eigen::Index(rows[i])).cast<double>();

    std::vector<std::uint32_t> predicted(end - begin);
    if (metric == EvalMetric::Nep) {
        const auto decisions = model->classify_batch(queries);
        for (std::size_t i = 0; i < decisions.size(); ++i)
            predicted[i] = decisions[i].predicted_class;
    } else {
        const DistanceMetric dm = metric == EvalMetric::Euclidean ? DistanceMetric::Euclidean
                                  : metric == EvalMetric::SquaredEuclidean
                                      ? DistanceMetric::SquaredEuclidean
                                      : DistanceMetric::Cosine;
        for (Eigen::Index q = 0; q < queries.rows(); ++q)
            predicted[std::size_t(q)] =
                ids[std::size_t(classify_metric(prototypes, queries.row(q).transpose(), dm))];
    }

    for (std::size_t i = begin; i < end; ++i) {
        const std::uint32_t truth = dataset.labels[rows[i]];
        auto& [c_correct, c_total] = out.per_class[truth];
        ++c_total;
        ++out.total;
        if (predicted[i - begin] == truth) {
            ++c_correct;
            ++out.correct;
        }
    }
    return out;
}

}  // namespace

StageMetrics evaluate_stage(const CalibrationPool& pool, const EmbeddingDataset& dataset,
                            const std::vector<std::uint32_t>& test_indices, int stage,
                            EvalMetric metric, const NepParams& nep, int threads) {
    if (test_indices.empty()) throw ValidationError("evaluate_stage: empty test set");
    for (std::size_t t = 0; t < pool.task_count(); ++t)
        if (!pool.task(t).frozen)
            throw StateError("evaluate_stage: task " + std::to_string(t) + " is not frozen");

    const std::vector<std::uint32_t> ids = pool.known_class_ids();
    Mat prototypes(Eigen::Index(ids.size()), pool.config().d_f);
    for (std::size_t i = 0; i < ids.size(); ++i)
        prototypes.row(Eigen::Index(i)) = pool.calibrated_prototype(ids[i]).transpose();

    for (std::uint32_t row : test_indices) {
        if (Eigen::Index(row) >= dataset.size())
            throw ValidationError("evaluate_stage: test row out of range");
        if (!std::binary_search(ids.begin(), ids.end(), dataset.labels[row]))
            throw ValidationError("evaluate_stage: test label " +
                                  std::to_string(dataset.labels[row]) + " is not a known class");
    }

    std::unique_ptr<NepModel> model;
    if (metric == EvalMetric::Nep)
        model = std::make_unique<NepModel>(prototypes, ids, nep.lambda_reg, nep.eps);

    EvalCounters counters;
    const std::size_t n = test_indices.size();
    const int n_threads = std::max(1, std::min<int>(threads, int(n)));
    if (n_threads == 1) {
        counters = eval_range(prototypes, ids, model.get(), metric, dataset, test_indices, 0, n);
    } else {
        std::vector<EvalCounters> partial(static_cast<std::size_t>(n_threads));
        std::vector<std::thread> workers;
        const std::size_t chunk = (n + std::size_t(n_threads) - 1) / std::size_t(n_threads);
        for (int w = 0; w < n_threads; ++w) {
            const std::size_t begin = std::size_t(w) * chunk;
            const std::size_t end = std::min(n, begin + chunk);
            workers.emplace_back([&, w, begin, end] {
                partial[std::size_t(w)] = eval_range(prototypes, ids, model.get(), metric, dataset,
                                                     test_indices, begin, end);
            });
        }
        for (auto& th : workers) th.join();
        for (const auto& p : partial) counters.merge(p);
    }

    StageMetrics metrics;
    metrics.stage = stage;
    metrics.num_test_samples = counters.total;
    metrics.accuracy = double(counters.correct) / double(counters.total);
    for (const auto& [c, ct] : counters.per_class)
        metrics.per_class[c] = double(ct.first) / double(ct.second);
    return metrics;
}

namespace {

RunReport run_protocol_impl(const EmbeddingDataset& dataset, const CliConfig& cfg,
                            EvalMetric metric, const RunHooks* hooks) {
    cfg.validate();
    dataset.validate();
    const std::uint64_t seed = cfg.seed();

    const StagePlan plan = split_protocol(dataset, cfg.protocol, seed);

    EmbeddingDataset biased;
    const EmbeddingDataset* data = &dataset;
    if (cfg.bias_shift > 0) {
        biased = apply_support_bias(dataset, plan, cfg.bias_shift, seed);
        data = &biased;
    }

    PoolConfig pool_cfg;
    pool_cfg.d_f = dataset.dim();
    pool_cfg.d_t = cfg.pool.d_t;
    pool_cfg.d_h = cfg.pool.d_h;
    pool_cfg.alpha = cfg.pool.alpha;
    pool_cfg.sharing = cfg.pool.sharing;
    pool_cfg.class_offsets_enabled = cfg.ablation.cs_offset;
    pool_cfg.task_offsets_enabled = cfg.ablation.ta_offset;
    CalibrationPool pool(pool_cfg);

    TrainConfig train_cfg = cfg.train;
    if (!cfg.ablation.nep) train_cfg.train_logits = LogitMode::Distance;

    RunReport report;
    report.config = cfg;
    report.ablation = cfg.ablation;

    for (std::size_t t = 0; t < plan.stage_count(); ++t) {
        const auto& stage = plan.stages[t];

        // Materialize the stage's support set once; training and raw
        // prototypes read only this buffer.
        Mat support(Eigen::Index(stage.support_indices.size()), data->dim());
        std::vector<std::uint32_t> support_labels(stage.support_indices.size());
        for (std::size_t i = 0; i < stage.support_indices.size(); ++i) {
            const std::uint32_t row = stage.support_indices[i];
            if (hooks && hooks->on_support_read) hooks->on_support_read(int(t), row);
            support.row(Eigen::Index(i)) = data->features.row(Eigen::Index(row)).cast<double>();
            support_labels[i] = data->labels[row];
        }

        std::vector<Mat> per_class(stage.class_set.size());
        for (std::size_t ci = 0; ci < stage.class_set.size(); ++ci) {
            const std::uint32_t c = stage.class_set[ci];
            std::vector<Eigen::Index> rows;
            for (std::size_t i = 0; i < support_labels.size(); ++i)
                if (support_labels[i] == c) rows.push_back(Eigen::Index(i));
            if (rows.empty())
                throw ProtocolError("run_protocol: class " + std::to_string(c) +
                                    " has no support samples");
            per_class[ci].resize(Eigen::Index(rows.size()), data->dim());
            for (std::size_t i = 0; i < rows.size(); ++i)
                per_class[ci].row(Eigen::Index(i)) = support.row(rows[i]);
        }

        const std::size_t task =
            pool.open_task(stage.class_set, per_class, mix_seed(seed, 0x0A5E000000000000ull + t));
        report.params_trainable += pool.trainable_params_of_task(task);
        report.params_per_stage.push_back(pool.trainable_params_of_task(task));

        StageTrainReport tr = train_stage(support, support_labels, pool, task, train_cfg, cfg.nep);
        report.loss_traces.push_back(std::move(tr.epoch_loss));

        report.stages.push_back(evaluate_stage(pool, *data, stage.test_indices_cumulative, int(t),
                                               metric, cfg.nep, cfg.threads));
    }

    double sum = 0.0;
    for (const auto& s : report.stages) sum += s.accuracy;
    report.average = sum / double(report.stages.size());

    if (hooks && hooks->on_pool_ready) hooks->on_pool_ready(pool);
    return report;
}

}  // namespace

RunReport run_protocol(const EmbeddingDataset& dataset, const CliConfig& cfg,
                       const RunHooks* hooks) {
    return run_protocol_impl(dataset, cfg,
                             cfg.ablation.nep ? EvalMetric::Nep : EvalMetric::Euclidean, hooks);
}

double CompareReport::delta_avg(const std::string& metric) const {
    double on = 0.0, off = 0.0;
    for (const auto& cell : cells) {
        if (cell.metric != metric) continue;
        (cell.offsets_on ? on : off) = cell.avg_acc;
    }
    return on - off;
}

CompareReport compare_baselines(const EmbeddingDataset& dataset, const CliConfig& cfg) {
    static const std::pair<const char*, EvalMetric> kMetrics[] = {
        {"nep", EvalMetric::Nep},
        {"euclidean", EvalMetric::Euclidean},
        {"squared_euclidean", EvalMetric::SquaredEuclidean},
        {"cosine", EvalMetric::Cosine},
    };

    CompareReport report;
    for (const auto& [name, metric] : kMetrics) {
        for (const bool offsets_on : {true, false}) {
            CliConfig cell_cfg = cfg;
            cell_cfg.ablation.nep = metric == EvalMetric::Nep;
            cell_cfg.ablation.cs_offset = offsets_on;
            cell_cfg.ablation.ta_offset = offsets_on;

            const RunReport run = run_protocol_impl(dataset, cell_cfg, metric, nullptr);
            CompareCell cell;
            cell.metric = name;
            cell.offsets_on = offsets_on;
            cell.last_acc = run.stages.back().accuracy;
            cell.avg_acc = run.average;
            cell.params = run.params_trainable;
            report.cells.push_back(cell);
        }
    }
    return report;
}

std::string compare_csv(const CompareReport& report) {
    std::string out = "metric,offsets,last_acc,avg_acc,params\n";
    char line[160];
    for (const auto& cell : report.cells) {
        std::snprintf(line, sizeof(line), "%s,%s,%.6f,%.6f,%lld\n", cell.metric.c_str(),
                      cell.offsets_on ? "on" : "off", cell.last_acc, cell.avg_acc,
                      static_cast<long long>(cell.params));
        out += line;
    }
    return out;
}

std::string to_json(const RunReport& report) {
    json root;
    root["stages"] = json::array();
    for (const auto& s : report.stages) {
        json stage;
        stage["stage"] = s.stage;
        stage["accuracy"] = s.accuracy;
        stage["num_test_samples"] = s.num_test_samples;
        stage["per_class"] = json::object();
        for (const auto& [c, acc] : s.per_class) stage["per_class"][std::to_string(c)] = acc;
        root["stages"].push_back(std::move(stage));
    }
    root["average"] = report.average;
    root["params_trainable"] = report.params_trainable;
    root["params_per_stage"] = report.params_per_stage;
    root["config"] = json::parse(to_json(report.config));
    root["seed"] = report.config.seed();
    root["ablation"]["nep"] = report.ablation.nep;
    root["ablation"]["cs_offset"] = report.ablation.cs_offset;
    root["ablation"]["ta_offset"] = report.ablation.ta_offset;
    root["loss_traces"] = report.loss_traces;
    return root.dump(2) + "\n";
}

}  // namespace ept
