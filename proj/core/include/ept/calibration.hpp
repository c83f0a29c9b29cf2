#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ept/errors.hpp"
#include "ept/linalg.hpp"

namespace ept {

enum class ProjectorSharing { PerClass, PerTask };

// Two-layer rectifier MLP mapping the task offset into prototype space.
// Biases start at zero so the zero task offset contributes exactly nothing.
template <class S>
struct ProjectorT {
    MatX<S> w1;  // d_h x d_t
    VecX<S> b1;  // d_h
    MatX<S> w2;  // d_f x d_h
    VecX<S> b2;  // d_f

    VecX<S> forward(const VecX<S>& task_offset) const {
        if (task_offset.size() != w1.cols())
            throw ValidationError("projector: task offset dimension mismatch");
        return w2 * (w1 * task_offset + b1).cwiseMax(S(0)) + b2;
    }
};
using Projector = ProjectorT<double>;

inline Vec project_task_offset(const Projector& proj, const Vec& task_offset) {
    return proj.forward(task_offset);
}

struct TaskEntry {
    Vec task_offset;                       // d_t, zero at creation
    std::vector<Projector> projectors;     // per class, or a single shared one
    std::vector<std::uint32_t> class_ids;  // ascending
    bool frozen = false;
};

struct ClassRecord {
    std::uint32_t class_id = 0;
    Vec raw_prototype;   // never mutated after creation
    Vec class_offset;
    std::size_t task_index = 0;
    std::optional<Vec> frozen_calibrated;  // present iff the owning task froze
};

struct PoolConfig {
    Eigen::Index d_f = 0;
    Eigen::Index d_t = 0;  // 0 = same as d_f
    Eigen::Index d_h = 4;
    double alpha = 0.001;  // class-offset init scale
    ProjectorSharing sharing = ProjectorSharing::PerClass;
    bool class_offsets_enabled = true;  // ablation: zero-init + untrained when false
    bool task_offsets_enabled = true;   // ablation: untrained (output stays zero) when false

    Eigen::Index task_dim() const { return d_t > 0 ? d_t : d_f; }
};

// Componentwise mean of the given support rows; summation order is the row
// order of the input (callers pin it via gather_rows_sorted).
Vec compute_raw_prototype(const Mat& support_rows);

// alpha * N(0, I) draw, entry order fixed.
Vec init_class_offset(Eigen::Index d_f, double alpha, std::mt19937_64& rng);

// Accumulates per-stage calibration state: raw prototypes, class offsets,
// task offsets with projectors, and frozen calibrated prototypes. Single
// writer (the training loop / freeze_stage); reads are safe concurrently
// once a task is frozen.
class CalibrationPool {
public:
    explicit CalibrationPool(PoolConfig cfg);

    // Registers a stage: zero task offset, seeded projector weights with zero
    // biases, per-class raw prototype + fresh class offset. support_rows[i]
    // holds the support feature rows (n_i x d_f) of class_ids[i].
    std::size_t open_task(const std::vector<std::uint32_t>& class_ids,
                          const std::vector<Mat>& support_rows, std::uint64_t stage_seed);

    // Stores the calibrated prototype of every class of the task and marks
    // the task frozen; trainables of the task must not change afterwards.
    void freeze_stage(std::size_t task_index);

    // Frozen classes return the stored snapshot; live classes return
    // raw + class_offset + projector(task_offset).
    Vec calibrated_prototype(std::uint32_t class_id) const;

    const PoolConfig& config() const { return cfg_; }
    std::size_t task_count() const { return tasks_.size(); }
    const TaskEntry& task(std::size_t i) const;
    TaskEntry& task(std::size_t i);
    const ClassRecord& record(std::uint32_t class_id) const;
    ClassRecord& record(std::uint32_t class_id);
    bool has_class(std::uint32_t class_id) const { return records_.count(class_id) != 0; }
    const std::map<std::uint32_t, ClassRecord>& records() const { return records_; }
    std::vector<std::uint32_t> known_class_ids() const;  // ascending

    const Projector& projector_for(std::uint32_t class_id) const;

    // Trainable scalar count of one task under the pool's ablation flags.
    std::int64_t trainable_params_of_task(std::size_t task_index) const;

private:
    friend CalibrationPool load_pool(const std::string& path);

    PoolConfig cfg_;
    std::vector<TaskEntry> tasks_;
    std::map<std::uint32_t, ClassRecord> records_;
};

CalibrationPool load_pool(const std::string& path);

// Versioned little-endian checkpoint of the whole pool (resume-after-stage).
void save_pool(const CalibrationPool& pool, const std::string& path);
CalibrationPool load_pool(const std::string& path);

}  // namespace ept
