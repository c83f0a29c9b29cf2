#include "ept/calibration.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

namespace ept {

Vec compute_raw_prototype(const Mat& support_rows) {
    if (support_rows.rows() == 0) throw ValidationError("raw prototype: empty support set");
    if (!support_rows.allFinite())
        throw ValidationError("raw prototype: non-finite support feature");
    return support_rows.colwise().sum().transpose() / double(support_rows.rows());
}

Vec init_class_offset(Eigen::Index d_f, double alpha, std::mt19937_64& rng) {
    if (!(alpha > 0)) throw ValidationError("class offset init: alpha must be > 0");
    std::normal_distribution<double> gauss(0.0, 1.0);
    Vec v(d_f);
    for (Eigen::Index k = 0; k < d_f; ++k) v[k] = alpha * gauss(rng);
    return v;
}

namespace {

// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) entries, row-major draw order.
Mat init_weight(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(double(cols));
    std::uniform_real_distribution<double> unif(-bound, bound);
    Mat w(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) w(r, c) = unif(rng);
    return w;
}

}  // namespace

CalibrationPool::CalibrationPool(PoolConfig cfg) : cfg_(cfg) {
    if (cfg_.d_f < 1) throw ValidationError("pool: d_f must be >= 1");
    if (cfg_.d_h < 1) throw ValidationError("pool: d_h must be >= 1");
    if (!(cfg_.alpha > 0)) throw ValidationError("pool: alpha must be > 0");
}

std::size_t CalibrationPool::open_task(const std::vector<std::uint32_t>& class_ids,
                                       const std::vector<Mat>& support_rows,
                                       std::uint64_t stage_seed) {
    if (class_ids.empty()) throw ValidationError("open_task: no classes");
    if (support_rows.size() != class_ids.size())
        throw ValidationError("open_task: one support matrix per class required");
    for (std::uint32_t c : class_ids)
        if (records_.count(c))
            throw ValidationError("open_task: class " + std::to_string(c) +
                                  " already in the pool");

    std::vector<std::uint32_t> ids = class_ids;
    std::vector<std::size_t> order(ids.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });

    const std::size_t task_index = tasks_.size();
    TaskEntry task;
    task.task_offset = Vec::Zero(cfg_.task_dim());

    std::mt19937_64 rng(stage_seed);
    const std::size_t n_proj =
        cfg_.sharing == ProjectorSharing::PerClass ? ids.size() : 1u;
    task.projectors.reserve(n_proj);
    for (std::size_t i = 0; i < n_proj; ++i) {
        Projector p;
        p.w1 = init_weight(cfg_.d_h, cfg_.task_dim(), rng);
        p.b1 = Vec::Zero(cfg_.d_h);
        p.w2 = init_weight(cfg_.d_f, cfg_.d_h, rng);
        p.b2 = Vec::Zero(cfg_.d_f);
        task.projectors.push_back(std::move(p));
    }

    for (std::size_t oi : order) {
        const std::uint32_t c = ids[oi];
        if (support_rows[oi].cols() != cfg_.d_f)
            throw ValidationError("open_task: support dimension mismatch for class " +
                                  std::to_string(c));
        ClassRecord rec;
        rec.class_id = c;
        rec.task_index = task_index;
        rec.raw_prototype = compute_raw_prototype(support_rows[oi]);
        rec.class_offset = cfg_.class_offsets_enabled
                               ? init_class_offset(cfg_.d_f, cfg_.alpha, rng)
                               : Vec::Zero(cfg_.d_f);
        task.class_ids.push_back(c);
        records_.emplace(c, std::move(rec));
    }
    tasks_.push_back(std::move(task));
    return task_index;
}

void CalibrationPool::freeze_stage(std::size_t task_index) {
    if (task_index >= tasks_.size())
        throw StateError("freeze_stage: task " + std::to_string(task_index) + " was never opened");
    TaskEntry& task = tasks_[task_index];
    if (task.frozen)
        throw StateError("freeze_stage: task " + std::to_string(task_index) + " already frozen");
    for (std::uint32_t c : task.class_ids)
        records_.at(c).frozen_calibrated = calibrated_prototype(c);
    task.frozen = true;
}

Vec CalibrationPool::calibrated_prototype(std::uint32_t class_id) const {
    const ClassRecord& rec = record(class_id);
    if (rec.frozen_calibrated) return *rec.frozen_calibrated;
    const TaskEntry& task = tasks_[rec.task_index];
    return rec.raw_prototype + rec.class_offset +
           projector_for(class_id).forward(task.task_offset);
}

const TaskEntry& CalibrationPool::task(std::size_t i) const {
    if (i >= tasks_.size()) throw StateError("pool: task index out of range");
    return tasks_[i];
}

TaskEntry& CalibrationPool::task(std::size_t i) {
    if (i >= tasks_.size()) throw StateError("pool: task index out of range");
    return tasks_[i];
}

const ClassRecord& CalibrationPool::record(std::uint32_t class_id) const {
    auto it = records_.find(class_id);
    if (it == records_.end())
        throw ValidationError("pool: unknown class " + std::to_string(class_id));
    return it->second;
}

ClassRecord& CalibrationPool::record(std::uint32_t class_id) {
    auto it = records_.find(class_id);
    if (it == records_.end())
        throw ValidationError("pool: unknown class " + std::to_string(class_id));
    return it->second;
}

std::vector<std::uint32_t> CalibrationPool::known_class_ids() const {
    std::vector<std::uint32_t> ids;
    ids.reserve(records_.size());
    for (const auto& [c, rec] : records_) ids.push_back(c);
    return ids;  // std::map iterates ascending
}

const Projector& CalibrationPool::projector_for(std::uint32_t class_id) const {
    const ClassRecord& rec = record(class_id);
    const TaskEntry& task = tasks_[rec.task_index];
    if (cfg_.sharing == ProjectorSharing::PerTask) return task.projectors[0];
    const auto it = std::find(task.class_ids.begin(), task.class_ids.end(), class_id);
    return task.projectors[std::size_t(it - task.class_ids.begin())];
}

std::int64_t CalibrationPool::trainable_params_of_task(std::size_t task_index) const {
    const TaskEntry& t = task(task_index);
    std::int64_t count = 0;
    if (cfg_.class_offsets_enabled) count += std::int64_t(t.class_ids.size()) * cfg_.d_f;
    if (cfg_.task_offsets_enabled) {
        count += cfg_.task_dim();
        const std::int64_t per_proj =
            cfg_.d_h * cfg_.task_dim() + cfg_.d_h + cfg_.d_f * cfg_.d_h + cfg_.d_f;
        count += per_proj * std::int64_t(t.projectors.size());
    }
    return count;
}

// ---------------------------------------------------------------------------
// Checkpoint: "EPTP", u32 version=1, pool config, then tasks and records.
// Little-endian, f64 tensors, no padding.
// ---------------------------------------------------------------------------

namespace {

static_assert(std::endian::native == std::endian::little,
              "pool checkpoints assume a little-endian host");

constexpr char kPoolMagic[4] = {'E', 'P', 'T', 'P'};
constexpr std::uint32_t kPoolVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), 4);
}
void put_f64(std::ostream& out, double v) { out.write(reinterpret_cast<const char*>(&v), 8); }
void put_vec(std::ostream& out, const Vec& v) {
    put_u32(out, std::uint32_t(v.size()));
    out.write(reinterpret_cast<const char*>(v.data()), std::streamsize(v.size() * 8));
}
void put_mat(std::ostream& out, const Mat& m) {
    put_u32(out, std::uint32_t(m.rows()));
    put_u32(out, std::uint32_t(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) put_f64(out, m(r, c));
}

std::uint32_t get_u32(std::istream& in) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    if (in.gcount() != 4) throw IoError("load_pool: truncated checkpoint");
    return v;
}
double get_f64(std::istream& in) {
    double v = 0;
    in.read(reinterpret_cast<char*>(&v), 8);
    if (in.gcount() != 8) throw IoError("load_pool: truncated checkpoint");
    return v;
}
Vec get_vec(std::istream& in) {
    const std::uint32_t n = get_u32(in);
    Vec v(static_cast<Eigen::Index>(n));
    in.read(reinterpret_cast<char*>(v.data()), std::streamsize(std::size_t(n) * 8));
    if (in.gcount() != std::streamsize(std::size_t(n) * 8))
        throw IoError("load_pool: truncated checkpoint");
    return v;
}
Mat get_mat(std::istream& in) {
    const std::uint32_t rows = get_u32(in);
    const std::uint32_t cols = get_u32(in);
    Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = get_f64(in);
    return m;
}

}  // namespace

void save_pool(const CalibrationPool& pool, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("save_pool: cannot open " + path + " for writing");
    const PoolConfig& cfg = pool.config();

    out.write(kPoolMagic, 4);
    put_u32(out, kPoolVersion);
    put_u32(out, std::uint32_t(cfg.d_f));
    put_u32(out, std::uint32_t(cfg.d_t));
    put_u32(out, std::uint32_t(cfg.d_h));
    put_f64(out, cfg.alpha);
    put_u32(out, cfg.sharing == ProjectorSharing::PerClass ? 0 : 1);
    put_u32(out, (cfg.class_offsets_enabled ? 1u : 0u) | (cfg.task_offsets_enabled ? 2u : 0u));

    put_u32(out, std::uint32_t(pool.task_count()));
    for (std::size_t t = 0; t < pool.task_count(); ++t) {
        const TaskEntry& task = pool.task(t);
        put_u32(out, task.frozen ? 1 : 0);
        put_u32(out, std::uint32_t(task.class_ids.size()));
        for (std::uint32_t c : task.class_ids) put_u32(out, c);
        put_vec(out, task.task_offset);
        put_u32(out, std::uint32_t(task.projectors.size()));
        for (const Projector& p : task.projectors) {
            put_mat(out, p.w1);
            put_vec(out, p.b1);
            put_mat(out, p.w2);
            put_vec(out, p.b2);
        }
    }

    put_u32(out, std::uint32_t(pool.records().size()));
    for (const auto& [c, rec] : pool.records()) {
        put_u32(out, c);
        put_u32(out, std::uint32_t(rec.task_index));
        put_vec(out, rec.raw_prototype);
        put_vec(out, rec.class_offset);
        put_u32(out, rec.frozen_calibrated ? 1 : 0);
        if (rec.frozen_calibrated) put_vec(out, *rec.frozen_calibrated);
    }
    out.flush();
    if (!out) throw IoError("save_pool: write failed for " + path);
}

CalibrationPool load_pool(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("load_pool: cannot open " + path);

    char magic[4] = {};
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, kPoolMagic, 4) != 0)
        throw FormatError("load_pool: bad magic bytes in " + path);
    if (get_u32(in) != kPoolVersion) throw FormatError("load_pool: unsupported version");

    PoolConfig cfg;
    cfg.d_f = Eigen::Index(get_u32(in));
    cfg.d_t = Eigen::Index(get_u32(in));
    cfg.d_h = Eigen::Index(get_u32(in));
    cfg.alpha = get_f64(in);
    cfg.sharing = get_u32(in) == 0 ? ProjectorSharing::PerClass : ProjectorSharing::PerTask;
    const std::uint32_t flags = get_u32(in);
    cfg.class_offsets_enabled = (flags & 1u) != 0;
    cfg.task_offsets_enabled = (flags & 2u) != 0;

    CalibrationPool pool(cfg);

    const std::uint32_t n_tasks = get_u32(in);
    for (std::uint32_t t = 0; t < n_tasks; ++t) {
        TaskEntry task;
        task.frozen = get_u32(in) != 0;
        const std::uint32_t n_classes = get_u32(in);
        for (std::uint32_t i = 0; i < n_classes; ++i) task.class_ids.push_back(get_u32(in));
        task.task_offset = get_vec(in);
        const std::uint32_t n_proj = get_u32(in);
        for (std::uint32_t i = 0; i < n_proj; ++i) {
            Projector p;
            p.w1 = get_mat(in);
            p.b1 = get_vec(in);
            p.w2 = get_mat(in);
            p.b2 = get_vec(in);
            task.projectors.push_back(std::move(p));
        }
        pool.tasks_.push_back(std::move(task));
    }

    const std::uint32_t n_records = get_u32(in);
    for (std::uint32_t i = 0; i < n_records; ++i) {
        ClassRecord rec;
        rec.class_id = get_u32(in);
        rec.task_index = get_u32(in);
        rec.raw_prototype = get_vec(in);
        rec.class_offset = get_vec(in);
        if (get_u32(in) != 0) rec.frozen_calibrated = get_vec(in);
        pool.records_.emplace(rec.class_id, std::move(rec));
    }
    return pool;
}

}  // namespace ept
