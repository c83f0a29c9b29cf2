#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "ept/embedding.hpp"

namespace ept {

// Stage schedule: base stage 0 with base_classes classes, then `stages`
// incremental stages of `ways` classes x `shots` support samples.
struct ProtocolSpec {
    std::uint32_t base_classes = 0;
    std::uint32_t stages = 0;  // incremental stage count T
    std::uint32_t ways = 0;
    std::uint32_t shots = 0;
    // Test samples reserved per class; nullopt = all held-out samples.
    std::optional<std::uint32_t> test_per_class;

    void validate() const;
};

struct StagePlan {
    struct Stage {
        std::vector<std::uint32_t> class_set;
        std::vector<std::uint32_t> support_indices;         // sorted row ids
        std::vector<std::uint32_t> test_indices_cumulative;  // sorted row ids
    };
    std::vector<Stage> stages;  // size T+1

    std::size_t stage_count() const { return stages.size(); }
};

// Deterministic split: classes map to stages in ascending contiguous id
// blocks; within a class, membership comes from a per-class seeded shuffle
// (last test_per_class entries are test, support drawn from the rest).
StagePlan split_protocol(const EmbeddingDataset& dataset, const ProtocolSpec& proto,
                         std::uint64_t seed);

// Returns a copy where the support rows of every incremental-stage class are
// shifted by bias_shift along a per-class random unit vector. Models the
// few-shot prototype bias scenario; base-stage rows and all test rows are
// untouched.
EmbeddingDataset apply_support_bias(const EmbeddingDataset& dataset, const StagePlan& plan,
                                    double bias_shift, std::uint64_t seed);

}  // namespace ept
