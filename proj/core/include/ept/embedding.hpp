#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ept/errors.hpp"
#include "ept/linalg.hpp"

namespace ept {

// Precomputed backbone features with integer labels. Features are kept in
// float32 (the on-disk width); downstream math promotes to double.
struct EmbeddingDataset {
    MatF features;                      // N x d_f, row-major
    std::vector<std::uint32_t> labels;  // length N, each < num_classes
    std::uint32_t num_classes = 0;

    Eigen::Index size() const { return features.rows(); }
    Eigen::Index dim() const { return features.cols(); }
    Vec row(Eigen::Index i) const { return features.row(i).cast<double>().transpose(); }

    // Throws ValidationError on label overflow, non-finite entries or
    // empty dimensions.
    void validate() const;
};

// EPTB container, little-endian, no padding:
//   "EPTB"  u32 version=1  u32 N  u32 d_f  u32 num_classes
//   N*d_f float32 features (row-major)  N u32 labels
EmbeddingDataset load_embeddings(const std::string& path);
void save_embeddings(const EmbeddingDataset& dataset, const std::string& path);

struct SynthSpec {
    std::uint32_t num_classes = 0;
    std::uint32_t dim = 0;
    std::uint32_t samples_per_class = 0;
    double mean_scale = 1.0;  // radius of the sphere class means are drawn on
    double noise_std = 1.0;   // componentwise Gaussian noise around the mean

    void validate() const;
};

// Gaussian clusters: class means uniform on a sphere of radius mean_scale,
// samples_per_class rows per class (grouped, labels ascending). Pure
// function of (spec, seed).
EmbeddingDataset generate_synthetic(const SynthSpec& spec, std::uint64_t seed);

// Stacks the given rows in ascending index order (duplicates kept). The
// sorted order pins the summation order of everything computed from the
// result, e.g. raw prototypes.
Mat gather_rows_sorted(const EmbeddingDataset& dataset, std::vector<std::uint32_t> indices);

}  // namespace ept
