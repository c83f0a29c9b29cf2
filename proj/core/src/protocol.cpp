#include "ept/protocol.hpp"

#include <algorithm>
#include <numeric>
#include <random>

namespace ept {

void ProtocolSpec::validate() const {
    if (base_classes == 0) throw ValidationError("protocol: base_classes must be >= 1");
    if (ways == 0) throw ValidationError("protocol: ways must be >= 1");
    if (shots == 0) throw ValidationError("protocol: shots must be >= 1");
    if (test_per_class && *test_per_class == 0)
        throw ValidationError("protocol: test_per_class must be >= 1 or \"all\"");
}

StagePlan split_protocol(const EmbeddingDataset& dataset, const ProtocolSpec& proto,
                         std::uint64_t seed) {
    proto.validate();
    dataset.validate();

    const std::uint64_t needed =
        std::uint64_t(proto.base_classes) + std::uint64_t(proto.stages) * proto.ways;
    if (needed > dataset.num_classes)
        throw ProtocolError("split_protocol: protocol needs " + std::to_string(needed) +
                            " classes, dataset has " + std::to_string(dataset.num_classes));

    // Rows per class, in dataset order.
    std::vector<std::vector<std::uint32_t>> by_class(dataset.num_classes);
    for (Eigen::Index i = 0; i < dataset.size(); ++i)
        by_class[dataset.labels[std::size_t(i)]].push_back(std::uint32_t(i));

    StagePlan plan;
    plan.stages.resize(proto.stages + 1);
    for (std::size_t t = 0; t <= proto.stages; ++t) {
        const std::uint32_t first =
            t == 0 ? 0 : proto.base_classes + std::uint32_t(t - 1) * proto.ways;
        const std::uint32_t count = t == 0 ? proto.base_classes : proto.ways;
        for (std::uint32_t c = first; c < first + count; ++c)
            plan.stages[t].class_set.push_back(c);
    }

    std::vector<std::uint32_t> cumulative_test;
    for (std::size_t t = 0; t <= proto.stages; ++t) {
        auto& stage = plan.stages[t];
        for (std::uint32_t c : stage.class_set) {
            std::vector<std::uint32_t> rows = by_class[c];
            if (rows.empty())
                throw ProtocolError("split_protocol: class " + std::to_string(c) +
                                    " has no samples");
            std::mt19937_64 rng(mix_seed(seed, c));
            std::shuffle(rows.begin(), rows.end(), rng);

            const std::size_t n = rows.size();
            std::size_t n_test;
            if (proto.test_per_class) {
                n_test = *proto.test_per_class;
                const std::size_t n_support_min = t == 0 ? 1 : proto.shots;
                if (n < n_test + n_support_min)
                    throw ProtocolError("split_protocol: class " + std::to_string(c) + " has " +
                                        std::to_string(n) + " samples, needs >= " +
                                        std::to_string(n_test + n_support_min));
            } else if (t == 0) {
                // "all" held-out for base classes: half support, half test.
                if (n < 2)
                    throw ProtocolError("split_protocol: base class " + std::to_string(c) +
                                        " needs >= 2 samples under test_per_class=all");
                n_test = n / 2;
            } else {
                if (n < std::size_t(proto.shots) + 1)
                    throw ProtocolError("split_protocol: class " + std::to_string(c) + " has " +
                                        std::to_string(n) + " samples, needs >= " +
                                        std::to_string(proto.shots + 1));
                n_test = n - proto.shots;
            }

            // Last n_test entries of the shuffle are test; support comes from
            // the front (everything for base classes, `shots` otherwise).
            const std::size_t n_pool = n - n_test;
            const std::size_t n_support = t == 0 ? n_pool : std::size_t(proto.shots);
            for (std::size_t i = 0; i < n_support; ++i)
                stage.support_indices.push_back(rows[i]);
            for (std::size_t i = n_pool; i < n; ++i) cumulative_test.push_back(rows[i]);
        }
        std::sort(stage.support_indices.begin(), stage.support_indices.end());
        stage.test_indices_cumulative = cumulative_test;
        std::sort(stage.test_indices_cumulative.begin(), stage.test_indices_cumulative.end());
    }
    return plan;
}

EmbeddingDataset apply_support_bias(const EmbeddingDataset& dataset, const StagePlan& plan,
                                    double bias_shift, std::uint64_t seed) {
    if (bias_shift < 0) throw ValidationError("apply_support_bias: bias_shift must be >= 0");
    EmbeddingDataset out = dataset;
    if (bias_shift == 0) return out;

    const Eigen::Index d = dataset.dim();
    for (std::size_t t = 1; t < plan.stages.size(); ++t) {
        for (std::uint32_t c : plan.stages[t].class_set) {
            std::mt19937_64 rng(mix_seed(mix_seed(seed, 0xb1a5), c));
            std::normal_distribution<double> gauss(0.0, 1.0);
            Vec u(d);
            do {
                for (Eigen::Index k = 0; k < d; ++k) u[k] = gauss(rng);
            } while (u.norm() < 1e-12);
            u *= bias_shift / u.norm();

            for (std::uint32_t row : plan.stages[t].support_indices) {
                if (dataset.labels[row] != c) continue;
                out.features.row(Eigen::Index(row)) =
                    (dataset.features.row(Eigen::Index(row)).cast<double>() + u.transpose())
                        .cast<float>();
            }
        }
    }
    return out;
}

}  // namespace ept
