#pragma once

#include <Eigen/Dense>

#include <cstdint>

namespace ept {

template <class S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;

using Mat = MatX<double>;
using Vec = VecX<double>;

// Row-major float storage, matching the on-disk feature layout byte for byte.
using MatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Derives an independent RNG seed for a named stream (splitmix64 finalizer).
// Keeps per-class / per-stage / per-epoch draws decoupled from loop order.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Index of the smallest entry; values within 1e-12 relative of the minimum
// count as ties and resolve to the lowest index. Factorization ulp noise on
// duplicated prototype rows must not flip the winner.
template <class S>
Eigen::Index argmin_with_ties(const VecX<S>& v) {
    Eigen::Index best = 0;
    S m = v[0];
    for (Eigen::Index i = 1; i < v.size(); ++i) {
        if (v[i] < m) {
            m = v[i];
            best = i;
        }
    }
    const S bound = m + std::abs(m) * S(1e-12);
    for (Eigen::Index i = 0; i < best; ++i) {
        if (v[i] <= bound) return i;
    }
    return best;
}

}  // namespace ept
