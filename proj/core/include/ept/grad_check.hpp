#pragma once

#include <cstdint>
#include <string>

#include <Eigen/Core>

namespace ept {

struct GradCheckOptions {
    int trials = 100;
    std::uint64_t seed = 1;
    bool float32 = false;
    Eigen::Index d_f = 8;
    Eigen::Index total_classes = 5;    // frozen + current
    Eigen::Index current_classes = 2;  // trainable task size
    Eigen::Index d_h = 4;
    Eigen::Index d_t = 8;
    int batch = 6;
    double step = 0.0;       // central-difference h; 0 = 1e-3 (double) / 1e-2 (float32)
    double tolerance = 0.0;  // 0 = 1e-4 (double) / 1e-2 (float32)
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    int trials_run = 0;
    double tolerance = 0.0;
    double step = 0.0;
    bool float32 = false;
    bool passed = false;
};

// Compares the analytic backward pass against central finite differences of
// the batch loss on randomized stage instances (both projector sharing
// modes, full NEP + inter-class path). Instances whose forward state sits
// within a few steps of a kink (rectifier preactivation, |rho_i|, residual
// norm) are deterministically resampled; a central difference straddling a
// kink does not measure the reported subgradient.
GradCheckReport run_gradient_check(const GradCheckOptions& opts);

}  // namespace ept
