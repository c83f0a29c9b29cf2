#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "ept/calibration.hpp"
#include "ept/protocol.hpp"
#include "ept/train.hpp"

namespace ept {

// Component toggles. Disabled offsets stay pinned at exactly zero and are
// excluded from gradients; with NEP off, classification falls back to the
// euclidean metric at train and test time.
struct AblationFlags {
    bool nep = true;
    bool cs_offset = true;
    bool ta_offset = true;

    bool operator==(const AblationFlags&) const = default;
};

struct PoolOptions {
    Eigen::Index d_t = 0;  // 0 = match the feature dimension
    Eigen::Index d_h = 4;
    double alpha = 0.001;
    ProjectorSharing sharing = ProjectorSharing::PerClass;

    bool operator==(const PoolOptions&) const = default;
};

// The resolved run configuration; mirrors the JSON config schema one to one
// and is echoed verbatim into every run report.
struct CliConfig {
    ProtocolSpec protocol;
    TrainConfig train;
    NepParams nep;
    PoolOptions pool;
    AblationFlags ablation;
    double bias_shift = 0.0;
    int threads = 1;
    std::optional<std::string> out;

    std::uint64_t seed() const { return train.seed; }
    void validate() const;

    bool operator==(const CliConfig&) const;
};

// Strict parser: unknown keys anywhere are a ConfigError. Absent keys take
// the documented defaults; "protocol" is required.
CliConfig parse_cli_config(const std::string& json_text);
CliConfig load_cli_config(const std::string& path);

// Fully-resolved echo; parse_cli_config(to_json(c)) == c.
std::string to_json(const CliConfig& cfg);

}  // namespace ept
