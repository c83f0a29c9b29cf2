#pragma once

#include <stdexcept>

namespace ept {

// Base for all engine errors. Subclasses map onto CLI exit codes:
// ConfigError -> 2 (usage/config), everything else -> 1 (runtime).
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid argument or violated data invariant.
struct ValidationError : Error { using Error::Error; };
// Wrong magic/version or malformed container.
struct FormatError : Error { using Error::Error; };
// Filesystem failure or truncated stream.
struct IoError : Error { using Error::Error; };
// Operation applied in an illegal lifecycle state (double freeze etc).
struct StateError : Error { using Error::Error; };
// Non-finite values or a failed factorization.
struct NumericError : Error { using Error::Error; };
// Protocol incompatible with the dataset.
struct ProtocolError : Error { using Error::Error; };
// Bad CLI flags or config file.
struct ConfigError : Error { using Error::Error; };

}  // namespace ept
