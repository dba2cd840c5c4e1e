#pragma once

#include <stdexcept>
#include <string>

namespace switchkd {

// Shape disagreement between operands (matmul inner dims, vector lengths, ...).
struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A caller broke an API precondition (non-scalar backward root, empty mask, ...).
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite values where finite ones are required.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Index outside the addressable range.
struct BoundsError : std::out_of_range {
    using std::out_of_range::out_of_range;
};

// Constant logits row: min-max normalization has zero range.
struct DegenerateDistribution : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Teacher/student switch contract violated; message names the offending field.
struct CompatibilityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Synthetic scene cannot be placed on the configured grid.
struct GenerationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed persisted data; message carries file and line number.
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid or unknown configuration document content.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace switchkd
