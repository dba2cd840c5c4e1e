#pragma once

#include <vector>

#include "switchkd/errors.hpp"

namespace switchkd {

// Rank/value-normalized view of a sorted logits vector plus its distance to
// the reference line r(x) = 1 - x.
struct NormalizedCurve {
    std::vector<double> x; // rank coordinates i/N, strictly increasing in (0, 1]
    std::vector<double> y; // min-max normalized values, non-increasing in [0, 1]
    std::vector<double> d; // d_i = (1 - x_i) - y_i
};

struct KneeResult {
    int k = 0;                       // cutoff, clamped to [2, min(N, k_cap)]
    std::vector<int> sorted_indices; // descending stable permutation of the input
};

// Normalizes a non-increasing vector (length >= 2). Throws
// DegenerateDistribution when max == min; callers apply the k = 2 fallback.
NormalizedCurve normalize_sorted(const std::vector<double>& z_sorted);

// Transition point between the information-rich head and the long tail:
// sorts z descending (stable), takes argmax_i d_i (first index on ties) and
// clamps to [2, min(N, k_cap)]. Constant input falls back to k = 2.
KneeResult knee_index(const std::vector<double>& z, int k_cap);

} // namespace switchkd
