#pragma once

#include <vector>

namespace switchkd::oracles {

// Straight-line re-derivations used to cross-check the engine. Everything in
// this namespace is intentionally self-contained: no code is shared with the
// implementations it checks.

// Rank-normalize / reference-line / argmax re-derivation of the knee cutoff,
// including the [2, min(N, k_cap)] clamp and the constant-input fallback.
int brute_force_knee(const std::vector<double>& z, int k_cap);

struct DbildBreakdown {
    double teacher_guided = 0.0;
    double student_guided = 0.0;
    double total = 0.0;
    int k_teacher = 0;
    int k_student = 0;
};

// Naive two-branch evaluation: knee, top-k selection, pairwise differences,
// temperature softmax, reverse KL with the 1e-12 floor. Value only.
DbildBreakdown dbild_reference(const std::vector<double>& z_t, const std::vector<double>& z_s,
                               double tau, int k_cap);

// Rule-based relabeling of a synthetic sample from its rendered pixels alone
// (connected components, quadrant inspection, pixel counting). The returned
// token must equal the stored answer whenever noise_level is 0.
int relabel_from_image(const std::vector<double>& image, const std::vector<int>& prompt);

} // namespace switchkd::oracles
