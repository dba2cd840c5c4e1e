#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace switchkd {

struct CheckResult {
    std::string name;
    long cases = 0;
    long failures = 0;
    // gradient checks: worst |ad-fd|/tolerance (pass < 1); value checks:
    // worst absolute deviation
    double max_error = 0.0;
    std::string detail;
    bool passed() const { return failures == 0; }
};

// The property suite: oracle equivalences, invariants and gradient checks.
// Deterministic for a given seed.
std::vector<CheckResult> run_verification(uint64_t seed);

} // namespace switchkd
