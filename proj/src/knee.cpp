#include "switchkd/knee.hpp"

#include <algorithm>

#include "switchkd/autodiff.hpp"

namespace switchkd {

NormalizedCurve normalize_sorted(const std::vector<double>& z_sorted) {
    const size_t n = z_sorted.size();
    if (n < 2) throw ContractError("normalize_sorted: need at least two values");
    for (size_t i = 1; i < n; ++i)
        if (z_sorted[i] > z_sorted[i - 1])
            throw ContractError("normalize_sorted: input must be non-increasing");
    const double zmax = z_sorted.front();
    const double zmin = z_sorted.back();
    if (zmax == zmin) throw DegenerateDistribution("normalize_sorted: constant input has zero range");

    NormalizedCurve c;
    c.x.resize(n);
    c.y.resize(n);
    c.d.resize(n);
    const double range = zmax - zmin;
    for (size_t i = 0; i < n; ++i) {
        c.x[i] = static_cast<double>(i + 1) / static_cast<double>(n);
        c.y[i] = (z_sorted[i] - zmin) / range;
        c.d[i] = (1.0 - c.x[i]) - c.y[i];
    }
    return c;
}

KneeResult knee_index(const std::vector<double>& z, int k_cap) {
    const int n = static_cast<int>(z.size());
    if (n < 2) throw ContractError("knee_index: need at least two logits");
    if (k_cap < 2) throw ContractError("knee_index: k_cap must be at least 2");

    KneeResult res;
    res.sorted_indices = sort_descending_indices(z);

    std::vector<double> sorted(n);
    for (int i = 0; i < n; ++i) sorted[i] = z[res.sorted_indices[i]];

    int k;
    if (sorted.front() == sorted.back()) {
        k = 2; // constant logits: no knee exists, keep training loops alive
    } else {
        const NormalizedCurve c = normalize_sorted(sorted);
        int best = 0;
        for (int i = 1; i < n; ++i)
            if (c.d[i] > c.d[best]) best = i;
        k = best + 1; // ranks are 1-based
    }
    res.k = std::clamp(k, 2, std::min(n, k_cap));
    return res;
}

} // namespace switchkd
