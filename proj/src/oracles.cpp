#include "switchkd/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "switchkd/synth_data.hpp"

namespace switchkd::oracles {

namespace {

std::vector<int> descending_order(const std::vector<double>& z) {
    std::vector<int> order(z.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return z[a] > z[b]; });
    return order;
}

std::vector<double> softmax_over_tau(const std::vector<double>& d, double tau) {
    double m = d[0];
    for (double x : d) m = std::max(m, x);
    std::vector<double> p(d.size());
    double s = 0.0;
    for (size_t i = 0; i < d.size(); ++i) {
        p[i] = std::exp((d[i] - m) / tau);
        s += p[i];
    }
    for (double& x : p) x /= s;
    return p;
}

double reverse_kl(const std::vector<double>& p_ref, const std::vector<double>& q) {
    double acc = 0.0;
    for (size_t i = 0; i < q.size(); ++i) {
        const double qi = std::max(q[i], 1e-12);
        const double pi = std::max(p_ref[i], 1e-12);
        acc += qi * (std::log(qi) - std::log(pi));
    }
    return acc;
}

// One branch with `leader` deciding the top-k indices; the reference side is
// always built from the teacher values, the mover side from the student.
double branch_loss(const std::vector<double>& leader, const std::vector<double>& z_t,
                   const std::vector<double>& z_s, double tau, int k_cap, int* k_out) {
    const int k = brute_force_knee(leader, k_cap);
    if (k_out) *k_out = k;
    const std::vector<int> order = descending_order(leader);

    std::vector<double> sel_t(k), sel_s(k);
    for (int i = 0; i < k; ++i) {
        sel_t[i] = z_t[order[i]];
        sel_s[i] = z_s[order[i]];
    }
    std::vector<double> d_t, d_s;
    for (int m = 0; m < k; ++m)
        for (int n = m + 1; n < k; ++n) {
            d_t.push_back(sel_t[m] - sel_t[n]);
            d_s.push_back(sel_s[m] - sel_s[n]);
        }
    return reverse_kl(softmax_over_tau(d_t, tau), softmax_over_tau(d_s, tau));
}

} // namespace

int brute_force_knee(const std::vector<double>& z, int k_cap) {
    const int n = static_cast<int>(z.size());
    std::vector<double> sorted(z);
    std::stable_sort(sorted.begin(), sorted.end(), std::greater<double>());
    const double zmax = sorted.front(), zmin = sorted.back();
    int k = 2;
    if (zmax != zmin) {
        double best_d = -1e300;
        for (int i = 1; i <= n; ++i) {
            const double xi = static_cast<double>(i) / n;
            const double yi = (sorted[i - 1] - zmin) / (zmax - zmin);
            const double di = (1.0 - xi) - yi;
            if (di > best_d) {
                best_d = di;
                k = i;
            }
        }
    }
    return std::clamp(k, 2, std::min(n, k_cap));
}

DbildBreakdown dbild_reference(const std::vector<double>& z_t, const std::vector<double>& z_s,
                               double tau, int k_cap) {
    DbildBreakdown b;
    b.teacher_guided = branch_loss(z_t, z_t, z_s, tau, k_cap, &b.k_teacher);
    b.student_guided = branch_loss(z_s, z_t, z_s, tau, k_cap, &b.k_student);
    b.total = b.teacher_guided + b.student_guided;
    return b;
}

namespace {

// palette index of a pixel, or -1 for background
int pixel_color(const std::vector<double>& image, int x, int y) {
    const double* px = image.data() + (static_cast<size_t>(y) * kImageW + x) * kImageC;
    if (px[0] == 0 && px[1] == 0 && px[2] == 0) return -1;
    static const double palette[vocab::kNumColors][3] = {
        {1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 0}, {0, 1, 1}, {1, 0, 1},
    };
    for (int c = 0; c < vocab::kNumColors; ++c)
        if (px[0] == palette[c][0] && px[1] == palette[c][1] && px[2] == palette[c][2]) return c;
    return -1;
}

int count_components_of_color(const std::vector<double>& image, int color) {
    std::vector<int> mark(static_cast<size_t>(kImageH) * kImageW, 0);
    int components = 0;
    for (int y = 0; y < kImageH; ++y)
        for (int x = 0; x < kImageW; ++x) {
            if (mark[y * kImageW + x] || pixel_color(image, x, y) != color) continue;
            ++components;
            std::vector<std::pair<int, int>> stack{{x, y}};
            mark[y * kImageW + x] = 1;
            while (!stack.empty()) {
                auto [cx, cy] = stack.back();
                stack.pop_back();
                const int dx[4] = {1, -1, 0, 0}, dy[4] = {0, 0, 1, -1};
                for (int d = 0; d < 4; ++d) {
                    const int nx = cx + dx[d], ny = cy + dy[d];
                    if (nx < 0 || nx >= kImageW || ny < 0 || ny >= kImageH) continue;
                    if (mark[ny * kImageW + nx] || pixel_color(image, nx, ny) != color) continue;
                    mark[ny * kImageW + nx] = 1;
                    stack.emplace_back(nx, ny);
                }
            }
        }
    return components;
}

int shape_in_quadrant(const std::vector<double>& image, int quadrant) {
    const int qx = (quadrant % 2) * 4, qy = (quadrant / 2) * 4;
    int x0 = kImageW, x1 = -1, y0 = kImageH, y1 = -1;
    for (int y = qy; y < qy + 4; ++y)
        for (int x = qx; x < qx + 4; ++x)
            if (pixel_color(image, x, y) >= 0) {
                x0 = std::min(x0, x);
                x1 = std::max(x1, x);
                y0 = std::min(y0, y);
                y1 = std::max(y1, y);
            }
    if (x1 < 0) return vocab::kNone;
    for (int y = y0 + 1; y < y1; ++y)
        for (int x = x0 + 1; x < x1; ++x)
            if (pixel_color(image, x, y) < 0) return vocab::kShapeHollow;
    return vocab::kShapeSolid;
}

} // namespace

int relabel_from_image(const std::vector<double>& image, const std::vector<int>& prompt) {
    if (prompt.size() < 2) throw std::invalid_argument("relabel_from_image: prompt too short");
    const int query = prompt[1];
    if (query == vocab::kQueryCount) {
        const int color = prompt.at(2) - vocab::kColor0;
        return vocab::kDigit0 + count_components_of_color(image, color);
    }
    if (query == vocab::kQueryShape) return shape_in_quadrant(image, prompt.at(2) - vocab::kPos0);
    if (query == vocab::kQueryMajority) {
        int counts[vocab::kNumColors] = {};
        for (int y = 0; y < kImageH; ++y)
            for (int x = 0; x < kImageW; ++x) {
                const int c = pixel_color(image, x, y);
                if (c >= 0) ++counts[c];
            }
        int best = 0;
        for (int c = 1; c < vocab::kNumColors; ++c)
            if (counts[c] > counts[best]) best = c;
        return vocab::kColor0 + best;
    }
    throw std::invalid_argument("relabel_from_image: unrecognized query token");
}

} // namespace switchkd::oracles
