#include "switchkd/kernels.hpp"

namespace switchkd::kernels::detail {

// Reference semantics for every backend. matmul accumulates along k in
// ascending order per output element; vector backends must preserve that
// order (and stay FMA-free) to remain bit-identical.
namespace {

void s_matmul_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<size_t>(i) * k;
        double* crow = c + static_cast<size_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
            const double aik = arow[kk];
            const double* brow = b + static_cast<size_t>(kk) * n;
            for (int j = 0; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
}

void s_add(const double* a, const double* b, double* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void s_sub(const double* a, const double* b, double* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void s_mul(const double* a, const double* b, double* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void s_scale(const double* a, double s, double* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] * s;
}

void s_axpy(double s, const double* x, double* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] += s * x[i];
}

} // namespace

const Ops& scalar_ops() {
    static const Ops ops{s_matmul_acc, s_add, s_sub, s_mul, s_scale, s_axpy};
    return ops;
}

} // namespace switchkd::kernels::detail
