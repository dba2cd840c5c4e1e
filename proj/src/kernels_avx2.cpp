#ifdef SWITCHKD_HAVE_AVX2

#include "switchkd/kernels.hpp"

#include <immintrin.h>

namespace switchkd::kernels::detail {

// AVX2 lane. Broadcast-a / stream-b layout keeps each c[i][j] accumulating in
// ascending-k order, same as the scalar kernel; mul followed by add (no FMA)
// rounds identically per element, so outputs match the scalar backend bit for
// bit. The TU is compiled with -mavx2 and only reached after a CPU check.
namespace {

void v_matmul_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    const int n4 = n & ~3;
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<size_t>(i) * k;
        double* crow = c + static_cast<size_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
            const double aik = arow[kk];
            const double* brow = b + static_cast<size_t>(kk) * n;
            const __m256d va = _mm256_set1_pd(aik);
            int j = 0;
            for (; j < n4; j += 4) {
                __m256d vb = _mm256_loadu_pd(brow + j);
                __m256d vc = _mm256_loadu_pd(crow + j);
                vc = _mm256_add_pd(vc, _mm256_mul_pd(va, vb));
                _mm256_storeu_pd(crow + j, vc);
            }
            for (; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
}

void v_add(const double* a, const double* b, double* out, size_t n) {
    size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void v_sub(const double* a, const double* b, double* out, size_t n) {
    size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] - b[i];
}

void v_mul(const double* a, const double* b, double* out, size_t n) {
    size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void v_scale(const double* a, double s, double* out, size_t n) {
    const __m256d vs = _mm256_set1_pd(s);
    size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), vs));
    for (; i < n; ++i) out[i] = a[i] * s;
}

void v_axpy(double s, const double* x, double* y, size_t n) {
    const __m256d vs = _mm256_set1_pd(s);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vy = _mm256_loadu_pd(y + i);
        vy = _mm256_add_pd(vy, _mm256_mul_pd(vs, _mm256_loadu_pd(x + i)));
        _mm256_storeu_pd(y + i, vy);
    }
    for (; i < n; ++i) y[i] += s * x[i];
}

} // namespace

const Ops& avx2_ops() {
    static const Ops ops{v_matmul_acc, v_add, v_sub, v_mul, v_scale, v_axpy};
    return ops;
}

bool avx2_available() { return __builtin_cpu_supports("avx2"); }

} // namespace switchkd::kernels::detail

#endif // SWITCHKD_HAVE_AVX2
