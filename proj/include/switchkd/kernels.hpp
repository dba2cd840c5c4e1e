#pragma once

#include <cstddef>
#include <string>

namespace switchkd::kernels {

// Dense f64 inner loops behind the whole engine. Every backend must produce
// bit-identical results to the scalar reference: the vector variants keep the
// scalar accumulation order per output element and never fuse multiply-add,
// so kernel selection cannot change any downstream byte.
enum class Backend { scalar, avx2 };

const char* name(Backend b);
bool supported(Backend b);

// Active backend: resolved once from SWITCHKD_KERNEL (scalar|avx2) or CPU
// detection. force() overrides it (tests); throws if unsupported.
Backend active();
void force(Backend b);

// c = a[m x k] * b[k x n], row-major.
void matmul(const double* a, const double* b, double* c, int m, int k, int n);
// c += a[m x k] * b[k x n].
void matmul_acc(const double* a, const double* b, double* c, int m, int k, int n);
// at[n x m] = transpose of a[m x n].
void transpose(const double* a, double* at, int m, int n);

void add(const double* a, const double* b, double* out, size_t n);
void sub(const double* a, const double* b, double* out, size_t n);
void mul(const double* a, const double* b, double* out, size_t n);
void scale(const double* a, double s, double* out, size_t n);
// y += s * x
void axpy(double s, const double* x, double* y, size_t n);

namespace detail {
struct Ops {
    void (*matmul_acc)(const double*, const double*, double*, int, int, int);
    void (*add)(const double*, const double*, double*, size_t);
    void (*sub)(const double*, const double*, double*, size_t);
    void (*mul)(const double*, const double*, double*, size_t);
    void (*scale)(const double*, double, double*, size_t);
    void (*axpy)(double, const double*, double*, size_t);
};
const Ops& scalar_ops();
#ifdef SWITCHKD_HAVE_AVX2
const Ops& avx2_ops();
bool avx2_available();
#endif
} // namespace detail

} // namespace switchkd::kernels
