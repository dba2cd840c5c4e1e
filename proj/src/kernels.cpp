#include "switchkd/kernels.hpp"

#include <cstdlib>
#include <cstring>
#include <stdexcept>
#include <string>

namespace switchkd::kernels {

namespace {

using detail::Ops;

Backend detect() {
    if (const char* env = std::getenv("SWITCHKD_KERNEL")) {
        std::string v(env);
        if (v == "scalar") return Backend::scalar;
        if (v == "avx2") {
            if (!supported(Backend::avx2))
                throw std::runtime_error("SWITCHKD_KERNEL=avx2 but avx2 is unavailable");
            return Backend::avx2;
        }
        throw std::runtime_error("SWITCHKD_KERNEL: unknown backend '" + v + "'");
    }
#ifdef SWITCHKD_HAVE_AVX2
    if (detail::avx2_available()) return Backend::avx2;
#endif
    return Backend::scalar;
}

struct State {
    Backend backend;
    const Ops* ops;
};

State& state() {
    static State s = [] {
        Backend b = detect();
        return State{b, b == Backend::scalar ? &detail::scalar_ops()
#ifdef SWITCHKD_HAVE_AVX2
                                             : &detail::avx2_ops()
#else
                                             : nullptr
#endif
        };
    }();
    return s;
}

} // namespace

const char* name(Backend b) { return b == Backend::scalar ? "scalar" : "avx2"; }

bool supported(Backend b) {
    if (b == Backend::scalar) return true;
#ifdef SWITCHKD_HAVE_AVX2
    return detail::avx2_available();
#else
    return false;
#endif
}

Backend active() { return state().backend; }

void force(Backend b) {
    if (!supported(b))
        throw std::runtime_error(std::string("kernel backend unsupported on this host: ") + name(b));
    state().backend = b;
    state().ops = b == Backend::scalar ? &detail::scalar_ops()
#ifdef SWITCHKD_HAVE_AVX2
                                       : &detail::avx2_ops();
#else
                                       : nullptr;
#endif
}

void matmul(const double* a, const double* b, double* c, int m, int k, int n) {
    std::memset(c, 0, sizeof(double) * static_cast<size_t>(m) * n);
    state().ops->matmul_acc(a, b, c, m, k, n);
}

void matmul_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    state().ops->matmul_acc(a, b, c, m, k, n);
}

void transpose(const double* a, double* at, int m, int n) {
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) at[static_cast<size_t>(j) * m + i] = a[static_cast<size_t>(i) * n + j];
}

void add(const double* a, const double* b, double* out, size_t n) { state().ops->add(a, b, out, n); }
void sub(const double* a, const double* b, double* out, size_t n) { state().ops->sub(a, b, out, n); }
void mul(const double* a, const double* b, double* out, size_t n) { state().ops->mul(a, b, out, n); }
void scale(const double* a, double s, double* out, size_t n) { state().ops->scale(a, s, out, n); }
void axpy(double s, const double* x, double* y, size_t n) { state().ops->axpy(s, x, y, n); }

} // namespace switchkd::kernels
