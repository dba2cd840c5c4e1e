#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <vector>

#include "switchkd/kernels.hpp"
#include "switchkd/rng.hpp"

using namespace switchkd;
namespace k = switchkd::kernels;

namespace {

std::vector<double> random_vec(Rng& rng, size_t n, double lo = -4.0, double hi = 4.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
}

struct BackendGuard {
    k::Backend saved;
    BackendGuard() : saved(k::active()) {}
    ~BackendGuard() { k::force(saved); }
};

} // namespace

TEST_CASE("matmul matches a hand-computed product") {
    BackendGuard guard;
    const std::vector<double> a{1, 2, 3, 4}; // 2x2
    const std::vector<double> b{1, 1};       // 2x1
    std::vector<double> c(2);
    k::matmul(a.data(), b.data(), c.data(), 2, 2, 1);
    CHECK(c[0] == 3.0);
    CHECK(c[1] == 7.0);
}

TEST_CASE("transpose round-trips") {
    Rng rng(7);
    auto a = random_vec(rng, 3 * 5);
    std::vector<double> at(15), back(15);
    k::transpose(a.data(), at.data(), 3, 5);
    k::transpose(at.data(), back.data(), 5, 3);
    CHECK(back == a);
}

#ifdef SWITCHKD_HAVE_AVX2
TEST_CASE("avx2 backend is bit-identical to the scalar reference") {
    if (!k::supported(k::Backend::avx2)) return;
    BackendGuard guard;
    Rng rng(42);

    // Shapes straddle the 4-lane width to cover vector body and scalar tail.
    for (int trial = 0; trial < 50; ++trial) {
        const int m = 1 + rng.bounded_int(9);
        const int kk = 1 + rng.bounded_int(9);
        const int n = 1 + rng.bounded_int(17);
        auto a = random_vec(rng, static_cast<size_t>(m) * kk);
        auto b = random_vec(rng, static_cast<size_t>(kk) * n);
        auto c0 = random_vec(rng, static_cast<size_t>(m) * n);

        auto c_scalar = c0;
        k::force(k::Backend::scalar);
        k::matmul_acc(a.data(), b.data(), c_scalar.data(), m, kk, n);

        auto c_avx = c0;
        k::force(k::Backend::avx2);
        k::matmul_acc(a.data(), b.data(), c_avx.data(), m, kk, n);

        REQUIRE(c_scalar == c_avx);
    }

    for (int trial = 0; trial < 50; ++trial) {
        const size_t n = 1 + rng.bounded(70);
        auto a = random_vec(rng, n);
        auto b = random_vec(rng, n);
        const double s = rng.uniform(-2.0, 2.0);

        std::vector<double> r_scalar(n), r_avx(n);
        auto y_scalar = b, y_avx = b;

        k::force(k::Backend::scalar);
        k::add(a.data(), b.data(), r_scalar.data(), n);
        auto add_s = r_scalar;
        k::sub(a.data(), b.data(), r_scalar.data(), n);
        auto sub_s = r_scalar;
        k::mul(a.data(), b.data(), r_scalar.data(), n);
        auto mul_s = r_scalar;
        k::scale(a.data(), s, r_scalar.data(), n);
        auto scale_s = r_scalar;
        k::axpy(s, a.data(), y_scalar.data(), n);

        k::force(k::Backend::avx2);
        k::add(a.data(), b.data(), r_avx.data(), n);
        REQUIRE(add_s == r_avx);
        k::sub(a.data(), b.data(), r_avx.data(), n);
        REQUIRE(sub_s == r_avx);
        k::mul(a.data(), b.data(), r_avx.data(), n);
        REQUIRE(mul_s == r_avx);
        k::scale(a.data(), s, r_avx.data(), n);
        REQUIRE(scale_s == r_avx);
        k::axpy(s, a.data(), y_avx.data(), n);
        REQUIRE(y_scalar == y_avx);
    }
}
#endif
