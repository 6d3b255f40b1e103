#include <doctest.h>

#include <random>

#include "p2ssm/kernels.hpp"

using namespace p2ssm::kernels;

namespace {

template <typename T>
SoaPoints<T> random_soa(std::size_t n, std::mt19937_64& rng, bool with_duplicates) {
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  SoaPoints<T> s(n);
  for (std::size_t i = 0; i < n; ++i) {
    s.x[i] = static_cast<T>(u(rng));
    s.y[i] = static_cast<T>(u(rng));
    s.z[i] = static_cast<T>(u(rng));
    if (with_duplicates && i > 0 && i % 5 == 0) {
      s.x[i] = s.x[i - 3];
      s.y[i] = s.y[i - 3];
      s.z[i] = s.z[i - 3];
    }
  }
  return s;
}

template <typename T>
void check_equivalence() {
  if (!isa_supported(Isa::avx2)) return;
  const auto& ref = table<T>(Isa::scalar);
  const auto& simd = table<T>(Isa::avx2);
  std::mt19937_64 rng(7);
  // Sizes straddle the 4/8 lane widths and their tails.
  for (std::size_t n : {1, 2, 3, 4, 5, 7, 8, 9, 15, 16, 17, 31, 33, 100, 257}) {
    for (bool dups : {false, true}) {
      const auto pts = random_soa<T>(n, rng, dups);
      for (int q = 0; q < 5; ++q) {
        // Query on an existing point forces exact ties when duplicates exist.
        const std::size_t pick = static_cast<std::size_t>(q) % n;
        const T query[3] = {pts.x[pick], pts.y[pick], pts.z[pick]};

        std::vector<T> a(n), b(n);
        ref.squared_distances(pts.view(), query, a.data());
        simd.squared_distances(pts.view(), query, b.data());
        CHECK(a == b);

        const auto na = ref.nearest(pts.view(), query);
        const auto nb = simd.nearest(pts.view(), query);
        CHECK(na.index == nb.index);
        CHECK(na.dist2 == nb.dist2);

        std::vector<T> ma(n, T(1e30)), mb(n, T(1e30));
        for (std::size_t k = 0; k < std::min<std::size_t>(n, 6); ++k) {
          const T qk[3] = {pts.x[k], pts.y[k], pts.z[k]};
          CHECK(ref.min_update_argmax(pts.view(), qk, ma.data()) == simd.min_update_argmax(pts.view(), qk, mb.data()));
          CHECK(ma == mb);
        }
      }
    }
  }
}

}  // namespace

TEST_CASE("avx2 kernels match the scalar reference bit for bit") {
  check_equivalence<float>();
  check_equivalence<double>();
}

TEST_CASE("scalar kernels") {
  SoaPoints<double> pts(4);
  pts.x = {0, 1, 1, 3};
  pts.y = {0, 0, 0, 0};
  pts.z = {0, 0, 0, 0};
  const double q[3] = {1, 0, 0};
  const auto& t = table<double>(Isa::scalar);
  std::vector<double> d(4);
  t.squared_distances(pts.view(), q, d.data());
  CHECK(d == std::vector<double>{1, 0, 0, 4});
  const auto n = t.nearest(pts.view(), q);
  CHECK(n.index == 1);  // tie between 1 and 2 goes low
  std::vector<double> md{5, 5, 5, 5};
  CHECK(t.min_update_argmax(pts.view(), q, md.data()) == 3);
  CHECK(md == std::vector<double>{1, 0, 0, 4});
}

TEST_CASE("isa selection") {
  CHECK(isa_supported(Isa::scalar));
  const Isa before = active_isa();
  set_active_isa(Isa::scalar);
  CHECK(active_isa() == Isa::scalar);
  set_active_isa(before);
  CHECK(isa_name(Isa::avx2) == "avx2");
}
