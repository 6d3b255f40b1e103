#include "p2ssm/kernels.hpp"

#if defined(__AVX2__)
#include <immintrin.h>
#endif

namespace p2ssm::kernels::detail {

#if defined(__AVX2__)
namespace {

template <typename T>
struct Lanes;

template <>
struct Lanes<float> {
  using V = __m256;
  static constexpr std::size_t width = 8;
  static V load(const float* p) { return _mm256_loadu_ps(p); }
  static void store(float* p, V v) { _mm256_storeu_ps(p, v); }
  static V set1(float v) { return _mm256_set1_ps(v); }
  static V add(V a, V b) { return _mm256_add_ps(a, b); }
  static V sub(V a, V b) { return _mm256_sub_ps(a, b); }
  static V mul(V a, V b) { return _mm256_mul_ps(a, b); }
  static V min(V a, V b) { return _mm256_min_ps(a, b); }
  static V less(V a, V b) { return _mm256_cmp_ps(a, b, _CMP_LT_OQ); }
  static V greater(V a, V b) { return _mm256_cmp_ps(a, b, _CMP_GT_OQ); }
  static V blend(V a, V b, V mask) { return _mm256_blendv_ps(a, b, mask); }
};

template <>
struct Lanes<double> {
  using V = __m256d;
  static constexpr std::size_t width = 4;
  static V load(const double* p) { return _mm256_loadu_pd(p); }
  static void store(double* p, V v) { _mm256_storeu_pd(p, v); }
  static V set1(double v) { return _mm256_set1_pd(v); }
  static V add(V a, V b) { return _mm256_add_pd(a, b); }
  static V sub(V a, V b) { return _mm256_sub_pd(a, b); }
  static V mul(V a, V b) { return _mm256_mul_pd(a, b); }
  static V min(V a, V b) { return _mm256_min_pd(a, b); }
  static V less(V a, V b) { return _mm256_cmp_pd(a, b, _CMP_LT_OQ); }
  static V greater(V a, V b) { return _mm256_cmp_pd(a, b, _CMP_GT_OQ); }
  static V blend(V a, V b, V mask) { return _mm256_blendv_pd(a, b, mask); }
};

template <typename T>
inline typename Lanes<T>::V dist2_block(SoaView<T> p, std::size_t i, typename Lanes<T>::V qx,
                                        typename Lanes<T>::V qy, typename Lanes<T>::V qz) {
  using L = Lanes<T>;
  const auto dx = L::sub(L::load(p.x + i), qx);
  const auto dy = L::sub(L::load(p.y + i), qy);
  const auto dz = L::sub(L::load(p.z + i), qz);
  return L::add(L::add(L::mul(dx, dx), L::mul(dy, dy)), L::mul(dz, dz));
}

template <typename T>
inline T dist2(SoaView<T> p, std::size_t i, const T* q) {
  const T dx = p.x[i] - q[0];
  const T dy = p.y[i] - q[1];
  const T dz = p.z[i] - q[2];
  return dx * dx + dy * dy + dz * dz;
}

template <typename T>
void squared_distances(SoaView<T> pts, const T* q, T* out) {
  using L = Lanes<T>;
  const auto qx = L::set1(q[0]), qy = L::set1(q[1]), qz = L::set1(q[2]);
  std::size_t i = 0;
  for (; i + L::width <= pts.size; i += L::width) L::store(out + i, dist2_block(pts, i, qx, qy, qz));
  for (; i < pts.size; ++i) out[i] = dist2(pts, i, q);
}

// Lane-wise best value plus the block number it came from. Block numbers are
// stored in the value type; exact for any realistic point count.
template <typename T>
Nearest<T> nearest(SoaView<T> pts, const T* q) {
  using L = Lanes<T>;
  constexpr std::size_t W = L::width;
  Nearest<T> best{dist2(pts, 0, q), 0};
  std::size_t i = 0;
  if (pts.size >= W) {
    const auto qx = L::set1(q[0]), qy = L::set1(q[1]), qz = L::set1(q[2]);
    auto best_v = dist2_block(pts, 0, qx, qy, qz);
    auto best_blk = L::set1(T(0));
    i = W;
    for (std::size_t blk = 1; i + W <= pts.size; i += W, ++blk) {
      const auto d = dist2_block(pts, i, qx, qy, qz);
      const auto m = L::less(d, best_v);
      best_v = L::blend(best_v, d, m);
      best_blk = L::blend(best_blk, L::set1(static_cast<T>(blk)), m);
    }
    alignas(32) T vals[W];
    alignas(32) T blks[W];
    L::store(vals, best_v);
    L::store(blks, best_blk);
    best = {vals[0], static_cast<std::size_t>(blks[0]) * W};
    for (std::size_t lane = 1; lane < W; ++lane) {
      const std::size_t idx = static_cast<std::size_t>(blks[lane]) * W + lane;
      if (vals[lane] < best.dist2 || (vals[lane] == best.dist2 && idx < best.index)) {
        best = {vals[lane], idx};
      }
    }
  } else {
    i = 1;
  }
  for (; i < pts.size; ++i) {
    const T d = dist2(pts, i, q);
    if (d < best.dist2) best = {d, i};
  }
  return best;
}

template <typename T>
std::size_t min_update_argmax(SoaView<T> pts, const T* q, T* min_dist) {
  using L = Lanes<T>;
  constexpr std::size_t W = L::width;
  std::size_t arg = 0;
  T best = T(-1);
  std::size_t i = 0;
  if (pts.size >= W) {
    const auto qx = L::set1(q[0]), qy = L::set1(q[1]), qz = L::set1(q[2]);
    auto best_v = L::set1(T(-1));
    auto best_blk = L::set1(T(0));
    for (std::size_t blk = 0; i + W <= pts.size; i += W, ++blk) {
      const auto d = dist2_block(pts, i, qx, qy, qz);
      const auto m = L::min(L::load(min_dist + i), d);
      L::store(min_dist + i, m);
      const auto gt = L::greater(m, best_v);
      best_v = L::blend(best_v, m, gt);
      best_blk = L::blend(best_blk, L::set1(static_cast<T>(blk)), gt);
    }
    alignas(32) T vals[W];
    alignas(32) T blks[W];
    L::store(vals, best_v);
    L::store(blks, best_blk);
    for (std::size_t lane = 0; lane < W; ++lane) {
      const std::size_t idx = static_cast<std::size_t>(blks[lane]) * W + lane;
      if (vals[lane] > best || (vals[lane] == best && idx < arg)) {
        best = vals[lane];
        arg = idx;
      }
    }
  }
  for (; i < pts.size; ++i) {
    const T d = dist2(pts, i, q);
    if (d < min_dist[i]) min_dist[i] = d;
    if (min_dist[i] > best) {
      best = min_dist[i];
      arg = i;
    }
  }
  return arg;
}

}  // namespace

bool avx2_compiled() { return true; }

template <typename T>
KernelTable<T> avx2_table() {
  return {&squared_distances<T>, &nearest<T>, &min_update_argmax<T>};
}

#else

bool avx2_compiled() { return false; }

template <typename T>
KernelTable<T> avx2_table() {
  return scalar_table<T>();
}

#endif

template KernelTable<float> avx2_table<float>();
template KernelTable<double> avx2_table<double>();

}  // namespace p2ssm::kernels::detail
