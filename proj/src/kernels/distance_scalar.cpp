#include "p2ssm/kernels.hpp"

namespace p2ssm::kernels::detail {
namespace {

template <typename T>
inline T dist2(SoaView<T> p, std::size_t i, const T* q) {
  const T dx = p.x[i] - q[0];
  const T dy = p.y[i] - q[1];
  const T dz = p.z[i] - q[2];
  return dx * dx + dy * dy + dz * dz;
}

template <typename T>
void squared_distances(SoaView<T> pts, const T* q, T* out) {
  for (std::size_t i = 0; i < pts.size; ++i) out[i] = dist2(pts, i, q);
}

template <typename T>
Nearest<T> nearest(SoaView<T> pts, const T* q) {
  Nearest<T> best{dist2(pts, 0, q), 0};
  for (std::size_t i = 1; i < pts.size; ++i) {
    const T d = dist2(pts, i, q);
    if (d < best.dist2) best = {d, i};
  }
  return best;
}

template <typename T>
std::size_t min_update_argmax(SoaView<T> pts, const T* q, T* min_dist) {
  std::size_t arg = 0;
  T best = T(-1);
  for (std::size_t i = 0; i < pts.size; ++i) {
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

template <typename T>
KernelTable<T> scalar_table() {
  return {&squared_distances<T>, &nearest<T>, &min_update_argmax<T>};
}

template KernelTable<float> scalar_table<float>();
template KernelTable<double> scalar_table<double>();

}  // namespace p2ssm::kernels::detail
