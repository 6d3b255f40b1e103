#pragma once

// Data-parallel distance kernels over structure-of-arrays 3D point sets.
//
// Each kernel exists as a scalar reference and an AVX2 variant. The variant is
// chosen once at startup from CPUID (override with P2SSM_SIMD=scalar|avx2) and
// both produce bit-identical results: distances are evaluated as
// (dx*dx + dy*dy) + dz*dz without contraction, and every argmin/argmax breaks
// ties toward the lowest index.

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace p2ssm::kernels {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa);
bool isa_supported(Isa isa);
Isa detected_isa();
Isa active_isa();
// Throws p2ssm::ValidationError if the ISA is not supported on this CPU.
void set_active_isa(Isa isa);

template <typename T>
struct SoaView {
  const T* x = nullptr;
  const T* y = nullptr;
  const T* z = nullptr;
  std::size_t size = 0;
};

template <typename T>
struct Nearest {
  T dist2;
  std::size_t index;
};

template <typename T>
struct KernelTable {
  // out[i] = |p_i - q|^2
  void (*squared_distances)(SoaView<T> pts, const T* q, T* out);
  // argmin_i |p_i - q|^2; pts.size must be > 0.
  Nearest<T> (*nearest)(SoaView<T> pts, const T* q);
  // min_dist[i] = min(min_dist[i], |p_i - q|^2); returns argmax_i min_dist[i].
  std::size_t (*min_update_argmax)(SoaView<T> pts, const T* q, T* min_dist);
};

template <typename T>
const KernelTable<T>& table(Isa isa);

template <typename T>
const KernelTable<T>& active() {
  return table<T>(active_isa());
}

// Owning structure-of-arrays copy of a point set.
template <typename T>
struct SoaPoints {
  std::vector<T> x, y, z;

  SoaPoints() = default;
  explicit SoaPoints(std::size_t n) : x(n), y(n), z(n) {}

  std::size_t size() const { return x.size(); }
  SoaView<T> view() const { return {x.data(), y.data(), z.data(), x.size()}; }

  // Copies from any row-major n x 3 matrix-like object with (i, j) access.
  template <typename Matrix>
  static SoaPoints from_rows(const Matrix& m) {
    SoaPoints s(static_cast<std::size_t>(m.rows()));
    for (std::size_t i = 0; i < s.size(); ++i) {
      s.x[i] = static_cast<T>(m(i, 0));
      s.y[i] = static_cast<T>(m(i, 1));
      s.z[i] = static_cast<T>(m(i, 2));
    }
    return s;
  }
};

namespace detail {
template <typename T>
KernelTable<T> scalar_table();
template <typename T>
KernelTable<T> avx2_table();
bool avx2_compiled();
}  // namespace detail

}  // namespace p2ssm::kernels
