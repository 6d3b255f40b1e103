#include <atomic>
#include <cstdlib>
#include <string>

#include "p2ssm/errors.hpp"
#include "p2ssm/kernels.hpp"

namespace p2ssm::kernels {
namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(_M_X64)
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

Isa initial_isa() {
  Isa isa = detected_isa();
  if (const char* env = std::getenv("P2SSM_SIMD")) {
    const std::string v(env);
    if (v == "scalar") isa = Isa::scalar;
    if (v == "avx2" && isa_supported(Isa::avx2)) isa = Isa::avx2;
  }
  return isa;
}

std::atomic<Isa>& current() {
  static std::atomic<Isa> isa{initial_isa()};
  return isa;
}

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return "scalar";
    case Isa::avx2:
      return "avx2";
  }
  return "unknown";
}

bool isa_supported(Isa isa) {
  if (isa == Isa::scalar) return true;
  static const bool avx2 = detail::avx2_compiled() && cpu_has_avx2();
  return avx2;
}

Isa detected_isa() { return isa_supported(Isa::avx2) ? Isa::avx2 : Isa::scalar; }

Isa active_isa() { return current().load(std::memory_order_relaxed); }

void set_active_isa(Isa isa) {
  if (!isa_supported(isa)) {
    throw ValidationError("instruction set not supported on this CPU: " + std::string(isa_name(isa)));
  }
  current().store(isa, std::memory_order_relaxed);
}

template <typename T>
const KernelTable<T>& table(Isa isa) {
  static const KernelTable<T> scalar = detail::scalar_table<T>();
  static const KernelTable<T> avx2 = detail::avx2_table<T>();
  return isa == Isa::avx2 && isa_supported(Isa::avx2) ? avx2 : scalar;
}

template const KernelTable<float>& table<float>(Isa);
template const KernelTable<double>& table<double>(Isa);

}  // namespace p2ssm::kernels
