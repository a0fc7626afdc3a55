#include "hsrgan/kernels/kernels.hpp"

#include <cstdlib>
#include <stdexcept>
#include <string>

namespace hsrgan::kernels {

std::string_view isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

bool isa_available(Isa isa) {
  if (isa == Isa::scalar) return true;
#if defined(__x86_64__) || defined(__i386__)
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

namespace {
Isa select_isa() {
  if (const char* forced = std::getenv("HSRGAN_SIMD")) {
    const std::string name(forced);
    if (name == "scalar") return Isa::scalar;
    if (name == "avx2") {
      if (!isa_available(Isa::avx2))
        throw std::runtime_error("HSRGAN_SIMD=avx2 requested but the CPU lacks AVX2/FMA");
      return Isa::avx2;
    }
    throw std::runtime_error("HSRGAN_SIMD must be 'scalar' or 'avx2', got '" + name + "'");
  }
  return isa_available(Isa::avx2) ? Isa::avx2 : Isa::scalar;
}
}  // namespace

Isa active_isa() {
  static const Isa isa = select_isa();
  return isa;
}

template <typename T>
const KernelTable<T>& table(Isa isa) {
  if (isa == Isa::avx2) {
#if defined(HSRGAN_HAVE_AVX2_TU)
    if (!isa_available(Isa::avx2)) throw std::runtime_error("AVX2 kernels unavailable on this CPU");
    return detail::avx2_table<T>();
#else
    throw std::runtime_error("AVX2 kernels were not compiled into this build");
#endif
  }
  return detail::scalar_table<T>();
}

template const KernelTable<float>& table<float>(Isa);
template const KernelTable<double>& table<double>(Isa);

}  // namespace hsrgan::kernels
