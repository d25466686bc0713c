#pragma once

// Data-parallel inner loops used by the tensor ops. Every kernel has a
// portable scalar reference and, on x86-64, an AVX2+FMA variant. The active
// table is chosen once at startup from CPUID and may be pinned with
// set_isa() or the GODP_SIMD environment variable ("scalar" | "avx2").

#include <cstddef>
#include <span>
#include <string_view>

namespace godp::simd {

enum class Isa { kScalar, kAvx2 };

std::string_view isa_name(Isa isa);

// True when the CPU and the build both support the requested ISA.
bool isa_supported(Isa isa);

Isa active_isa();

// Throws UsageError if the ISA is unsupported on this machine.
void set_isa(Isa isa);

template <typename T>
struct KernelTable {
  // y += a * x
  void (*axpy)(std::size_t n, T a, const T* x, T* y);
  T (*dot)(std::size_t n, const T* x, const T* y);
  // y += x
  void (*accumulate)(std::size_t n, const T* x, T* y);
  // y = a * x + b, elementwise with scalar a, b
  void (*affine)(std::size_t n, T a, T b, const T* x, T* y);
  // y = max(x, 0)
  void (*relu)(std::size_t n, const T* x, T* y);
  // dx += (x > 0) ? dy : 0
  void (*relu_backward)(std::size_t n, const T* x, const T* dy, T* dx);
  T (*sum)(std::size_t n, const T* x);
};

template <typename T>
const KernelTable<T>& kernels();

template <typename T>
const KernelTable<T>& kernels_for(Isa isa);

namespace scalar {
template <typename T>
const KernelTable<T>& table();
}

namespace avx2 {
template <typename T>
const KernelTable<T>* table();  // nullptr when not compiled in
}

// Span conveniences over the active table.
template <typename T>
inline void axpy(T a, std::span<const T> x, std::span<T> y) {
  kernels<T>().axpy(x.size(), a, x.data(), y.data());
}

template <typename T>
inline T dot(std::span<const T> x, std::span<const T> y) {
  return kernels<T>().dot(x.size(), x.data(), y.data());
}

template <typename T>
inline void accumulate(std::span<const T> x, std::span<T> y) {
  kernels<T>().accumulate(x.size(), x.data(), y.data());
}

}  // namespace godp::simd
