#pragma once

#include <cstddef>
#include <span>
#include <string_view>

// Double-precision vector primitives used by every dense loop in the model.
// Each primitive has a portable scalar reference and, on x86-64 builds, an
// AVX2/FMA variant. The active table is chosen once at startup from cpuid and
// can be overridden with STREAMGATE_KERNELS=scalar|avx2.

namespace streamgate::kernels {

enum class Isa { scalar, avx2 };

struct KernelTable {
  Isa isa;
  const char* name;
  double (*dot)(const double* a, const double* b, std::size_t n);
  // y += a * x
  void (*axpy)(double a, const double* x, double* y, std::size_t n);
  // x *= a
  void (*scale)(double a, double* x, std::size_t n);
  // y += x
  void (*add)(const double* x, double* y, std::size_t n);
  double (*max)(const double* x, std::size_t n);
  double (*sum)(const double* x, std::size_t n);
  // sum of x[i]*x[i]
  double (*sumsq)(const double* x, std::size_t n);
  // x[i] = exp(x[i] - shift); returns the sum of the results. Intended for
  // softmax rows (x[i] <= shift).
  double (*exp_shift_sum)(double* x, std::size_t n, double shift);
  // C (m×n) += A (m×k) · B (k×n); row-major with leading dimensions.
  void (*gemm)(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
               std::size_t ldb, double* c, std::size_t ldc);
  // C (m×n) += Aᵀ · B with A stored k×m.
  void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
                  std::size_t ldb, double* c, std::size_t ldc);
};

const KernelTable& scalar_table();

// nullptr when the build or the host lacks AVX2+FMA.
const KernelTable* avx2_table();

const KernelTable& active();

// Replaces the active table. Throws std::invalid_argument if the ISA is not
// available on this host.
void select(Isa isa);

Isa parse_isa(std::string_view name);

inline double dot(std::span<const double> a, std::span<const double> b) {
  return active().dot(a.data(), b.data(), a.size());
}
inline void axpy(double a, std::span<const double> x, std::span<double> y) {
  active().axpy(a, x.data(), y.data(), x.size());
}
inline void scale(double a, std::span<double> x) { active().scale(a, x.data(), x.size()); }
inline void add(std::span<const double> x, std::span<double> y) {
  active().add(x.data(), y.data(), x.size());
}
inline double max(std::span<const double> x) { return active().max(x.data(), x.size()); }
inline double sum(std::span<const double> x) { return active().sum(x.data(), x.size()); }
inline double sumsq(std::span<const double> x) { return active().sumsq(x.data(), x.size()); }

}  // namespace streamgate::kernels
