#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "streamgate/kernels.hpp"

namespace streamgate::kernels {

#if defined(STREAMGATE_HAVE_AVX2)
const KernelTable* avx2_table_unchecked();
#endif

namespace {

bool host_has_avx2() {
#if defined(STREAMGATE_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* initial_table() {
  const char* env = std::getenv("STREAMGATE_KERNELS");
  if (env != nullptr && std::string(env) == "scalar") return &scalar_table();
  if (const KernelTable* t = avx2_table()) return t;
  return &scalar_table();
}

std::atomic<const KernelTable*>& slot() {
  static std::atomic<const KernelTable*> table{initial_table()};
  return table;
}

}  // namespace

const KernelTable* avx2_table() {
#if defined(STREAMGATE_HAVE_AVX2)
  static const bool ok = host_has_avx2();
  return ok ? avx2_table_unchecked() : nullptr;
#else
  return nullptr;
#endif
}

const KernelTable& active() { return *slot().load(std::memory_order_relaxed); }

void select(Isa isa) {
  if (isa == Isa::scalar) {
    slot().store(&scalar_table());
    return;
  }
  const KernelTable* t = avx2_table();
  if (t == nullptr) throw std::invalid_argument("avx2 kernels are not available on this host");
  slot().store(t);
}

Isa parse_isa(std::string_view name) {
  if (name == "scalar") return Isa::scalar;
  if (name == "avx2") return Isa::avx2;
  throw std::invalid_argument("unknown kernel isa: " + std::string(name));
}

}  // namespace streamgate::kernels
