#include <atomic>
#include <cstdlib>
#include <string>

#include "imix/errors.hpp"
#include "imix/kernels.hpp"

namespace imix::kernels {

#ifdef IMIX_HAVE_AVX2
const KernelTable* avx2_table_impl();
#endif

const KernelTable* avx2_table() {
#ifdef IMIX_HAVE_AVX2
  return avx2_table_impl();
#else
  return nullptr;
#endif
}

bool isa_supported(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return true;
    case Isa::avx2:
#if defined(IMIX_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

const KernelTable& table(Isa isa) {
  if (!isa_supported(isa)) {
    throw UsageError("kernel variant '" + std::string(isa_name(isa)) +
                     "' is not available on this build/CPU");
  }
  if (isa == Isa::avx2) return *avx2_table();
  return scalar_table();
}

namespace {

const KernelTable* select_default() {
  if (const char* env = std::getenv("IMIX_ISA")) {
    const std::string want(env);
    if (want == "scalar") return &scalar_table();
    if (want == "avx2" && isa_supported(Isa::avx2)) return avx2_table();
  }
  if (isa_supported(Isa::avx2)) return avx2_table();
  return &scalar_table();
}

std::atomic<const KernelTable*>& active_slot() {
  static std::atomic<const KernelTable*> slot{select_default()};
  return slot;
}

}  // namespace

const KernelTable& active() { return *active_slot().load(std::memory_order_relaxed); }

Isa active_isa() { return active().isa; }

void force_isa(Isa isa) { active_slot().store(&table(isa), std::memory_order_relaxed); }

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return "scalar";
    case Isa::avx2:
      return "avx2";
  }
  return "unknown";
}

}  // namespace imix::kernels
