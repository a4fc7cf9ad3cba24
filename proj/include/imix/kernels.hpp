#pragma once

// Data-parallel inner loops. Every kernel has a scalar reference
// implementation; AVX2/FMA variants are compiled into a separate translation
// unit and selected once at startup when the CPU supports them.
//
// Selection is deterministic for a given machine, so runs stay bit-exact
// run-to-run. Scalar and SIMD variants differ only by accumulation order
// (the equivalence tests bound the difference). Set IMIX_ISA=scalar in the
// environment to force the reference path.

#include <cstddef>
#include <string_view>

namespace imix::kernels {

enum class Isa { scalar, avx2 };

struct KernelTable {
  Isa isa;
  // sum_i x[i] * y[i]
  double (*dot)(const double* x, const double* y, std::size_t n);
  // y[i] += a * x[i]
  void (*axpy)(double a, const double* x, double* y, std::size_t n);
  // C[m x n] = A[m x k] * B[k x n], all row-major and contiguous.
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                  double* c);
  // C[m x n] = A^T * B with A stored as [k x m].
  void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                  double* c);
  // C[m x n] = A[m x k] * B^T with B stored as [n x k].
  void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                  double* c);
};

const KernelTable& scalar_table();
// Null when the variant was not compiled in.
const KernelTable* avx2_table();

bool isa_supported(Isa isa);
const KernelTable& table(Isa isa);

// The table used by Matrix products and the nn/loss inner loops.
const KernelTable& active();
Isa active_isa();
// Tests use this to pin a variant; throws UsageError if unsupported.
void force_isa(Isa isa);

std::string_view isa_name(Isa isa);

}  // namespace imix::kernels
