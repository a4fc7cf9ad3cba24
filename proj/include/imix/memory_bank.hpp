#pragma once

#include <cstddef>

#include "imix/matrix.hpp"
#include "imix/rng.hpp"

namespace imix {

// Fixed-capacity FIFO of unit-norm key embeddings. The bank is always full:
// it starts with K random unit vectors and every push evicts the oldest rows.
class MemoryBank {
 public:
  MemoryBank() = default;
  MemoryBank(std::size_t capacity, std::size_t dim, Rng& rng);
  // Rows must be unit norm; oldest first.
  explicit MemoryBank(const Matrix& initial);

  std::size_t capacity() const { return slots_.rows(); }
  std::size_t size() const { return slots_.rows(); }
  std::size_t dim() const { return dim_; }

  // Entries oldest first.
  Matrix ordered() const;

  // Appends keys in row order. ConfigError when the batch exceeds K,
  // UsageError when a key is not unit norm (within 1e-9).
  void push(const Matrix& keys);

 private:
  Matrix slots_;
  std::size_t dim_ = 0;
  std::size_t cursor_ = 0;  // slot of the oldest entry
};

inline constexpr double kUnitNormTol = 1e-9;

}  // namespace imix
