#include "imix/memory_bank.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "imix/errors.hpp"

namespace imix {

namespace {

void require_unit_rows(const Matrix& m, const char* what) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double n = l2_norm(m.row(r));
    if (!(std::abs(n - 1.0) <= kUnitNormTol)) {
      throw UsageError(std::string(what) + ": row " + std::to_string(r) + " has norm " +
                       std::to_string(n) + ", expected unit norm");
    }
  }
}

}  // namespace

MemoryBank::MemoryBank(std::size_t capacity, std::size_t dim, Rng& rng)
    : slots_(capacity, dim), dim_(dim) {
  if (dim == 0) throw ConfigError("memory bank: dim must be positive");
  for (std::size_t r = 0; r < capacity; ++r) {
    auto row = slots_.row(r);
    double n = 0.0;
    while (!(n > 1e-12)) {
      for (double& v : row) v = rng.normal();
      n = l2_norm(row);
    }
    for (double& v : row) v /= n;
  }
}

MemoryBank::MemoryBank(const Matrix& initial) : slots_(initial), dim_(initial.cols()) {
  require_unit_rows(initial, "memory bank");
}

Matrix MemoryBank::ordered() const {
  const std::size_t k = slots_.rows();
  Matrix out(k, dim_);
  for (std::size_t i = 0; i < k; ++i) {
    auto src = slots_.row((cursor_ + i) % k);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

void MemoryBank::push(const Matrix& keys) {
  if (keys.rows() > slots_.rows()) {
    throw ConfigError("bank_push: batch of " + std::to_string(keys.rows()) +
                      " keys exceeds capacity " + std::to_string(slots_.rows()));
  }
  if (keys.rows() == 0) return;
  if (keys.cols() != dim_) {
    throw ShapeError("bank_push: key dim " + std::to_string(keys.cols()) + " != bank dim " +
                     std::to_string(dim_));
  }
  require_unit_rows(keys, "bank_push");
  const std::size_t k = slots_.rows();
  for (std::size_t r = 0; r < keys.rows(); ++r) {
    auto src = keys.row(r);
    std::copy(src.begin(), src.end(), slots_.row(cursor_).begin());
    cursor_ = (cursor_ + 1) % k;
  }
}

}  // namespace imix
