#include "imix/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "imix/errors.hpp"

namespace imix {

double cosine_sim(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("cosine_sim: length mismatch");
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (na == 0.0 || nb == 0.0) throw NumericError("cosine_sim: zero-norm vector");
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

NormalizedRows normalize_rows(const Matrix& x) {
  NormalizedRows out{x, std::vector<double>(x.rows())};
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = out.unit.row(r);
    const double n = l2_norm(row);
    if (!(n > 0.0) || !std::isfinite(n)) {
      throw NumericError("normalize_rows: row " + std::to_string(r) + " has zero or non-finite norm");
    }
    out.norms[r] = n;
    for (double& v : row) v /= n;
  }
  return out;
}

SymEig sym_eig(const Matrix& s) {
  if (s.rows() != s.cols()) {
    throw ShapeError("sym_eig: non-square " + std::to_string(s.rows()) + "x" +
                     std::to_string(s.cols()));
  }
  const std::size_t n = s.rows();
  const double scale = std::max(1.0, max_abs(s));
  Matrix a(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (std::abs(s(i, j) - s(j, i)) > 1e-9 * scale) {
        throw NumericError("sym_eig: input is not symmetric");
      }
      a(i, j) = 0.5 * (s(i, j) + s(j, i));
    }
  }
  Matrix v = Matrix::identity(n);

  const double threshold = 1e-12 * std::max(1.0, frobenius_norm(a));
  auto off_norm = [&] {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) sum += 2.0 * a(i, j) * a(i, j);
    return std::sqrt(sum);
  };

  for (int sweep = 0; sweep < 100 && off_norm() >= threshold; ++sweep) {
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::hypot(theta, 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double sn = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          if (k == p || k == q) continue;
          const double akp = a(k, p);
          const double akq = a(k, q);
          const double new_kp = c * akp - sn * akq;
          const double new_kq = sn * akp + c * akq;
          a(k, p) = new_kp;
          a(p, k) = new_kp;
          a(k, q) = new_kq;
          a(q, k) = new_kq;
        }
        a(p, p) -= t * apq;
        a(q, q) += t * apq;
        a(p, q) = 0.0;
        a(q, p) = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - sn * vkq;
          v(k, q) = sn * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t l, std::size_t r) { return a(l, l) > a(r, r); });
  SymEig out{std::vector<double>(n), Matrix(n, n)};
  for (std::size_t k = 0; k < n; ++k) {
    out.values[k] = a(order[k], order[k]);
    for (std::size_t i = 0; i < n; ++i) out.vectors(i, k) = v(i, order[k]);
  }
  return out;
}

namespace {

// V diag(f(w)) V^T for a per-eigenvalue map.
template <typename F>
Matrix spectral_map(const SymEig& eig, F&& f) {
  const std::size_t n = eig.values.size();
  Matrix scaled = eig.vectors;
  for (std::size_t k = 0; k < n; ++k) {
    const double fk = f(eig.values[k]);
    for (std::size_t i = 0; i < n; ++i) scaled(i, k) *= fk;
  }
  Matrix out = matmul_nt(scaled, eig.vectors);
  // Exact symmetry; the product is symmetric only up to rounding.
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double m = 0.5 * (out(i, j) + out(j, i));
      out(i, j) = m;
      out(j, i) = m;
    }
  return out;
}

}  // namespace

Matrix reconstruct(const SymEig& eig) {
  return spectral_map(eig, [](double w) { return w; });
}

Matrix psd_sqrt(const Matrix& s) {
  const SymEig eig = sym_eig(s);
  const double floor = -1e-6 * max_abs(s);
  for (double w : eig.values) {
    if (w < floor) {
      throw NumericError("psd_sqrt: eigenvalue " + std::to_string(w) +
                         " is materially negative; input is not PSD");
    }
  }
  return spectral_map(eig, [](double w) { return w > 0.0 ? std::sqrt(w) : 0.0; });
}

Matrix pinv(const Matrix& a, double tol) {
  if (tol < 0.0) throw ConfigError("pinv: tol must be >= 0");
  const bool tall = a.rows() >= a.cols();
  // Gram matrix of the smaller side.
  const Matrix gram = tall ? matmul_tn(a, a) : matmul_nt(a, a);
  const std::size_t n = gram.rows();
  if (n == 0) return Matrix(a.cols(), a.rows());
  const SymEig eig = sym_eig(gram);
  const double lambda_max = std::max(0.0, eig.values.front());
  const double eps = std::numeric_limits<double>::epsilon();
  const double rel = std::max(tol * tol, 32.0 * static_cast<double>(n) * eps);
  const double cutoff = rel * lambda_max;
  // (Gram)^+ restricted to the retained spectrum.
  const Matrix gram_pinv = spectral_map(eig, [&](double w) {
    return (lambda_max > 0.0 && w > cutoff) ? 1.0 / w : 0.0;
  });
  // tall: A^+ = (A^T A)^+ A^T ; wide: A^+ = A^T (A A^T)^+
  return tall ? matmul_nt(gram_pinv, a) : matmul_tn(a, gram_pinv);
}

}  // namespace imix
