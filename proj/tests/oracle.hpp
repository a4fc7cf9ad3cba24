#pragma once

// Straight-loop reference implementations used as test oracles. Rows are plain
// vectors so nothing here shares code with the library under test.

#include <cmath>
#include <cstddef>
#include <vector>

#include "imix/matrix.hpp"

namespace oracle {

using Rows = std::vector<std::vector<double>>;

inline Rows rows_of(const imix::Matrix& m) {
  Rows r(m.rows(), std::vector<double>(m.cols()));
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) r[i][j] = m(i, j);
  return r;
}

inline double dotv(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  return dotv(a, b) / std::sqrt(dotv(a, a) * dotv(b, b));
}

inline std::vector<double> unit(const std::vector<double>& a) {
  const double n = std::sqrt(dotv(a, a));
  std::vector<double> u(a);
  for (double& v : u) v /= n;
  return u;
}

// -sum_j w_j log(exp(z_j) / sum_k exp(z_k))
inline double soft_ce(const std::vector<double>& z, const std::vector<double>& w) {
  double denom = 0.0;
  for (double v : z) denom += std::exp(v);
  double loss = 0.0;
  for (std::size_t j = 0; j < z.size(); ++j) {
    if (w[j] != 0.0) loss += -w[j] * std::log(std::exp(z[j]) / denom);
  }
  return loss;
}

// loss of one anchor against candidates `cand` (with weights w) at temperature tau
inline double anchor_loss(const std::vector<double>& a, const Rows& cand,
                          const std::vector<double>& w, double tau) {
  std::vector<double> z;
  for (const auto& c : cand) z.push_back(cosine(a, c) / tau);
  return soft_ce(z, w);
}

inline double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Supervised CE with logits f W (W is D x C stored as rows of length C).
inline double sup_ce(const Rows& f, const Rows& w, const Rows& y) {
  std::vector<double> per;
  for (std::size_t i = 0; i < f.size(); ++i) {
    std::vector<double> z(w[0].size(), 0.0);
    for (std::size_t c = 0; c < z.size(); ++c)
      for (std::size_t d = 0; d < f[i].size(); ++d) z[c] += f[i][d] * w[d][c];
    per.push_back(soft_ce(z, y[i]));
  }
  return mean(per);
}

// N-pair with a general label matrix v (N x N).
inline double npair(const Rows& a, const Rows& k, const Rows& v, double tau) {
  std::vector<double> per;
  for (std::size_t i = 0; i < a.size(); ++i) per.push_back(anchor_loss(a[i], k, v[i], tau));
  return mean(per);
}

// i-Mix N-pair: anchor i (already mixed) targets lam_i e_i + (1 - lam_i) e_perm(i).
inline double imix_npair(const Rows& a, const Rows& k, const std::vector<std::size_t>& perm,
                         const std::vector<double>& lam, double tau) {
  Rows v(a.size(), std::vector<double>(a.size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i) {
    v[i][i] += lam[i];
    v[i][perm[i]] += 1.0 - lam[i];
  }
  return npair(a, k, v, tau);
}

// SimCLR over 2N rows, anchor excluded from its own denominator.
inline double simclr(const Rows& f, double tau) {
  const std::size_t m = f.size(), n = m / 2;
  std::vector<double> per;
  for (std::size_t i = 0; i < m; ++i) {
    Rows cand;
    std::vector<double> w;
    for (std::size_t k = 0; k < m; ++k) {
      if (k == i) continue;
      cand.push_back(f[k]);
      w.push_back(k == (i + n) % m ? 1.0 : 0.0);
    }
    per.push_back(anchor_loss(f[i], cand, w, tau));
  }
  return mean(per);
}

// Mixed SimCLR / SupCLR anchors (2N rows) against 2N clean rows; the
// anchor's clean copy leaves the candidates (its partner's at lambda = 0, and
// optionally the partner too). Labels select the supervised variant.
inline double imix_simclr(const Rows& mixed, const Rows& clean, const std::vector<std::size_t>& perm,
                          const std::vector<double>& lam, double tau, bool exclude_partner,
                          const std::vector<int>* labels = nullptr) {
  const std::size_t m = clean.size(), n = m / 2;
  std::vector<double> per;
  for (std::size_t r = 0; r < m; ++r) {
    const std::size_t base = r < n ? 0 : n;
    const std::size_t j = perm[r - base] + base;
    const double l = lam[r - base];
    Rows cand;
    std::vector<std::size_t> idx;
    for (std::size_t k = 0; k < m; ++k) {
      if (l > 0.0 && k == r) continue;
      if ((l == 0.0 || (exclude_partner && l < 1.0)) && k == j) continue;
      cand.push_back(clean[k]);
      idx.push_back(k);
    }
    std::vector<double> w(idx.size(), 0.0);
    if (labels == nullptr) {
      for (std::size_t c = 0; c < idx.size(); ++c) {
        if (idx[c] == (r + n) % m) w[c] += l;
        if (idx[c] == (j + n) % m) w[c] += 1.0 - l;
      }
    } else {
      const auto& y = *labels;
      double pi = 0.0, pj = 0.0;
      for (std::size_t k : idx) {
        if (y[k] == y[r]) pi += 1.0;
        if (y[k] == y[j]) pj += 1.0;
      }
      for (std::size_t c = 0; c < idx.size(); ++c) {
        if (y[idx[c]] == y[r]) w[c] += l / pi;
        if (y[idx[c]] == y[j]) w[c] += (1.0 - l) / pj;
      }
    }
    per.push_back(anchor_loss(mixed[r], cand, w, tau));
  }
  return mean(per);
}

// SupCLR: per anchor, mean over positives p != i of -log softmax over k != i.
inline double supclr(const Rows& f, const std::vector<int>& y, double tau) {
  const std::size_t m = f.size();
  std::vector<double> per;
  for (std::size_t i = 0; i < m; ++i) {
    double denom = 0.0;
    for (std::size_t k = 0; k < m; ++k)
      if (k != i) denom += std::exp(cosine(f[i], f[k]) / tau);
    double total = 0.0;
    double count = 0.0;
    for (std::size_t p = 0; p < m; ++p) {
      if (p == i || y[p] != y[i]) continue;
      total += -std::log(std::exp(cosine(f[i], f[p]) / tau) / denom);
      count += 1.0;
    }
    per.push_back(total / count);
  }
  return mean(per);
}

// Sup-N-pair: mean over same-class keys (own key included), softmax over all N.
inline double sup_npair(const Rows& a, const Rows& k, const std::vector<int>& y, double tau) {
  std::vector<double> per;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double denom = 0.0;
    for (const auto& key : k) denom += std::exp(cosine(a[i], key) / tau);
    double total = 0.0, count = 0.0;
    for (std::size_t p = 0; p < k.size(); ++p) {
      if (y[p] != y[i]) continue;
      total += -std::log(std::exp(cosine(a[i], k[p]) / tau) / denom);
      count += 1.0;
    }
    per.push_back(total / count);
  }
  return mean(per);
}

inline double imix_sup_npair(const Rows& a, const Rows& k, const std::vector<int>& y,
                             const std::vector<std::size_t>& perm, const std::vector<double>& lam,
                             double tau) {
  const std::size_t n = a.size();
  Rows v(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    double ci = 0.0, cj = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      ci += y[p] == y[i];
      cj += y[p] == y[perm[i]];
    }
    for (std::size_t p = 0; p < n; ++p) {
      if (y[p] == y[i]) v[i][p] += lam[i] / ci;
      if (y[p] == y[perm[i]]) v[i][p] += (1.0 - lam[i]) / cj;
    }
  }
  return npair(a, k, v, tau);
}

// MoCo: candidates are the N keys then the bank rows; label mass on keys only.
inline double imix_moco(const Rows& q, const Rows& keys, const Rows& bank,
                        const std::vector<std::size_t>& perm, const std::vector<double>& lam,
                        double tau) {
  Rows cand = keys;
  cand.insert(cand.end(), bank.begin(), bank.end());
  std::vector<double> per;
  for (std::size_t i = 0; i < q.size(); ++i) {
    std::vector<double> w(cand.size(), 0.0);
    w[i] += lam[i];
    w[perm[i]] += 1.0 - lam[i];
    per.push_back(anchor_loss(q[i], cand, w, tau));
  }
  return mean(per);
}

// BYOL: |g/|g| - (lam t_i/|t_i| + (1 - lam) t_j/|t_j|)|^2
inline double imix_byol(const Rows& p, const Rows& t, const std::vector<std::size_t>& perm,
                        const std::vector<double>& lam) {
  std::vector<double> per;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto g = unit(p[i]);
    const auto ui = unit(t[i]);
    const auto uj = unit(t[perm[i]]);
    double s = 0.0;
    for (std::size_t c = 0; c < g.size(); ++c) {
      const double d = g[c] - lam[i] * ui[c] - (1.0 - lam[i]) * uj[c];
      s += d * d;
    }
    per.push_back(s);
  }
  return mean(per);
}

inline std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

// Frechet distance between the Gaussian fits of two 2-D sets of normalised
// rows, with tr sqrt(M) = sqrt(tr M + 2 sqrt(det M)) for 2x2 PSD M.
inline double fed_2d(const Rows& a, const Rows& b) {
  auto stats = [](const Rows& x, double m[2], double s[2][2]) {
    m[0] = m[1] = 0.0;
    s[0][0] = s[0][1] = s[1][0] = s[1][1] = 0.0;
    Rows u;
    for (const auto& r : x) u.push_back(unit(r));
    for (const auto& r : u) {
      m[0] += r[0] / static_cast<double>(u.size());
      m[1] += r[1] / static_cast<double>(u.size());
    }
    for (const auto& r : u)
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) s[i][j] += (r[i] - m[i]) * (r[j] - m[j]) / static_cast<double>(u.size());
  };
  double ma[2], mb[2], sa[2][2], sb[2][2];
  stats(a, ma, sa);
  stats(b, mb, sb);
  double p[2][2];
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) p[i][j] = sa[i][0] * sb[0][j] + sa[i][1] * sb[1][j];
  const double tr = p[0][0] + p[1][1];
  const double det = std::max(0.0, p[0][0] * p[1][1] - p[0][1] * p[1][0]);
  const double tr_sqrt = std::sqrt(std::max(0.0, tr + 2.0 * std::sqrt(det)));
  const double dm = (ma[0] - mb[0]) * (ma[0] - mb[0]) + (ma[1] - mb[1]) * (ma[1] - mb[1]);
  return dm + sa[0][0] + sa[1][1] + sb[0][0] + sb[1][1] - 2.0 * tr_sqrt;
}

}  // namespace oracle
