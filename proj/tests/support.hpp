#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "imix/matrix.hpp"
#include "imix/rng.hpp"

namespace testing_support {

inline imix::Matrix randn(imix::Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  imix::Matrix m(r, c);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

// Central differences with step h.
inline std::vector<double> fd_grad(imix::Matrix& x, const std::function<double()>& f,
                                   double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x.data()[i];
    x.data()[i] = keep + h;
    const double up = f();
    x.data()[i] = keep - h;
    const double down = f();
    x.data()[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

// max |a - n| over max(|a|, |n|, floor)
inline double rel_err(const imix::Matrix& analytic, const std::vector<double>& numeric,
                      double floor = 1e-6) {
  double diff = 0.0, scale = floor;
  for (std::size_t i = 0; i < numeric.size(); ++i) {
    diff = std::max(diff, std::abs(analytic.data()[i] - numeric[i]));
    scale = std::max({scale, std::abs(analytic.data()[i]), std::abs(numeric[i])});
  }
  return diff / scale;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("imix_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testing_support
