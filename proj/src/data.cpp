#include "imix/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "imix/errors.hpp"

namespace imix {

Standardizer Standardizer::fit(const Matrix& x) {
  if (x.rows() == 0) throw ConfigError("standardizer: cannot fit on an empty matrix");
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  Standardizer s;
  s.mean.assign(d, 0.0);
  s.scale.assign(d, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) s.mean[c] += x(r, c);
  for (double& m : s.mean) m /= static_cast<double>(n);
  std::vector<double> var(d, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) {
      const double dv = x(r, c) - s.mean[c];
      var[c] += dv * dv;
    }
  for (std::size_t c = 0; c < d; ++c) {
    s.scale[c] = std::sqrt(std::max(var[c] / static_cast<double>(n), kVarianceFloor));
  }
  return s;
}

Matrix Standardizer::apply(const Matrix& x) const {
  if (x.cols() != mean.size()) {
    throw ShapeError("standardizer: fitted on " + std::to_string(mean.size()) +
                     " columns, got " + std::to_string(x.cols()));
  }
  Matrix out = x;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] = (row[c] - mean[c]) / scale[c];
  }
  return out;
}

void Dataset::validate() const {
  if (!features.all_finite()) throw IngestError("dataset '" + name + "': non-finite feature");
  if (labels) {
    if (labels->size() != features.rows()) {
      throw IngestError("dataset '" + name + "': " + std::to_string(labels->size()) +
                        " labels for " + std::to_string(features.rows()) + " rows");
    }
    for (int y : *labels) {
      if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
        throw IngestError("dataset '" + name + "': label " + std::to_string(y) +
                          " outside [0, " + std::to_string(num_classes) + ")");
      }
    }
  }
  spatial.validate(features.cols());
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.features = features.gather_rows(indices);
  if (labels) {
    std::vector<int> y;
    y.reserve(indices.size());
    for (std::size_t i : indices) y.push_back((*labels)[i]);
    out.labels = std::move(y);
  }
  out.num_classes = num_classes;
  out.spatial = spatial;
  out.name = name;
  return out;
}

namespace {

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last && std::isfinite(out);
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

Dataset load_csv(const std::filesystem::path& path, const CsvOptions& opts) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open '" + path.string() + "'");
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    if (trim(line).empty()) continue;
    header = split_commas(line);
    break;
  }
  if (header.empty()) throw IngestError("'" + path.string() + "': missing header row");

  std::optional<std::size_t> label_col;
  if (!opts.label_column.empty()) {
    for (std::size_t c = 0; c < header.size(); ++c)
      if (header[c] == opts.label_column) label_col = c;
    if (!label_col) {
      std::string names;
      for (const auto& h : header) names += (names.empty() ? "" : ", ") + h;
      throw IngestError("'" + path.string() + "': label column '" + opts.label_column +
                        "' not found; available columns: " + names);
    }
  }
  const std::size_t width = header.size();
  const std::size_t d = width - (label_col ? 1 : 0);
  std::vector<double> values;
  std::vector<int> labels;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const auto cells = split_commas(line);
    if (cells.size() != width) {
      throw IngestError("'" + path.string() + "' line " + std::to_string(line_no) + ": " +
                        std::to_string(cells.size()) + " cells, header has " +
                        std::to_string(width));
    }
    for (std::size_t c = 0; c < width; ++c) {
      double v = 0.0;
      if (!parse_double(cells[c], v)) {
        throw IngestError("'" + path.string() + "' line " + std::to_string(line_no) +
                          ", column " + std::to_string(c + 1) + " (" + header[c] +
                          "): non-numeric value '" + cells[c] + "'");
      }
      if (label_col && c == *label_col) {
        if (v != std::floor(v) || v < 0.0 || v > 1e9) {
          throw IngestError("'" + path.string() + "' line " + std::to_string(line_no) +
                            ": label '" + cells[c] + "' is not a nonnegative integer");
        }
        labels.push_back(static_cast<int>(v));
      } else {
        values.push_back(v);
      }
    }
    ++rows;
  }
  if (rows == 0) throw IngestError("'" + path.string() + "': no data rows");

  Dataset ds;
  ds.name = path.stem().string();
  ds.features = Matrix(rows, d, std::move(values));
  if (label_col) {
    ds.num_classes = static_cast<std::size_t>(*std::max_element(labels.begin(), labels.end())) + 1;
    ds.labels = std::move(labels);
  }
  if (opts.normalize) ds.features = Standardizer::fit(ds.features).apply(ds.features);
  ds.validate();
  return ds;
}

void save_csv(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  for (std::size_t c = 0; c < ds.dim(); ++c) out << (c ? "," : "") << "f" << c;
  if (ds.labels) out << (ds.dim() ? "," : "") << "label";
  out << '\n';
  for (std::size_t r = 0; r < ds.size(); ++r) {
    for (std::size_t c = 0; c < ds.dim(); ++c) out << (c ? "," : "") << format_double(ds.features(r, c));
    if (ds.labels) out << (ds.dim() ? "," : "") << (*ds.labels)[r];
    out << '\n';
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

SpatialShape parse_spatial(const std::string& text) {
  SpatialShape s;
  const std::string t = trim(text);
  if (t.empty() || t == "none") return s;
  std::istringstream in(t);
  std::string part;
  while (std::getline(in, part, 'x')) {
    std::size_t v = 0;
    const std::string p = trim(part);
    auto [ptr, ec] = std::from_chars(p.data(), p.data() + p.size(), v);
    if (ec != std::errc() || ptr != p.data() + p.size() || v == 0) {
      throw ConfigError("spatial shape '" + text + "': expected axis lengths like 4x4");
    }
    s.dims.push_back(v);
  }
  return s;
}

std::string format_spatial(const SpatialShape& s) {
  if (s.empty()) return "none";
  std::string out;
  for (std::size_t i = 0; i < s.dims.size(); ++i) out += (i ? "x" : "") + std::to_string(s.dims[i]);
  return out;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open manifest '" + path.string() + "'");
  DatasetManifest m;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw IngestError("manifest '" + path.string() + "' line " + std::to_string(line_no) +
                        ": expected key=value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "csv") {
      m.csv = value;
    } else if (key == "label_column") {
      m.label_column = value;
    } else if (key == "spatial") {
      m.spatial = parse_spatial(value);
    } else if (key == "num_classes") {
      m.num_classes = static_cast<std::size_t>(std::stoul(value));
    } else if (key == "name") {
      m.name = value;
    } else {
      throw IngestError("manifest '" + path.string() + "' line " + std::to_string(line_no) +
                        ": unknown key '" + key + "'");
    }
  }
  if (m.csv.empty()) throw IngestError("manifest '" + path.string() + "': missing csv=");
  if (m.csv.is_relative()) m.csv = path.parent_path() / m.csv;
  return m;
}

Dataset load_dataset(const std::filesystem::path& path) {
  if (path.extension() == ".manifest") {
    const DatasetManifest m = load_manifest(path);
    Dataset ds = load_csv(m.csv, CsvOptions{m.label_column, false});
    if (m.num_classes) {
      if (ds.labels && *m.num_classes < ds.num_classes) {
        throw IngestError("manifest declares " + std::to_string(*m.num_classes) +
                          " classes but labels reach " + std::to_string(ds.num_classes - 1));
      }
      ds.num_classes = *m.num_classes;
    }
    ds.spatial = m.spatial;
    if (!m.name.empty()) ds.name = m.name;
    ds.validate();
    return ds;
  }
  // Plain CSV: use a `label` column when the header has one.
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open '" + path.string() + "'");
  std::string header;
  std::getline(in, header);
  if (!header.empty() && header.back() == '\r') header.pop_back();
  const auto cols = split_commas(header);
  const bool labeled = std::find(cols.begin(), cols.end(), "label") != cols.end();
  return load_csv(path, CsvOptions{labeled ? "label" : "", false});
}

Matrix synth_blob_means(std::size_t classes, std::size_t d_signal, std::size_t d_noise,
                        double sep) {
  if (classes < 2) throw ConfigError("synth_blobs: need at least 2 classes");
  if (d_signal == 0) throw ConfigError("synth_blobs: d_signal must be positive");
  if (!(sep >= 0.0)) throw ConfigError("synth_blobs: sep must be >= 0");
  Matrix means(classes, d_signal + d_noise);
  for (std::size_t c = 0; c < classes; ++c) {
    const std::size_t shell = c / (2 * d_signal);
    const std::size_t k = c % (2 * d_signal);
    const double sign = k < d_signal ? 1.0 : -1.0;
    means(c, k % d_signal) = sign * sep * static_cast<double>(shell + 1);
  }
  return means;
}

Dataset synth_blobs(Rng& rng, std::size_t n, std::size_t classes, std::size_t d_signal,
                    std::size_t d_noise, double sep) {
  const Matrix means = synth_blob_means(classes, d_signal, d_noise, sep);
  if (n == 0) throw ConfigError("synth_blobs: n must be positive");
  Dataset ds;
  ds.name = "synth_blobs";
  ds.num_classes = classes;
  ds.features = Matrix(n, d_signal + d_noise);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % classes;
    labels[i] = static_cast<int>(c);
    auto row = ds.features.row(i);
    for (std::size_t k = 0; k < row.size(); ++k) row[k] = means(c, k) + rng.normal();
  }
  ds.labels = std::move(labels);
  return ds;
}

SplitIndices split_indices(const Dataset& ds, const SplitSpec& spec) {
  const std::size_t n = ds.size();
  SplitIndices out;
  if (!spec.train_indices.empty() || !spec.test_indices.empty()) {
    std::vector<std::uint8_t> seen(n, 0);
    for (const auto* list : {&spec.train_indices, &spec.test_indices})
      for (std::size_t i : *list) {
        if (i >= n) throw ConfigError("split: index " + std::to_string(i) + " out of range");
        if (seen[i]) throw ConfigError("split: index " + std::to_string(i) + " listed twice");
        seen[i] = 1;
      }
    if (std::find(seen.begin(), seen.end(), 0) != seen.end()) {
      throw ConfigError("split: explicit indices do not cover the dataset");
    }
    out.train = spec.train_indices;
    out.test = spec.test_indices;
  } else {
    if (!(spec.train_fraction >= 0.0 && spec.test_fraction >= 0.0) ||
        std::abs(spec.train_fraction + spec.test_fraction - 1.0) > 1e-9) {
      throw ConfigError("split: fractions must be nonnegative and sum to 1");
    }
    Rng rng(spec.seed);
    if (ds.labels) {
      std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
      for (std::size_t i = 0; i < n; ++i) by_class[static_cast<std::size_t>((*ds.labels)[i])].push_back(i);
      const auto total_train =
          static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(n)));
      // Largest remainder: floors first, leftovers to the biggest fractions.
      std::vector<std::size_t> take(by_class.size());
      std::vector<std::pair<double, std::size_t>> rema;
      std::size_t assigned = 0;
      for (std::size_t c = 0; c < by_class.size(); ++c) {
        const double exact = spec.train_fraction * static_cast<double>(by_class[c].size());
        take[c] = static_cast<std::size_t>(std::floor(exact));
        assigned += take[c];
        rema.emplace_back(exact - std::floor(exact), c);
      }
      std::stable_sort(rema.begin(), rema.end(),
                       [](const auto& a, const auto& b) { return a.first > b.first; });
      for (std::size_t k = 0; assigned < total_train && k < rema.size(); ++k) {
        if (take[rema[k].second] < by_class[rema[k].second].size()) {
          ++take[rema[k].second];
          ++assigned;
        }
      }
      for (std::size_t c = 0; c < by_class.size(); ++c) {
        auto& idx = by_class[c];
        const auto p = rng.permutation(idx.size());
        for (std::size_t k = 0; k < idx.size(); ++k) {
          (k < take[c] ? out.train : out.test).push_back(idx[p[k]]);
        }
      }
    } else {
      const auto p = rng.permutation(n);
      const auto total_train =
          static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(n)));
      for (std::size_t k = 0; k < n; ++k) (k < total_train ? out.train : out.test).push_back(p[k]);
    }
  }
  if (out.train.empty() || out.test.empty()) {
    throw ConfigError("split: one side is empty (train " + std::to_string(out.train.size()) +
                      ", test " + std::to_string(out.test.size()) + ")");
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

std::pair<Dataset, Dataset> split(const Dataset& ds, const SplitSpec& spec) {
  const SplitIndices idx = split_indices(ds, spec);
  return {ds.subset(idx.train), ds.subset(idx.test)};
}

std::vector<std::vector<std::size_t>> batches(const Rng& rng, std::size_t n,
                                              std::size_t batch_size, bool drop_last,
                                              std::uint64_t epoch) {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (batch_size > n) {
    throw ConfigError("batch_size " + std::to_string(batch_size) + " exceeds dataset size " +
                      std::to_string(n));
  }
  Rng epoch_rng = rng.child(epoch);
  const std::vector<std::size_t> order = epoch_rng.permutation(n);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    if (drop_last && end - start < batch_size) break;
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

}  // namespace imix
