#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "imix/augment.hpp"
#include "imix/matrix.hpp"
#include "imix/rng.hpp"

namespace imix {

// Per-column affine standardisation fitted on one split and reused verbatim
// on others.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> scale;  // sqrt(max(var, floor)), population variance

  static constexpr double kVarianceFloor = 1e-8;

  static Standardizer fit(const Matrix& x);
  Matrix apply(const Matrix& x) const;
  bool empty() const { return mean.empty(); }
};

struct Dataset {
  Matrix features;
  std::optional<std::vector<int>> labels;
  std::size_t num_classes = 0;
  SpatialShape spatial;
  std::string name;

  std::size_t size() const { return features.rows(); }
  std::size_t dim() const { return features.cols(); }
  bool has_labels() const { return labels.has_value(); }
  // Labels length and range, finite features, spatial shape.
  void validate() const;
  Dataset subset(std::span<const std::size_t> indices) const;
};

struct CsvOptions {
  std::string label_column;  // empty = unlabeled
  bool normalize = false;    // standardise with this file's own statistics
};

// Header row required; comma separated; '.' decimal point. Errors carry the
// 1-based line and column.
Dataset load_csv(const std::filesystem::path& path, const CsvOptions& opts = {});

// Features then an optional "label" column, values printed round-trip exact.
void save_csv(const Dataset& ds, const std::filesystem::path& path);

// key=value file: csv, label_column, spatial (e.g. 4x4), num_classes, name.
// Relative csv paths resolve against the manifest's directory.
struct DatasetManifest {
  std::filesystem::path csv;
  std::string label_column;
  SpatialShape spatial;
  std::optional<std::size_t> num_classes;
  std::string name;
};
DatasetManifest load_manifest(const std::filesystem::path& path);

// A .manifest file, or a CSV whose label column is `label` when present.
Dataset load_dataset(const std::filesystem::path& path);

SpatialShape parse_spatial(const std::string& text);
std::string format_spatial(const SpatialShape& s);

// C Gaussian clusters with unit covariance. Class c sits at
// sep * (1 + c / (2 d_signal)) * (+-e_k), k = c mod d_signal, the sign
// flipping for the second d_signal classes of each shell, so sep is each
// first-shell mean's distance from the origin. The last d_noise dims are
// pure N(0, 1). Labels are assigned round-robin.
Dataset synth_blobs(Rng& rng, std::size_t n, std::size_t classes, std::size_t d_signal,
                    std::size_t d_noise, double sep);
// The generative class means (C x (d_signal + d_noise)).
Matrix synth_blob_means(std::size_t classes, std::size_t d_signal, std::size_t d_noise,
                        double sep);

struct SplitSpec {
  double train_fraction = 0.8;
  double test_fraction = 0.2;
  std::uint64_t seed = 0;
  // Explicit index lists override the fractions when non-empty.
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> test_indices;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Class-stratified when labels are present (largest-remainder allocation of
// the train share across classes). Indices returned ascending.
SplitIndices split_indices(const Dataset& ds, const SplitSpec& spec);
std::pair<Dataset, Dataset> split(const Dataset& ds, const SplitSpec& spec);

// Index blocks for one epoch, shuffled by rng.child(epoch).
std::vector<std::vector<std::size_t>> batches(const Rng& rng, std::size_t n,
                                              std::size_t batch_size, bool drop_last,
                                              std::uint64_t epoch);

}  // namespace imix
