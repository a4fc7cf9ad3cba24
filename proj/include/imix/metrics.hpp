#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>

namespace imix {

inline constexpr int kMetricsSchemaVersion = 1;

struct MetricsRecord {
  std::string stage;  // "pretext", "eval"
  std::size_t epoch = 0;
  std::optional<double> loss;
  std::optional<double> lr;
  std::optional<double> lambda_mean;
  std::optional<double> probe_accuracy;
  std::optional<double> fed;
  std::optional<double> wallclock_seconds;
  std::map<std::string, double> extra;
};

// One JSON object per line:
// {"schema":1,"run_id":...,"stage":...,"epoch":...,<fields>}
std::string format_metrics_line(const std::string& run_id, const MetricsRecord& rec);

// Line-delimited writer. Opening with truncate starts a fresh file; every
// write appends one line and flushes.
class MetricsWriter {
 public:
  MetricsWriter(const std::filesystem::path& path, std::string run_id, bool truncate);
  void write(const MetricsRecord& rec);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::string run_id_;
  std::ofstream out_;
};

}  // namespace imix
