#include "imix/metrics.hpp"

#include <cmath>

#include <json.hpp>

#include "imix/errors.hpp"

namespace imix {

std::string format_metrics_line(const std::string& run_id, const MetricsRecord& rec) {
  // ordered_json keeps the field order stable across runs.
  nlohmann::ordered_json j;
  j["schema"] = kMetricsSchemaVersion;
  j["run_id"] = run_id;
  j["stage"] = rec.stage;
  j["epoch"] = rec.epoch;
  auto put = [&](const char* key, const std::optional<double>& v) {
    if (!v) return;
    if (!std::isfinite(*v)) throw NumericError(std::string("metrics: non-finite ") + key);
    j[key] = *v;
  };
  put("loss", rec.loss);
  put("lr", rec.lr);
  put("lambda_mean", rec.lambda_mean);
  put("probe_accuracy", rec.probe_accuracy);
  put("fed", rec.fed);
  for (const auto& [k, v] : rec.extra) put(k.c_str(), v);
  put("wallclock_seconds", rec.wallclock_seconds);
  return j.dump();
}

MetricsWriter::MetricsWriter(const std::filesystem::path& path, std::string run_id, bool truncate)
    : path_(path),
      run_id_(std::move(run_id)),
      out_(path, truncate ? std::ios::out | std::ios::trunc : std::ios::out | std::ios::app) {
  if (!out_) throw IoError("cannot open metrics file '" + path.string() + "'");
}

void MetricsWriter::write(const MetricsRecord& rec) {
  out_ << format_metrics_line(run_id_, rec) << '\n';
  out_.flush();
  if (!out_) throw IoError("write failed for metrics file '" + path_.string() + "'");
}

}  // namespace imix
