#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "imix/data.hpp"
#include "imix/nn.hpp"

namespace imix {

inline constexpr int kCheckpointVersion = 1;

// Everything needed to reuse a trained encoder: architecture, live and shadow
// parameters, batch-norm statistics, optimiser buffers and the input
// standardisation fitted on the pretext training split.
struct Checkpoint {
  EncoderState state;
  Standardizer standardizer;
  std::map<std::string, std::string> meta;  // free-form (resolved config, run id)
};

// JSON document; every double is stored as a C99 hex-float string so a
// load reproduces the saved bits exactly.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string to_hex_float(double v);
double from_hex_float(const std::string& s);

}  // namespace imix
