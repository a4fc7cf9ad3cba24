#include "imix/checkpoint.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <type_traits>

#include <json.hpp>

#include "imix/errors.hpp"

namespace imix {

using nlohmann::json;

std::string to_hex_float(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

double from_hex_float(const std::string& s) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0' || errno == ERANGE) {
    throw IngestError("checkpoint: malformed number '" + s + "'");
  }
  return v;
}

namespace {

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::maxout: return "maxout";
  }
  return "?";
}

Activation parse_activation(const std::string& s) {
  if (s == "identity") return Activation::identity;
  if (s == "relu") return Activation::relu;
  if (s == "maxout") return Activation::maxout;
  throw IngestError("checkpoint: unknown activation '" + s + "'");
}

json encode(const Matrix& m) {
  json data = json::array();
  for (double v : m.flat()) data.push_back(to_hex_float(v));
  return json{{"shape", {m.rows(), m.cols()}}, {"data", std::move(data)}};
}

void decode_into(const json& j, Matrix& m, const std::string& name) {
  const auto rows = j.at("shape").at(0).get<std::size_t>();
  const auto cols = j.at("shape").at(1).get<std::size_t>();
  if (rows != m.rows() || cols != m.cols()) {
    throw IngestError("checkpoint: tensor '" + name + "' is " + std::to_string(rows) + "x" +
                      std::to_string(cols) + ", architecture expects " +
                      std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
  }
  const auto& data = j.at("data");
  if (data.size() != m.size()) throw IngestError("checkpoint: tensor '" + name + "' truncated");
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = from_hex_float(data[i].get<std::string>());
}

json encode_values(const std::vector<double>& v) {
  json out = json::array();
  for (double x : v) out.push_back(to_hex_float(x));
  return out;
}

std::vector<double> decode_values(const json& j) {
  std::vector<double> out;
  for (const auto& x : j) out.push_back(from_hex_float(x.get<std::string>()));
  return out;
}

// Every tensor of a network, parameters and statistics, by name.
template <typename Net, typename Fn>
void for_each_tensor(Net& net, const std::string& prefix, Fn&& fn) {
  auto& layers = [&]() -> auto& {
    if constexpr (std::is_const_v<Net>) {
      return net.layers();
    } else {
      return net.mutable_layers();
    }
  }();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string base = prefix + "." + std::to_string(i) + ".";
    auto& l = layers[i];
    fn(base + "weight", l.weight);
    fn(base + "bias", l.bias);
    if (l.spec.batch_norm) {
      fn(base + "gamma", l.gamma);
      fn(base + "beta", l.beta);
      fn(base + "running_mean", l.running_mean);
      fn(base + "running_var", l.running_var);
    }
  }
}

template <typename State, typename Fn>
void for_each_state_tensor(State& s, Fn&& fn) {
  for_each_tensor(s.online.backbone, "online.backbone", fn);
  for_each_tensor(s.online.projection, "online.projection", fn);
  if (s.online.predictor) for_each_tensor(*s.online.predictor, "online.predictor", fn);
  if (s.ema_shadow) {
    for_each_tensor(s.ema_shadow->backbone, "ema.backbone", fn);
    for_each_tensor(s.ema_shadow->projection, "ema.projection", fn);
  }
  const auto names = s.parameter_names();
  for (std::size_t i = 0; i < s.momentum.size(); ++i) fn("momentum." + names[i], s.momentum[i]);
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const EncoderSpec& spec = ckpt.state.spec;
  json layers = json::array();
  for (const LayerSpec& l : spec.backbone) {
    layers.push_back({{"in", l.in_dim},
                      {"out", l.out_dim},
                      {"activation", activation_name(l.activation)},
                      {"maxout_sets", l.maxout_sets},
                      {"batch_norm", l.batch_norm}});
  }
  json doc;
  doc["format"] = "imix-checkpoint";
  doc["version"] = kCheckpointVersion;
  doc["architecture"] = {{"input_dim", spec.input_dim},
                         {"backbone", std::move(layers)},
                         {"proj_hidden", spec.proj_hidden},
                         {"proj_out", spec.proj_out},
                         {"predictor", spec.predictor},
                         {"pred_hidden", spec.pred_hidden},
                         {"ema", spec.ema}};
  doc["step"] = ckpt.state.step;
  json tensors = json::object();
  for_each_state_tensor(ckpt.state,
                        [&](const std::string& name, const Matrix& m) { tensors[name] = encode(m); });
  doc["tensors"] = std::move(tensors);
  doc["standardizer"] = {{"mean", encode_values(ckpt.standardizer.mean)},
                         {"scale", encode_values(ckpt.standardizer.scale)}};
  doc["meta"] = ckpt.meta;

  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw IoError("cannot write checkpoint '" + tmp.string() + "'");
    out << doc.dump(1) << '\n';
    if (!out) throw IoError("write failed for checkpoint '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open checkpoint '" + path.string() + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw IngestError("checkpoint '" + path.string() + "' is not valid JSON: " + e.what());
  }
  try {
    if (doc.at("format") != "imix-checkpoint") throw IngestError("not an imix checkpoint");
    const int version = doc.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw IngestError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                        std::to_string(kCheckpointVersion) + ")");
    }
    const json& a = doc.at("architecture");
    EncoderSpec spec;
    spec.input_dim = a.at("input_dim").get<std::size_t>();
    for (const auto& l : a.at("backbone")) {
      spec.backbone.push_back(LayerSpec{l.at("in").get<std::size_t>(), l.at("out").get<std::size_t>(),
                                        parse_activation(l.at("activation").get<std::string>()),
                                        l.at("maxout_sets").get<std::size_t>(),
                                        l.at("batch_norm").get<bool>()});
    }
    spec.proj_hidden = a.at("proj_hidden").get<std::size_t>();
    spec.proj_out = a.at("proj_out").get<std::size_t>();
    spec.predictor = a.at("predictor").get<bool>();
    spec.pred_hidden = a.at("pred_hidden").get<std::size_t>();
    spec.ema = a.at("ema").get<bool>();

    Rng scratch(0);
    Checkpoint ckpt{make_encoder(spec, scratch), {}, {}};
    ckpt.state.step = doc.at("step").get<std::uint64_t>();
    const json& tensors = doc.at("tensors");
    std::size_t seen = 0;
    for_each_state_tensor(ckpt.state, [&](const std::string& name, Matrix& m) {
      if (!tensors.contains(name)) throw IngestError("checkpoint: missing tensor '" + name + "'");
      decode_into(tensors.at(name), m, name);
      ++seen;
    });
    if (seen != tensors.size()) throw IngestError("checkpoint: unexpected extra tensors");
    ckpt.state.online.backbone.bump_version();
    ckpt.state.online.projection.bump_version();
    if (ckpt.state.online.predictor) ckpt.state.online.predictor->bump_version();
    ckpt.standardizer.mean = decode_values(doc.at("standardizer").at("mean"));
    ckpt.standardizer.scale = decode_values(doc.at("standardizer").at("scale"));
    if (ckpt.standardizer.mean.size() != ckpt.standardizer.scale.size()) {
      throw IngestError("checkpoint: standardizer mean/scale length mismatch");
    }
    ckpt.meta = doc.at("meta").get<std::map<std::string, std::string>>();
    return ckpt;
  } catch (const json::exception& e) {
    throw IngestError("checkpoint '" + path.string() + "': " + e.what());
  } catch (const ConfigError& e) {
    throw IngestError("checkpoint '" + path.string() + "': " + e.what());
  }
}

}  // namespace imix
