#include "precog/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace precog {

namespace {

void put_le(std::string& out, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<char>(bits & 0xffu));
    bits >>= 8;
  }
}

double get_le(const char* p) {
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i) {
    bits = (bits << 8) | static_cast<unsigned char>(p[i]);
  }
  return std::bit_cast<double>(bits);
}

}  // namespace

std::string serialize_checkpoint(const EspModel& model) {
  nlohmann::json params = nlohmann::json::array();
  for (const ParamEntry& e : model.layout.entries) {
    params.push_back({{"name", e.name}, {"shape", e.shape}});
  }
  const nlohmann::json header = {{"format", kCheckpointFormat},
                                 {"version", kCheckpointVersion},
                                 {"mode", to_string(model.config.mode)},
                                 {"config", to_json(model.config)},
                                 {"parameters", params},
                                 {"count", model.theta.size()},
                                 {"encoding", "f64le"}};
  std::string out = header.dump();
  out.push_back('\n');
  out.reserve(out.size() + 8 * model.theta.size());
  for (Index i = 0; i < model.theta.size(); ++i) put_le(out, model.theta[i]);
  return out;
}

EspModel deserialize_checkpoint(const std::string& bytes) {
  const std::size_t newline = bytes.find('\n');
  if (newline == std::string::npos) {
    throw CheckpointError("checkpoint header is not terminated");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(0, newline));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint header: ") + e.what());
  }
  if (header.value("format", "") != kCheckpointFormat) {
    throw CheckpointError("not a precog checkpoint");
  }
  if (header.value("version", -1) != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " +
                          header.value("version", nlohmann::json()).dump());
  }
  EspModel model;
  model.config = esp_config_from_json(header.at("config"));
  model.layout = make_layout(model.config);
  const auto& params = header.at("parameters");
  if (params.size() != model.layout.entries.size()) {
    throw CheckpointError("parameter list does not match the configuration");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const ParamEntry& e = model.layout.entries[i];
    if (params[i].at("name").get<std::string>() != e.name ||
        params[i].at("shape").get<diff::Shape>() != e.shape) {
      throw CheckpointError("parameter " + e.name +
                            " does not match the configuration");
    }
  }
  const Index count = header.at("count").get<Index>();
  if (count != model.layout.size) {
    throw CheckpointError("parameter count does not match the configuration");
  }
  const std::size_t blob = bytes.size() - newline - 1;
  if (blob != static_cast<std::size_t>(count) * 8) {
    throw CheckpointError("parameter blob has " + std::to_string(blob) +
                          " bytes, expected " + std::to_string(count * 8));
  }
  model.theta.resize(count);
  const char* p = bytes.data() + newline + 1;
  for (Index i = 0; i < count; ++i) model.theta[i] = get_le(p + 8 * i);
  return model;
}

void save_checkpoint(const EspModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write " + path.string());
  const std::string bytes = serialize_checkpoint(model);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing " + path.string());
}

EspModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace precog
