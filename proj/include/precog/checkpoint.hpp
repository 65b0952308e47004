#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"
#include "precog/espflow.hpp"

namespace precog {

inline constexpr int kCheckpointVersion = 1;
inline constexpr const char* kCheckpointFormat = "precog-esp";

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One line of JSON (format, version, config, parameter shapes, count)
// followed by the parameters as raw little-endian float64.
std::string serialize_checkpoint(const EspModel& model);
EspModel deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const EspModel& model, const std::filesystem::path& path);
EspModel load_checkpoint(const std::filesystem::path& path);

}  // namespace precog
