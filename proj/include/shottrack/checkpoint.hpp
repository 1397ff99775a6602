#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "shottrack/imu.hpp"
#include "shottrack/nn/params.hpp"

namespace shottrack {

inline constexpr int kCheckpointVersion = 1;

enum class ModelKind { classifier, detector };
std::string_view to_string(ModelKind k);
ModelKind model_kind_from_string(std::string_view s);

struct ModelCheckpoint {
  int format_version = kCheckpointVersion;
  ModelKind kind = ModelKind::classifier;
  nlohmann::json config;
  std::vector<nn::NamedArray> arrays;
  std::optional<NormScaler> scaler;
  nlohmann::json metadata = nlohmann::json::object();  // seed, epochs, final metrics

  bool operator==(const ModelCheckpoint&) const = default;
};

enum class CheckpointErrorCode {
  io,
  bad_magic,
  version_mismatch,
  truncated,
  checksum_mismatch,
  shape_mismatch,
  kind_mismatch,
  malformed_header,
};

std::string_view to_string(CheckpointErrorCode c);

class CheckpointError : public std::runtime_error {
 public:
  CheckpointError(CheckpointErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}
  CheckpointErrorCode code() const { return code_; }

 private:
  CheckpointErrorCode code_;
};

// File layout:
//   "STCK" | u32 LE header length | header JSON (UTF-8) | f32 LE payload
// The header carries kind, config, scaler, metadata, the ordered array table
// (name, shape, offset, count) and an FNV-1a 64 checksum of the payload.
std::string serialize_checkpoint(const ModelCheckpoint& ckpt);
ModelCheckpoint deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& path);
ModelCheckpoint load_checkpoint(const std::filesystem::path& path);
ModelCheckpoint load_checkpoint(const std::filesystem::path& path, ModelKind expected);

void expect_kind(const ModelCheckpoint& ckpt, ModelKind expected);

nlohmann::json scaler_to_json(const NormScaler& s);
NormScaler scaler_from_json(const nlohmann::json& j);

}  // namespace shottrack
