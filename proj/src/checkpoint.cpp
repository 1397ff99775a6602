#include "shottrack/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace shottrack {

namespace {

constexpr char kMagic[4] = {'S', 'T', 'C', 'K'};

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap32(v);
  return v;
}

std::uint64_t config_hash(const nlohmann::json& config, const std::vector<nn::NamedArray>& arrays) {
  std::uint64_t h = fnv1a(config.dump());
  for (const auto& a : arrays) {
    h = fnv1a(a.name, h);
    h = fnv1a(nn::shape_string(a.shape), h);
  }
  return h;
}

}  // namespace

std::string_view to_string(ModelKind k) {
  return k == ModelKind::classifier ? "classifier" : "detector";
}

ModelKind model_kind_from_string(std::string_view s) {
  if (s == "classifier") return ModelKind::classifier;
  if (s == "detector") return ModelKind::detector;
  throw std::invalid_argument("unknown model kind '" + std::string(s) + "'");
}

std::string_view to_string(CheckpointErrorCode c) {
  switch (c) {
    case CheckpointErrorCode::io: return "io";
    case CheckpointErrorCode::bad_magic: return "bad_magic";
    case CheckpointErrorCode::version_mismatch: return "version_mismatch";
    case CheckpointErrorCode::truncated: return "truncated";
    case CheckpointErrorCode::checksum_mismatch: return "checksum_mismatch";
    case CheckpointErrorCode::shape_mismatch: return "shape_mismatch";
    case CheckpointErrorCode::kind_mismatch: return "kind_mismatch";
    case CheckpointErrorCode::malformed_header: return "malformed_header";
  }
  return "unknown";
}

nlohmann::json scaler_to_json(const NormScaler& s) {
  return {{"accel_min", s.accel_min}, {"accel_max", s.accel_max},
          {"gyro_min", s.gyro_min},   {"gyro_max", s.gyro_max}};
}

NormScaler scaler_from_json(const nlohmann::json& j) {
  return {j.at("accel_min").get<double>(), j.at("accel_max").get<double>(),
          j.at("gyro_min").get<double>(), j.at("gyro_max").get<double>()};
}

std::string serialize_checkpoint(const ModelCheckpoint& ckpt) {
  std::string payload;
  nlohmann::json table = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& a : ckpt.arrays) {
    if (a.values.size() != nn::shape_size(a.shape)) {
      throw CheckpointError(CheckpointErrorCode::shape_mismatch,
                            "array '" + a.name + "' value count does not match its shape");
    }
    table.push_back({{"name", a.name}, {"shape", a.shape}, {"offset", offset},
                     {"count", a.values.size()}});
    for (float f : a.values) {
      std::uint32_t bits = to_le(std::bit_cast<std::uint32_t>(f));
      char b[4];
      std::memcpy(b, &bits, 4);
      payload.append(b, 4);
    }
    offset += a.values.size();
  }

  nlohmann::json header = {
      {"format", "shottrack-checkpoint"},
      {"version", ckpt.format_version},
      {"kind", to_string(ckpt.kind)},
      {"config", ckpt.config},
      {"metadata", ckpt.metadata},
      {"arrays", table},
      {"payload_bytes", payload.size()},
      {"checksum", hex64(fnv1a(payload))},
      {"config_hash", hex64(config_hash(ckpt.config, ckpt.arrays))},
  };
  header["scaler"] = ckpt.scaler ? scaler_to_json(*ckpt.scaler) : nlohmann::json(nullptr);
  const std::string header_text = header.dump();

  std::string out(kMagic, 4);
  std::uint32_t len = to_le(static_cast<std::uint32_t>(header_text.size()));
  char b[4];
  std::memcpy(b, &len, 4);
  out.append(b, 4);
  out += header_text;
  out += payload;
  return out;
}

ModelCheckpoint deserialize_checkpoint(std::string_view bytes) {
  using E = CheckpointErrorCode;
  if (bytes.size() < 4) throw CheckpointError(E::truncated, "file shorter than magic");
  if (bytes.substr(0, 4) != std::string_view(kMagic, 4)) {
    throw CheckpointError(E::bad_magic, "not a checkpoint file");
  }
  if (bytes.size() < 8) throw CheckpointError(E::truncated, "missing header length");
  std::uint32_t len = 0;
  std::memcpy(&len, bytes.data() + 4, 4);
  len = to_le(len);
  if (bytes.size() < 8 + static_cast<std::size_t>(len)) {
    throw CheckpointError(E::truncated, "header extends past end of file");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(8, len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(E::malformed_header, e.what());
  }

  ModelCheckpoint ckpt;
  try {
    if (header.value("format", "") != "shottrack-checkpoint") {
      throw CheckpointError(E::malformed_header, "unexpected format tag");
    }
    ckpt.format_version = header.at("version").get<int>();
    if (ckpt.format_version != kCheckpointVersion) {
      throw CheckpointError(E::version_mismatch,
                            "file version " + std::to_string(ckpt.format_version) +
                                ", supported " + std::to_string(kCheckpointVersion));
    }
    ckpt.kind = model_kind_from_string(header.at("kind").get<std::string>());
    ckpt.config = header.at("config");
    ckpt.metadata = header.at("metadata");
    if (!header.at("scaler").is_null()) ckpt.scaler = scaler_from_json(header.at("scaler"));

    const std::string_view payload = bytes.substr(8 + len);
    const auto payload_bytes = header.at("payload_bytes").get<std::size_t>();
    if (payload.size() < payload_bytes) {
      throw CheckpointError(E::truncated, "payload has " + std::to_string(payload.size()) +
                                              " of " + std::to_string(payload_bytes) + " bytes");
    }
    if (payload.size() > payload_bytes) {
      throw CheckpointError(E::malformed_header, "trailing bytes after payload");
    }
    if (hex64(fnv1a(payload)) != header.at("checksum").get<std::string>()) {
      throw CheckpointError(E::checksum_mismatch, "payload checksum does not match header");
    }

    for (const auto& entry : header.at("arrays")) {
      nn::NamedArray a;
      a.name = entry.at("name").get<std::string>();
      a.shape = entry.at("shape").get<nn::Shape>();
      const auto offset = entry.at("offset").get<std::size_t>();
      const auto count = entry.at("count").get<std::size_t>();
      if (count != nn::shape_size(a.shape)) {
        throw CheckpointError(E::shape_mismatch, "array '" + a.name + "' count/shape disagree");
      }
      if ((offset + count) * 4 > payload.size()) {
        throw CheckpointError(E::truncated, "array '" + a.name + "' exceeds payload");
      }
      a.values.resize(count);
      for (std::size_t i = 0; i < count; ++i) {
        std::uint32_t bits = 0;
        std::memcpy(&bits, payload.data() + (offset + i) * 4, 4);
        a.values[i] = std::bit_cast<float>(to_le(bits));
      }
      ckpt.arrays.push_back(std::move(a));
    }
    if (hex64(config_hash(ckpt.config, ckpt.arrays)) != header.at("config_hash").get<std::string>()) {
      throw CheckpointError(E::shape_mismatch, "config hash does not match parameter shapes");
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(E::malformed_header, e.what());
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(E::malformed_header, e.what());
  }
  return ckpt;
}

void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError(CheckpointErrorCode::io, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(CheckpointErrorCode::io, "write failed for " + path.string());
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointErrorCode::io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

void expect_kind(const ModelCheckpoint& ckpt, ModelKind expected) {
  if (ckpt.kind != expected) {
    throw CheckpointError(CheckpointErrorCode::kind_mismatch,
                          "expected a " + std::string(to_string(expected)) + " checkpoint, got " +
                              std::string(to_string(ckpt.kind)));
  }
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& path, ModelKind expected) {
  auto ckpt = load_checkpoint(path);
  expect_kind(ckpt, expected);
  return ckpt;
}

}  // namespace shottrack
