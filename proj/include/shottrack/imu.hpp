#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace shottrack {

inline constexpr double kSampleRate = 120.0;
inline constexpr std::size_t kNumChannels = 6;
inline constexpr std::size_t kNumClasses = 6;
inline constexpr std::size_t kWindowBefore = 120;
inline constexpr std::size_t kWindowAfter = 60;
inline constexpr std::size_t kWindowLength = kWindowBefore + kWindowAfter;

// Channel order is fixed everywhere: ax, ay, az, gx, gy, gz.
enum Channel : std::size_t { kAx = 0, kAy, kAz, kGx, kGy, kGz };

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

enum class ShotClass : int {
  Serve = 0,
  Smash,
  ForehandStroke,
  BackhandStroke,
  ForehandVolley,
  BackhandVolley,
};

inline constexpr std::array<ShotClass, kNumClasses> kAllClasses = {
    ShotClass::Serve,          ShotClass::Smash,          ShotClass::ForehandStroke,
    ShotClass::BackhandStroke, ShotClass::ForehandVolley, ShotClass::BackhandVolley};

std::string_view class_name(ShotClass c);
ShotClass class_from_name(std::string_view name);
inline int class_index(ShotClass c) { return static_cast<int>(c); }
ShotClass class_from_index(int i);

enum class Handedness { left, right };
enum class Arm { dominant, passive };
enum class Backhand { one_hand, two_hand };

std::string_view to_string(Handedness h);
std::string_view to_string(Arm a);
std::string_view to_string(Backhand b);
Handedness handedness_from_string(std::string_view s);
Arm arm_from_string(std::string_view s);
Backhand backhand_from_string(std::string_view s);

struct SubjectMeta {
  std::string id;
  Handedness handedness = Handedness::right;
  double experience_years = 0.0;
  std::string gender;
  Backhand backhand = Backhand::two_hand;

  bool operator==(const SubjectMeta&) const = default;
};

struct ImuSample {
  double t = 0.0;
  std::array<double, 3> accel{};  // m/s^2
  std::array<double, 3> gyro{};   // degree/s

  double channel(std::size_t c) const { return c < 3 ? accel[c] : gyro[c - 3]; }
  double& channel(std::size_t c) { return c < 3 ? accel[c] : gyro[c - 3]; }
  bool operator==(const ImuSample&) const = default;
};

struct ImuSequence {
  double rate = kSampleRate;
  std::vector<ImuSample> samples;
  SubjectMeta subject;
  Arm arm = Arm::passive;

  std::size_t size() const { return samples.size(); }
  double duration() const;
  bool operator==(const ImuSequence&) const = default;
};

// Fixed-length window around an impact. frames[i][c] is frame i, channel c.
struct ShotSegment {
  std::vector<std::array<double, kNumChannels>> frames;
  std::size_t impact_index = kWindowBefore;
  std::optional<ShotClass> label;

  std::size_t length() const { return frames.size(); }
  bool operator==(const ShotSegment&) const = default;
};

struct FrameLabels {
  std::vector<std::uint8_t> labels;

  std::size_t size() const { return labels.size(); }
  bool operator==(const FrameLabels&) const = default;
};

struct NormScaler {
  double accel_min = 0.0;
  double accel_max = 1.0;
  double gyro_min = 0.0;
  double gyro_max = 1.0;

  double scale(std::size_t channel, double v) const;
  double unscale(std::size_t channel, double v) const;
  bool operator==(const NormScaler&) const = default;
};

// Frames before/after the impact. The default is the 1 s + 0.5 s shot window.
struct WindowSpec {
  std::size_t before = kWindowBefore;
  std::size_t after = kWindowAfter;
  std::size_t length() const { return before + after; }
};

struct ShotLabel {
  std::size_t impact_frame = 0;
  ShotClass cls = ShotClass::Serve;
  bool operator==(const ShotLabel&) const = default;
};

enum class SequenceFormat { csv, jsonl };

// Parses a recording. Rows are sorted by time. When a sidecar document
// (same stem, .json) exists next to the file its metadata is applied;
// otherwise the rate is inferred from the median timestamp spacing.
ImuSequence load_sequence(const std::filesystem::path& path, SequenceFormat format);
ImuSequence parse_csv(std::string_view text);
ImuSequence parse_jsonl(std::string_view text);
void save_csv(const ImuSequence& seq, const std::filesystem::path& path);

ImuSequence mirror_handedness(const ImuSequence& seq);
ShotSegment mirror_handedness(const ShotSegment& seg);
ImuSequence resample(const ImuSequence& seq, double target_rate);

NormScaler fit_scaler(std::span<const ImuSequence> train);
ImuSequence apply_scaler(const ImuSequence& seq, const NormScaler& s);
ShotSegment apply_scaler(const ShotSegment& seg, const NormScaler& s);

ShotSegment extract_window(const ImuSequence& seq, std::size_t impact_frame,
                           WindowSpec spec = {});

FrameLabels read_frame_labels(const std::filesystem::path& path);
void write_frame_labels(const FrameLabels& labels, const std::filesystem::path& path);
std::vector<ShotLabel> read_shot_labels(const std::filesystem::path& path);
void write_shot_labels(std::span<const ShotLabel> shots, const std::filesystem::path& path);

}  // namespace shottrack
