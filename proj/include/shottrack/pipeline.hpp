#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "shottrack/checkpoint.hpp"
#include "shottrack/classifier.hpp"
#include "shottrack/detector.hpp"
#include "shottrack/imu.hpp"

namespace shottrack {

inline constexpr int kReportVersion = 1;

struct ReportEvent {
  double t_s = 0.0;  // impact time
  ShotClass cls = ShotClass::Serve;
  double confidence = 0.0;            // classifier probability of `cls`
  double detection_confidence = 0.0;  // mean shot probability over the window
  bool operator==(const ReportEvent&) const = default;
};

struct SessionReport {
  int version = kReportVersion;
  std::string session_id;
  std::string start;
  double duration_s = 0.0;
  std::vector<ReportEvent> events;  // sorted by time
  std::array<std::size_t, kNumClasses> tallies{};

  nlohmann::json to_json() const;
  static SessionReport from_json(const nlohmann::json& j);
  // Timeline plus tally table.
  std::string to_text() const;
  bool operator==(const SessionReport&) const = default;
};

void save_report(const SessionReport& r, const std::filesystem::path& path);
SessionReport load_report(const std::filesystem::path& path);

struct PipelineOptions {
  RefineConfig refine;
  std::string session_id;  // defaults to the subject id
  std::string start;
};

// Detection then classification over one recording. Checkpoints are loaded
// once; run() may be called for many recordings.
class Pipeline {
 public:
  Pipeline(const ModelCheckpoint& detector, const ModelCheckpoint& classifier);

  SessionReport run(const ImuSequence& recording, const PipelineOptions& opts = {});

 private:
  FrameDetector detector_;
  ShotClassifier classifier_;
  NormScaler det_scaler_;
  NormScaler cls_scaler_;
};

// Resample to 120 Hz, mirror left-handed data, normalise with the detector
// scaler, detect and refine, then classify each event's window normalised
// with the classifier scaler.
SessionReport run_pipeline(const ImuSequence& recording, const ModelCheckpoint& detector,
                           const ModelCheckpoint& classifier, const PipelineOptions& opts = {});

}  // namespace shottrack
