#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "shottrack/imu.hpp"

namespace shottrack {

// feeding: one shot type hit repeatedly (classification data).
// rally:   free play with frame labels (detection data).
enum class RecordingKind { feeding, rally };
std::string_view to_string(RecordingKind k);
RecordingKind recording_kind_from_string(std::string_view s);

struct Recording {
  std::string name;
  RecordingKind kind = RecordingKind::feeding;
  ImuSequence sequence;
  std::optional<FrameLabels> frame_labels;
  std::vector<ShotLabel> shots;
};

struct Dataset {
  std::vector<SubjectMeta> subjects;
  std::vector<Recording> recordings;

  const SubjectMeta& subject(const std::string& id) const;
  std::vector<std::string> subject_ids() const;
  std::vector<const Recording*> recordings_of(RecordingKind kind) const;
  // Unique subject ids, known subjects on every recording, label lengths
  // and shot frames consistent with their sequences.
  void validate() const;
};

// Directory layout:
//   subjects.json              subject table and recording index
//   <name>.csv                 samples (t,ax,ay,az,gx,gy,gz)
//   <name>.json                sidecar: subject, arm, rate, kind, label files
//   <name>.labels.txt          optional frame labels, one 0/1 per line
//   <name>.shots.csv           optional impact_frame,class_name rows
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

void save_recording(const Recording& rec, const std::filesystem::path& dir);
Recording load_recording(const std::filesystem::path& csv_path);

}  // namespace shottrack
