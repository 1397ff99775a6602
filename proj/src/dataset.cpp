#include "shottrack/dataset.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace shottrack {

namespace fs = std::filesystem;

std::string_view to_string(RecordingKind k) { return k == RecordingKind::feeding ? "feeding" : "rally"; }

RecordingKind recording_kind_from_string(std::string_view s) {
  if (s == "feeding") return RecordingKind::feeding;
  if (s == "rally") return RecordingKind::rally;
  throw std::invalid_argument("unknown recording kind '" + std::string(s) + "'");
}

namespace {

nlohmann::json subject_to_json(const SubjectMeta& s) {
  return {{"id", s.id},
          {"handedness", to_string(s.handedness)},
          {"experience_years", s.experience_years},
          {"gender", s.gender},
          {"backhand", to_string(s.backhand)}};
}

SubjectMeta subject_from_json(const nlohmann::json& j) {
  SubjectMeta s;
  s.id = j.at("id").get<std::string>();
  s.handedness = handedness_from_string(j.value("handedness", "right"));
  s.experience_years = j.value("experience_years", 0.0);
  s.gender = j.value("gender", "");
  s.backhand = backhand_from_string(j.value("backhand", "two_hand"));
  return s;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

const SubjectMeta& Dataset::subject(const std::string& id) const {
  for (const auto& s : subjects) {
    if (s.id == id) return s;
  }
  throw std::out_of_range("unknown subject '" + id + "'");
}

std::vector<std::string> Dataset::subject_ids() const {
  std::vector<std::string> ids;
  ids.reserve(subjects.size());
  for (const auto& s : subjects) ids.push_back(s.id);
  return ids;
}

std::vector<const Recording*> Dataset::recordings_of(RecordingKind kind) const {
  std::vector<const Recording*> out;
  for (const auto& r : recordings) {
    if (r.kind == kind) out.push_back(&r);
  }
  return out;
}

void Dataset::validate() const {
  std::set<std::string> ids;
  for (const auto& s : subjects) {
    if (!ids.insert(s.id).second) throw std::invalid_argument("duplicate subject id '" + s.id + "'");
  }
  std::set<std::string> names;
  for (const auto& r : recordings) {
    if (!names.insert(r.name).second) {
      throw std::invalid_argument("duplicate recording name '" + r.name + "'");
    }
    if (!ids.count(r.sequence.subject.id)) {
      throw std::invalid_argument("recording '" + r.name + "' references unknown subject '" +
                                  r.sequence.subject.id + "'");
    }
    if (r.frame_labels && r.frame_labels->size() != r.sequence.size()) {
      throw std::invalid_argument("recording '" + r.name + "': frame labels do not match length");
    }
    for (const auto& s : r.shots) {
      if (s.impact_frame >= r.sequence.size()) {
        throw std::invalid_argument("recording '" + r.name + "': impact frame out of range");
      }
    }
  }
}

void save_recording(const Recording& rec, const fs::path& dir) {
  fs::create_directories(dir);
  const auto& seq = rec.sequence;
  save_csv(seq, dir / (rec.name + ".csv"));
  nlohmann::json side = {{"subject", subject_to_json(seq.subject)},
                         {"arm", to_string(seq.arm)},
                         {"rate", seq.rate},
                         {"kind", to_string(rec.kind)},
                         {"frame_labels", nullptr},
                         {"shot_labels", nullptr}};
  if (rec.frame_labels) {
    const std::string name = rec.name + ".labels.txt";
    write_frame_labels(*rec.frame_labels, dir / name);
    side["frame_labels"] = name;
  }
  if (!rec.shots.empty()) {
    const std::string name = rec.name + ".shots.csv";
    write_shot_labels(rec.shots, dir / name);
    side["shot_labels"] = name;
  }
  write_text(dir / (rec.name + ".json"), side.dump(2) + "\n");
}

Recording load_recording(const fs::path& csv_path) {
  Recording rec;
  rec.name = csv_path.stem().string();
  rec.sequence = load_sequence(csv_path, SequenceFormat::csv);
  auto sidecar = csv_path;
  sidecar.replace_extension(".json");
  if (!fs::exists(sidecar)) return rec;
  const auto side = nlohmann::json::parse(read_text(sidecar));
  rec.kind = recording_kind_from_string(side.value("kind", "feeding"));
  const auto dir = csv_path.parent_path();
  if (side.contains("frame_labels") && side["frame_labels"].is_string()) {
    rec.frame_labels = read_frame_labels(dir / side["frame_labels"].get<std::string>());
  }
  if (side.contains("shot_labels") && side["shot_labels"].is_string()) {
    rec.shots = read_shot_labels(dir / side["shot_labels"].get<std::string>());
  }
  return rec;
}

void save_dataset(const Dataset& ds, const fs::path& dir) {
  ds.validate();
  fs::create_directories(dir);
  nlohmann::json index = {{"format", "shottrack-dataset"}, {"version", 1}};
  index["subjects"] = nlohmann::json::array();
  for (const auto& s : ds.subjects) index["subjects"].push_back(subject_to_json(s));
  index["recordings"] = nlohmann::json::array();
  for (const auto& r : ds.recordings) {
    save_recording(r, dir);
    index["recordings"].push_back(r.name);
  }
  write_text(dir / "subjects.json", index.dump(2) + "\n");
}

Dataset load_dataset(const fs::path& dir) {
  const auto index_path = dir / "subjects.json";
  if (!fs::exists(index_path)) throw std::runtime_error("no dataset index at " + index_path.string());
  const auto index = nlohmann::json::parse(read_text(index_path));
  Dataset ds;
  for (const auto& s : index.at("subjects")) ds.subjects.push_back(subject_from_json(s));
  for (const auto& name : index.at("recordings")) {
    ds.recordings.push_back(load_recording(dir / (name.get<std::string>() + ".csv")));
  }
  ds.validate();
  return ds;
}

}  // namespace shottrack
