#include "shottrack/imu.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

namespace shottrack {

namespace {

constexpr std::array<std::string_view, kNumClasses> kClassNames = {
    "Serve", "Smash", "ForehandStroke", "BackhandStroke", "ForehandVolley", "BackhandVolley"};

constexpr std::array<std::string_view, 7> kColumns = {"t", "ax", "ay", "az", "gx", "gy", "gz"};

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(sep, start);
    out.push_back(trim(line.substr(start, pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

double parse_double(std::string_view s, std::size_t line) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw ParseError("malformed number '" + std::string(s) + "'", line);
  }
  return v;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Row {
  ImuSample sample;
  std::size_t line;
};

// Sorts rows by time and rejects repeated timestamps.
std::vector<ImuSample> finish_rows(std::vector<Row> rows) {
  if (rows.empty()) throw ParseError("recording has no samples", 1);
  std::stable_sort(rows.begin(), rows.end(),
                   [](const Row& a, const Row& b) { return a.sample.t < b.sample.t; });
  std::vector<ImuSample> out;
  out.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].sample.t < 0.0) throw ParseError("negative timestamp", rows[i].line);
    if (i > 0 && !(rows[i].sample.t > rows[i - 1].sample.t)) {
      throw ParseError("non-monotone timestamps (duplicate t)", rows[i].line);
    }
    out.push_back(rows[i].sample);
  }
  return out;
}

double infer_rate(const std::vector<ImuSample>& s) {
  if (s.size() < 2) return kSampleRate;
  std::vector<double> dt;
  dt.reserve(s.size() - 1);
  for (std::size_t i = 1; i < s.size(); ++i) dt.push_back(s[i].t - s[i - 1].t);
  std::nth_element(dt.begin(), dt.begin() + dt.size() / 2, dt.end());
  return 1.0 / dt[dt.size() / 2];
}

void apply_sidecar(ImuSequence& seq, const std::filesystem::path& recording) {
  auto sidecar = recording;
  sidecar.replace_extension(".json");
  if (!std::filesystem::exists(sidecar)) {
    seq.rate = infer_rate(seq.samples);
    seq.subject.id = recording.stem().string();
    return;
  }
  auto j = nlohmann::json::parse(read_file(sidecar));
  if (j.contains("rate")) {
    seq.rate = j.at("rate").get<double>();
  } else {
    seq.rate = infer_rate(seq.samples);
  }
  if (j.contains("arm")) seq.arm = arm_from_string(j.at("arm").get<std::string>());
  if (j.contains("subject")) {
    const auto& s = j.at("subject");
    seq.subject.id = s.value("id", recording.stem().string());
    seq.subject.handedness = handedness_from_string(s.value("handedness", "right"));
    seq.subject.experience_years = s.value("experience_years", 0.0);
    seq.subject.gender = s.value("gender", "");
    seq.subject.backhand = backhand_from_string(s.value("backhand", "two_hand"));
  } else {
    seq.subject.id = recording.stem().string();
  }
}

}  // namespace

std::string_view class_name(ShotClass c) { return kClassNames.at(static_cast<std::size_t>(c)); }

ShotClass class_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kClassNames.size(); ++i) {
    if (kClassNames[i] == name) return static_cast<ShotClass>(i);
  }
  throw std::invalid_argument("unknown shot class '" + std::string(name) + "'");
}

ShotClass class_from_index(int i) {
  if (i < 0 || i >= static_cast<int>(kNumClasses)) {
    throw std::out_of_range("class index " + std::to_string(i) + " out of range");
  }
  return static_cast<ShotClass>(i);
}

std::string_view to_string(Handedness h) { return h == Handedness::left ? "left" : "right"; }
std::string_view to_string(Arm a) { return a == Arm::dominant ? "dominant" : "passive"; }
std::string_view to_string(Backhand b) { return b == Backhand::one_hand ? "one_hand" : "two_hand"; }

Handedness handedness_from_string(std::string_view s) {
  if (s == "left") return Handedness::left;
  if (s == "right") return Handedness::right;
  throw std::invalid_argument("unknown handedness '" + std::string(s) + "'");
}

Arm arm_from_string(std::string_view s) {
  if (s == "dominant") return Arm::dominant;
  if (s == "passive") return Arm::passive;
  throw std::invalid_argument("unknown arm '" + std::string(s) + "'");
}

Backhand backhand_from_string(std::string_view s) {
  if (s == "one_hand") return Backhand::one_hand;
  if (s == "two_hand") return Backhand::two_hand;
  throw std::invalid_argument("unknown backhand '" + std::string(s) + "'");
}

double ImuSequence::duration() const {
  if (samples.empty()) return 0.0;
  return samples.back().t - samples.front().t;
}

double NormScaler::scale(std::size_t channel, double v) const {
  return channel < 3 ? (v - accel_min) / (accel_max - accel_min)
                     : (v - gyro_min) / (gyro_max - gyro_min);
}

double NormScaler::unscale(std::size_t channel, double v) const {
  return channel < 3 ? v * (accel_max - accel_min) + accel_min
                     : v * (gyro_max - gyro_min) + gyro_min;
}

ImuSequence parse_csv(std::string_view text) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  auto next_line = [&](std::string_view& out) {
    if (pos >= text.size()) return false;
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    out = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    return true;
  };

  std::string_view header;
  if (!next_line(header)) throw ParseError("empty file", 1);
  auto names = split(trim(header), ',');
  std::array<std::size_t, 7> column_of{};
  for (std::size_t k = 0; k < kColumns.size(); ++k) {
    auto it = std::find(names.begin(), names.end(), kColumns[k]);
    if (it == names.end()) {
      throw ParseError("missing column '" + std::string(kColumns[k]) + "'", 1);
    }
    column_of[k] = static_cast<std::size_t>(it - names.begin());
  }

  std::vector<Row> rows;
  std::string_view line;
  while (next_line(line)) {
    line = trim(line);
    if (line.empty()) continue;
    auto fields = split(line, ',');
    if (fields.size() != names.size()) {
      throw ParseError("expected " + std::to_string(names.size()) + " fields, got " +
                           std::to_string(fields.size()),
                       line_no);
    }
    Row r{{}, line_no};
    r.sample.t = parse_double(fields[column_of[0]], line_no);
    for (std::size_t c = 0; c < kNumChannels; ++c) {
      r.sample.channel(c) = parse_double(fields[column_of[c + 1]], line_no);
    }
    rows.push_back(r);
  }

  ImuSequence seq;
  seq.samples = finish_rows(std::move(rows));
  seq.rate = infer_rate(seq.samples);
  return seq;
}

ImuSequence parse_jsonl(std::string_view text) {
  std::vector<Row> rows;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = trim(text.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("malformed JSON: ") + e.what(), line_no);
    }
    Row r{{}, line_no};
    for (std::size_t k = 0; k < kColumns.size(); ++k) {
      auto key = std::string(kColumns[k]);
      if (!j.contains(key) || !j[key].is_number()) {
        throw ParseError("missing numeric field '" + key + "'", line_no);
      }
      double v = j[key].get<double>();
      if (!std::isfinite(v)) throw ParseError("non-finite value", line_no);
      if (k == 0) {
        r.sample.t = v;
      } else {
        r.sample.channel(k - 1) = v;
      }
    }
    rows.push_back(r);
  }
  ImuSequence seq;
  seq.samples = finish_rows(std::move(rows));
  seq.rate = infer_rate(seq.samples);
  return seq;
}

ImuSequence load_sequence(const std::filesystem::path& path, SequenceFormat format) {
  if (!std::filesystem::exists(path)) {
    throw std::runtime_error("no such file: " + path.string());
  }
  auto text = read_file(path);
  ImuSequence seq = format == SequenceFormat::csv ? parse_csv(text) : parse_jsonl(text);
  apply_sidecar(seq, path);
  return seq;
}

void save_csv(const ImuSequence& seq, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  std::string buf = "t,ax,ay,az,gx,gy,gz\n";
  char num[64];
  for (const auto& s : seq.samples) {
    auto put = [&](double v) {
      auto [p, ec] = std::to_chars(num, num + sizeof(num), v);
      buf.append(num, p);
    };
    put(s.t);
    for (std::size_t c = 0; c < kNumChannels; ++c) {
      buf.push_back(',');
      put(s.channel(c));
    }
    buf.push_back('\n');
    if (buf.size() > (1u << 20)) {
      out << buf;
      buf.clear();
    }
  }
  out << buf;
}

ImuSequence mirror_handedness(const ImuSequence& seq) {
  ImuSequence out = seq;
  for (auto& s : out.samples) {
    s.accel[1] = -s.accel[1];
    s.gyro[0] = -s.gyro[0];
    s.gyro[2] = -s.gyro[2];
  }
  out.subject.handedness =
      seq.subject.handedness == Handedness::left ? Handedness::right : Handedness::left;
  return out;
}

ShotSegment mirror_handedness(const ShotSegment& seg) {
  ShotSegment out = seg;
  for (auto& f : out.frames) {
    f[kAy] = -f[kAy];
    f[kGx] = -f[kGx];
    f[kGz] = -f[kGz];
  }
  return out;
}

ImuSequence resample(const ImuSequence& seq, double target_rate) {
  if (!(target_rate > 0.0)) throw std::invalid_argument("target rate must be positive");
  if (seq.samples.size() < 2) {
    throw std::invalid_argument("resampling needs at least two samples");
  }
  ImuSequence out = seq;
  out.rate = target_rate;
  out.samples.clear();

  const double t0 = seq.samples.front().t;
  const double t_end = seq.samples.back().t;
  const double step = 1.0 / target_rate;
  const auto count = static_cast<std::size_t>(std::floor((t_end - t0) / step + 1e-9)) + 1;
  out.samples.reserve(count);

  std::size_t j = 0;
  for (std::size_t i = 0; i < count; ++i) {
    const double t = t0 + static_cast<double>(i) * step;
    while (j + 2 < seq.samples.size() && seq.samples[j + 1].t <= t) ++j;
    const auto& a = seq.samples[j];
    const auto& b = seq.samples[j + 1];
    double w = (t - a.t) / (b.t - a.t);
    w = std::clamp(w, 0.0, 1.0);
    if (t - a.t <= 1e-9) w = 0.0;
    if (b.t - t <= 1e-9) w = 1.0;
    ImuSample s;
    s.t = t;
    for (std::size_t c = 0; c < kNumChannels; ++c) {
      s.channel(c) = w == 0.0 ? a.channel(c) : w == 1.0 ? b.channel(c) : a.channel(c) + w * (b.channel(c) - a.channel(c));
    }
    out.samples.push_back(s);
  }
  out.samples.front() = seq.samples.front();
  return out;
}

NormScaler fit_scaler(std::span<const ImuSequence> train) {
  if (train.empty()) throw std::invalid_argument("fit_scaler needs at least one sequence");
  constexpr double inf = std::numeric_limits<double>::infinity();
  NormScaler s{inf, -inf, inf, -inf};
  for (const auto& seq : train) {
    for (const auto& x : seq.samples) {
      for (double v : x.accel) {
        s.accel_min = std::min(s.accel_min, v);
        s.accel_max = std::max(s.accel_max, v);
      }
      for (double v : x.gyro) {
        s.gyro_min = std::min(s.gyro_min, v);
        s.gyro_max = std::max(s.gyro_max, v);
      }
    }
  }
  if (!(s.accel_max > s.accel_min)) throw std::invalid_argument("degenerate accel range");
  if (!(s.gyro_max > s.gyro_min)) throw std::invalid_argument("degenerate gyro range");
  return s;
}

ImuSequence apply_scaler(const ImuSequence& seq, const NormScaler& s) {
  ImuSequence out = seq;
  for (auto& x : out.samples) {
    for (std::size_t c = 0; c < kNumChannels; ++c) x.channel(c) = s.scale(c, x.channel(c));
  }
  return out;
}

ShotSegment apply_scaler(const ShotSegment& seg, const NormScaler& s) {
  ShotSegment out = seg;
  for (auto& f : out.frames) {
    for (std::size_t c = 0; c < kNumChannels; ++c) f[c] = s.scale(c, f[c]);
  }
  return out;
}

ShotSegment extract_window(const ImuSequence& seq, std::size_t impact_frame, WindowSpec spec) {
  if (std::abs(seq.rate - kSampleRate) > 1e-9) {
    throw std::invalid_argument("extract_window expects a 120 Hz sequence");
  }
  if (impact_frame < spec.before || impact_frame + spec.after > seq.size()) {
    throw std::out_of_range("window around frame " + std::to_string(impact_frame) +
                            " exceeds sequence of length " + std::to_string(seq.size()));
  }
  ShotSegment seg;
  seg.impact_index = spec.before;
  seg.frames.resize(spec.length());
  const std::size_t first = impact_frame - spec.before;
  for (std::size_t i = 0; i < spec.length(); ++i) {
    const auto& s = seq.samples[first + i];
    for (std::size_t c = 0; c < kNumChannels; ++c) seg.frames[i][c] = s.channel(c);
  }
  return seg;
}

FrameLabels read_frame_labels(const std::filesystem::path& path) {
  auto text = read_file(path);
  FrameLabels out;
  std::size_t line_no = 0;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    auto v = trim(line);
    if (v.empty()) continue;
    if (v == "0") {
      out.labels.push_back(0);
    } else if (v == "1") {
      out.labels.push_back(1);
    } else {
      throw ParseError("frame label must be 0 or 1", line_no);
    }
  }
  return out;
}

void write_frame_labels(const FrameLabels& labels, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  std::string buf;
  buf.reserve(labels.size() * 2);
  for (auto v : labels.labels) {
    buf.push_back(v ? '1' : '0');
    buf.push_back('\n');
  }
  out << buf;
}

std::vector<ShotLabel> read_shot_labels(const std::filesystem::path& path) {
  auto text = read_file(path);
  std::vector<ShotLabel> out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto v = trim(line);
    if (v.empty()) continue;
    auto fields = split(v, ',');
    if (fields.size() != 2) throw ParseError("expected impact_frame,class_name", line_no);
    std::size_t frame = 0;
    auto [p, ec] = std::from_chars(fields[0].data(), fields[0].data() + fields[0].size(), frame);
    if (ec != std::errc() || p != fields[0].data() + fields[0].size()) {
      if (line_no == 1) continue;  // header row
      throw ParseError("malformed impact frame", line_no);
    }
    try {
      out.push_back({frame, class_from_name(fields[1])});
    } catch (const std::invalid_argument& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  return out;
}

void write_shot_labels(std::span<const ShotLabel> shots, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "impact_frame,class_name\n";
  for (const auto& s : shots) out << s.impact_frame << ',' << class_name(s.cls) << '\n';
}

}  // namespace shottrack
