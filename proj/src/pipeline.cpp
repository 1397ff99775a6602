#include "shottrack/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "shottrack/evalkit.hpp"

namespace shottrack {

nlohmann::json SessionReport::to_json() const {
  nlohmann::json ev = nlohmann::json::array();
  for (const auto& e : events) {
    ev.push_back({{"t_s", e.t_s},
                  {"class", class_name(e.cls)},
                  {"confidence", e.confidence},
                  {"detection_confidence", e.detection_confidence}});
  }
  nlohmann::json tally = nlohmann::json::object();
  for (auto c : kAllClasses) tally[std::string(class_name(c))] = tallies[static_cast<std::size_t>(c)];
  return {{"version", version},
          {"session", {{"id", session_id}, {"start", start}, {"duration_s", duration_s}}},
          {"events", ev},
          {"tallies", tally}};
}

SessionReport SessionReport::from_json(const nlohmann::json& j) {
  SessionReport r;
  r.version = j.at("version").get<int>();
  if (r.version != kReportVersion) {
    throw std::invalid_argument("unsupported report version " + std::to_string(r.version));
  }
  const auto& s = j.at("session");
  r.session_id = s.at("id").get<std::string>();
  r.start = s.at("start").get<std::string>();
  r.duration_s = s.at("duration_s").get<double>();
  for (const auto& e : j.at("events")) {
    ReportEvent ev;
    ev.t_s = e.at("t_s").get<double>();
    ev.cls = class_from_name(e.at("class").get<std::string>());
    ev.confidence = e.at("confidence").get<double>();
    ev.detection_confidence = e.value("detection_confidence", 0.0);
    r.events.push_back(ev);
  }
  for (auto c : kAllClasses) {
    r.tallies[static_cast<std::size_t>(c)] = j.at("tallies").at(std::string(class_name(c))).get<std::size_t>();
  }
  std::array<std::size_t, kNumClasses> counted{};
  for (const auto& e : r.events) ++counted[static_cast<std::size_t>(e.cls)];
  if (counted != r.tallies) throw std::invalid_argument("report tallies do not match its events");
  return r;
}

std::string SessionReport::to_text() const {
  std::ostringstream o;
  o << std::fixed;
  o << "session " << (session_id.empty() ? "-" : session_id);
  if (!start.empty()) o << "  start " << start;
  o << "  duration " << std::setprecision(1) << duration_s << " s\n\n";
  if (events.empty()) {
    o << "no shots detected\n";
  } else {
    o << std::right << std::setw(10) << "time (s)" << "  " << std::left << std::setw(16) << "shot" << std::right
      << std::setw(12) << "confidence" << std::setw(12) << "detection" << "\n";
    for (const auto& e : events) {
      o << std::right << std::setw(10) << std::setprecision(2) << e.t_s << "  " << std::left << std::setw(16)
        << class_name(e.cls) << std::right << std::setw(12) << std::setprecision(3) << e.confidence
        << std::setw(12) << e.detection_confidence << "\n";
    }
  }
  o << "\n" << std::left << std::setw(16) << "shot" << std::right << std::setw(6) << "count" << "\n";
  std::size_t total = 0;
  for (auto c : kAllClasses) {
    const auto n = tallies[static_cast<std::size_t>(c)];
    total += n;
    o << std::left << std::setw(16) << class_name(c) << std::right << std::setw(6) << n << "\n";
  }
  o << std::left << std::setw(16) << "total" << std::right << std::setw(6) << total << "\n";
  return o.str();
}

void save_report(const SessionReport& r, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << r.to_json().dump(2) << "\n";
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

SessionReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return SessionReport::from_json(nlohmann::json::parse(in));
}

namespace {

const NormScaler& require_scaler(const std::optional<NormScaler>& s, const char* what) {
  if (!s) throw std::invalid_argument(std::string(what) + " checkpoint carries no scaler");
  return *s;
}

}  // namespace

Pipeline::Pipeline(const ModelCheckpoint& detector, const ModelCheckpoint& classifier)
    : detector_(detector),
      classifier_(classifier),
      det_scaler_(require_scaler(detector.scaler, "detector")),
      cls_scaler_(require_scaler(classifier.scaler, "classifier")) {}

SessionReport Pipeline::run(const ImuSequence& recording, const PipelineOptions& opts) {
  if (recording.size() < 2 || recording.duration() < 1.5 - 1e-9) {
    throw std::invalid_argument("recording is shorter than one 1.5 s shot window");
  }
  const ImuSequence seq = preprocess(recording);
  if (seq.size() < opts.refine.window_len) {
    throw std::invalid_argument("recording is shorter than one 1.5 s shot window");
  }
  const auto frames = detector_.predict(apply_scaler(seq, det_scaler_));
  const auto events = refine(frames.labels, frames.positive_probability, opts.refine);

  SessionReport report;
  report.session_id = opts.session_id.empty() ? recording.subject.id : opts.session_id;
  report.start = opts.start;
  report.duration_s = recording.duration();
  const auto spec = classifier_.config().window();
  const std::size_t lo = spec.before, hi = seq.size() - spec.after;
  for (const auto& e : events) {
    const std::size_t impact = std::clamp(e.center_frame + kEventCenterToImpact, lo, hi);
    const auto seg = apply_scaler(extract_window(seq, impact, spec), cls_scaler_);
    const auto pred = classifier_.predict(seg);
    ReportEvent ev;
    ev.t_s = seq.samples[impact].t;
    ev.cls = pred.cls;
    ev.confidence = pred.confidence();
    ev.detection_confidence = e.confidence;
    report.events.push_back(ev);
    ++report.tallies[static_cast<std::size_t>(pred.cls)];
  }
  return report;
}

SessionReport run_pipeline(const ImuSequence& recording, const ModelCheckpoint& detector,
                           const ModelCheckpoint& classifier, const PipelineOptions& opts) {
  Pipeline p(detector, classifier);
  return p.run(recording, opts);
}

}  // namespace shottrack
