#include "shottrack/evalkit.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <mutex>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>
#include <unordered_set>

namespace shottrack {

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

int experience_bucket(double years) { return years < 2.0 ? 0 : (years <= 5.0 ? 1 : 2); }

// Attribute values used for balancing, one entry per attribute.
std::array<std::string, 4> attributes(const SubjectMeta& s) {
  return {std::to_string(experience_bucket(s.experience_years)), s.gender,
          std::string(to_string(s.backhand)), std::string(to_string(s.handedness))};
}

}  // namespace

// ------------------------------------------------------------ folds

FoldPlan::Round FoldPlan::round(std::size_t r) const {
  const std::size_t n = folds.size();
  if (n < 3) throw std::invalid_argument("fold plan needs at least 3 folds");
  if (r >= n) throw std::out_of_range("round " + std::to_string(r) + " of " + std::to_string(n));
  Round out;
  out.test = folds[r];
  out.val = folds[(r + 1) % n];
  for (std::size_t f = 0; f < n; ++f) {
    if (f == r || f == (r + 1) % n) continue;
    out.train.insert(out.train.end(), folds[f].begin(), folds[f].end());
  }
  return out;
}

std::vector<std::string> FoldPlan::subjects() const {
  std::vector<std::string> all;
  for (const auto& f : folds) all.insert(all.end(), f.begin(), f.end());
  return all;
}

nlohmann::json FoldPlan::to_json() const { return {{"folds", folds}}; }

FoldPlan make_folds(std::span<const SubjectMeta> subjects, std::size_t n_folds, std::uint64_t seed) {
  if (n_folds == 0) throw std::invalid_argument("make_folds: need at least one fold");
  if (subjects.empty() || subjects.size() % n_folds != 0) {
    throw std::invalid_argument("make_folds: " + std::to_string(subjects.size()) +
                                " subjects cannot be split into " + std::to_string(n_folds) +
                                " equal folds");
  }
  {
    std::set<std::string> ids;
    for (const auto& s : subjects) {
      if (!ids.insert(s.id).second) throw std::invalid_argument("make_folds: duplicate id " + s.id);
    }
  }
  const std::size_t n = subjects.size();
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& x = subjects[a];
    const auto& y = subjects[b];
    return std::make_tuple(experience_bucket(x.experience_years), x.gender, x.backhand, x.handedness) <
           std::make_tuple(experience_bucket(y.experience_years), y.gender, y.backhand, y.handedness);
  });

  std::vector<std::size_t> fold_of(n);
  for (std::size_t i = 0; i < n; ++i) fold_of[order[i]] = i % n_folds;

  // Swap search: lexicographically minimise (worst deviation, squared
  // deviation) of every attribute value's per-fold count.
  std::vector<std::array<std::string, 4>> attr(n);
  for (std::size_t i = 0; i < n; ++i) attr[i] = attributes(subjects[i]);
  auto cost = [&]() {
    double worst = 0.0, sq = 0.0;
    for (std::size_t a = 0; a < 4; ++a) {
      std::set<std::string> values;
      for (const auto& v : attr) values.insert(v[a]);
      for (const auto& value : values) {
        std::vector<double> count(n_folds, 0.0);
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          if (attr[i][a] == value) {
            count[fold_of[i]] += 1.0;
            total += 1.0;
          }
        }
        for (double c : count) {
          const double d = std::abs(c - total / static_cast<double>(n_folds));
          worst = std::max(worst, d);
          sq += d * d;
        }
      }
    }
    return std::make_pair(worst, sq);
  };
  auto best = cost();
  for (bool improved = true; improved;) {
    improved = false;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        if (fold_of[i] == fold_of[j]) continue;
        std::swap(fold_of[i], fold_of[j]);
        const auto c = cost();
        if (c.first < best.first - 1e-12 ||
            (c.first <= best.first + 1e-12 && c.second < best.second - 1e-12)) {
          best = c;
          improved = true;
        } else {
          std::swap(fold_of[i], fold_of[j]);
        }
      }
    }
  }

  std::vector<std::size_t> fold_order(n_folds);
  std::iota(fold_order.begin(), fold_order.end(), std::size_t{0});
  std::shuffle(fold_order.begin(), fold_order.end(), rng);
  FoldPlan plan;
  plan.folds.resize(n_folds);
  for (std::size_t k = 0; k < n_folds; ++k) {
    for (std::size_t i : order) {
      if (fold_of[i] == fold_order[k]) plan.folds[k].push_back(subjects[i].id);
    }
    std::sort(plan.folds[k].begin(), plan.folds[k].end());
  }
  return plan;
}

double fold_imbalance(const FoldPlan& plan, std::span<const SubjectMeta> subjects,
                      const std::function<bool(const SubjectMeta&)>& pred) {
  std::set<std::string> matching;
  for (const auto& s : subjects) {
    if (pred(s)) matching.insert(s.id);
  }
  const double ideal = static_cast<double>(matching.size()) / static_cast<double>(plan.size());
  double worst = 0.0;
  for (const auto& f : plan.folds) {
    const auto c = static_cast<double>(
        std::count_if(f.begin(), f.end(), [&](const std::string& id) { return matching.count(id) > 0; }));
    worst = std::max(worst, std::abs(c - ideal));
  }
  return worst;
}

// ------------------------------------------------------------ metrics

ConfusionMatrix confusion_matrix(std::span<const int> pred, std::span<const int> truth,
                                 std::size_t classes) {
  if (pred.size() != truth.size()) {
    throw std::invalid_argument("confusion_matrix: " + std::to_string(pred.size()) +
                                " predictions for " + std::to_string(truth.size()) + " labels");
  }
  ConfusionMatrix m(classes, std::vector<std::size_t>(classes, 0));
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] < 0 || truth[i] < 0 || static_cast<std::size_t>(pred[i]) >= classes ||
        static_cast<std::size_t>(truth[i]) >= classes) {
      throw std::out_of_range("confusion_matrix: class index out of range");
    }
    ++m[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(pred[i])];
  }
  return m;
}

ConfusionMatrix confusion_matrix(std::span<const ShotClass> pred, std::span<const ShotClass> truth) {
  std::vector<int> p, t;
  for (auto c : pred) p.push_back(class_index(c));
  for (auto c : truth) t.push_back(class_index(c));
  return confusion_matrix(p, t, kNumClasses);
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json per = nlohmann::json::array();
  for (double v : per_class_accuracy) per.push_back(std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v));
  return {{"count", count},
          {"accuracy", accuracy},
          {"f1_positive", f1_positive},
          {"confusion", confusion},
          {"per_class_accuracy", per}};
}

MetricsReport classification_metrics(std::span<const int> pred, std::span<const int> truth) {
  MetricsReport r;
  r.confusion = confusion_matrix(pred, truth, kNumClasses);
  r.count = pred.size();
  std::size_t hit = 0;
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    const auto row = std::accumulate(r.confusion[k].begin(), r.confusion[k].end(), std::size_t{0});
    hit += r.confusion[k][k];
    r.per_class_accuracy.push_back(row ? static_cast<double>(r.confusion[k][k]) / static_cast<double>(row)
                                       : std::numeric_limits<double>::quiet_NaN());
  }
  r.accuracy = r.count ? static_cast<double>(hit) / static_cast<double>(r.count) : 0.0;
  return r;
}

MetricsReport frame_metrics(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth) {
  if (pred.size() != truth.size()) {
    throw std::invalid_argument("frame_metrics: " + std::to_string(pred.size()) +
                                " predicted frames for " + std::to_string(truth.size()) + " labels");
  }
  MetricsReport r;
  r.count = pred.size();
  r.confusion.assign(2, std::vector<std::size_t>(2, 0));
  for (std::size_t i = 0; i < pred.size(); ++i) ++r.confusion[truth[i] ? 1 : 0][pred[i] ? 1 : 0];
  const double tn = static_cast<double>(r.confusion[0][0]), fp = static_cast<double>(r.confusion[0][1]);
  const double fn = static_cast<double>(r.confusion[1][0]), tp = static_cast<double>(r.confusion[1][1]);
  r.accuracy = r.count ? (tp + tn) / static_cast<double>(r.count) : 0.0;
  const double precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
  const double recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
  r.f1_positive = precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
  for (std::size_t k = 0; k < 2; ++k) {
    const double row = static_cast<double>(r.confusion[k][0] + r.confusion[k][1]);
    r.per_class_accuracy.push_back(row > 0 ? static_cast<double>(r.confusion[k][k]) / row
                                           : std::numeric_limits<double>::quiet_NaN());
  }
  return r;
}

MetricsReport frame_metrics(const FrameLabels& pred, const FrameLabels& truth) {
  return frame_metrics(std::span<const std::uint8_t>(pred.labels), std::span<const std::uint8_t>(truth.labels));
}

nlohmann::json EventMatch::to_json() const {
  return {{"shots", shots},
          {"matched", matched},
          {"events", events},
          {"unmatched_events", unmatched_events},
          {"matched_fraction", matched_fraction()}};
}

EventMatch match_events(std::span<const ShotEvent> events, std::span<const ShotLabel> shots,
                        std::size_t tolerance_frames) {
  EventMatch m;
  m.shots = shots.size();
  m.events = events.size();
  auto near = [&](const ShotEvent& e, const ShotLabel& s) {
    const auto impact = static_cast<long long>(e.center_frame + kEventCenterToImpact);
    return std::llabs(impact - static_cast<long long>(s.impact_frame)) <=
           static_cast<long long>(tolerance_frames);
  };
  for (const auto& s : shots) {
    const auto n = std::count_if(events.begin(), events.end(), [&](const ShotEvent& e) { return near(e, s); });
    m.matched += n == 1;
  }
  for (const auto& e : events) {
    m.unmatched_events +=
        std::none_of(shots.begin(), shots.end(), [&](const ShotLabel& s) { return near(e, s); });
  }
  return m;
}

// ------------------------------------------------------------ cross-validation

std::string_view to_string(Task t) { return t == Task::classification ? "classification" : "detection"; }

Task task_from_string(std::string_view s) {
  if (s == "classification") return Task::classification;
  if (s == "detection") return Task::detection;
  throw std::invalid_argument("unknown task '" + std::string(s) + "'");
}

nlohmann::json LeakageAudit::to_json() const {
  return {{"test_items", test_items},   {"train_items", train_items},
          {"val_items", val_items},     {"scaler_items", scaler_items},
          {"overlaps", overlaps},       {"subject_overlaps", subject_overlaps},
          {"clean", clean()}};
}

ImuSequence preprocess(const ImuSequence& raw, std::optional<double> sample_rate) {
  ImuSequence seq = std::abs(raw.rate - kSampleRate) > 1e-9 ? resample(raw, kSampleRate) : raw;
  if (sample_rate && std::abs(*sample_rate - kSampleRate) > 1e-9) {
    seq = resample(resample(seq, *sample_rate), kSampleRate);
  }
  if (seq.subject.handedness == Handedness::left) seq = mirror_handedness(seq);
  return seq;
}

namespace {

std::size_t to_frame(std::size_t frame, double from_rate) {
  if (std::abs(from_rate - kSampleRate) <= 1e-9) return frame;
  return static_cast<std::size_t>(std::lround(static_cast<double>(frame) * kSampleRate / from_rate));
}

}  // namespace

FrameLabels labels_at_120(const FrameLabels& labels, double from_rate, std::size_t n) {
  if (std::abs(from_rate - kSampleRate) <= 1e-9 && labels.size() == n) return labels;
  FrameLabels out;
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto src = static_cast<std::size_t>(std::lround(static_cast<double>(i) * from_rate / kSampleRate));
    out.labels[i] = labels.labels[std::min(src, labels.size() - 1)];
  }
  return out;
}

std::vector<ShotLabel> shots_at_120(const Recording& rec) {
  std::vector<ShotLabel> out;
  for (const auto& s : rec.shots) out.push_back({to_frame(s.impact_frame, rec.sequence.rate), s.cls});
  return out;
}

namespace {

std::uint64_t hash_bytes(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

std::uint64_t hash_segment(const ShotSegment& s) {
  return hash_bytes(s.frames.data(), s.frames.size() * sizeof(s.frames[0]));
}

std::uint64_t hash_sequence(const ImuSequence& s) {
  std::uint64_t h = hash_bytes(s.subject.id.data(), s.subject.id.size());
  return hash_bytes(s.samples.data(), s.samples.size() * sizeof(ImuSample), h);
}

struct Item {
  const Recording* rec;
  ImuSequence seq;  // preprocessed, raw units
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

bool in(const std::vector<std::string>& ids, const std::string& id) {
  return std::find(ids.begin(), ids.end(), id) != ids.end();
}

struct Segments {
  std::vector<ShotSegment> raw;
  std::vector<std::string> subject;
};

Segments windows_of(const std::vector<Item>& items, const std::vector<std::string>& ids,
                    RecordingKind kind, WindowSpec spec) {
  Segments out;
  for (const auto& it : items) {
    if (it.rec->kind != kind || !in(ids, it.seq.subject.id)) continue;
    const std::span<const ImuSequence> seqs(&it.seq, 1);
    const Recording* const recs[] = {it.rec};
    for (auto& s : labelled_windows(seqs, recs, spec)) {
      out.raw.push_back(std::move(s));
      out.subject.push_back(it.seq.subject.id);
    }
  }
  return out;
}

std::vector<int> predicted_indices(const std::vector<ClassPrediction>& preds) {
  std::vector<int> out;
  out.reserve(preds.size());
  for (const auto& p : preds) out.push_back(class_index(p.cls));
  return out;
}

void log_line(const CvConfig& cfg, std::mutex& mu, const std::string& line) {
  if (!cfg.log) return;
  std::lock_guard lock(mu);
  cfg.log(line);
}

FoldResult run_classification_round(const std::vector<Item>& items, const FoldPlan::Round& split,
                                    const CvConfig& cfg, std::uint64_t seed, std::mutex& mu,
                                    std::size_t r) {
  FoldResult fr;
  fr.split = split;
  const auto spec = cfg.classifier.window();
  auto train = windows_of(items, split.train, RecordingKind::feeding, spec);
  auto val = windows_of(items, split.val, RecordingKind::feeding, spec);
  auto test = windows_of(items, split.test, RecordingKind::feeding, spec);

  std::vector<ImuSequence> scaler_fit;
  std::set<std::string> scaler_subjects;
  for (const auto& it : items) {
    if (it.rec->kind == RecordingKind::feeding && in(split.train, it.seq.subject.id)) {
      scaler_fit.push_back(it.seq);
      scaler_subjects.insert(it.seq.subject.id);
    }
  }
  if (scaler_fit.empty() || train.raw.empty()) {
    throw std::invalid_argument("cross_validate: round " + std::to_string(r) + " has no training data");
  }
  const auto scaler = fit_scaler(scaler_fit);

  // Leakage audit: content hashes and subject ids of every test item
  // against everything that shaped the model or the scaler.
  std::unordered_set<std::uint64_t> seen;
  for (const auto& s : train.raw) seen.insert(hash_segment(s));
  for (const auto& s : val.raw) seen.insert(hash_segment(s));
  std::unordered_set<std::uint64_t> fit_seqs;
  for (const auto& s : scaler_fit) fit_seqs.insert(hash_sequence(s));
  fr.audit.train_items = train.raw.size();
  fr.audit.val_items = val.raw.size();
  fr.audit.scaler_items = scaler_fit.size();
  fr.audit.test_items = test.raw.size();
  for (const auto& s : test.raw) fr.audit.overlaps += seen.count(hash_segment(s));
  for (const auto& it : items) {
    if (in(split.test, it.seq.subject.id)) fr.audit.overlaps += fit_seqs.count(hash_sequence(it.seq));
  }
  for (const auto& id : split.test) {
    fr.audit.subject_overlaps += in(split.train, id) || in(split.val, id) || scaler_subjects.count(id);
  }

  const auto train_p = prepare_segments(train.raw, scaler, cfg.classifier);
  const auto val_p = prepare_segments(val.raw, scaler, cfg.classifier);
  const auto t0 = std::chrono::steady_clock::now();
  auto result = train_classifier(train_p, val_p, cfg.classifier, cfg.classifier_train, scaler, mix(seed, r));
  fr.train_seconds = seconds_since(t0);
  fr.history = result.history;
  ShotClassifier clf(result.checkpoint);
  fr.parameter_count = result.checkpoint.metadata.value("parameter_count", std::size_t{0});

  if (cfg.fine_tune) {
    // Per test subject: a stratified fine-tuning share, the rest for scoring.
    std::vector<int> before, after, truth;
    for (const auto& id : split.test) {
      std::vector<ShotSegment> tune, hold;
      std::array<std::vector<std::size_t>, kNumClasses> by_class;
      for (std::size_t i = 0; i < test.raw.size(); ++i) {
        if (test.subject[i] == id) by_class[static_cast<std::size_t>(class_index(*test.raw[i].label))].push_back(i);
      }
      std::mt19937_64 rng(mix(seed, std::hash<std::string>{}(id)));
      for (auto& idx : by_class) {
        std::shuffle(idx.begin(), idx.end(), rng);
        const auto n_tune = static_cast<std::size_t>(std::floor(cfg.fine_tune_fraction * static_cast<double>(idx.size())));
        for (std::size_t j = 0; j < idx.size(); ++j) (j < n_tune ? tune : hold).push_back(test.raw[idx[j]]);
      }
      if (hold.empty()) continue;
      const auto hold_p = prepare_segments(hold, scaler, cfg.classifier);
      const auto b = predicted_indices(clf.predict(hold_p));
      const auto tuned = fine_tune(result.checkpoint, prepare_segments(tune, scaler, cfg.classifier),
                                   *cfg.fine_tune, mix(seed, 77 + r));
      ShotClassifier tuned_clf(tuned);
      const auto a = predicted_indices(tuned_clf.predict(hold_p));
      before.insert(before.end(), b.begin(), b.end());
      after.insert(after.end(), a.begin(), a.end());
      truth.insert(truth.end(), hold_p.labels.begin(), hold_p.labels.end());
    }
    fr.metrics = classification_metrics(before, truth);
    fr.extra["fine_tuned"] = classification_metrics(after, truth);
  } else {
    const auto test_p = prepare_segments(test.raw, scaler, cfg.classifier);
    fr.metrics = classification_metrics(predicted_indices(clf.predict(test_p)), test_p.labels);
  }

  if (cfg.transfer_kind) {
    auto other = windows_of(items, split.test, *cfg.transfer_kind, spec);
    const auto other_p = prepare_segments(other.raw, scaler, cfg.classifier);
    fr.extra["transfer"] = classification_metrics(predicted_indices(clf.predict(other_p)), other_p.labels);
  }
  std::ostringstream msg;
  msg << "round " << r << ": train " << train.raw.size() << " val " << val.raw.size() << " test "
      << test.raw.size() << " segments, accuracy " << std::fixed << std::setprecision(4)
      << fr.metrics.accuracy << ", best epoch " << fr.history.best_epoch << ", " << std::setprecision(1)
      << fr.train_seconds << " s, leakage " << (fr.audit.clean() ? "none" : "DETECTED");
  log_line(cfg, mu, msg.str());
  return fr;
}

FoldResult run_detection_round(const std::vector<Item>& items, const FoldPlan::Round& split,
                               const CvConfig& cfg, std::uint64_t seed, std::mutex& mu, std::size_t r) {
  FoldResult fr;
  fr.split = split;
  std::vector<const Item*> train, val, test;
  for (const auto& it : items) {
    if (it.rec->kind != RecordingKind::rally || !it.rec->frame_labels) continue;
    const auto& id = it.seq.subject.id;
    if (in(split.train, id)) train.push_back(&it);
    else if (in(split.val, id)) val.push_back(&it);
    else if (in(split.test, id)) test.push_back(&it);
  }
  if (train.empty()) {
    throw std::invalid_argument("cross_validate: round " + std::to_string(r) + " has no training data");
  }
  std::vector<ImuSequence> fit;
  for (const auto* it : train) fit.push_back(it->seq);
  const auto scaler = fit_scaler(fit);

  std::unordered_set<std::uint64_t> seen;
  for (const auto* it : train) seen.insert(hash_sequence(it->seq));
  for (const auto* it : val) seen.insert(hash_sequence(it->seq));
  fr.audit.train_items = train.size();
  fr.audit.val_items = val.size();
  fr.audit.scaler_items = fit.size();
  fr.audit.test_items = test.size();
  for (const auto* it : test) fr.audit.overlaps += seen.count(hash_sequence(it->seq));
  for (const auto& id : split.test) fr.audit.subject_overlaps += in(split.train, id) || in(split.val, id);

  auto prep = [&](const std::vector<const Item*>& src) {
    std::vector<PreparedSequence> out;
    for (const auto* it : src) {
      const auto labels = labels_at_120(*it->rec->frame_labels, it->rec->sequence.rate, it->seq.size());
      out.push_back(prepare_sequence(apply_scaler(it->seq, scaler), labels, cfg.detector));
    }
    return out;
  };
  const auto train_p = prep(train);
  const auto val_p = prep(val);
  const auto test_p = prep(test);
  const auto t0 = std::chrono::steady_clock::now();
  auto result = train_detector(train_p, val_p, cfg.detector, cfg.detector_train, scaler, mix(seed, r));
  fr.train_seconds = seconds_since(t0);
  fr.history = result.history;
  fr.parameter_count = result.checkpoint.metadata.value("parameter_count", std::size_t{0});

  FrameDetector det(result.checkpoint);
  std::vector<std::uint8_t> pred, truth;
  EventMatch events;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto fp = det.predict(test_p[i]);
    pred.insert(pred.end(), fp.labels.labels.begin(), fp.labels.labels.end());
    truth.insert(truth.end(), test_p[i].targets.begin(), test_p[i].targets.end());
    const auto ev = refine(fp.labels, fp.positive_probability, cfg.refine);
    const auto shots = shots_at_120(*test[i]->rec);
    const auto m = match_events(ev, shots);
    events.shots += m.shots;
    events.matched += m.matched;
    events.events += m.events;
    events.unmatched_events += m.unmatched_events;
  }
  fr.metrics = frame_metrics(pred, truth);
  fr.events = events;
  std::ostringstream msg;
  msg << "round " << r << ": train " << train.size() << " val " << val.size() << " test " << test.size()
      << " sequences, frame F1 " << std::fixed << std::setprecision(4) << fr.metrics.f1_positive
      << ", events matched " << events.matched << "/" << events.shots << ", " << std::setprecision(1)
      << fr.train_seconds << " s, leakage " << (fr.audit.clean() ? "none" : "DETECTED");
  log_line(cfg, mu, msg.str());
  return fr;
}

std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  return {mean, std::sqrt(var / static_cast<double>(v.size()))};
}

void add_confusion(ConfusionMatrix& into, const ConfusionMatrix& m) {
  if (into.empty()) {
    into = m;
    return;
  }
  for (std::size_t i = 0; i < m.size(); ++i) {
    for (std::size_t j = 0; j < m.size(); ++j) into[i][j] += m[i][j];
  }
}

// Rebuilds pooled metrics from a summed confusion matrix.
MetricsReport from_confusion(const ConfusionMatrix& c, bool binary) {
  std::vector<int> pred, truth;
  if (binary) {
    std::vector<std::uint8_t> p, t;
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t j = 0; j < 2; ++j) {
        p.insert(p.end(), c[i][j], static_cast<std::uint8_t>(j));
        t.insert(t.end(), c[i][j], static_cast<std::uint8_t>(i));
      }
    }
    return frame_metrics(p, t);
  }
  for (std::size_t i = 0; i < c.size(); ++i) {
    for (std::size_t j = 0; j < c.size(); ++j) {
      pred.insert(pred.end(), c[i][j], static_cast<int>(j));
      truth.insert(truth.end(), c[i][j], static_cast<int>(i));
    }
  }
  return classification_metrics(pred, truth);
}

}  // namespace

std::vector<ShotSegment> labelled_windows(std::span<const ImuSequence> sequences,
                                          std::span<const Recording* const> recordings,
                                          WindowSpec spec) {
  if (sequences.size() != recordings.size()) {
    throw std::invalid_argument("labelled_windows: sequence/recording count mismatch");
  }
  std::vector<ShotSegment> out;
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    const auto& seq = sequences[i];
    for (const auto& shot : shots_at_120(*recordings[i])) {
      if (shot.impact_frame < spec.before || shot.impact_frame + spec.after > seq.size()) continue;
      auto seg = extract_window(seq, shot.impact_frame, spec);
      seg.label = shot.cls;
      out.push_back(std::move(seg));
    }
  }
  return out;
}

std::vector<SubjectMeta> task_subjects(const Dataset& ds, Task task) {
  const auto kind = task == Task::classification ? RecordingKind::feeding : RecordingKind::rally;
  std::set<std::string> ids;
  for (const auto& r : ds.recordings) {
    if (r.kind == kind) ids.insert(r.sequence.subject.id);
  }
  std::vector<SubjectMeta> out;
  for (const auto& s : ds.subjects) {
    if (ids.count(s.id)) out.push_back(s);
  }
  return out;
}

CrossValReport cross_validate(const Dataset& ds, const FoldPlan& plan, const CvConfig& cfg,
                              std::uint64_t seed) {
  const auto train_kind = cfg.task == Task::classification ? RecordingKind::feeding : RecordingKind::rally;
  std::set<std::string> task_subjects;
  for (const auto& r : ds.recordings) {
    if (r.kind == train_kind) task_subjects.insert(r.sequence.subject.id);
  }
  const auto planned = plan.subjects();
  const std::set<std::string> plan_set(planned.begin(), planned.end());
  if (plan_set.size() != planned.size()) throw std::invalid_argument("cross_validate: folds overlap");
  if (plan_set != task_subjects) {
    throw std::invalid_argument("cross_validate: fold plan covers " + std::to_string(plan_set.size()) +
                                " subjects but the dataset has " + std::to_string(task_subjects.size()) +
                                " subjects with " + std::string(to_string(train_kind)) + " recordings");
  }

  std::vector<Item> items;
  for (const auto& r : ds.recordings) {
    const bool wanted = r.kind == train_kind || (cfg.transfer_kind && r.kind == *cfg.transfer_kind);
    if (!wanted) continue;
    items.push_back({&r, preprocess(r.sequence, cfg.sample_rate)});
  }

  CrossValReport report;
  report.task = cfg.task;
  report.folds.resize(plan.size());
  std::mutex mu;
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(plan.size());
  auto worker = [&] {
    for (std::size_t r = next++; r < plan.size(); r = next++) {
      try {
        const auto split = plan.round(r);
        report.folds[r] = cfg.task == Task::classification
                              ? run_classification_round(items, split, cfg, seed, mu, r)
                              : run_detection_round(items, split, cfg, seed, mu, r);
        report.folds[r].round = r;
      } catch (...) {
        errors[r] = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::clamp<std::size_t>(cfg.threads, 1, plan.size());
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  std::vector<double> acc, f1;
  ConfusionMatrix pooled;
  std::map<std::string, ConfusionMatrix> pooled_extra;
  for (const auto& f : report.folds) {
    if (f.metrics.count > 0) {
      acc.push_back(f.metrics.accuracy);
      f1.push_back(f.metrics.f1_positive);
    }
    add_confusion(pooled, f.metrics.confusion);
    for (const auto& [name, m] : f.extra) add_confusion(pooled_extra[name], m.confusion);
    if (f.events) {
      if (!report.pooled_events) report.pooled_events = EventMatch{};
      auto& e = *report.pooled_events;
      e.shots += f.events->shots;
      e.matched += f.events->matched;
      e.events += f.events->events;
      e.unmatched_events += f.events->unmatched_events;
    }
  }
  const bool binary = cfg.task == Task::detection;
  report.pooled = from_confusion(pooled, binary);
  for (const auto& [name, c] : pooled_extra) report.pooled_extra[name] = from_confusion(c, binary);
  std::tie(report.mean_accuracy, report.std_accuracy) = mean_std(acc);
  std::tie(report.mean_f1, report.std_f1) = mean_std(f1);

  report.settings = {{"task", to_string(cfg.task)}, {"seed", seed}, {"folds", plan.to_json()}};
  if (cfg.task == Task::classification) {
    report.settings["classifier"] = cfg.classifier.to_json();
    report.settings["train"] = {{"epochs", cfg.classifier_train.epochs},
                                {"batch_size", cfg.classifier_train.batch_size},
                                {"lr", cfg.classifier_train.lr}};
  } else {
    report.settings["detector"] = cfg.detector.to_json();
    report.settings["train"] = {{"epochs", cfg.detector_train.epochs}, {"lr", cfg.detector_train.lr}};
    report.settings["refine_k"] = cfg.refine.k;
  }
  if (cfg.sample_rate) report.settings["sample_rate"] = *cfg.sample_rate;
  if (cfg.fine_tune) {
    report.settings["fine_tune"] = {{"epochs", cfg.fine_tune->epochs},
                                    {"lr", cfg.fine_tune->lr},
                                    {"fraction", cfg.fine_tune_fraction}};
  }
  if (cfg.transfer_kind) report.settings["transfer_kind"] = to_string(*cfg.transfer_kind);
  return report;
}

std::pair<double, double> CrossValReport::extra_accuracy(const std::string& name) const {
  std::vector<double> v;
  for (const auto& f : folds) {
    auto it = f.extra.find(name);
    if (it != f.extra.end() && it->second.count > 0) v.push_back(it->second.accuracy);
  }
  return mean_std(v);
}

bool CrossValReport::leakage_free() const {
  return std::all_of(folds.begin(), folds.end(), [](const FoldResult& f) { return f.audit.clean(); });
}

nlohmann::json CrossValReport::to_json() const {
  nlohmann::json j;
  j["task"] = to_string(task);
  j["settings"] = settings;
  j["mean_accuracy"] = mean_accuracy;
  j["std_accuracy"] = std_accuracy;
  if (task == Task::detection) {
    j["mean_f1"] = mean_f1;
    j["std_f1"] = std_f1;
  }
  j["pooled"] = pooled.to_json();
  for (const auto& [name, m] : pooled_extra) {
    const auto [mean, sd] = extra_accuracy(name);
    j["extra"][name] = {{"pooled", m.to_json()}, {"mean_accuracy", mean}, {"std_accuracy", sd}};
  }
  if (pooled_events) j["events"] = pooled_events->to_json();
  j["leakage_free"] = leakage_free();
  j["folds"] = nlohmann::json::array();
  for (const auto& f : folds) {
    nlohmann::json fj = {{"round", f.round},
                         {"train", f.split.train},
                         {"val", f.split.val},
                         {"test", f.split.test},
                         {"metrics", f.metrics.to_json()},
                         {"best_epoch", f.history.best_epoch},
                         {"parameter_count", f.parameter_count},
                         {"train_seconds", f.train_seconds},
                         {"leakage_audit", f.audit.to_json()}};
    for (const auto& [name, m] : f.extra) fj["extra"][name] = m.to_json();
    if (f.events) fj["events"] = f.events->to_json();
    j["folds"].push_back(fj);
  }
  return j;
}

std::string CrossValReport::to_text() const {
  std::ostringstream o;
  o << std::fixed;
  const bool det = task == Task::detection;
  o << to_string(task) << " cross-validation, " << folds.size() << " folds\n\n";
  o << std::left << std::setw(6) << "fold" << std::setw(24) << "test subjects" << std::right
    << std::setw(8) << "items" << std::setw(10) << "accuracy";
  if (det) o << std::setw(10) << "F1" << std::setw(10) << "events";
  o << std::setw(8) << "epoch" << std::setw(10) << "seconds" << "  leakage\n";
  for (const auto& f : folds) {
    std::string ids;
    for (const auto& id : f.split.test) ids += (ids.empty() ? "" : ",") + id;
    o << std::left << std::setw(6) << f.round << std::setw(24) << ids << std::right << std::setw(8)
      << f.metrics.count << std::setw(10) << std::setprecision(4) << f.metrics.accuracy;
    if (det) {
      o << std::setw(10) << f.metrics.f1_positive << std::setw(10)
        << (f.events ? std::to_string(f.events->matched) + "/" + std::to_string(f.events->shots) : "-");
    }
    o << std::setw(8) << f.history.best_epoch << std::setw(10) << std::setprecision(1) << f.train_seconds
      << "  " << (f.audit.clean() ? "none" : "DETECTED") << "\n";
  }
  o << std::setprecision(4) << "\nmean accuracy " << mean_accuracy << " +/- " << std_accuracy << "\n";
  if (det) {
    o << "mean frame F1 " << mean_f1 << " +/- " << std_f1 << "\n";
    if (pooled_events) {
      o << "events matched " << pooled_events->matched << "/" << pooled_events->shots << " ("
        << pooled_events->matched_fraction() << "), spurious " << pooled_events->unmatched_events << "\n";
    }
  }
  for (const auto& [name, m] : pooled_extra) {
    const auto [mean, sd] = extra_accuracy(name);
    o << name << " accuracy " << mean << " +/- " << sd << " (pooled " << m.accuracy << ")\n";
  }
  if (!pooled.confusion.empty()) {
    o << "\npooled confusion (rows: truth, columns: prediction)\n";
    auto label = [&](std::size_t k) {
      return det ? std::string(k ? "shot" : "idle") : std::string(class_name(class_from_index(static_cast<int>(k))));
    };
    o << std::setw(16) << "";
    for (std::size_t k = 0; k < pooled.confusion.size(); ++k) o << std::setw(16) << label(k);
    o << std::setw(10) << "recall" << "\n";
    for (std::size_t i = 0; i < pooled.confusion.size(); ++i) {
      o << std::setw(16) << label(i);
      for (auto v : pooled.confusion[i]) o << std::setw(16) << v;
      o << std::setw(10) << pooled.per_class_accuracy[i] << "\n";
    }
  }
  return o.str();
}

void CrossValReport::write_curves(const std::filesystem::path& dir, const std::string& prefix) const {
  std::filesystem::create_directories(dir);
  for (const auto& f : folds) {
    const auto path = dir / (prefix + "_fold" + std::to_string(f.round) + ".csv");
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << f.history.to_csv();
  }
}

// ------------------------------------------------------------ ablations

std::string_view to_string(AblationKind k) {
  switch (k) {
    case AblationKind::segment_length: return "segment_length";
    case AblationKind::sensor_subset: return "sensor_subset";
    case AblationKind::sample_rate: return "sample_rate";
    case AblationKind::context_transfer: return "context_transfer";
    case AblationKind::finetune: return "finetune";
  }
  return "unknown";
}

AblationKind ablation_kind_from_string(std::string_view s) {
  for (auto k : {AblationKind::segment_length, AblationKind::sensor_subset, AblationKind::sample_rate,
                 AblationKind::context_transfer, AblationKind::finetune}) {
    if (to_string(k) == s) return k;
  }
  throw std::invalid_argument("unknown ablation '" + std::string(s) + "'");
}

std::vector<std::string> ablation_variants(AblationKind kind) {
  switch (kind) {
    case AblationKind::segment_length: return {"120@60", "180@120", "240@120", "240@180"};
    case AblationKind::sensor_subset: return {"accel_only", "gyro_only", "both"};
    case AblationKind::sample_rate: return {"30", "60", "120"};
    case AblationKind::context_transfer: return {"feeding", "rally"};
    case AblationKind::finetune: return {"before", "after"};
  }
  return {};
}

namespace {

std::string baseline_variant(AblationKind kind) {
  switch (kind) {
    case AblationKind::segment_length: return "180@120";
    case AblationKind::sensor_subset: return "both";
    case AblationKind::sample_rate: return "120";
    case AblationKind::context_transfer: return "feeding";
    case AblationKind::finetune: return "before";
  }
  return {};
}

void require_variant(AblationKind kind, const std::string& v) {
  const auto all = ablation_variants(kind);
  if (std::find(all.begin(), all.end(), v) == all.end()) {
    std::string names;
    for (const auto& n : all) names += " " + n;
    throw std::invalid_argument("ablation " + std::string(to_string(kind)) + ": unknown variant '" + v +
                                "' (expected one of" + names + ")");
  }
}

}  // namespace

ClassifierConfig segment_length_config(const ClassifierConfig& base, const std::string& variant) {
  require_variant(AblationKind::segment_length, variant);
  const auto at = variant.find('@');
  ClassifierConfig c = base;
  c.segment_len = std::stoul(variant.substr(0, at));
  c.impact_index = std::stoul(variant.substr(at + 1));
  c.validate();
  return c;
}

ClassifierConfig sensor_subset_config(const ClassifierConfig& base, const std::string& variant) {
  require_variant(AblationKind::sensor_subset, variant);
  ClassifierConfig c = base;
  if (variant == "accel_only") c.channels = {kAx, kAy, kAz};
  else if (variant == "gyro_only") c.channels = {kGx, kGy, kGz};
  else c.channels = {kAx, kAy, kAz, kGx, kGy, kGz};
  c.validate();
  return c;
}

const AblationVariant& AblationReport::baseline() const {
  for (const auto& v : variants) {
    if (v.baseline) return v;
  }
  throw std::logic_error("ablation report has no baseline");
}

const AblationVariant& AblationReport::variant(const std::string& name) const {
  for (const auto& v : variants) {
    if (v.name == name) return v;
  }
  throw std::out_of_range("ablation report has no variant '" + name + "'");
}

double AblationReport::delta(const std::string& name) const { return variant(name).mean - baseline().mean; }

nlohmann::json AblationReport::to_json() const {
  nlohmann::json j = {{"kind", to_string(kind)}, {"notice", notice}};
  j["variants"] = nlohmann::json::array();
  for (const auto& v : variants) {
    nlohmann::json vj = {{"name", v.name}, {"baseline", v.baseline}, {"params", v.params},
                         {"mean_accuracy", v.mean}, {"std_accuracy", v.stdev}};
    if (notice.empty()) vj["delta"] = v.mean - baseline().mean;
    if (v.report) vj["report"] = v.report->to_json();
    j["variants"].push_back(vj);
  }
  return j;
}

std::string AblationReport::to_text() const {
  std::ostringstream o;
  o << "ablation: " << to_string(kind) << "\n";
  if (!notice.empty()) {
    o << "skipped: " << notice << "\n";
    return o.str();
  }
  o << std::fixed << std::setprecision(4);
  o << std::left << std::setw(14) << "variant" << std::right << std::setw(10) << "accuracy" << std::setw(10)
    << "std" << std::setw(10) << "delta" << "\n";
  const double base = baseline().mean;
  for (const auto& v : variants) {
    o << std::left << std::setw(14) << (v.name + (v.baseline ? "*" : "")) << std::right << std::setw(10)
      << v.mean << std::setw(10) << v.stdev << std::setw(10) << std::showpos << (v.mean - base)
      << std::noshowpos << "\n";
  }
  o << "(* baseline)\n";
  return o.str();
}

AblationReport run_ablation(AblationKind kind, const Dataset& ds, const FoldPlan& plan, const CvConfig& base,
                            std::uint64_t seed, std::vector<std::string> variants) {
  if (base.task != Task::classification) {
    throw std::invalid_argument("ablations run on the classification task");
  }
  const auto base_name = baseline_variant(kind);
  if (variants.empty()) variants = ablation_variants(kind);
  for (const auto& v : variants) require_variant(kind, v);
  if (std::find(variants.begin(), variants.end(), base_name) == variants.end()) variants.push_back(base_name);

  AblationReport rep;
  rep.kind = kind;
  auto add = [&](const std::string& name, nlohmann::json params, std::optional<CrossValReport> r,
                 std::pair<double, double> score) {
    AblationVariant v;
    v.name = name;
    v.baseline = name == base_name;
    v.params = std::move(params);
    v.report = std::move(r);
    std::tie(v.mean, v.stdev) = score;
    rep.variants.push_back(std::move(v));
  };

  if (kind == AblationKind::context_transfer || kind == AblationKind::finetune) {
    CvConfig cfg = base;
    std::string extra;
    if (kind == AblationKind::context_transfer) {
      const bool has_rally = std::any_of(ds.recordings.begin(), ds.recordings.end(), [](const Recording& r) {
        return r.kind == RecordingKind::rally && !r.shots.empty();
      });
      if (!has_rally) {
        rep.notice = "no rally recordings with shot labels in the dataset";
        for (const auto& v : variants) add(v, nlohmann::json::object(), std::nullopt, {0.0, 0.0});
        return rep;
      }
      cfg.transfer_kind = RecordingKind::rally;
      extra = "transfer";
    } else {
      if (!cfg.fine_tune) cfg.fine_tune = FineTuneOptions{};
      extra = "fine_tuned";
    }
    auto report = cross_validate(ds, plan, cfg, seed);
    const std::pair<double, double> main{report.mean_accuracy, report.std_accuracy};
    const auto other = report.extra_accuracy(extra);
    const std::string other_name = kind == AblationKind::context_transfer ? "rally" : "after";
    for (const auto& v : variants) {
      if (v == base_name) add(v, {{"test", base_name}}, report, main);
      else add(v, {{"test", other_name}}, std::nullopt, other);
    }
    return rep;
  }

  for (const auto& v : variants) {
    CvConfig cfg = base;
    nlohmann::json params;
    if (kind == AblationKind::segment_length) {
      cfg.classifier = segment_length_config(base.classifier, v);
      params = {{"segment_len", cfg.classifier.segment_len}, {"impact_index", cfg.classifier.impact_index}};
    } else if (kind == AblationKind::sensor_subset) {
      cfg.classifier = sensor_subset_config(base.classifier, v);
      params = {{"channels", cfg.classifier.channels}};
    } else {
      const double rate = std::stod(v);
      if (std::abs(rate - kSampleRate) > 1e-9) cfg.sample_rate = rate;
      params = {{"sample_rate", rate}};
    }
    if (base.log) base.log("ablation " + std::string(to_string(kind)) + " variant " + v);
    auto report = cross_validate(ds, plan, cfg, seed);
    const std::pair<double, double> score{report.mean_accuracy, report.std_accuracy};
    add(v, std::move(params), std::move(report), score);
  }
  return rep;
}

}  // namespace shottrack
