// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance [--only N[,N...]] [--ci] [--report FILE]
//
// --ci (or SHOTTRACK_CI=1) relaxes the performance thresholds 5x.
// SHOTTRACK_REAL_DATA=<dir> enables criterion 7.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include <unistd.h>

#include "reference.hpp"
#include "shottrack/checkpoint.hpp"
#include "shottrack/classifier.hpp"
#include "shottrack/detector.hpp"
#include "shottrack/dsp.hpp"
#include "shottrack/evalkit.hpp"
#include "shottrack/grad_audit.hpp"
#include "shottrack/pipeline.hpp"
#include "shottrack/synth.hpp"

using namespace shottrack;
namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------- tolerances

constexpr double kOpGradTol = 1e-4;
constexpr double kModelGradTol = 1e-3;
constexpr std::size_t kGradCases = 20;
constexpr double kGradSeconds = 120.0;

constexpr std::size_t kDspSegments = 1000;
constexpr double kReconstructionTol = 1e-9;
constexpr double kToneEnergy = 0.999;
constexpr double kDspSeconds = 60.0;

constexpr std::size_t kOracleInputs = 10000;
constexpr double kOracleSeconds = 120.0;

constexpr double kTemplateOracleAccuracy = 0.90;
constexpr double kCvMeanAccuracy = 0.95;
constexpr double kCvClassAccuracy = 0.85;
constexpr double kDetectionF1 = 0.90;
constexpr double kMatchedShots = 0.95;
constexpr std::size_t kMatchToleranceFrames = 30;  // 0.25 s
constexpr double kTaskSeconds = 30.0 * 60.0;

constexpr double kReferenceAccuracy = 0.882, kReferenceAccuracyBand = 0.030;
constexpr double kReferenceF1 = 0.860, kReferenceF1Band = 0.040;

constexpr double kClassifierSegmentsPerSecond = 100.0;
constexpr double kDetectorSecondsFor10Min = 5.0;
constexpr double kCiRelax = 5.0;

constexpr std::uint64_t kSeed = 20240601;

// ------------------------------------------------------------- desk scale

// Training settings for the synthetic cross-validation criteria.
ClassifierConfig cv_classifier() {
  ClassifierConfig c;
  c.sub_block_channels = {8, 16, 32, 32};
  c.backbone_channels = {64, 32};
  c.attention_classifier_channels = 8;
  return c;
}

ClassifierTrainOptions cv_classifier_train() {
  ClassifierTrainOptions o;
  o.epochs = 5;
  o.batch_size = 64;
  o.lr = 1e-3;
  return o;
}

DetectorConfig cv_detector() {
  DetectorConfig c;
  c.hidden = 32;
  return c;
}

DetectorTrainOptions cv_detector_train() {
  DetectorTrainOptions o;
  o.epochs = 25;
  o.lr = 1e-3;
  return o;
}

ClassifierConfig tiny_classifier() {
  ClassifierConfig c;
  c.sub_block_channels = {4, 8, 8, 8};
  c.backbone_channels = {16, 8};
  c.attention_classifier_channels = 4;
  return c;
}

synth::CohortConfig small_cohort() {
  synth::CohortConfig c;
  c.subjects = 5;
  c.shots_per_class = 6;
  c.detection_subjects = 5;
  c.sessions_per_subject = 1;
  c.session_length_s = 30.0;
  return c;
}

// ------------------------------------------------------------------ helpers

struct Outcome {
  enum class Status { pass, fail, waived } status = Status::fail;
  std::string detail;
};

Outcome pass(std::string d) { return {Outcome::Status::pass, std::move(d)}; }
Outcome fail(std::string d) { return {Outcome::Status::fail, std::move(d)}; }
Outcome judge(bool ok, std::string d) { return ok ? pass(std::move(d)) : fail(std::move(d)); }

using Clock = std::chrono::steady_clock;
double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int prec = 4) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(prec) << v;
  return o.str();
}

std::size_t worker_threads() {
  return std::clamp<std::size_t>(std::thread::hardware_concurrency(), 1, 5);
}

void progress(const std::string& line) { std::cerr << "  " << line << std::endl; }

std::string cv_fingerprint(const CrossValReport& r) {
  auto j = r.to_json();
  for (auto& f : j["folds"]) f.erase("train_seconds");
  return j.dump();
}

fs::path scratch_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("shottrack_acceptance_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// -------------------------------------------------------------- criterion 1

Outcome gradient_audit() {
  AuditOptions opts;
  opts.cases_per_op = kGradCases;
  opts.op_tolerance = kOpGradTol;
  opts.model_tolerance = kModelGradTol;
  const auto t0 = Clock::now();
  const auto rep = run_grad_audit(kSeed, opts);
  const double secs = since(t0);
  std::cerr << rep.to_text();
  double worst_op = 0.0, worst_model = 0.0;
  bool enough = true;
  for (const auto& e : rep.entries) {
    const bool model = e.tolerance == kModelGradTol;
    (model ? worst_model : worst_op) = std::max(model ? worst_model : worst_op, e.max_rel_error);
    if (!model && e.cases < kGradCases) enough = false;
  }
  const bool ok = rep.passed() && enough && secs < kGradSeconds;
  return judge(ok, std::to_string(rep.entries.size()) + " checks, worst op error " + fmt(worst_op * 1e6, 3) +
                       "e-6 (< 1e-4), worst model error " + fmt(worst_model * 1e6, 3) + "e-6 (< 1e-3), " +
                       fmt(secs, 1) + " s");
}

// -------------------------------------------------------------- criterion 2

Outcome dsp_identities() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(kSeed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> scale(0.01, 1000.0);
  double worst = 0.0;
  for (std::size_t k = 0; k < kDspSegments; ++k) {
    ShotSegment seg;
    seg.frames.resize(kWindowLength);
    const double s = scale(rng);
    for (auto& f : seg.frames)
      for (auto& v : f) v = s * n(rng);
    const auto bands = band_decompose(seg, kSampleRate);
    double err = 0.0, mag = 0.0;
    for (std::size_t c = 0; c < kNumChannels; ++c) {
      for (std::size_t i = 0; i < kWindowLength; ++i) {
        const double x = seg.frames[i][c];
        const double sum = bands.low.at(c, i) + bands.mid.at(c, i) + bands.high.at(c, i);
        err = std::max(err, std::abs(sum - x));
        mag = std::max(mag, std::abs(x));
      }
    }
    worst = std::max(worst, err / mag);
  }

  double min_share = 1.0;
  std::string shares;
  const std::array<std::pair<double, int>, 3> tones = {{{2.0, 0}, {10.0, 1}, {40.0, 2}}};
  for (auto [freq, band] : tones) {
    ShotSegment seg;
    seg.frames.resize(kWindowLength);
    for (std::size_t i = 0; i < kWindowLength; ++i)
      for (std::size_t c = 0; c < kNumChannels; ++c)
        seg.frames[i][c] = std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(i) / kSampleRate + 0.3 * c);
    const auto b = band_decompose(seg, kSampleRate);
    const std::array<const SignalBlock*, 3> parts = {&b.low, &b.mid, &b.high};
    double total = 0.0, in_band = 0.0;
    for (int p = 0; p < 3; ++p) {
      double e = 0.0;
      for (double v : parts[p]->data) e += v * v;
      total += e;
      if (p == band) in_band = e;
    }
    const double share = in_band / total;
    min_share = std::min(min_share, share);
    shares += (shares.empty() ? "" : "/") + fmt(share, 6);
  }
  const double secs = since(t0);
  const bool ok = worst <= kReconstructionTol && min_share >= kToneEnergy && secs < kDspSeconds;
  return judge(ok, "reconstruction worst relative error " + fmt(worst * 1e15, 2) + "e-15 on " +
                       std::to_string(kDspSegments) + " segments (<= 1e-9); 2/10/40 Hz in-band energy " + shares +
                       " (>= 0.999); " + fmt(secs, 2) + " s");
}

// -------------------------------------------------------------- criterion 3

Outcome oracle_equivalence() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(kSeed + 3);
  std::size_t peak_mismatch = 0, refine_mismatch = 0, peaks_found = 0, events_found = 0;
  for (std::size_t trial = 0; trial < kOracleInputs; ++trial) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 1200)(rng);
    PowerSeries p;
    p.values.resize(n);
    const int style = static_cast<int>(trial % 3);
    std::uniform_real_distribution<double> u(0.0, 1000.0);
    for (auto& v : p.values) {
      // Integer-valued series force ties and plateaus.
      v = style == 0 ? u(rng) : style == 1 ? std::floor(u(rng) / 100.0) * 100.0 : (rng() % 50 == 0 ? u(rng) : 96.0);
    }
    const double threshold = std::uniform_real_distribution<double>(0.0, 900.0)(rng);
    const std::size_t sep = std::uniform_int_distribution<std::size_t>(1, 300)(rng);
    const auto got = detect_peaks_threshold(p, threshold, sep);
    const auto want = reference::peaks(p.values, threshold, sep);
    peak_mismatch += got != want;
    peaks_found += want.size();
  }
  for (std::size_t trial = 0; trial < kOracleInputs; ++trial) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(100, 2500)(rng);
    const double p_flip = std::uniform_real_distribution<double>(0.001, 0.1)(rng);
    std::bernoulli_distribution flip(p_flip);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    FrameLabels labels;
    labels.labels.resize(n);
    std::vector<double> probs(n);
    std::uint8_t state = rng() % 2;
    for (std::size_t i = 0; i < n; ++i) {
      if (flip(rng)) state ^= 1;
      labels.labels[i] = state;
      probs[i] = u(rng);
    }
    RefineConfig cfg;
    cfg.k = std::uniform_int_distribution<std::size_t>(1, 40)(rng);
    if (trial % 4 == 0) cfg.window_len = std::uniform_int_distribution<std::size_t>(cfg.k, 400)(rng);
    const auto got = refine(labels, probs, cfg);
    const auto want = reference::refine(labels.labels, probs, cfg.k, cfg.window_len);
    bool same = got.size() == want.size();
    for (std::size_t i = 0; same && i < got.size(); ++i) {
      same = got[i].center_frame == want[i].center && got[i].window_start == want[i].start &&
             got[i].window_end == want[i].end && std::abs(got[i].confidence - want[i].confidence) <= 1e-12;
    }
    refine_mismatch += !same;
    events_found += want.size();
  }
  const double secs = since(t0);
  const bool ok = peak_mismatch == 0 && refine_mismatch == 0 && secs < kOracleSeconds;
  return judge(ok, "peaks " + std::to_string(kOracleInputs - peak_mismatch) + "/" + std::to_string(kOracleInputs) +
                       " identical (" + std::to_string(peaks_found) + " peaks), refine " +
                       std::to_string(kOracleInputs - refine_mismatch) + "/" + std::to_string(kOracleInputs) +
                       " identical (" + std::to_string(events_found) + " events), " + fmt(secs, 1) + " s");
}

// -------------------------------------------------------------- criterion 4

Outcome synthetic_classification() {
  const auto t0 = Clock::now();
  const auto ds = synth::gen_cohort({}, kSeed);
  std::vector<ImuSequence> seqs;
  std::vector<const Recording*> recs;
  for (const auto* r : ds.recordings_of(RecordingKind::feeding)) {
    seqs.push_back(preprocess(r->sequence));
    recs.push_back(r);
  }
  const auto windows = labelled_windows(seqs, recs, WindowSpec{});
  const synth::NearestTemplateOracle oracle;
  std::size_t right = 0;
  for (const auto& w : windows) right += oracle.classify(w) == *w.label;
  const double oracle_acc = static_cast<double>(right) / static_cast<double>(windows.size());
  progress("template oracle " + fmt(oracle_acc) + " on " + std::to_string(windows.size()) + " segments");
  if (windows.size() != 6000 || oracle_acc < kTemplateOracleAccuracy) {
    return fail("template oracle " + fmt(oracle_acc) + " on " + std::to_string(windows.size()) +
                " segments; separability not established");
  }

  CvConfig cfg;
  cfg.classifier = cv_classifier();
  cfg.classifier_train = cv_classifier_train();
  cfg.threads = worker_threads();
  cfg.log = progress;
  const auto plan = make_folds(task_subjects(ds, Task::classification), 5, kSeed);
  const auto rep = cross_validate(ds, plan, cfg, kSeed);
  const double secs = since(t0);
  double worst_class = 1.0;
  std::string per_class;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const double a = rep.pooled.per_class_accuracy[c];
    worst_class = std::min(worst_class, a);
    per_class += (c ? "/" : "") + fmt(a, 3);
  }
  const bool ok = rep.mean_accuracy >= kCvMeanAccuracy && worst_class >= kCvClassAccuracy && rep.leakage_free() &&
                  secs < kTaskSeconds;
  return judge(ok, "oracle " + fmt(oracle_acc) + "; 5-fold mean accuracy " + fmt(rep.mean_accuracy) + " +/- " +
                       fmt(rep.std_accuracy) + " (>= 0.95), per class " + per_class + " (>= 0.85), leakage " +
                       (rep.leakage_free() ? "none" : "DETECTED") + ", " + fmt(secs / 60.0, 1) + " min");
}

// -------------------------------------------------------------- criterion 5

Outcome synthetic_detection() {
  const auto t0 = Clock::now();
  const auto ds = synth::gen_cohort({}, kSeed);
  CvConfig cfg;
  cfg.task = Task::detection;
  cfg.detector = cv_detector();
  cfg.detector_train = cv_detector_train();
  cfg.threads = worker_threads();
  cfg.log = progress;
  const auto subjects = task_subjects(ds, Task::detection);
  const auto plan = make_folds(subjects, 5, kSeed);
  const auto rep = cross_validate(ds, plan, cfg, kSeed);
  const double secs = since(t0);
  const auto& ev = *rep.pooled_events;
  // match_events uses the same tolerance; make sure it is the 0.25 s one.
  static_assert(kMatchToleranceFrames == 30);
  const double matched = ev.matched_fraction();
  const bool ok = subjects.size() == 10 && rep.pooled.f1_positive >= kDetectionF1 && matched >= kMatchedShots &&
                  rep.leakage_free() && secs < kTaskSeconds;
  return judge(ok, std::to_string(subjects.size()) + " subjects; pooled frame F1 " + fmt(rep.pooled.f1_positive) +
                       " (fold mean " + fmt(rep.mean_f1) + " +/- " + fmt(rep.std_f1) + ", >= 0.90), shots matched " +
                       std::to_string(ev.matched) + "/" + std::to_string(ev.shots) + " = " + fmt(matched) +
                       " (>= 0.95), unmatched events " + std::to_string(ev.unmatched_events) + ", " +
                       fmt(secs / 60.0, 1) + " min");
}

// -------------------------------------------------------------- criterion 6

Outcome ablation_machinery() {
  const auto t0 = Clock::now();
  std::vector<std::string> problems;

  // 120-frame windows put the impact at frame 60.
  const auto short_cfg = segment_length_config(ClassifierConfig{}, "120@60");
  const auto spec = short_cfg.window();
  const auto session = synth::gen_session(synth::random_script(20.0, 1), synth::nominal_profile("S01"), 2);
  std::size_t checked = 0;
  for (const auto& shot : session.shots) {
    const auto seg = extract_window(session.sequence, shot.impact_frame, spec);
    const auto& s = session.sequence.samples[shot.impact_frame];
    const auto& first = session.sequence.samples[shot.impact_frame - 60];
    bool ok = seg.length() == 120 && seg.impact_index == 60;
    for (std::size_t c = 0; ok && c < kNumChannels; ++c)
      ok = seg.frames[60][c] == s.channel(c) && seg.frames[0][c] == first.channel(c);
    if (!ok) problems.push_back("window at impact " + std::to_string(shot.impact_frame));
    ++checked;
  }
  if (short_cfg.segment_len != 120 || short_cfg.impact_index != 60) problems.push_back("120@60 config");
  Classifier<float> short_model(short_cfg, 1);

  // Sensor subsets build 3-channel models.
  for (const std::string v : {"accel_only", "gyro_only"}) {
    const auto cfg = sensor_subset_config(ClassifierConfig{}, v);
    Classifier<float> m(cfg, 1);
    const auto arrays = m.params().export_arrays();
    const auto it = std::find_if(arrays.begin(), arrays.end(),
                                 [](const nn::NamedArray& a) { return a.name == "sub1.conv.weight"; });
    if (cfg.input_channels() != 3 || it == arrays.end() || it->shape.at(1) != 3) problems.push_back(v + " input width");
  }

  // Sample-rate variants run end to end and report deltas.
  auto cohort = small_cohort();
  cohort.shots_per_class = 10;
  const auto ds = synth::gen_cohort(cohort, kSeed);
  CvConfig base;
  base.classifier = cv_classifier();
  base.classifier_train.epochs = 6;
  base.classifier_train.batch_size = 16;
  base.classifier_train.lr = 1e-3;
  base.threads = worker_threads();
  const auto plan = make_folds(task_subjects(ds, Task::classification), 5, kSeed);
  const auto rates = run_ablation(AblationKind::sample_rate, ds, plan, base, kSeed);
  std::string deltas;
  for (const std::string v : {"30", "60"}) {
    const auto& var = rates.variant(v);
    const double d = rates.delta(v);
    if (!var.report || !std::isfinite(d) || var.report->folds.size() != 5) problems.push_back(v + " Hz run");
    deltas += (deltas.empty() ? "" : ", ") + v + " Hz " + (d >= 0 ? "+" : "") + fmt(d, 3);
  }
  const auto j = rates.to_json();
  if (!rates.notice.empty() || j["variants"].size() != 3) problems.push_back("sample-rate report");

  const bool ok = problems.empty();
  std::string detail = "120@60 window impact at frame 60 on " + std::to_string(checked) +
                       " shots; accel_only/gyro_only build 3-channel models; sample-rate deltas vs 120 Hz: " +
                       deltas + "; " + fmt(since(t0), 1) + " s";
  for (const auto& p : problems) detail += "; FAILED " + p;
  return judge(ok, detail);
}

// -------------------------------------------------------------- criterion 7

Outcome reference_numbers() {
  const char* dir = std::getenv("SHOTTRACK_REAL_DATA");
  if (!dir || !fs::exists(fs::path(dir) / "subjects.json")) {
    return {Outcome::Status::waived,
            "real recordings not present (set SHOTTRACK_REAL_DATA); synthetic data cannot reproduce the reference "
            "numbers, criteria 1-6 govern"};
  }
  const auto ds = load_dataset(dir);
  CvConfig cls;
  cls.threads = worker_threads();
  cls.log = progress;
  const auto cls_rep =
      cross_validate(ds, make_folds(task_subjects(ds, Task::classification), 5, kSeed), cls, kSeed);
  CvConfig det;
  det.task = Task::detection;
  det.threads = worker_threads();
  det.log = progress;
  const auto det_rep = cross_validate(ds, make_folds(task_subjects(ds, Task::detection), 5, kSeed), det, kSeed);
  const bool ok = std::abs(cls_rep.mean_accuracy - kReferenceAccuracy) <= kReferenceAccuracyBand &&
                  std::abs(det_rep.mean_f1 - kReferenceF1) <= kReferenceF1Band;
  return judge(ok, "classification accuracy " + fmt(cls_rep.mean_accuracy) + " (target 0.882 +/- 0.030), detection F1 " +
                       fmt(det_rep.mean_f1) + " (target 0.860 +/- 0.040)");
}

// -------------------------------------------------------------- criterion 8

Outcome determinism() {
  const auto t0 = Clock::now();
  std::vector<std::string> problems;
  const auto ds = synth::gen_cohort(small_cohort(), kSeed);

  CvConfig cls;
  cls.classifier = tiny_classifier();
  cls.classifier_train.epochs = 2;
  cls.classifier_train.lr = 1e-3;
  const auto cls_plan = make_folds(task_subjects(ds, Task::classification), 5, kSeed);
  const auto a = cross_validate(ds, cls_plan, cls, kSeed);
  cls.threads = 3;
  const auto b = cross_validate(ds, cls_plan, cls, kSeed);
  if (cv_fingerprint(a) != cv_fingerprint(b)) problems.push_back("classification metrics differ");

  CvConfig det;
  det.task = Task::detection;
  det.detector.hidden = 8;
  det.detector_train.epochs = 2;
  const auto det_plan = make_folds(task_subjects(ds, Task::detection), 5, kSeed);
  if (cv_fingerprint(cross_validate(ds, det_plan, det, kSeed)) != cv_fingerprint(cross_validate(ds, det_plan, det, kSeed)))
    problems.push_back("detection metrics differ");

  // Train one model of each kind and round-trip them through files.
  std::vector<ImuSequence> feeding;
  std::vector<const Recording*> recs;
  for (const auto* r : ds.recordings_of(RecordingKind::feeding)) {
    feeding.push_back(preprocess(r->sequence));
    recs.push_back(r);
  }
  const auto scaler = fit_scaler(feeding);
  const auto windows = labelled_windows(feeding, recs, WindowSpec{});
  const auto prepared = prepare_segments(windows, scaler, tiny_classifier());
  ClassifierTrainOptions copts;
  copts.epochs = 2;
  copts.lr = 1e-3;
  const auto cls_ckpt = train_classifier(prepared, {}, tiny_classifier(), copts, scaler, kSeed).checkpoint;
  const auto cls_again = train_classifier(prepared, {}, tiny_classifier(), copts, scaler, kSeed).checkpoint;
  if (!(cls_ckpt == cls_again)) problems.push_back("classifier training not reproducible");

  std::vector<ImuSequence> rally;
  std::vector<PreparedSequence> det_train;
  for (const auto* r : ds.recordings_of(RecordingKind::rally)) rally.push_back(preprocess(r->sequence));
  const auto det_scaler = fit_scaler(rally);
  DetectorConfig dcfg;
  dcfg.hidden = 8;
  for (std::size_t i = 0; i < rally.size(); ++i)
    det_train.push_back(prepare_sequence(apply_scaler(rally[i], det_scaler),
                                         *ds.recordings_of(RecordingKind::rally)[i]->frame_labels, dcfg));
  DetectorTrainOptions dopts;
  dopts.epochs = 3;
  const auto det_ckpt = train_detector(det_train, {}, dcfg, dopts, det_scaler, kSeed).checkpoint;

  const auto dir = scratch_dir("determinism");
  save_checkpoint(cls_ckpt, dir / "cls.ckpt");
  save_checkpoint(det_ckpt, dir / "det.ckpt");
  const auto cls_loaded = load_checkpoint(dir / "cls.ckpt", ModelKind::classifier);
  const auto det_loaded = load_checkpoint(dir / "det.ckpt", ModelKind::detector);
  if (!(cls_loaded == cls_ckpt) || !(det_loaded == det_ckpt)) problems.push_back("checkpoint contents changed");
  save_checkpoint(cls_loaded, dir / "cls2.ckpt");
  if (slurp(dir / "cls.ckpt") != slurp(dir / "cls2.ckpt")) problems.push_back("checkpoint bytes changed");

  ShotClassifier before(cls_ckpt), after(cls_loaded);
  const auto pa = before.predict(prepared), pb = after.predict(prepared);
  std::size_t cls_same = 0;
  for (std::size_t i = 0; i < pa.size(); ++i) cls_same += pa[i].probabilities == pb[i].probabilities;
  if (cls_same != pa.size()) problems.push_back("classifier predictions differ after reload");

  FrameDetector dbefore(det_ckpt), dafter(det_loaded);
  std::size_t det_same = 0, det_total = 0;
  for (const auto& s : det_train) {
    const auto x = dbefore.predict(s), y = dafter.predict(s);
    det_same += x.positive_probability == y.positive_probability;
    ++det_total;
  }
  if (det_same != det_total) problems.push_back("detector predictions differ after reload");

  // Reports written twice, and re-saved after loading, are byte-identical.
  const auto& rec = *ds.recordings_of(RecordingKind::rally).front();
  PipelineOptions popts;
  popts.start = "2024-06-01T10:00:00";
  Pipeline p1(det_loaded, cls_loaded), p2(det_ckpt, cls_ckpt);
  save_report(p1.run(rec.sequence, popts), dir / "r1.json");
  save_report(p2.run(rec.sequence, popts), dir / "r2.json");
  save_report(load_report(dir / "r1.json"), dir / "r3.json");
  const auto r1 = slurp(dir / "r1.json");
  if (r1 != slurp(dir / "r2.json") || r1 != slurp(dir / "r3.json")) problems.push_back("report bytes differ");
  fs::remove_all(dir);

  std::string detail = "repeat CV runs identical (classification, detection, 1 vs 3 threads); " + std::to_string(cls_same) + "/" +
                       std::to_string(pa.size()) + " classifier and " + std::to_string(det_same) + "/" +
                       std::to_string(det_total) +
                       " detector predictions bit-identical after reload; report files byte-identical; " +
                       fmt(since(t0), 1) + " s";
  for (const auto& pr : problems) detail += "; FAILED " + pr;
  return judge(problems.empty(), detail);
}

// -------------------------------------------------------------- criterion 9

Outcome performance(bool ci) {
  const double relax = ci ? kCiRelax : 1.0;
  const double need_rate = kClassifierSegmentsPerSecond / relax;
  const double need_det = kDetectorSecondsFor10Min * relax;

  const ClassifierConfig ccfg;
  const NormScaler scaler{-40, 40, -800, 800};
  ShotClassifier clf(make_classifier_checkpoint(Classifier<float>(ccfg, kSeed), scaler));
  std::vector<ShotSegment> segs;
  const auto profile = synth::nominal_profile("S01");
  for (std::size_t i = 0; i < 256; ++i)
    segs.push_back(apply_scaler(synth::gen_shot(class_from_index(int(i % kNumClasses)), profile, i), scaler));
  const auto prepared = prepare_normalized(segs, ccfg);
  clf.predict(prepared);  // warm-up
  auto t0 = Clock::now();
  const auto preds = clf.predict(prepared);
  const double rate = static_cast<double>(preds.size()) / since(t0);

  const DetectorConfig dcfg;
  FrameDetector det(make_detector_checkpoint(Detector<float>(dcfg, kSeed), scaler));
  synth::SessionScript script = synth::random_script(600.0, kSeed);
  const auto session = synth::gen_session(script, profile, kSeed);
  const auto normalized = apply_scaler(session.sequence, scaler);
  t0 = Clock::now();
  const auto frames = det.predict(normalized);
  const auto events = refine(frames.labels, frames.positive_probability);
  const double det_secs = since(t0);

  const bool ok = rate >= need_rate && det_secs < need_det && frames.labels.size() == 72000;
  return judge(ok, "classifier (" + std::to_string(Classifier<float>(ccfg, 1).parameter_count()) + " params) " +
                       fmt(rate, 1) + " segments/s (>= " + fmt(need_rate, 0) + "); detector (" +
                       std::to_string(Detector<float>(dcfg, 1).parameter_count()) + " params) 10 min in " +
                       fmt(det_secs, 2) + " s (< " + fmt(need_det, 0) + ")" + (ci ? " [CI thresholds]" : ""));
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  bool ci = false;
  fs::path report_path;
  if (const char* e = std::getenv("SHOTTRACK_CI"); e && std::string(e) == "1") ci = true;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--ci") {
      ci = true;
    } else if (arg == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      std::string tok;
      while (std::getline(ss, tok, ',')) only.insert(std::stoi(tok));
    } else if (arg == "--report" && i + 1 < argc) {
      report_path = argv[++i];
    } else {
      std::cerr << "usage: acceptance [--only N[,N...]] [--ci] [--report FILE]\n";
      return 2;
    }
  }

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient audit", gradient_audit},
      {"dsp identities", dsp_identities},
      {"oracle equivalence", oracle_equivalence},
      {"synthetic classification", synthetic_classification},
      {"synthetic detection", synthetic_detection},
      {"ablation machinery", ablation_machinery},
      {"reference numbers", reference_numbers},
      {"determinism and persistence", determinism},
      {"performance", [ci] { return performance(ci); }},
  };

  std::ostringstream summary;
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && !only.count(id)) continue;
    std::cerr << "criterion " << id << " (" << criteria[i].first << ") ..." << std::endl;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = fail(std::string("exception: ") + e.what());
    }
    const char* tag = o.status == Outcome::Status::pass ? "PASS" : o.status == Outcome::Status::waived ? "WAIVED" : "FAIL";
    failures += o.status == Outcome::Status::fail;
    std::ostringstream line;
    line << "criterion " << id << " " << tag << "  " << criteria[i].first << ": " << o.detail;
    std::cout << line.str() << std::endl;
    summary << line.str() << "\n";
  }
  if (!report_path.empty()) {
    std::ofstream out(report_path);
    out << summary.str();
  }
  return failures == 0 ? 0 : 1;
}
