#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "shottrack/classifier.hpp"
#include "shottrack/dataset.hpp"
#include "shottrack/detector.hpp"

namespace shottrack {

// ------------------------------------------------------------ folds

struct FoldPlan {
  std::vector<std::vector<std::string>> folds;

  struct Round {
    std::vector<std::string> train, val, test;
  };
  // Round r tests fold r, validates on fold r + 1 and trains on the rest.
  Round round(std::size_t r) const;
  std::size_t size() const { return folds.size(); }
  std::vector<std::string> subjects() const;
  nlohmann::json to_json() const;
};

// Subjects are shuffled by seed, sorted by (experience bucket <2 / 2-5 / >5
// years, gender, backhand, handedness) and dealt into folds so that every
// attribute value is spread as evenly as possible.
FoldPlan make_folds(std::span<const SubjectMeta> subjects, std::size_t n_folds, std::uint64_t seed);

// Largest |count in fold - total / n_folds| of subjects matching `pred`.
double fold_imbalance(const FoldPlan& plan, std::span<const SubjectMeta> subjects,
                      const std::function<bool(const SubjectMeta&)>& pred);

// ------------------------------------------------------------ metrics

using ConfusionMatrix = std::vector<std::vector<std::size_t>>;

// Entry (i, j) counts items of true class i predicted as j.
ConfusionMatrix confusion_matrix(std::span<const int> pred, std::span<const int> truth,
                                 std::size_t classes);
ConfusionMatrix confusion_matrix(std::span<const ShotClass> pred, std::span<const ShotClass> truth);

struct MetricsReport {
  std::size_t count = 0;
  double accuracy = 0.0;
  double f1_positive = 0.0;  // detection only
  ConfusionMatrix confusion;
  std::vector<double> per_class_accuracy;  // recall per true class; NaN when absent

  nlohmann::json to_json() const;
};

MetricsReport classification_metrics(std::span<const int> pred, std::span<const int> truth);
// accuracy = matches / length; F1 on the positive class, 0 when P + R = 0.
MetricsReport frame_metrics(const FrameLabels& pred, const FrameLabels& truth);
MetricsReport frame_metrics(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth);

struct EventMatch {
  std::size_t shots = 0;
  std::size_t matched = 0;  // shots with exactly one event within tolerance
  std::size_t events = 0;
  std::size_t unmatched_events = 0;  // events with no shot within tolerance
  double matched_fraction() const { return shots ? static_cast<double>(matched) / shots : 1.0; }
  nlohmann::json to_json() const;
};

// Frame offset from a refined window centre to the impact it stands for.
inline constexpr std::size_t kEventCenterToImpact = kWindowBefore - kWindowLength / 2;

EventMatch match_events(std::span<const ShotEvent> events, std::span<const ShotLabel> shots,
                        std::size_t tolerance_frames = 30);

// ------------------------------------------------------------ cross-validation

enum class Task { classification, detection };
std::string_view to_string(Task t);
Task task_from_string(std::string_view s);

struct CvConfig {
  Task task = Task::classification;
  ClassifierConfig classifier;
  ClassifierTrainOptions classifier_train;
  DetectorConfig detector;
  DetectorTrainOptions detector_train;
  RefineConfig refine;
  // When set, every recording is resampled to this rate and back to 120 Hz.
  std::optional<double> sample_rate;
  // Classification only: also score the fold model on shots of this kind
  // from the test subjects (reported as extra metrics "transfer").
  std::optional<RecordingKind> transfer_kind;
  // Classification only: fine-tune a copy per test subject on this fraction
  // of their segments; the main metrics and the extra metrics "fine_tuned"
  // then both cover only the remainder.
  std::optional<FineTuneOptions> fine_tune;
  double fine_tune_fraction = 0.1;
  std::size_t threads = 1;
  std::function<void(const std::string&)> log;
};

struct LeakageAudit {
  std::size_t test_items = 0;
  std::size_t train_items = 0;
  std::size_t val_items = 0;
  std::size_t scaler_items = 0;
  std::size_t overlaps = 0;
  std::size_t subject_overlaps = 0;
  bool clean() const { return overlaps == 0 && subject_overlaps == 0; }
  nlohmann::json to_json() const;
};

struct FoldResult {
  std::size_t round = 0;
  FoldPlan::Round split;
  MetricsReport metrics;
  std::map<std::string, MetricsReport> extra;
  std::optional<EventMatch> events;
  TrainHistory history;
  LeakageAudit audit;
  std::size_t parameter_count = 0;
  double train_seconds = 0.0;
};

struct CrossValReport {
  Task task = Task::classification;
  std::vector<FoldResult> folds;
  MetricsReport pooled;
  std::map<std::string, MetricsReport> pooled_extra;
  std::optional<EventMatch> pooled_events;
  double mean_accuracy = 0.0, std_accuracy = 0.0;
  double mean_f1 = 0.0, std_f1 = 0.0;
  nlohmann::json settings;

  // Mean and population std of fold accuracy of an extra metric set, over
  // folds where it has items.
  std::pair<double, double> extra_accuracy(const std::string& name) const;

  // Primary score: accuracy for classification, frame F1 for detection.
  double mean_score() const { return task == Task::classification ? mean_accuracy : mean_f1; }
  double std_score() const { return task == Task::classification ? std_accuracy : std_f1; }
  bool leakage_free() const;

  nlohmann::json to_json() const;
  std::string to_text() const;
  void write_curves(const std::filesystem::path& dir, const std::string& prefix) const;
};

// Left-handed recordings are mirrored and non-120 Hz recordings resampled.
ImuSequence preprocess(const ImuSequence& raw, std::optional<double> sample_rate = std::nullopt);

// Frame labels / shot impacts of a recording mapped onto its 120 Hz
// preprocessed sequence of length n.
FrameLabels labels_at_120(const FrameLabels& labels, double from_rate, std::size_t n);
std::vector<ShotLabel> shots_at_120(const Recording& rec);

// Raw (unscaled) windows around every labelled shot of the given recordings.
std::vector<ShotSegment> labelled_windows(std::span<const ImuSequence> sequences,
                                          std::span<const Recording* const> recordings,
                                          WindowSpec spec);

// Subjects with recordings of the kind a task trains on (feeding for
// classification, rally for detection), in dataset order.
std::vector<SubjectMeta> task_subjects(const Dataset& ds, Task task);

CrossValReport cross_validate(const Dataset& ds, const FoldPlan& plan, const CvConfig& cfg,
                              std::uint64_t seed);

// ------------------------------------------------------------ ablations

enum class AblationKind { segment_length, sensor_subset, sample_rate, context_transfer, finetune };
std::string_view to_string(AblationKind k);
AblationKind ablation_kind_from_string(std::string_view s);

struct AblationVariant {
  std::string name;
  bool baseline = false;
  nlohmann::json params;
  std::optional<CrossValReport> report;
  double mean = 0.0, stdev = 0.0;
};

struct AblationReport {
  AblationKind kind = AblationKind::segment_length;
  std::vector<AblationVariant> variants;
  std::string notice;  // set when the ablation could not run

  const AblationVariant& baseline() const;
  const AblationVariant& variant(const std::string& name) const;
  double delta(const std::string& name) const;  // variant mean - baseline mean
  nlohmann::json to_json() const;
  std::string to_text() const;
};

// Variant names per kind (baseline marked *):
//   segment_length   120@60  180@120*  240@120  240@180
//   sensor_subset    accel_only  gyro_only  both*
//   sample_rate      30  60  120*
//   context_transfer feeding*  rally
//   finetune         before*  after
std::vector<std::string> ablation_variants(AblationKind kind);
ClassifierConfig segment_length_config(const ClassifierConfig& base, const std::string& variant);
ClassifierConfig sensor_subset_config(const ClassifierConfig& base, const std::string& variant);

// Runs every requested variant (all when `variants` is empty) through
// classification cross-validation with `base` as the common configuration.
AblationReport run_ablation(AblationKind kind, const Dataset& ds, const FoldPlan& plan,
                            const CvConfig& base, std::uint64_t seed,
                            std::vector<std::string> variants = {});

}  // namespace shottrack
