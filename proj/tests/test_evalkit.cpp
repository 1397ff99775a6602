#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "shottrack/evalkit.hpp"
#include "shottrack/synth.hpp"

using namespace shottrack;

namespace {

std::vector<SubjectMeta> subjects(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<SubjectMeta> out;
  for (std::size_t i = 0; i < n; ++i) {
    SubjectMeta m;
    m.id = "P" + std::to_string(i);
    m.gender = i % 2 ? "female" : "male";
    m.backhand = (i / 2) % 2 ? Backhand::one_hand : Backhand::two_hand;
    m.handedness = i % 5 == 0 ? Handedness::left : Handedness::right;
    m.experience_years = std::uniform_real_distribution<double>(0.0, 12.0)(rng);
    out.push_back(m);
  }
  return out;
}

ClassifierConfig tiny_classifier() {
  ClassifierConfig c;
  c.sub_block_channels = {4, 4, 4, 4};
  c.backbone_channels = {8, 8};
  c.attention_classifier_channels = 4;
  return c;
}

synth::CohortConfig tiny_cohort() {
  synth::CohortConfig c;
  c.subjects = 6;
  c.shots_per_class = 3;
  c.detection_subjects = 3;
  c.sessions_per_subject = 1;
  c.session_length_s = 15.0;
  return c;
}

struct Counts {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

}  // namespace

TEST_CASE("folds partition subjects evenly") {
  for (std::size_t n : {10u, 20u, 25u}) {
    const auto s = subjects(n, n);
    const auto plan = make_folds(s, 5, 3);
    REQUIRE(plan.size() == 5);
    std::set<std::string> seen;
    for (const auto& f : plan.folds) {
      CHECK(f.size() >= n / 5);
      CHECK(f.size() <= n / 5 + 1);
      for (const auto& id : f) CHECK(seen.insert(id).second);
    }
    CHECK(seen.size() == n);
    auto female = [](const SubjectMeta& m) { return m.gender == "female"; };
    auto one_hand = [](const SubjectMeta& m) { return m.backhand == Backhand::one_hand; };
    auto left = [](const SubjectMeta& m) { return m.handedness == Handedness::left; };
    auto novice = [](const SubjectMeta& m) { return m.experience_years < 2.0; };
    auto expert = [](const SubjectMeta& m) { return m.experience_years > 5.0; };
    for (const auto& pred : {std::function<bool(const SubjectMeta&)>(female), {one_hand}, {left}, {novice}, {expert}}) {
      CHECK(fold_imbalance(plan, s, pred) <= 1.0);
    }
    CHECK(make_folds(s, 5, 3).folds == plan.folds);
  }
  CHECK(make_folds(subjects(20, 1), 5, 1).folds.front().size() == 4);
  CHECK(make_folds(subjects(10, 1), 5, 1).folds.front().size() == 2);
  CHECK_THROWS(make_folds(subjects(4, 1), 5, 1));
  CHECK_THROWS(make_folds(subjects(23, 1), 5, 1));
}

TEST_CASE("rounds rotate test and validation folds") {
  const auto plan = make_folds(subjects(20, 2), 5, 9);
  for (std::size_t r = 0; r < 5; ++r) {
    const auto round = plan.round(r);
    CHECK(round.test == plan.folds[r]);
    CHECK(round.val == plan.folds[(r + 1) % 5]);
    CHECK(round.train.size() == 12);
    std::set<std::string> all(round.train.begin(), round.train.end());
    all.insert(round.val.begin(), round.val.end());
    all.insert(round.test.begin(), round.test.end());
    CHECK(all.size() == 20);
  }
  CHECK_THROWS(plan.round(5));
}

TEST_CASE("confusion matrix and classification metrics") {
  const std::vector<int> truth = {0, 0, 1, 1, 2, 2};
  const std::vector<int> pred = {0, 1, 1, 1, 2, 0};
  const auto cm = confusion_matrix(pred, truth, 3);
  CHECK(cm == ConfusionMatrix{{1, 1, 0}, {0, 2, 0}, {1, 0, 1}});
  const auto m = classification_metrics(pred, truth);
  CHECK(m.count == 6);
  CHECK(m.accuracy == doctest::Approx(4.0 / 6.0));
  REQUIRE(m.per_class_accuracy.size() == kNumClasses);
  CHECK(m.per_class_accuracy[0] == doctest::Approx(0.5));
  CHECK(m.per_class_accuracy[1] == doctest::Approx(1.0));
  CHECK(std::isnan(m.per_class_accuracy[5]));
  CHECK_THROWS(confusion_matrix(std::vector<int>{0}, std::vector<int>{0, 1}, 3));
  CHECK_THROWS(confusion_matrix(std::vector<int>{3}, std::vector<int>{0}, 3));
}

TEST_CASE("frame metrics") {
  // TP 4, FP 2, FN 3: F1 = 8 / 13
  const std::vector<std::uint8_t> truth = {1, 1, 1, 1, 1, 1, 1, 0, 0, 0};
  const std::vector<std::uint8_t> pred = {1, 1, 1, 1, 0, 0, 0, 1, 1, 0};
  const auto m = frame_metrics(pred, truth);
  CHECK(m.f1_positive == doctest::Approx(0.6154).epsilon(1e-4));
  CHECK(m.accuracy == doctest::Approx(0.5));
  const std::vector<std::uint8_t> zeros(10, 0);
  CHECK(frame_metrics(zeros, zeros).f1_positive == 0.0);
  CHECK(frame_metrics(zeros, zeros).accuracy == 1.0);
  CHECK_THROWS(frame_metrics(zeros, std::span(truth).first(5)));
}

TEST_CASE("frame metrics agree with direct counting") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 300;
    std::vector<std::uint8_t> p(n), t(n);
    Counts c;
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = rng() % 3 == 0;
      t[i] = rng() % 4 == 0;
      if (p[i] && t[i]) ++c.tp;
      else if (p[i]) ++c.fp;
      else if (t[i]) ++c.fn;
      else ++c.tn;
    }
    const auto m = frame_metrics(p, t);
    const double prec = c.tp + c.fp ? double(c.tp) / double(c.tp + c.fp) : 0.0;
    const double rec = c.tp + c.fn ? double(c.tp) / double(c.tp + c.fn) : 0.0;
    const double f1 = prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
    CHECK(m.f1_positive == doctest::Approx(f1).epsilon(1e-12));
    CHECK(m.accuracy == doctest::Approx(double(c.tp + c.tn) / double(n)).epsilon(1e-12));
  }
}

TEST_CASE("event matching") {
  auto event_at = [](std::size_t impact) {
    ShotEvent e;
    e.center_frame = impact - kEventCenterToImpact;
    e.window_start = e.center_frame - 90;
    e.window_end = e.window_start + 180;
    return e;
  };
  CHECK(kEventCenterToImpact == 30);
  const std::vector<ShotLabel> shots = {{500, ShotClass::Serve}, {1000, ShotClass::Smash}, {1500, ShotClass::Serve}};
  const std::vector<ShotEvent> events = {event_at(530), event_at(980), event_at(1010), event_at(2500)};
  const auto m = match_events(events, shots);
  CHECK(m.shots == 3);
  CHECK(m.matched == 1);  // 1000 has two events, 1500 none
  CHECK(m.events == 4);
  CHECK(m.unmatched_events == 1);
  CHECK(match_events(std::vector<ShotEvent>{event_at(531)}, std::span(shots).first(1)).matched == 0);
  CHECK(match_events({}, {}).matched_fraction() == 1.0);
}

TEST_CASE("labels and shots map onto 120 Hz") {
  FrameLabels at60;
  at60.labels = {0, 1, 1, 0};
  const auto up = labels_at_120(at60, 60.0, 8);
  CHECK(up.labels == std::vector<std::uint8_t>{0, 1, 1, 1, 1, 0, 0, 0});
  CHECK(labels_at_120(at60, 120.0, 4) == at60);
  Recording rec;
  rec.sequence.rate = 30.0;
  rec.shots = {{10, ShotClass::Smash}};
  CHECK(shots_at_120(rec).front().impact_frame == 40);
}

TEST_CASE("preprocess mirrors left-handed data and resamples") {
  auto s = synth::gen_session(synth::SessionScript{{{2.0, ShotClass::Serve}}, 4.0},
                              synth::nominal_profile("L", Handedness::left), 3);
  REQUIRE(s.sequence.subject.handedness == Handedness::left);
  const auto p = preprocess(s.sequence);
  CHECK(p == mirror_handedness(s.sequence));
  synth::SessionOptions opts;
  opts.rate = 60.0;
  auto slow = synth::gen_session(synth::SessionScript{{{2.0, ShotClass::Serve}}, 4.0}, synth::nominal_profile("R"), 3, opts);
  const auto q = preprocess(slow.sequence);
  CHECK(q.rate == kSampleRate);
  CHECK(q.size() >= 479);
  const auto coarse = preprocess(q, 30.0);
  CHECK(coarse.rate == kSampleRate);
  CHECK(coarse.size() + 4 >= q.size());
  CHECK(coarse.size() <= q.size());
}

TEST_CASE("classification cross-validation is leakage free and reproducible") {
  const auto ds = synth::gen_cohort(tiny_cohort(), 3);
  const auto plan = make_folds(ds.subjects, 3, 1);
  CvConfig cfg;
  cfg.classifier = tiny_classifier();
  cfg.classifier_train.epochs = 1;
  cfg.classifier_train.batch_size = 16;
  const auto a = cross_validate(ds, plan, cfg, 5);
  REQUIRE(a.folds.size() == 3);
  CHECK(a.leakage_free());
  for (const auto& f : a.folds) {
    CHECK(f.audit.test_items == 36);
    CHECK(f.audit.train_items == 36);
    CHECK(f.audit.val_items == 36);
    CHECK(f.metrics.count == 36);
  }
  CHECK(a.pooled.count == 108);
  auto json_without_timing = [](const CrossValReport& r) {
    auto j = r.to_json();
    for (auto& f : j["folds"]) f.erase("train_seconds");
    return j.dump();
  };
  const auto b = cross_validate(ds, plan, cfg, 5);
  CHECK(json_without_timing(a) == json_without_timing(b));
  cfg.threads = 3;
  const auto c = cross_validate(ds, plan, cfg, 5);
  CHECK(json_without_timing(a) == json_without_timing(c));

  FoldPlan partial = plan;
  partial.folds.back().pop_back();
  CHECK_THROWS(cross_validate(ds, partial, cfg, 5));
}

TEST_CASE("detection cross-validation") {
  const auto ds = synth::gen_cohort(tiny_cohort(), 3);
  const auto det_subjects = task_subjects(ds, Task::detection);
  REQUIRE(det_subjects.size() == 3);
  CHECK(task_subjects(ds, Task::classification).size() == 6);
  const auto plan = make_folds(det_subjects, 3, 1);
  CvConfig cfg;
  cfg.task = Task::detection;
  cfg.detector.hidden = 8;
  cfg.detector_train.epochs = 2;
  const auto r = cross_validate(ds, plan, cfg, 2);
  REQUIRE(r.folds.size() == 3);
  CHECK(r.leakage_free());
  REQUIRE(r.pooled_events.has_value());
  CHECK(r.pooled_events->shots > 0);
  CHECK(r.mean_score() == r.mean_f1);
  CHECK_THROWS(cross_validate(ds, make_folds(ds.subjects, 3, 1), cfg, 2));
}

TEST_CASE("ablation variants") {
  CHECK(ablation_variants(AblationKind::segment_length) ==
        std::vector<std::string>{"120@60", "180@120", "240@120", "240@180"});
  CHECK(ablation_variants(AblationKind::sample_rate) == std::vector<std::string>{"30", "60", "120"});
  const ClassifierConfig base;
  const auto short_cfg = segment_length_config(base, "120@60");
  CHECK(short_cfg.segment_len == 120);
  CHECK(short_cfg.impact_index == 60);
  CHECK(segment_length_config(base, "240@180").impact_index == 180);
  CHECK(sensor_subset_config(base, "accel_only").input_channels() == 3);
  CHECK(sensor_subset_config(base, "gyro_only").channels == std::vector<std::size_t>{3, 4, 5});
  CHECK_THROWS(segment_length_config(base, "100@50"));
  CHECK(ablation_kind_from_string("sensor_subset") == AblationKind::sensor_subset);
  CHECK_THROWS(ablation_kind_from_string("nope"));
}

TEST_CASE("sensor-subset ablation runs with three-channel models") {
  const auto ds = synth::gen_cohort(tiny_cohort(), 3);
  const auto plan = make_folds(ds.subjects, 3, 1);
  CvConfig cfg;
  cfg.classifier = tiny_classifier();
  cfg.classifier_train.epochs = 1;
  const auto rep = run_ablation(AblationKind::sensor_subset, ds, plan, cfg, 1, {"accel_only"});
  REQUIRE(rep.notice.empty());
  const auto& v = rep.variant("accel_only");
  REQUIRE(v.report.has_value());
  CHECK(rep.baseline().name == "both");
  CHECK(rep.delta("accel_only") == doctest::Approx(v.mean - rep.baseline().mean));
  CHECK(rep.to_json()["variants"].size() == 2);
}
