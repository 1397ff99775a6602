#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "shottrack/checkpoint.hpp"
#include "shottrack/classifier.hpp"
#include "shottrack/dataset.hpp"
#include "shottrack/detector.hpp"
#include "shottrack/dsp.hpp"
#include "shottrack/evalkit.hpp"
#include "shottrack/grad_audit.hpp"
#include "shottrack/pipeline.hpp"
#include "shottrack/synth.hpp"

namespace fs = std::filesystem;
using namespace shottrack;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct Globals {
  std::uint64_t seed = 42;
  std::size_t threads = 1;
};

// Model shape and training flags shared by train-classifier and evaluate.
struct ClassifierFlags {
  ClassifierConfig cfg;
  ClassifierTrainOptions train;
  std::vector<std::size_t> sub_channels{32, 64, 128, 128};
  std::vector<std::size_t> backbone{256, 128};
  bool no_attention = false;

  void add(CLI::App* app) {
    app->add_option("--epochs", train.epochs, "Training epochs")->capture_default_str();
    app->add_option("--batch-size", train.batch_size, "Mini-batch size")->capture_default_str();
    app->add_option("--lr", train.lr, "Adam learning rate")->capture_default_str();
    app->add_option("--sub-channels", sub_channels, "Sub-block widths (4 values)")
        ->delimiter(',')
        ->expected(4);
    app->add_option("--backbone", backbone, "Backbone widths (2 values)")->delimiter(',')->expected(2);
    app->add_option("--head-channels", cfg.attention_classifier_channels, "Auxiliary head width")
        ->capture_default_str();
    app->add_option("--kernel", cfg.kernel, "Convolution kernel size")->capture_default_str();
    app->add_option("--band-low", cfg.band_spec.low_cut, "Low/mid band edge (Hz)")->capture_default_str();
    app->add_option("--band-high", cfg.band_spec.high_cut, "Mid/high band edge (Hz)")->capture_default_str();
    app->add_flag("--no-attention", no_attention, "Plain backbone without band attention");
  }

  void finish() {
    std::copy(sub_channels.begin(), sub_channels.end(), cfg.sub_block_channels.begin());
    std::copy(backbone.begin(), backbone.end(), cfg.backbone_channels.begin());
    cfg.use_attention = !no_attention;
    cfg.validate();
  }
};

struct DetectorFlags {
  DetectorConfig cfg;
  DetectorTrainOptions train;

  void add(CLI::App* app, const std::string& prefix) {
    app->add_option("--" + prefix + "epochs", train.epochs, "Detector training epochs")->capture_default_str();
    app->add_option("--" + prefix + "lr", train.lr, "Detector learning rate")->capture_default_str();
    app->add_option("--stages", cfg.stages, "TCN stages")->capture_default_str();
    app->add_option("--layers", cfg.layers_per_stage, "Residual layers per stage")->capture_default_str();
    app->add_option("--hidden", cfg.hidden, "TCN width")->capture_default_str();
    app->add_option("--positive-weight", cfg.class_weight_positive, "Loss weight of shot frames")
        ->capture_default_str();
  }
};

void add_refine_flags(CLI::App* app, RefineConfig& r) {
  app->add_option("-k,--min-run", r.k, "Minimum run of shot frames")->capture_default_str();
  app->add_option("--window", r.window_len, "Event window length (frames)")->capture_default_str();
}

void log_stderr(const std::string& line) { std::cerr << line << "\n"; }

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

ImuSequence read_recording(const fs::path& path) {
  if (!fs::exists(path)) throw std::runtime_error("no such file: " + path.string());
  const auto format = path.extension() == ".jsonl" ? SequenceFormat::jsonl : SequenceFormat::csv;
  return load_sequence(path, format);
}

Dataset read_dataset(const fs::path& dir) {
  if (!fs::exists(dir / "subjects.json")) {
    throw std::runtime_error("no dataset at " + dir.string() + " (missing subjects.json)");
  }
  return load_dataset(dir);
}

// ------------------------------------------------------------------ synth

struct SynthArgs {
  fs::path out;
  synth::CohortConfig cohort;
};

int run_synth(const SynthArgs& a, const Globals& g) {
  const auto ds = synth::gen_cohort(a.cohort, g.seed);
  save_dataset(ds, a.out);
  std::size_t shots = 0;
  for (const auto& r : ds.recordings) shots += r.shots.size();
  std::cout << "wrote " << ds.subjects.size() << " subjects, " << ds.recordings.size() << " recordings, "
            << shots << " shots to " << a.out.string() << "\n";
  return 0;
}

// ------------------------------------------------------- train-classifier

struct TrainClassifierArgs {
  fs::path data;
  fs::path out;
  std::vector<std::string> val_subjects;
  ClassifierFlags flags;
};

int run_train_classifier(TrainClassifierArgs& a, const Globals& g) {
  a.flags.finish();
  const auto ds = read_dataset(a.data);
  const auto recs = ds.recordings_of(RecordingKind::feeding);
  if (recs.empty()) throw std::runtime_error("dataset has no feeding recordings");
  std::vector<ImuSequence> seqs;
  for (const auto* r : recs) seqs.push_back(preprocess(r->sequence));

  auto is_val = [&](const Recording* r) {
    return std::find(a.val_subjects.begin(), a.val_subjects.end(), r->sequence.subject.id) !=
           a.val_subjects.end();
  };
  std::vector<ImuSequence> train_seqs, val_seqs;
  std::vector<const Recording*> train_recs, val_recs;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    (is_val(recs[i]) ? val_seqs : train_seqs).push_back(seqs[i]);
    (is_val(recs[i]) ? val_recs : train_recs).push_back(recs[i]);
  }
  if (train_seqs.empty()) throw std::runtime_error("no training subjects left");
  const auto scaler = fit_scaler(train_seqs);
  const auto spec = a.flags.cfg.window();
  const auto train = prepare_segments(labelled_windows(train_seqs, train_recs, spec), scaler, a.flags.cfg);
  const auto val = prepare_segments(labelled_windows(val_seqs, val_recs, spec), scaler, a.flags.cfg);
  std::cerr << "training on " << train.size() << " segments, validating on " << val.size() << "\n";
  const auto res = train_classifier(train, val, a.flags.cfg, a.flags.train, scaler, g.seed);
  save_checkpoint(res.checkpoint, a.out);
  const auto& last = res.history.epochs.back();
  std::cout << "saved " << a.out.string() << "  epochs " << res.history.epochs.size() << "  train acc "
            << last.train_accuracy;
  if (val.size() > 0) std::cout << "  best val acc " << res.history.epochs[res.history.best_epoch].val_accuracy;
  std::cout << "\n";
  return 0;
}

// --------------------------------------------------------- train-detector

struct TrainDetectorArgs {
  fs::path data;
  fs::path out;
  std::vector<std::string> val_subjects;
  DetectorFlags flags;
};

int run_train_detector(TrainDetectorArgs& a, const Globals& g) {
  a.flags.cfg.validate();
  const auto ds = read_dataset(a.data);
  std::vector<ImuSequence> train_seqs;
  std::vector<std::pair<ImuSequence, const Recording*>> all;
  for (const auto* r : ds.recordings_of(RecordingKind::rally)) {
    if (!r->frame_labels) continue;
    all.emplace_back(preprocess(r->sequence), r);
  }
  if (all.empty()) throw std::runtime_error("dataset has no labelled rally recordings");
  auto is_val = [&](const Recording* r) {
    return std::find(a.val_subjects.begin(), a.val_subjects.end(), r->sequence.subject.id) !=
           a.val_subjects.end();
  };
  for (const auto& [seq, rec] : all)
    if (!is_val(rec)) train_seqs.push_back(seq);
  if (train_seqs.empty()) throw std::runtime_error("no training subjects left");
  const auto scaler = fit_scaler(train_seqs);
  std::vector<PreparedSequence> train, val;
  for (const auto& [seq, rec] : all) {
    const auto labels = labels_at_120(*rec->frame_labels, rec->sequence.rate, seq.size());
    (is_val(rec) ? val : train).push_back(prepare_sequence(apply_scaler(seq, scaler), labels, a.flags.cfg));
  }
  std::cerr << "training on " << train.size() << " sequences, validating on " << val.size() << "\n";
  const auto res = train_detector(train, val, a.flags.cfg, a.flags.train, scaler, g.seed);
  save_checkpoint(res.checkpoint, a.out);
  std::cout << "saved " << a.out.string() << "  epochs " << res.history.epochs.size();
  if (!val.empty()) std::cout << "  best val F1 " << res.history.epochs[res.history.best_epoch].val_metric;
  std::cout << "\n";
  return 0;
}

// --------------------------------------------------------------- evaluate

struct EvaluateArgs {
  std::string task = "classification";
  fs::path data;
  std::size_t folds = 5;
  std::string ablation;
  std::vector<std::string> variants;
  std::optional<double> sample_rate;
  fs::path json_out;
  fs::path curves;
  bool quiet = false;
  ClassifierFlags cls;
  DetectorFlags det;
};

int run_evaluate(EvaluateArgs& a, const Globals& g) {
  a.cls.finish();
  a.det.cfg.validate();
  const auto ds = read_dataset(a.data);
  CvConfig cfg;
  cfg.task = task_from_string(a.task);
  const auto plan = make_folds(task_subjects(ds, cfg.task), a.folds, g.seed);
  cfg.classifier = a.cls.cfg;
  cfg.classifier_train = a.cls.train;
  cfg.detector = a.det.cfg;
  cfg.detector_train = a.det.train;
  cfg.sample_rate = a.sample_rate;
  cfg.threads = g.threads;
  if (!a.quiet) cfg.log = log_stderr;

  if (!a.ablation.empty()) {
    const auto kind = ablation_kind_from_string(a.ablation);
    const auto rep = run_ablation(kind, ds, plan, cfg, g.seed, a.variants);
    std::cout << rep.to_text();
    if (!a.json_out.empty()) write_text(a.json_out, rep.to_json().dump(2) + "\n");
    return 0;
  }
  const auto rep = cross_validate(ds, plan, cfg, g.seed);
  std::cout << rep.to_text();
  if (!a.json_out.empty()) write_text(a.json_out, rep.to_json().dump(2) + "\n");
  if (!a.curves.empty()) rep.write_curves(a.curves, a.task);
  if (!rep.leakage_free()) {
    std::cerr << "error: leakage audit found train/test overlap\n";
    return kExitFailure;
  }
  return 0;
}

// ---------------------------------------------------------------- analyze

struct AnalyzeArgs {
  std::vector<fs::path> recordings;
  fs::path detector;
  fs::path classifier;
  fs::path out;
  PipelineOptions opts;
  bool text = false;
};

int run_analyze(AnalyzeArgs& a, const Globals& g) {
  for (const auto& p : a.recordings)
    if (!fs::exists(p)) throw std::runtime_error("no such file: " + p.string());
  const auto det = load_checkpoint(a.detector, ModelKind::detector);
  const auto cls = load_checkpoint(a.classifier, ModelKind::classifier);

  if (a.recordings.size() == 1) {
    Pipeline pipe(det, cls);
    const auto report = pipe.run(read_recording(a.recordings[0]), a.opts);
    if (a.out.empty()) {
      std::cout << (a.text ? report.to_text() : report.to_json().dump(2) + "\n");
    } else {
      if (a.out.has_parent_path()) fs::create_directories(a.out.parent_path());
      save_report(report, a.out);
      std::cout << "wrote " << a.out.string() << " (" << report.events.size() << " shots)\n";
    }
    return 0;
  }

  // Several recordings: one report per input in the output directory.
  if (a.out.empty()) throw std::runtime_error("--out must name a directory when analysing several recordings");
  if (!a.opts.session_id.empty()) throw std::runtime_error("--session-id applies to a single recording");
  fs::create_directories(a.out);
  std::atomic<std::size_t> next{0};
  std::vector<std::string> errors(a.recordings.size());
  auto worker = [&] {
    Pipeline pipe(det, cls);
    for (std::size_t i = next++; i < a.recordings.size(); i = next++) {
      try {
        const auto& in = a.recordings[i];
        save_report(pipe.run(read_recording(in), a.opts), a.out / (in.stem().string() + ".report.json"));
      } catch (const std::exception& e) {
        errors[i] = a.recordings[i].string() + ": " + e.what();
      }
    }
  };
  std::vector<std::jthread> pool;
  const std::size_t n = std::max<std::size_t>(1, std::min(g.threads, a.recordings.size()));
  for (std::size_t t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  pool.clear();
  int status = 0;
  for (const auto& e : errors) {
    if (e.empty()) continue;
    std::cerr << "error: " << e << "\n";
    status = kExitFailure;
  }
  std::cout << "wrote " << a.recordings.size() << " reports to " << a.out.string() << "\n";
  return status;
}

// ----------------------------------------------------------------- report

int run_report(const fs::path& path, bool json) {
  if (!fs::exists(path)) throw std::runtime_error("no such file: " + path.string());
  const auto r = load_report(path);
  std::cout << (json ? r.to_json().dump(2) + "\n" : r.to_text());
  return 0;
}

// ---------------------------------------------------------- label-impacts

struct LabelImpactsArgs {
  fs::path recording;
  double threshold = kDefaultPeakThreshold;
  std::size_t min_separation = kWindowLength;
  fs::path out;
};

// Dominant-arm impact frames from thresholded acceleration power peaks.
int run_label_impacts(const LabelImpactsArgs& a) {
  const auto seq = read_recording(a.recording);
  const auto peaks = detect_peaks_threshold(accel_power(seq), a.threshold, a.min_separation);
  std::ostringstream o;
  o << "impact_frame,t_s\n";
  for (auto f : peaks) o << f << "," << seq.samples[f].t << "\n";
  if (a.out.empty()) {
    std::cout << o.str();
  } else {
    write_text(a.out, o.str());
    std::cout << "wrote " << peaks.size() << " impacts to " << a.out.string() << "\n";
  }
  return 0;
}

// -------------------------------------------------------------- gradcheck

struct GradcheckArgs {
  AuditOptions opts;
  bool reduced = false;
  fs::path json_out;
};

int run_gradcheck(GradcheckArgs& a, const Globals& g) {
  a.opts.full_width = !a.reduced;
  const auto rep = run_grad_audit(g.seed, a.opts);
  std::cout << rep.to_text();
  if (!a.json_out.empty()) write_text(a.json_out, rep.to_json().dump(2) + "\n");
  return rep.passed() ? 0 : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Racket-sport shot detection and classification from wrist IMU data"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "INI/TOML file of option values ([subcommand] sections)");
  Globals g;
  app.add_option("--seed", g.seed, "Seed for data, folds and training")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);

  SynthArgs synth_a;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic cohort");
  synth->add_option("-o,--out", synth_a.out, "Output directory")->required();
  synth->add_option("--subjects", synth_a.cohort.subjects)->capture_default_str();
  synth->add_option("--shots-per-class", synth_a.cohort.shots_per_class)->capture_default_str();
  synth->add_option("--detection-subjects", synth_a.cohort.detection_subjects)->capture_default_str();
  synth->add_option("--sessions", synth_a.cohort.sessions_per_subject, "Rally sessions per detection subject")
      ->capture_default_str();
  synth->add_option("--session-length", synth_a.cohort.session_length_s, "Rally length (s)")
      ->capture_default_str();

  TrainClassifierArgs tc;
  auto* train_cls = app.add_subcommand("train-classifier", "Train a shot classifier on feeding recordings");
  train_cls->add_option("-d,--data", tc.data, "Dataset directory")->required();
  train_cls->add_option("-o,--out", tc.out, "Checkpoint path")->required();
  train_cls->add_option("--val-subject", tc.val_subjects, "Hold out a subject for model selection")
      ->delimiter(',');
  tc.flags.add(train_cls);

  TrainDetectorArgs td;
  auto* train_det = app.add_subcommand("train-detector", "Train a frame-wise shot detector on rally recordings");
  train_det->add_option("-d,--data", td.data, "Dataset directory")->required();
  train_det->add_option("-o,--out", td.out, "Checkpoint path")->required();
  train_det->add_option("--val-subject", td.val_subjects, "Hold out a subject for model selection")
      ->delimiter(',');
  td.flags.add(train_det, "");

  EvaluateArgs ev;
  auto* evaluate = app.add_subcommand("evaluate", "Subject-grouped cross-validation and ablations");
  evaluate->add_option("--task", ev.task, "classification or detection")
      ->check(CLI::IsMember({"classification", "detection"}))
      ->capture_default_str();
  evaluate->add_option("-d,--data", ev.data, "Dataset directory")->required();
  evaluate->add_option("--folds", ev.folds)->capture_default_str();
  evaluate->add_option("--ablation", ev.ablation, "segment_length, sensor_subset, sample_rate, context_transfer or finetune")
      ->check(CLI::IsMember({"segment_length", "sensor_subset", "sample_rate", "context_transfer", "finetune"}));
  evaluate->add_option("--variants", ev.variants, "Subset of ablation variants")->delimiter(',');
  evaluate->add_option("--sample-rate", ev.sample_rate, "Down-sample every recording to this rate first");
  evaluate->add_option("--json", ev.json_out, "Write the full report as JSON");
  evaluate->add_option("--curves", ev.curves, "Write per-fold training curves (CSV) here");
  evaluate->add_flag("-q,--quiet", ev.quiet, "No progress lines");
  ev.cls.add(evaluate);
  ev.det.add(evaluate, "det-");

  AnalyzeArgs an;
  auto* analyze = app.add_subcommand("analyze", "Detect and classify the shots of recordings");
  analyze->add_option("recordings", an.recordings, "Recording files (.csv or .jsonl)")->required();
  analyze->add_option("--detector", an.detector, "Detector checkpoint")->required();
  analyze->add_option("--classifier", an.classifier, "Classifier checkpoint")->required();
  analyze->add_option("-o,--out", an.out, "Report file (one recording) or directory");
  analyze->add_option("--session-id", an.opts.session_id);
  analyze->add_option("--start", an.opts.start, "Session start time, copied into the report");
  analyze->add_flag("--text", an.text, "Print the rendered report instead of JSON");
  add_refine_flags(analyze, an.opts.refine);

  fs::path report_path;
  bool report_json = false;
  auto* report = app.add_subcommand("report", "Render a saved report as a timeline and tally table");
  report->add_option("report", report_path, "Report JSON")->required();
  report->add_flag("--json", report_json, "Re-emit the validated JSON instead");

  GradcheckArgs gc;
  LabelImpactsArgs li;
  auto* label_impacts = app.add_subcommand("label-impacts", "Impact frames of a dominant-arm recording");
  label_impacts->add_option("recording", li.recording, "Recording file (.csv or .jsonl)")->required();
  label_impacts->add_option("--peak-threshold", li.threshold, "Acceleration power threshold ((m/s^2)^2)")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  label_impacts->add_option("--min-separation", li.min_separation, "Minimum frames between impacts")
      ->capture_default_str();
  label_impacts->add_option("-o,--out", li.out, "Write CSV here instead of stdout");

  auto* gradcheck = app.add_subcommand("gradcheck", "Run the gradient audit suite");
  gradcheck->add_option("--cases", gc.opts.cases_per_op, "Random shapes per operation")->capture_default_str();
  gradcheck->add_flag("--reduced", gc.reduced, "Skip the default-width model probes");
  gradcheck->add_option("--json", gc.json_out, "Write the audit as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*synth) return run_synth(synth_a, g);
    if (*train_cls) return run_train_classifier(tc, g);
    if (*train_det) return run_train_detector(td, g);
    if (*evaluate) return run_evaluate(ev, g);
    if (*analyze) return run_analyze(an, g);
    if (*report) return run_report(report_path, report_json);
    if (*label_impacts) return run_label_impacts(li);
    if (*gradcheck) return run_gradcheck(gc, g);
  } catch (const CheckpointError& e) {
    std::cerr << "error: checkpoint " << e.what() << "\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}
