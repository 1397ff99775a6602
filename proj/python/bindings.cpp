#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <filesystem>

#include "shottrack/checkpoint.hpp"
#include "shottrack/classifier.hpp"
#include "shottrack/detector.hpp"
#include "shottrack/dsp.hpp"
#include "shottrack/evalkit.hpp"
#include "shottrack/grad_audit.hpp"
#include "shottrack/pipeline.hpp"
#include "shottrack/synth.hpp"

namespace py = pybind11;
using namespace shottrack;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

py::object json_to_py(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

ImuSequence to_sequence(const Array& data, double rate, const std::string& handedness) {
  if (data.ndim() != 2 || data.shape(1) != static_cast<py::ssize_t>(kNumChannels)) {
    throw std::invalid_argument("expected an (n, 6) array of ax, ay, az, gx, gy, gz");
  }
  if (!(rate > 0.0)) throw std::invalid_argument("rate must be positive");
  ImuSequence seq;
  seq.rate = rate;
  seq.subject.handedness = handedness_from_string(handedness);
  const auto v = data.unchecked<2>();
  seq.samples.resize(static_cast<std::size_t>(data.shape(0)));
  for (py::ssize_t i = 0; i < data.shape(0); ++i) {
    auto& s = seq.samples[static_cast<std::size_t>(i)];
    s.t = static_cast<double>(i) / rate;
    for (std::size_t c = 0; c < kNumChannels; ++c) s.channel(c) = v(i, static_cast<py::ssize_t>(c));
  }
  return seq;
}

Array from_sequence(const ImuSequence& seq) {
  Array out({static_cast<py::ssize_t>(seq.size()), static_cast<py::ssize_t>(kNumChannels)});
  auto v = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < seq.size(); ++i)
    for (std::size_t c = 0; c < kNumChannels; ++c) v(static_cast<py::ssize_t>(i), static_cast<py::ssize_t>(c)) = seq.samples[i].channel(c);
  return out;
}

ShotSegment to_segment(const Array& data) {
  if (data.ndim() != 2 || data.shape(1) != static_cast<py::ssize_t>(kNumChannels)) {
    throw std::invalid_argument("expected a (length, 6) segment");
  }
  ShotSegment seg;
  const auto v = data.unchecked<2>();
  seg.frames.resize(static_cast<std::size_t>(data.shape(0)));
  for (py::ssize_t i = 0; i < data.shape(0); ++i)
    for (std::size_t c = 0; c < kNumChannels; ++c) seg.frames[static_cast<std::size_t>(i)][c] = v(i, static_cast<py::ssize_t>(c));
  return seg;
}

Array from_segment(const ShotSegment& seg) {
  Array out({static_cast<py::ssize_t>(seg.length()), static_cast<py::ssize_t>(kNumChannels)});
  auto v = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < seg.length(); ++i)
    for (std::size_t c = 0; c < kNumChannels; ++c) v(static_cast<py::ssize_t>(i), static_cast<py::ssize_t>(c)) = seg.frames[i][c];
  return out;
}

Array from_block(const SignalBlock& b) {
  Array out({static_cast<py::ssize_t>(b.length), static_cast<py::ssize_t>(b.channels)});
  auto v = out.mutable_unchecked<2>();
  for (std::size_t c = 0; c < b.channels; ++c)
    for (std::size_t i = 0; i < b.length; ++i) v(static_cast<py::ssize_t>(i), static_cast<py::ssize_t>(c)) = b.at(c, i);
  return out;
}

class PyClassifier {
 public:
  explicit PyClassifier(const std::string& path)
      : ckpt_(load_checkpoint(path, ModelKind::classifier)), model_(ckpt_) {}

  // Raw segment in sensor units; the checkpoint's scaler is applied here.
  py::tuple predict(const Array& segment) {
    auto seg = to_segment(segment);
    if (ckpt_.scaler) seg = apply_scaler(seg, *ckpt_.scaler);
    const auto p = model_.predict(seg);
    return py::make_tuple(std::string(class_name(p.cls)), p.probabilities);
  }

  std::size_t parameter_count() const { return classifier_from_checkpoint(ckpt_)->parameter_count(); }
  py::object config() const { return json_to_py(ckpt_.config); }

 private:
  ModelCheckpoint ckpt_;
  ShotClassifier model_;
};

class PyDetector {
 public:
  explicit PyDetector(const std::string& path) : ckpt_(load_checkpoint(path, ModelKind::detector)), model_(ckpt_) {}

  // Per-frame shot probability of a 120 Hz recording in sensor units.
  py::array_t<double> predict(const Array& data) {
    auto seq = to_sequence(data, kSampleRate, "right");
    if (ckpt_.scaler) seq = apply_scaler(seq, *ckpt_.scaler);
    const auto fp = model_.predict(seq);
    return py::array_t<double>(static_cast<py::ssize_t>(fp.positive_probability.size()),
                               fp.positive_probability.data());
  }

  py::object config() const { return json_to_py(ckpt_.config); }

 private:
  ModelCheckpoint ckpt_;
  FrameDetector model_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core of the shottrack package";

  py::list names;
  for (auto c : kAllClasses) names.append(std::string(class_name(c)));
  m.attr("CLASS_NAMES") = py::tuple(names);

  m.def(
      "load_recording",
      [](const std::string& path) {
        const auto fmt = std::filesystem::path(path).extension() == ".jsonl" ? SequenceFormat::jsonl : SequenceFormat::csv;
        const auto seq = load_sequence(path, fmt);
        py::dict d;
        d["data"] = from_sequence(seq);
        d["rate"] = seq.rate;
        d["subject"] = seq.subject.id;
        d["handedness"] = std::string(to_string(seq.subject.handedness));
        d["arm"] = std::string(to_string(seq.arm));
        return d;
      },
      py::arg("path"), "Read a CSV or JSONL recording into an (n, 6) array plus metadata.");

  m.def(
      "resample",
      [](const Array& data, double rate, double target_rate) {
        return from_sequence(resample(to_sequence(data, rate, "right"), target_rate));
      },
      py::arg("data"), py::arg("rate"), py::arg("target_rate"));

  m.def(
      "mirror_handedness", [](const Array& data) { return from_segment(mirror_handedness(to_segment(data))); },
      py::arg("data"), "Map left-wrist samples onto the right-wrist frame.");

  m.def(
      "band_decompose",
      [](const Array& segment, double rate, double low_cut, double high_cut) {
        const auto b = band_decompose(to_segment(segment), rate, BandSpec{low_cut, high_cut});
        return py::make_tuple(from_block(b.low), from_block(b.mid), from_block(b.high));
      },
      py::arg("segment"), py::arg("rate") = kSampleRate, py::arg("low_cut") = 4.0, py::arg("high_cut") = 20.0,
      "Split a (length, 6) segment into low, mid and high frequency bands.");

  m.def(
      "detect_peaks",
      [](const Array& power, double threshold, std::size_t min_separation) {
        PowerSeries p;
        p.values.assign(power.data(), power.data() + power.size());
        return detect_peaks_threshold(p, threshold, min_separation);
      },
      py::arg("power"), py::arg("threshold") = kDefaultPeakThreshold, py::arg("min_separation") = kWindowLength);

  m.def(
      "refine",
      [](const std::vector<std::uint8_t>& labels, const std::vector<double>& probs, std::size_t k,
         std::size_t window_len) {
        FrameLabels fl;
        fl.labels = labels;
        py::list out;
        for (const auto& e : refine(fl, probs, RefineConfig{k, window_len})) {
          py::dict d;
          d["center"] = e.center_frame;
          d["start"] = e.window_start;
          d["end"] = e.window_end;
          d["confidence"] = e.confidence;
          out.append(d);
        }
        return out;
      },
      py::arg("labels"), py::arg("probs"), py::arg("k") = 15, py::arg("window_len") = kWindowLength);

  m.def(
      "synth_shot",
      [](const std::string& cls, std::uint64_t seed, const std::string& handedness) {
        return from_segment(synth::gen_shot(class_from_name(cls), synth::nominal_profile("S01", handedness_from_string(handedness)), seed));
      },
      py::arg("cls"), py::arg("seed") = 0, py::arg("handedness") = "right",
      "A labelled 180-frame synthetic shot, impact at frame 120.");

  m.def(
      "synth_session",
      [](double length_s, std::uint64_t seed) {
        const auto s = synth::gen_session(synth::random_script(length_s, seed), synth::nominal_profile("S01"), seed);
        py::list shots;
        for (const auto& sh : s.shots) shots.append(py::make_tuple(sh.impact_frame, std::string(class_name(sh.cls))));
        return py::make_tuple(from_sequence(s.sequence), s.labels.labels, shots);
      },
      py::arg("length_s"), py::arg("seed") = 0, "Scripted rally: (data, frame labels, [(impact frame, class)]).");

  m.def(
      "analyze",
      [](const std::string& recording, const std::string& detector, const std::string& classifier,
         const std::string& session_id, const std::string& start) {
        const auto fmt = std::filesystem::path(recording).extension() == ".jsonl" ? SequenceFormat::jsonl : SequenceFormat::csv;
        const auto seq = load_sequence(recording, fmt);
        PipelineOptions opts;
        opts.session_id = session_id;
        opts.start = start;
        SessionReport rep;
        {
          py::gil_scoped_release release;
          rep = run_pipeline(seq, load_checkpoint(detector, ModelKind::detector),
                             load_checkpoint(classifier, ModelKind::classifier), opts);
        }
        return json_to_py(rep.to_json());
      },
      py::arg("recording"), py::arg("detector"), py::arg("classifier"), py::arg("session_id") = "",
      py::arg("start") = "", "Detect and classify the shots of a recording; returns the report as a dict.");

  m.def(
      "grad_audit",
      [](std::uint64_t seed, std::size_t cases, bool full_width) {
        AuditOptions opts;
        opts.cases_per_op = cases;
        opts.full_width = full_width;
        return json_to_py(run_grad_audit(seed, opts).to_json());
      },
      py::arg("seed") = 0, py::arg("cases") = 20, py::arg("full_width") = true);

  m.def(
      "train_classifier",
      [](const std::vector<Array>& segments, const std::vector<std::string>& labels, const std::string& out,
         std::size_t epochs, double lr, std::size_t batch_size, std::array<std::size_t, 4> sub_channels,
         std::array<std::size_t, 2> backbone, std::uint64_t seed) {
        if (segments.size() != labels.size()) throw std::invalid_argument("one label per segment required");
        if (segments.empty()) throw std::invalid_argument("no training segments");
        std::vector<ShotSegment> segs;
        std::vector<ImuSequence> for_scaler;
        for (std::size_t i = 0; i < segments.size(); ++i) {
          segs.push_back(to_segment(segments[i]));
          segs.back().label = class_from_name(labels[i]);
          for_scaler.push_back(to_sequence(segments[i], kSampleRate, "right"));
        }
        const auto scaler = fit_scaler(for_scaler);
        ClassifierConfig cfg;
        cfg.sub_block_channels = sub_channels;
        cfg.backbone_channels = backbone;
        ClassifierTrainOptions opts{epochs, batch_size, lr};
        nlohmann::json history;
        {
          py::gil_scoped_release release;
          const auto res = train_classifier(prepare_segments(segs, scaler, cfg), {}, cfg, opts, scaler, seed);
          save_checkpoint(res.checkpoint, out);
          for (const auto& e : res.history.epochs) history.push_back({{"epoch", e.epoch}, {"loss", e.train_loss}, {"accuracy", e.train_accuracy}});
        }
        return json_to_py(history);
      },
      py::arg("segments"), py::arg("labels"), py::arg("out"), py::arg("epochs") = 100, py::arg("lr") = 1e-4,
      py::arg("batch_size") = 64, py::arg("sub_channels") = std::array<std::size_t, 4>{32, 64, 128, 128},
      py::arg("backbone") = std::array<std::size_t, 2>{256, 128}, py::arg("seed") = 0,
      "Train on raw (180, 6) segments with class-name labels and save a checkpoint; returns the loss curve.");

  m.def(
      "train_detector",
      [](const std::vector<Array>& recordings, const std::vector<std::vector<std::uint8_t>>& labels,
         const std::string& out, std::size_t epochs, double lr, std::size_t hidden, std::uint64_t seed) {
        if (recordings.size() != labels.size()) throw std::invalid_argument("one label vector per recording required");
        if (recordings.empty()) throw std::invalid_argument("no training recordings");
        std::vector<ImuSequence> seqs;
        for (const auto& r : recordings) seqs.push_back(to_sequence(r, kSampleRate, "right"));
        const auto scaler = fit_scaler(seqs);
        DetectorConfig cfg;
        cfg.hidden = hidden;
        std::vector<PreparedSequence> train;
        for (std::size_t i = 0; i < seqs.size(); ++i) {
          FrameLabels fl;
          fl.labels = labels[i];
          train.push_back(prepare_sequence(apply_scaler(seqs[i], scaler), fl, cfg));
        }
        nlohmann::json history;
        {
          py::gil_scoped_release release;
          const auto res = train_detector(train, {}, cfg, DetectorTrainOptions{epochs, lr}, scaler, seed);
          save_checkpoint(res.checkpoint, out);
          for (const auto& e : res.history.epochs) history.push_back({{"epoch", e.epoch}, {"loss", e.train_loss}, {"accuracy", e.train_accuracy}});
        }
        return json_to_py(history);
      },
      py::arg("recordings"), py::arg("labels"), py::arg("out"), py::arg("epochs") = 500, py::arg("lr") = 1e-3,
      py::arg("hidden") = 64, py::arg("seed") = 0,
      "Train on 120 Hz (n, 6) recordings with 0/1 frame labels and save a checkpoint; returns the loss curve.");

  py::class_<PyClassifier>(m, "Classifier")
      .def(py::init<const std::string&>(), py::arg("path"))
      .def("predict", &PyClassifier::predict, py::arg("segment"),
           "Classify a raw (180, 6) segment; returns (class name, probabilities).")
      .def_property_readonly("parameter_count", &PyClassifier::parameter_count)
      .def_property_readonly("config", &PyClassifier::config);

  py::class_<PyDetector>(m, "Detector")
      .def(py::init<const std::string&>(), py::arg("path"))
      .def("predict", &PyDetector::predict, py::arg("data"))
      .def_property_readonly("config", &PyDetector::config);

  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_ValueError);
}
