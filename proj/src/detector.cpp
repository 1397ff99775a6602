#include "shottrack/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "shottrack/nn/loss.hpp"

namespace shottrack {

using nn::Tensor;

// ------------------------------------------------------------ config

std::size_t DetectorConfig::receptive_field() const {
  std::size_t rf = 1;
  for (std::size_t l = 0; l < layers_per_stage; ++l) rf += (kernel - 1) * (std::size_t{1} << l);
  return rf;
}

void DetectorConfig::validate() const {
  if (stages < 1) throw std::invalid_argument("detector config: need at least one stage");
  if (layers_per_stage < 1 || layers_per_stage > 16) {
    throw std::invalid_argument("detector config: layers_per_stage must be in [1, 16]");
  }
  if (hidden == 0) throw std::invalid_argument("detector config: zero hidden size");
  if (kernel % 2 == 0) throw std::invalid_argument("detector config: kernel must be odd");
  if (num_classes != 2) throw std::invalid_argument("detector config: detection is binary");
  if (!(class_weight_positive > 0.0)) {
    throw std::invalid_argument("detector config: positive class weight must be > 0");
  }
  if (channels.empty() || channels.size() > kNumChannels) {
    throw std::invalid_argument("detector config: 1..6 input channels required");
  }
  for (std::size_t i = 0; i < channels.size(); ++i) {
    if (channels[i] >= kNumChannels || (i > 0 && channels[i] <= channels[i - 1])) {
      throw std::invalid_argument("detector config: channels must be increasing indices < 6");
    }
  }
}

nlohmann::json DetectorConfig::to_json() const {
  return {{"stages", stages},
          {"layers_per_stage", layers_per_stage},
          {"hidden", hidden},
          {"kernel", kernel},
          {"num_classes", num_classes},
          {"class_weight_positive", class_weight_positive},
          {"channels", channels}};
}

DetectorConfig DetectorConfig::from_json(const nlohmann::json& j) {
  DetectorConfig c;
  c.stages = j.at("stages").get<std::size_t>();
  c.layers_per_stage = j.at("layers_per_stage").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.kernel = j.at("kernel").get<std::size_t>();
  c.num_classes = j.at("num_classes").get<std::size_t>();
  c.class_weight_positive = j.at("class_weight_positive").get<double>();
  c.channels = j.at("channels").get<std::vector<std::size_t>>();
  c.validate();
  return c;
}

// ------------------------------------------------------------ model

template <typename T>
Detector<T>::Detector(const DetectorConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  weights_ = {T(1), static_cast<T>(cfg_.class_weight_positive)};
  stages_.resize(cfg_.stages);
  for (std::size_t s = 0; s < cfg_.stages; ++s) {
    const std::string name = "stage" + std::to_string(s + 1);
    auto& st = stages_[s];
    const std::size_t in = s == 0 ? cfg_.input_channels() : cfg_.num_classes;
    st.in_conv = nn::Conv1d<T>(store_, name + ".in", in, cfg_.hidden, 1);
    st.layers.resize(cfg_.layers_per_stage);
    for (std::size_t l = 0; l < cfg_.layers_per_stage; ++l) {
      const std::string lname = name + ".layer" + std::to_string(l + 1);
      st.layers[l].dilated = nn::Conv1d<T>(store_, lname + ".dilated", cfg_.hidden, cfg_.hidden,
                                           cfg_.kernel, std::size_t{1} << l);
      st.layers[l].pointwise = nn::Conv1d<T>(store_, lname + ".pointwise", cfg_.hidden, cfg_.hidden, 1);
    }
    st.out_conv = nn::Conv1d<T>(store_, name + ".out", cfg_.hidden, cfg_.num_classes, 1);
  }
  store_.initialize(seed);
}

template <typename T>
std::vector<Tensor<T>> Detector<T>::forward(const Tensor<T>& x) {
  if (x.rank() != 3 || x.dim(1) != cfg_.input_channels()) {
    throw std::invalid_argument("detector input: expected [B, " +
                                std::to_string(cfg_.input_channels()) + ", T], got " +
                                nn::shape_string(x.shape()));
  }
  std::vector<Tensor<T>> outs;
  outs.reserve(stages_.size());
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    auto& st = stages_[s];
    Tensor<T> h = st.in_conv.forward(s == 0 ? x : st.input_softmax.forward(outs.back()));
    for (auto& layer : st.layers) {
      Tensor<T> r = layer.pointwise.forward(layer.act.forward(layer.dilated.forward(h)));
      for (std::size_t i = 0; i < h.size(); ++i) h[i] += r[i];
    }
    outs.push_back(st.out_conv.forward(h));
  }
  return outs;
}

template <typename T>
T Detector<T>::backward(const std::vector<Tensor<T>>& outputs, std::span<const int> targets) {
  if (outputs.size() != stages_.size()) throw std::invalid_argument("detector backward: stage count");
  T loss = T(0);
  Tensor<T> carry;
  for (std::size_t s = stages_.size(); s-- > 0;) {
    auto& st = stages_[s];
    auto ce = nn::weighted_cross_entropy<T>(outputs[s], targets, weights_);
    loss += ce.loss;
    Tensor<T> g = std::move(ce.grad);
    if (!carry.empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += carry[i];
    }
    Tensor<T> d = st.out_conv.backward(g);
    for (std::size_t l = st.layers.size(); l-- > 0;) {
      auto& layer = st.layers[l];
      Tensor<T> dr = layer.dilated.backward(layer.act.backward(layer.pointwise.backward(d)));
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dr[i];
    }
    Tensor<T> din = st.in_conv.backward(d, s > 0);
    if (s > 0) carry = st.input_softmax.backward(din);
  }
  return loss;
}

template <typename T>
T detector_loss(const std::vector<Tensor<T>>& outputs, std::span<const int> targets,
                double class_weight_positive) {
  const std::vector<T> w = {T(1), static_cast<T>(class_weight_positive)};
  T loss = T(0);
  for (const auto& o : outputs) loss += nn::weighted_cross_entropy<T>(o, targets, w).loss;
  return loss;
}

template class Detector<float>;
template class Detector<double>;
template float detector_loss<float>(const std::vector<Tensor<float>>&, std::span<const int>, double);
template double detector_loss<double>(const std::vector<Tensor<double>>&, std::span<const int>,
                                      double);

// ------------------------------------------------------------ data

PreparedSequence prepare_sequence(const ImuSequence& normalized, const DetectorConfig& cfg) {
  cfg.validate();
  PreparedSequence p;
  const std::size_t n = normalized.size();
  const std::size_t ch = cfg.input_channels();
  p.x = Tensor<float>({1, ch, n});
  for (std::size_t c = 0; c < ch; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      p.x.at(0, c, i) = static_cast<float>(normalized.samples[i].channel(cfg.channels[c]));
    }
  }
  return p;
}

PreparedSequence prepare_sequence(const ImuSequence& normalized, const FrameLabels& labels,
                                  const DetectorConfig& cfg) {
  if (labels.size() != normalized.size()) {
    throw std::invalid_argument("frame labels have " + std::to_string(labels.size()) +
                                " entries for a sequence of " + std::to_string(normalized.size()));
  }
  auto p = prepare_sequence(normalized, cfg);
  p.targets.assign(labels.labels.begin(), labels.labels.end());
  return p;
}

// ------------------------------------------------------------ training

namespace {

FramePrediction to_frames(const Tensor<float>& logits) {
  const std::size_t n = logits.dim(2);
  FramePrediction fp;
  fp.labels.labels.resize(n);
  fp.positive_probability.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double a = logits.at(0, 0, i), b = logits.at(0, 1, i);
    const double p = 1.0 / (1.0 + std::exp(a - b));
    fp.positive_probability[i] = p;
    fp.labels.labels[i] = p > 0.5 ? 1 : 0;
  }
  return fp;
}

struct Counts {
  std::size_t tp = 0, fp = 0, fn = 0;
  double f1() const {
    const double denom = 2.0 * static_cast<double>(tp) + static_cast<double>(fp + fn);
    return denom > 0 ? 2.0 * static_cast<double>(tp) / denom : 0.0;
  }
};

void count_frames(const FramePrediction& pred, std::span<const int> truth, Counts& c) {
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool p = pred.labels.labels[i] != 0, t = truth[i] != 0;
    c.tp += p && t;
    c.fp += p && !t;
    c.fn += !p && t;
  }
}

void check_targets(std::span<const PreparedSequence> data, const char* what) {
  for (const auto& s : data) {
    if (s.targets.size() != s.length()) {
      throw std::invalid_argument(std::string(what) + ": sequence/label length mismatch");
    }
    for (int y : s.targets) {
      if (y != 0 && y != 1) throw std::invalid_argument(std::string(what) + ": labels must be 0/1");
    }
  }
}

}  // namespace

ModelCheckpoint make_detector_checkpoint(const Detector<float>& model,
                                         const std::optional<NormScaler>& scaler,
                                         nlohmann::json metadata) {
  ModelCheckpoint ckpt;
  ckpt.kind = ModelKind::detector;
  ckpt.config = model.config().to_json();
  ckpt.arrays = model.params().export_arrays();
  ckpt.scaler = scaler;
  ckpt.metadata = std::move(metadata);
  return ckpt;
}

std::unique_ptr<Detector<float>> detector_from_checkpoint(const ModelCheckpoint& ckpt) {
  expect_kind(ckpt, ModelKind::detector);
  DetectorConfig cfg;
  try {
    cfg = DetectorConfig::from_json(ckpt.config);
  } catch (const std::exception& e) {
    throw CheckpointError(CheckpointErrorCode::malformed_header, e.what());
  }
  auto model = std::make_unique<Detector<float>>(cfg, 0);
  try {
    model->params().import_arrays(ckpt.arrays);
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(CheckpointErrorCode::shape_mismatch, e.what());
  }
  return model;
}

DetectorTrainResult train_detector(std::span<const PreparedSequence> train,
                                   std::span<const PreparedSequence> val,
                                   const DetectorConfig& cfg, const DetectorTrainOptions& opts,
                                   const NormScaler& scaler, std::uint64_t seed) {
  if (train.empty()) throw std::invalid_argument("train_detector: empty training set");
  check_targets(train, "train_detector");
  check_targets(val, "train_detector (validation)");

  Detector<float> model(cfg, seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  DetectorTrainResult result;
  double best = -1.0;
  auto best_arrays = model.params().export_arrays();
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 1; epoch <= opts.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t frames = 0, correct = 0;
    for (std::size_t i : order) {
      const auto& s = train[i];
      auto outs = model.forward(s.x);
      model.params().zero_grad();
      const float loss = model.backward(outs, s.targets);
      nn::adam_step(model.params(), static_cast<float>(opts.lr));
      loss_sum += loss;
      const auto fp = to_frames(outs.back());
      for (std::size_t f = 0; f < s.length(); ++f) correct += fp.labels.labels[f] == s.targets[f];
      frames += s.length();
    }
    EpochRecord rec{epoch, loss_sum / static_cast<double>(train.size()),
                    static_cast<double>(correct) / static_cast<double>(std::max<std::size_t>(1, frames)),
                    0.0, 0.0};
    if (!val.empty()) {
      Counts c;
      std::size_t vframes = 0, vcorrect = 0;
      for (const auto& s : val) {
        const auto fp = to_frames(model.forward(s.x).back());
        count_frames(fp, s.targets, c);
        for (std::size_t f = 0; f < s.length(); ++f) vcorrect += fp.labels.labels[f] == s.targets[f];
        vframes += s.length();
      }
      rec.val_accuracy = static_cast<double>(vcorrect) / static_cast<double>(std::max<std::size_t>(1, vframes));
      rec.val_metric = c.f1();
    }
    result.history.epochs.push_back(rec);
    if (val.empty() || rec.val_metric > best) {
      best = rec.val_metric;
      best_arrays = model.params().export_arrays();
      result.history.best_epoch = epoch;
    }
  }
  model.params().import_arrays(best_arrays);
  nlohmann::json meta = {{"seed", seed},
                         {"epochs", opts.epochs},
                         {"lr", opts.lr},
                         {"best_epoch", result.history.best_epoch},
                         {"best_val_f1", std::max(best, 0.0)},
                         {"parameter_count", model.parameter_count()}};
  result.checkpoint = make_detector_checkpoint(model, scaler, std::move(meta));
  return result;
}

// ------------------------------------------------------------ inference

FrameDetector::FrameDetector(const ModelCheckpoint& ckpt)
    : model_(detector_from_checkpoint(ckpt)), scaler_(ckpt.scaler) {}

FramePrediction FrameDetector::predict(const PreparedSequence& prepared) {
  if (prepared.length() == 0) return {};
  return to_frames(model_->forward(prepared.x).back());
}

FramePrediction FrameDetector::predict(const ImuSequence& normalized) {
  return predict(prepare_sequence(normalized, config()));
}

FramePrediction predict_frames(const ModelCheckpoint& ckpt, const ImuSequence& normalized) {
  FrameDetector det(ckpt);
  return det.predict(normalized);
}

// ------------------------------------------------------------ refine

void RefineConfig::validate() const {
  if (k < 1 || k > window_len) throw std::invalid_argument("refine: need 1 <= k <= window_len");
}

std::vector<ShotEvent> refine(const FrameLabels& labels, std::span<const double> probs,
                              const RefineConfig& cfg) {
  cfg.validate();
  const std::size_t n = labels.size();
  if (probs.size() != n) throw std::invalid_argument("refine: probability/label length mismatch");
  const std::size_t half = cfg.window_len / 2;
  if (n < cfg.window_len) return {};
  const std::size_t lo = half, hi = n - (cfg.window_len - half);

  struct Group {
    std::size_t sum = 0;
    std::size_t count = 0;
    std::size_t center = 0;
  };
  auto place = [&](Group& g) { g.center = std::clamp(g.sum / g.count, lo, hi); };

  std::vector<Group> groups;
  for (std::size_t i = 0; i < n;) {
    if (!labels.labels[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j + 1 < n && labels.labels[j + 1]) ++j;
    if (j - i + 1 >= cfg.k) {
      Group g{(i + j) / 2, 1, 0};
      place(g);
      groups.push_back(g);
    }
    i = j + 1;
  }

  for (bool merged = true; merged;) {
    merged = false;
    for (std::size_t i = 0; i + 1 < groups.size(); ++i) {
      if (groups[i + 1].center - groups[i].center < cfg.window_len) {
        groups[i].sum += groups[i + 1].sum;
        groups[i].count += groups[i + 1].count;
        place(groups[i]);
        groups.erase(groups.begin() + static_cast<std::ptrdiff_t>(i) + 1);
        merged = true;
        break;
      }
    }
  }

  std::vector<ShotEvent> events;
  events.reserve(groups.size());
  for (const auto& g : groups) {
    ShotEvent e;
    e.center_frame = g.center;
    e.window_start = g.center - half;
    e.window_end = e.window_start + cfg.window_len;
    double s = 0.0;
    for (std::size_t f = e.window_start; f < e.window_end; ++f) s += probs[f];
    e.confidence = s / static_cast<double>(cfg.window_len);
    events.push_back(e);
  }
  return events;
}

}  // namespace shottrack
