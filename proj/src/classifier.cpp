#include "shottrack/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "shottrack/nn/loss.hpp"

namespace shottrack {

using nn::Mode;
using nn::Tensor;

// ------------------------------------------------------------ config

void ClassifierConfig::validate() const {
  if (channels.empty() || channels.size() > kNumChannels) {
    throw std::invalid_argument("classifier config: 1..6 input channels required");
  }
  for (std::size_t i = 0; i < channels.size(); ++i) {
    if (channels[i] >= kNumChannels) throw std::invalid_argument("classifier config: bad channel");
    if (i > 0 && channels[i] <= channels[i - 1]) {
      throw std::invalid_argument("classifier config: channels must be strictly increasing");
    }
  }
  if (segment_len < 2 || impact_index >= segment_len) {
    throw std::invalid_argument("classifier config: impact index must lie inside the segment");
  }
  if (kernel % 2 == 0) throw std::invalid_argument("classifier config: kernel must be odd");
  for (auto c : sub_block_channels) {
    if (c == 0) throw std::invalid_argument("classifier config: zero sub-block channels");
  }
  for (auto c : backbone_channels) {
    if (c == 0) throw std::invalid_argument("classifier config: zero backbone channels");
  }
  if (attention_classifier_channels == 0) {
    throw std::invalid_argument("classifier config: zero attention classifier channels");
  }
  if (num_classes != kNumClasses) throw std::invalid_argument("classifier config: need 6 classes");
  band_spec.validate(rate);
}

nlohmann::json ClassifierConfig::to_json() const {
  return {{"channels", channels},
          {"segment_len", segment_len},
          {"impact_index", impact_index},
          {"kernel", kernel},
          {"sub_block_channels", sub_block_channels},
          {"backbone_channels", backbone_channels},
          {"attention_classifier_channels", attention_classifier_channels},
          {"num_classes", num_classes},
          {"band_low_cut", band_spec.low_cut},
          {"band_high_cut", band_spec.high_cut},
          {"rate", rate},
          {"use_attention", use_attention}};
}

ClassifierConfig ClassifierConfig::from_json(const nlohmann::json& j) {
  ClassifierConfig c;
  c.channels = j.at("channels").get<std::vector<std::size_t>>();
  c.segment_len = j.at("segment_len").get<std::size_t>();
  c.impact_index = j.at("impact_index").get<std::size_t>();
  c.kernel = j.at("kernel").get<std::size_t>();
  c.sub_block_channels = j.at("sub_block_channels").get<std::array<std::size_t, 4>>();
  c.backbone_channels = j.at("backbone_channels").get<std::array<std::size_t, 2>>();
  c.attention_classifier_channels = j.at("attention_classifier_channels").get<std::size_t>();
  c.num_classes = j.at("num_classes").get<std::size_t>();
  c.band_spec.low_cut = j.at("band_low_cut").get<double>();
  c.band_spec.high_cut = j.at("band_high_cut").get<double>();
  c.rate = j.at("rate").get<double>();
  c.use_attention = j.at("use_attention").get<bool>();
  c.validate();
  return c;
}

// ------------------------------------------------------------ model

template <typename T>
Tensor<T> Classifier<T>::ConvBlock::forward(const Tensor<T>& x, Mode mode) {
  return act.forward(bn.forward(conv.forward(x), mode));
}

template <typename T>
Tensor<T> Classifier<T>::ConvBlock::backward(const Tensor<T>& dy, bool input_grad) {
  return conv.backward(bn.backward(act.backward(dy)), input_grad);
}

template <typename T>
Classifier<T>::Classifier(const ClassifierConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t k = cfg_.kernel;
  std::size_t in = cfg_.input_channels();
  for (std::size_t i = 0; i < 4; ++i) {
    const std::string name = "sub" + std::to_string(i + 1);
    const std::size_t out = cfg_.sub_block_channels[i];
    sub_blocks_[i].conv = nn::Conv1d<T>(store_, name + ".conv", in, out, k);
    sub_blocks_[i].bn = nn::BatchNorm1d<T>(store_, name + ".bn", out);
    in = out;
  }
  for (std::size_t i = 0; i < 2; ++i) {
    const std::string name = "block" + std::to_string(i + 2);
    const std::size_t out = cfg_.backbone_channels[i];
    backbone_[i].conv = nn::Conv1d<T>(store_, name + ".conv", in, out, k);
    backbone_[i].bn = nn::BatchNorm1d<T>(store_, name + ".bn", out);
    in = out;
  }
  fc_ = nn::Linear<T>(store_, "fc", in, cfg_.num_classes);
  if (cfg_.use_attention) {
    static constexpr const char* kBandNames[3] = {"low", "mid", "high"};
    for (std::size_t b = 0; b < 3; ++b) {
      const std::string name = std::string("att_") + kBandNames[b];
      auto& br = branches_[b];
      br.gate_conv = nn::Conv1d<T>(store_, name + ".gate", cfg_.input_channels(), 1, k);
      br.head_conv =
          nn::Conv1d<T>(store_, name + ".head_conv", 1, cfg_.attention_classifier_channels, k);
      br.head_fc = nn::Linear<T>(store_, name + ".head_fc", cfg_.attention_classifier_channels,
                                 cfg_.num_classes);
    }
  }
  store_.initialize(seed);
}

template <typename T>
ClassifierOutput<T> Classifier<T>::forward(const ClassifierBatch<T>& batch, Mode mode) {
  const auto& x = batch.x;
  nn::require_shape(x.shape(), {x.dim(0), cfg_.input_channels(), cfg_.segment_len},
                    "classifier input");
  batch_ = x.dim(0);
  ClassifierOutput<T> out;
  Tensor<T> h = x;
  for (std::size_t i = 0; i < 4; ++i) {
    h = sub_blocks_[i].forward(h, mode);
    if (i == 3) break;
    if (!cfg_.use_attention) {
      out.attention[i] = Tensor<T>({batch_, 1, cfg_.segment_len}, T(1));
      continue;
    }
    nn::require_shape(batch.bands[i].shape(), x.shape(), "classifier band input");
    auto& br = branches_[i];
    out.attention[i] = br.gate_act.forward(br.gate_conv.forward(batch.bands[i]));
    sub_out_[i] = h;
    h = nn::gate_multiply(h, out.attention[i]);
    out.aux_logits[i] =
        br.head_fc.forward(br.head_pool.forward(br.head_act.forward(br.head_conv.forward(out.attention[i]))));
  }
  for (auto& blk : backbone_) h = blk.forward(h, mode);
  out.main_logits = fc_.forward(pool_.forward(h));
  return out;
}

template <typename T>
T Classifier<T>::backward(const ClassifierOutput<T>& out, std::span<const int> targets) {
  auto main = nn::weighted_cross_entropy<T>(out.main_logits, targets);
  T loss = main.loss;
  Tensor<T> d = pool_.backward(fc_.backward(main.grad));
  for (std::size_t j = 2; j-- > 0;) d = backbone_[j].backward(d, true);
  d = sub_blocks_[3].backward(d, true);
  for (std::size_t i = 3; i-- > 0;) {
    if (cfg_.use_attention) {
      auto& br = branches_[i];
      Tensor<T> dh, dgate;
      nn::gate_multiply_backward(sub_out_[i], out.attention[i], d, dh, dgate);
      auto aux = nn::weighted_cross_entropy<T>(out.aux_logits[i], targets);
      loss += aux.loss;
      Tensor<T> da_head = br.head_conv.backward(
          br.head_act.backward(br.head_pool.backward(br.head_fc.backward(aux.grad))), true);
      for (std::size_t k = 0; k < dgate.size(); ++k) dgate[k] += da_head[k];
      br.gate_conv.backward(br.gate_act.backward(dgate), false);
      d = std::move(dh);
    }
    d = sub_blocks_[i].backward(d, i > 0);
  }
  return loss;
}

template <typename T>
T classifier_loss(const ClassifierOutput<T>& out, std::span<const int> targets) {
  T loss = nn::weighted_cross_entropy<T>(out.main_logits, targets).loss;
  for (const auto& aux : out.aux_logits) {
    if (!aux.empty()) loss += nn::weighted_cross_entropy<T>(aux, targets).loss;
  }
  return loss;
}

template class Classifier<float>;
template class Classifier<double>;
template float classifier_loss<float>(const ClassifierOutput<float>&, std::span<const int>);
template double classifier_loss<double>(const ClassifierOutput<double>&, std::span<const int>);

// ------------------------------------------------------------ data

ClassifierBatch<float> PreparedSegments::batch(std::span<const std::size_t> indices) const {
  const std::size_t stride = channels * length;
  ClassifierBatch<float> b;
  b.x = Tensor<float>({indices.size(), channels, length});
  for (auto& band : b.bands) band = Tensor<float>({indices.size(), channels, length});
  b.labels.reserve(indices.size());
  for (std::size_t n = 0; n < indices.size(); ++n) {
    const std::size_t src = indices[n] * stride;
    std::copy_n(x.data() + src, stride, b.x.data() + n * stride);
    for (std::size_t k = 0; k < 3; ++k) {
      std::copy_n(bands[k].data() + src, stride, b.bands[k].data() + n * stride);
    }
    b.labels.push_back(labels[indices[n]]);
  }
  return b;
}

PreparedSegments prepare_normalized(std::span<const ShotSegment> segments,
                                    const ClassifierConfig& cfg) {
  cfg.validate();
  PreparedSegments p;
  p.channels = cfg.input_channels();
  p.length = cfg.segment_len;
  const std::size_t stride = p.channels * p.length;
  p.x.resize(segments.size() * stride);
  for (auto& band : p.bands) band.resize(segments.size() * stride);
  p.labels.reserve(segments.size());
  for (std::size_t n = 0; n < segments.size(); ++n) {
    const auto& seg = segments[n];
    if (seg.length() != cfg.segment_len) {
      throw std::invalid_argument("segment length " + std::to_string(seg.length()) +
                                  " does not match config " + std::to_string(cfg.segment_len));
    }
    SignalBlock block{p.channels, p.length, std::vector<double>(stride)};
    for (std::size_t c = 0; c < p.channels; ++c) {
      for (std::size_t i = 0; i < p.length; ++i) block.at(c, i) = seg.frames[i][cfg.channels[c]];
    }
    const auto bands = band_decompose(block, cfg.rate, cfg.band_spec);
    for (std::size_t k = 0; k < stride; ++k) {
      p.x[n * stride + k] = static_cast<float>(block.data[k]);
      p.bands[0][n * stride + k] = static_cast<float>(bands.low.data[k]);
      p.bands[1][n * stride + k] = static_cast<float>(bands.mid.data[k]);
      p.bands[2][n * stride + k] = static_cast<float>(bands.high.data[k]);
    }
    p.labels.push_back(seg.label ? class_index(*seg.label) : -1);
  }
  return p;
}

PreparedSegments prepare_segments(std::span<const ShotSegment> segments, const NormScaler& scaler,
                                  const ClassifierConfig& cfg) {
  std::vector<ShotSegment> scaled;
  scaled.reserve(segments.size());
  for (const auto& s : segments) scaled.push_back(apply_scaler(s, scaler));
  return prepare_normalized(scaled, cfg);
}

// ------------------------------------------------------------ training

std::string TrainHistory::to_csv() const {
  std::ostringstream out;
  out << "epoch,train_loss,train_accuracy,val_accuracy,val_metric\n";
  for (const auto& e : epochs) {
    out << e.epoch << ',' << e.train_loss << ',' << e.train_accuracy << ',' << e.val_accuracy
        << ',' << e.val_metric << '\n';
  }
  return out.str();
}

namespace {

std::size_t argmax_row(const Tensor<float>& logits, std::size_t row) {
  const std::size_t ch = logits.dim(1);
  std::size_t best = 0;
  for (std::size_t c = 1; c < ch; ++c) {
    if (logits[row * ch + c] > logits[row * ch + best]) best = c;
  }
  return best;
}

std::vector<std::size_t> predict_indices(Classifier<float>& model, const PreparedSegments& data) {
  std::vector<std::size_t> out;
  out.reserve(data.size());
  constexpr std::size_t kEvalBatch = 64;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += kEvalBatch) {
    idx.clear();
    for (std::size_t i = start; i < std::min(data.size(), start + kEvalBatch); ++i) idx.push_back(i);
    auto batch = data.batch(idx);
    auto o = model.forward(batch, Mode::eval);
    for (std::size_t r = 0; r < idx.size(); ++r) out.push_back(argmax_row(o.main_logits, r));
  }
  return out;
}

double accuracy_of(Classifier<float>& model, const PreparedSegments& data) {
  if (data.size() == 0) return 0.0;
  auto pred = predict_indices(model, data);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += static_cast<int>(pred[i]) == data.labels[i];
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

void check_labels(const PreparedSegments& data, const char* what) {
  for (int y : data.labels) {
    if (y < 0 || y >= static_cast<int>(kNumClasses)) {
      throw std::invalid_argument(std::string(what) + ": every segment needs a class label");
    }
  }
}

struct EpochStats {
  double loss = 0.0;
  double accuracy = 0.0;
};

EpochStats run_epoch(Classifier<float>& model, const PreparedSegments& data, std::size_t batch_size,
                     float lr, Mode mode, std::mt19937_64& rng) {
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  double loss_sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    std::span<const std::size_t> idx(order.data() + start, end - start);
    auto batch = data.batch(idx);
    auto out = model.forward(batch, mode);
    model.params().zero_grad();
    const float loss = model.backward(out, batch.labels);
    nn::adam_step(model.params(), lr);
    loss_sum += static_cast<double>(loss) * static_cast<double>(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      hits += static_cast<int>(argmax_row(out.main_logits, r)) == batch.labels[r];
    }
  }
  const double n = static_cast<double>(std::max<std::size_t>(1, data.size()));
  return {loss_sum / n, static_cast<double>(hits) / n};
}

}  // namespace

ModelCheckpoint make_classifier_checkpoint(const Classifier<float>& model,
                                           const std::optional<NormScaler>& scaler,
                                           nlohmann::json metadata) {
  ModelCheckpoint ckpt;
  ckpt.kind = ModelKind::classifier;
  ckpt.config = model.config().to_json();
  ckpt.arrays = model.params().export_arrays();
  ckpt.scaler = scaler;
  ckpt.metadata = std::move(metadata);
  return ckpt;
}

std::unique_ptr<Classifier<float>> classifier_from_checkpoint(const ModelCheckpoint& ckpt) {
  expect_kind(ckpt, ModelKind::classifier);
  ClassifierConfig cfg;
  try {
    cfg = ClassifierConfig::from_json(ckpt.config);
  } catch (const std::exception& e) {
    throw CheckpointError(CheckpointErrorCode::malformed_header, e.what());
  }
  auto model = std::make_unique<Classifier<float>>(cfg, 0);
  try {
    model->params().import_arrays(ckpt.arrays);
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(CheckpointErrorCode::shape_mismatch, e.what());
  }
  return model;
}

ClassifierTrainResult train_classifier(const PreparedSegments& train, const PreparedSegments& val,
                                       const ClassifierConfig& cfg,
                                       const ClassifierTrainOptions& opts, const NormScaler& scaler,
                                       std::uint64_t seed) {
  if (train.size() == 0) throw std::invalid_argument("train_classifier: empty training set");
  if (opts.batch_size == 0) throw std::invalid_argument("train_classifier: zero batch size");
  check_labels(train, "train_classifier");
  if (val.size() > 0) check_labels(val, "train_classifier (validation)");

  Classifier<float> model(cfg, seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  ClassifierTrainResult result;
  double best = -1.0;
  std::vector<nn::NamedArray> best_arrays = model.params().export_arrays();
  for (std::size_t epoch = 1; epoch <= opts.epochs; ++epoch) {
    auto stats = run_epoch(model, train, opts.batch_size, static_cast<float>(opts.lr), Mode::train, rng);
    EpochRecord rec{epoch, stats.loss, stats.accuracy, 0.0, 0.0};
    if (val.size() > 0) {
      rec.val_accuracy = accuracy_of(model, val);
      rec.val_metric = rec.val_accuracy;
    }
    result.history.epochs.push_back(rec);
    const bool better = val.size() > 0 ? rec.val_accuracy > best : true;
    if (better) {
      best = rec.val_accuracy;
      best_arrays = model.params().export_arrays();
      result.history.best_epoch = epoch;
    }
  }
  model.params().import_arrays(best_arrays);
  nlohmann::json meta = {{"seed", seed},
                         {"epochs", opts.epochs},
                         {"batch_size", opts.batch_size},
                         {"lr", opts.lr},
                         {"best_epoch", result.history.best_epoch},
                         {"best_val_accuracy", std::max(best, 0.0)},
                         {"parameter_count", model.parameter_count()}};
  result.checkpoint = make_classifier_checkpoint(model, scaler, std::move(meta));
  return result;
}

ModelCheckpoint fine_tune(const ModelCheckpoint& ckpt, const PreparedSegments& user,
                          const FineTuneOptions& opts, std::uint64_t seed) {
  if (opts.epochs == 0 || user.size() == 0) return ckpt;
  check_labels(user, "fine_tune");
  auto model = classifier_from_checkpoint(ckpt);
  std::mt19937_64 rng(seed ^ 0x2545f4914f6cdd1dull);
  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    run_epoch(*model, user, std::max<std::size_t>(1, opts.batch_size), static_cast<float>(opts.lr),
              Mode::eval, rng);
  }
  auto meta = ckpt.metadata;
  meta["fine_tune"] = {{"epochs", opts.epochs}, {"lr", opts.lr}, {"segments", user.size()}};
  return make_classifier_checkpoint(*model, ckpt.scaler, std::move(meta));
}

// ------------------------------------------------------------ inference

ShotClassifier::ShotClassifier(const ModelCheckpoint& ckpt)
    : model_(classifier_from_checkpoint(ckpt)), scaler_(ckpt.scaler) {}

namespace {

ClassPrediction to_prediction(const Tensor<float>& logits, std::size_t row) {
  ClassPrediction p;
  const std::size_t ch = logits.dim(1);
  double mx = logits[row * ch];
  for (std::size_t c = 1; c < ch; ++c) mx = std::max(mx, static_cast<double>(logits[row * ch + c]));
  double sum = 0.0;
  for (std::size_t c = 0; c < ch; ++c) {
    p.probabilities[c] = std::exp(static_cast<double>(logits[row * ch + c]) - mx);
    sum += p.probabilities[c];
  }
  std::size_t best = 0;
  for (std::size_t c = 0; c < ch; ++c) {
    p.probabilities[c] /= sum;
    if (p.probabilities[c] > p.probabilities[best]) best = c;
  }
  p.cls = class_from_index(static_cast<int>(best));
  return p;
}

}  // namespace

std::vector<ClassPrediction> ShotClassifier::predict(const PreparedSegments& prepared) {
  if (prepared.channels != config().input_channels() || prepared.length != config().segment_len) {
    throw std::invalid_argument("prepared segments do not match the classifier shape");
  }
  std::vector<ClassPrediction> out;
  out.reserve(prepared.size());
  constexpr std::size_t kEvalBatch = 64;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < prepared.size(); start += kEvalBatch) {
    idx.clear();
    for (std::size_t i = start; i < std::min(prepared.size(), start + kEvalBatch); ++i) idx.push_back(i);
    auto o = model_->forward(prepared.batch(idx), Mode::eval);
    for (std::size_t r = 0; r < idx.size(); ++r) out.push_back(to_prediction(o.main_logits, r));
  }
  return out;
}

ClassPrediction ShotClassifier::predict(const ShotSegment& normalized) {
  if (normalized.length() != config().segment_len) {
    throw std::invalid_argument("segment length " + std::to_string(normalized.length()) +
                                " does not match classifier (" +
                                std::to_string(config().segment_len) + ")");
  }
  auto prepared = prepare_normalized(std::span<const ShotSegment>(&normalized, 1), config());
  return predict(prepared).front();
}

ClassPrediction predict(const ModelCheckpoint& ckpt, const ShotSegment& normalized) {
  ShotClassifier clf(ckpt);
  return clf.predict(normalized);
}

}  // namespace shottrack
