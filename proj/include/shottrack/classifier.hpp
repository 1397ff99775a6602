#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "shottrack/checkpoint.hpp"
#include "shottrack/dsp.hpp"
#include "shottrack/imu.hpp"
#include "shottrack/nn/layers.hpp"
#include "shottrack/nn/params.hpp"

namespace shottrack {

struct ClassifierConfig {
  // Input channels drawn from the canonical six, in order. Sensor-subset
  // models use {0,1,2} or {3,4,5}.
  std::vector<std::size_t> channels = {0, 1, 2, 3, 4, 5};
  std::size_t segment_len = kWindowLength;
  std::size_t impact_index = kWindowBefore;
  std::size_t kernel = 11;
  std::array<std::size_t, 4> sub_block_channels = {32, 64, 128, 128};
  std::array<std::size_t, 2> backbone_channels = {256, 128};
  std::size_t attention_classifier_channels = 16;
  std::size_t num_classes = kNumClasses;
  BandSpec band_spec;
  double rate = kSampleRate;
  // false gives the plain FCN backbone: attention fixed at 1, no aux heads.
  bool use_attention = true;

  std::size_t input_channels() const { return channels.size(); }
  WindowSpec window() const { return {impact_index, segment_len - impact_index}; }
  void validate() const;
  nlohmann::json to_json() const;
  static ClassifierConfig from_json(const nlohmann::json& j);
};

template <typename T>
struct ClassifierBatch {
  nn::Tensor<T> x;                    // [B, C, L]
  std::array<nn::Tensor<T>, 3> bands;  // low / mid / high, each [B, C, L]
  std::vector<int> labels;
};

template <typename T>
struct ClassifierOutput {
  nn::Tensor<T> main_logits;                   // [B, classes]
  std::array<nn::Tensor<T>, 3> aux_logits;     // per band, [B, classes]
  std::array<nn::Tensor<T>, 3> attention;      // per band, [B, 1, L], in (0, 1)
};

// FCN backbone (four cascaded sub-blocks, then two backbone blocks, GAP and
// a linear head) with band attention: each band of the input goes through a
// conv + sigmoid gate that multiplies the output of sub-block 1/2/3 and also
// feeds its own small classifier (conv -> ReLU -> GAP -> linear).
template <typename T>
class Classifier {
 public:
  Classifier(const ClassifierConfig& cfg, std::uint64_t seed);

  ClassifierOutput<T> forward(const ClassifierBatch<T>& batch, nn::Mode mode);
  // Sum of main and auxiliary cross-entropies; accumulates parameter grads.
  T backward(const ClassifierOutput<T>& out, std::span<const int> targets);

  const ClassifierConfig& config() const { return cfg_; }
  nn::ParamStore<T>& params() { return store_; }
  const nn::ParamStore<T>& params() const { return store_; }
  std::size_t parameter_count() const { return store_.parameter_count(); }

 private:
  struct ConvBlock {
    nn::Conv1d<T> conv;
    nn::BatchNorm1d<T> bn;
    nn::Activation<T> act{nn::ActivationKind::mish};
    nn::Tensor<T> forward(const nn::Tensor<T>& x, nn::Mode mode);
    nn::Tensor<T> backward(const nn::Tensor<T>& dy, bool input_grad);
  };
  struct AttentionBranch {
    nn::Conv1d<T> gate_conv;
    nn::Activation<T> gate_act{nn::ActivationKind::sigmoid};
    nn::Conv1d<T> head_conv;
    nn::Activation<T> head_act{nn::ActivationKind::relu};
    nn::GlobalAvgPool<T> head_pool;
    nn::Linear<T> head_fc;
  };

  ClassifierConfig cfg_;
  nn::ParamStore<T> store_;
  std::array<ConvBlock, 4> sub_blocks_;
  std::array<ConvBlock, 2> backbone_;
  nn::GlobalAvgPool<T> pool_;
  nn::Linear<T> fc_;
  std::array<AttentionBranch, 3> branches_;
  // forward caches
  std::array<nn::Tensor<T>, 3> sub_out_;
  std::size_t batch_ = 0;
};

// Loss of an output without touching gradients.
template <typename T>
T classifier_loss(const ClassifierOutput<T>& out, std::span<const int> targets);

// Segments normalised, channel-selected and band-decomposed once up front.
struct PreparedSegments {
  std::size_t channels = 0;
  std::size_t length = 0;
  std::vector<float> x;
  std::array<std::vector<float>, 3> bands;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  ClassifierBatch<float> batch(std::span<const std::size_t> indices) const;
};

PreparedSegments prepare_segments(std::span<const ShotSegment> segments, const NormScaler& scaler,
                                  const ClassifierConfig& cfg);
// Segments that are already normalised.
PreparedSegments prepare_normalized(std::span<const ShotSegment> segments,
                                    const ClassifierConfig& cfg);

struct ClassifierTrainOptions {
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  double lr = 1e-4;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
  double val_metric = 0.0;  // F1 for the detector, accuracy for the classifier
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  std::string to_csv() const;
};

struct ClassifierTrainResult {
  ModelCheckpoint checkpoint;
  TrainHistory history;
};

// Adam on mini-batches shuffled per epoch by `seed`; keeps the epoch with the
// best validation accuracy (last epoch when val is empty).
ClassifierTrainResult train_classifier(const PreparedSegments& train, const PreparedSegments& val,
                                       const ClassifierConfig& cfg,
                                       const ClassifierTrainOptions& opts, const NormScaler& scaler,
                                       std::uint64_t seed);

struct FineTuneOptions {
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  double lr = 1e-6;
};

// Continues training every parameter at a low learning rate. Batch-norm
// statistics stay frozen (eval mode) so lr = 0 is an exact no-op.
ModelCheckpoint fine_tune(const ModelCheckpoint& ckpt, const PreparedSegments& user,
                          const FineTuneOptions& opts, std::uint64_t seed);

struct ClassPrediction {
  ShotClass cls = ShotClass::Serve;
  std::array<double, kNumClasses> probabilities{};
  double confidence() const { return probabilities[static_cast<std::size_t>(cls)]; }
};

// Inference wrapper around a frozen classifier checkpoint. Not thread-safe;
// build one per thread from the same checkpoint.
class ShotClassifier {
 public:
  explicit ShotClassifier(const ModelCheckpoint& ckpt);

  ClassPrediction predict(const ShotSegment& normalized);
  std::vector<ClassPrediction> predict(const PreparedSegments& prepared);

  const ClassifierConfig& config() const { return model_->config(); }
  const std::optional<NormScaler>& scaler() const { return scaler_; }

 private:
  std::unique_ptr<Classifier<float>> model_;
  std::optional<NormScaler> scaler_;
};

ClassPrediction predict(const ModelCheckpoint& ckpt, const ShotSegment& normalized);

ModelCheckpoint make_classifier_checkpoint(const Classifier<float>& model,
                                           const std::optional<NormScaler>& scaler,
                                           nlohmann::json metadata = nlohmann::json::object());
std::unique_ptr<Classifier<float>> classifier_from_checkpoint(const ModelCheckpoint& ckpt);

}  // namespace shottrack
