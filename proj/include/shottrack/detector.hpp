#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include <json.hpp>

#include "shottrack/checkpoint.hpp"
#include "shottrack/classifier.hpp"
#include "shottrack/imu.hpp"
#include "shottrack/nn/layers.hpp"
#include "shottrack/nn/params.hpp"

namespace shottrack {

struct DetectorConfig {
  std::size_t stages = 3;
  std::size_t layers_per_stage = 4;
  std::size_t hidden = 64;
  std::size_t kernel = 3;
  std::size_t num_classes = 2;
  double class_weight_positive = 5.0;
  std::vector<std::size_t> channels = {0, 1, 2, 3, 4, 5};

  std::size_t input_channels() const { return channels.size(); }
  // Frames seen by one output of a single stage.
  std::size_t receptive_field() const;
  void validate() const;
  nlohmann::json to_json() const;
  static DetectorConfig from_json(const nlohmann::json& j);
};

// Multi-stage TCN. Each stage: 1x1 conv -> dilated residual layers
// (dilation 2^l) -> 1x1 conv to per-frame logits. Later stages read the
// softmax of the previous stage.
template <typename T>
class Detector {
 public:
  Detector(const DetectorConfig& cfg, std::uint64_t seed);

  // x is [B, C, T]; returns one [B, 2, T] logit tensor per stage.
  std::vector<nn::Tensor<T>> forward(const nn::Tensor<T>& x);
  // Sum over stages of class-weighted cross-entropy; accumulates grads.
  T backward(const std::vector<nn::Tensor<T>>& outputs, std::span<const int> targets);

  const DetectorConfig& config() const { return cfg_; }
  nn::ParamStore<T>& params() { return store_; }
  const nn::ParamStore<T>& params() const { return store_; }
  std::size_t parameter_count() const { return store_.parameter_count(); }

 private:
  struct Residual {
    nn::Conv1d<T> dilated;
    nn::Activation<T> act{nn::ActivationKind::relu};
    nn::Conv1d<T> pointwise;
  };
  struct Stage {
    nn::ChannelSoftmax<T> input_softmax;
    nn::Conv1d<T> in_conv;
    std::vector<Residual> layers;
    nn::Conv1d<T> out_conv;
  };

  DetectorConfig cfg_;
  nn::ParamStore<T> store_;
  std::vector<Stage> stages_;
  std::vector<T> weights_;
};

template <typename T>
T detector_loss(const std::vector<nn::Tensor<T>>& outputs, std::span<const int> targets,
                double class_weight_positive);

// A normalised, channel-selected sequence with its frame targets.
struct PreparedSequence {
  nn::Tensor<float> x;  // [1, C, T]
  std::vector<int> targets;
  std::size_t length() const { return x.empty() ? 0 : x.dim(2); }
};

PreparedSequence prepare_sequence(const ImuSequence& normalized, const FrameLabels& labels,
                                  const DetectorConfig& cfg);
PreparedSequence prepare_sequence(const ImuSequence& normalized, const DetectorConfig& cfg);

struct DetectorTrainOptions {
  std::size_t epochs = 500;
  double lr = 1e-3;
};

struct DetectorTrainResult {
  ModelCheckpoint checkpoint;
  TrainHistory history;
};

// Batch of one full sequence per step, sequences shuffled per epoch; keeps
// the epoch with the best validation frame F1 (last epoch when val is empty).
DetectorTrainResult train_detector(std::span<const PreparedSequence> train,
                                   std::span<const PreparedSequence> val,
                                   const DetectorConfig& cfg, const DetectorTrainOptions& opts,
                                   const NormScaler& scaler, std::uint64_t seed);

struct FramePrediction {
  FrameLabels labels;
  std::vector<double> positive_probability;
};

class FrameDetector {
 public:
  explicit FrameDetector(const ModelCheckpoint& ckpt);

  FramePrediction predict(const ImuSequence& normalized);
  FramePrediction predict(const PreparedSequence& prepared);

  const DetectorConfig& config() const { return model_->config(); }
  const std::optional<NormScaler>& scaler() const { return scaler_; }

 private:
  std::unique_ptr<Detector<float>> model_;
  std::optional<NormScaler> scaler_;
};

FramePrediction predict_frames(const ModelCheckpoint& ckpt, const ImuSequence& normalized);

ModelCheckpoint make_detector_checkpoint(const Detector<float>& model,
                                         const std::optional<NormScaler>& scaler,
                                         nlohmann::json metadata = nlohmann::json::object());
std::unique_ptr<Detector<float>> detector_from_checkpoint(const ModelCheckpoint& ckpt);

struct RefineConfig {
  std::size_t k = 15;
  std::size_t window_len = kWindowLength;
  void validate() const;
};

struct ShotEvent {
  std::size_t center_frame = 0;
  std::size_t window_start = 0;  // inclusive
  std::size_t window_end = 0;    // exclusive
  double confidence = 0.0;
  bool operator==(const ShotEvent&) const = default;
};

// Runs of >= k positive frames become window_len windows centred on the run
// midpoint. Windows are kept inside the sequence and overlapping windows are
// merged left to right, each merged window centred at the floored mean of
// its constituent run centres, until no two overlap. Sequences shorter than
// one window yield no events.
std::vector<ShotEvent> refine(const FrameLabels& labels, std::span<const double> probs,
                              const RefineConfig& cfg = {});

}  // namespace shottrack
