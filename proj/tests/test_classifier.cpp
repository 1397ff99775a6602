#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "shottrack/classifier.hpp"
#include "shottrack/synth.hpp"

using namespace shottrack;
using nn::Tensor;

namespace {

ClassifierConfig small_config() {
  ClassifierConfig c;
  c.sub_block_channels = {4, 8, 8, 8};
  c.backbone_channels = {8, 8};
  c.attention_classifier_channels = 4;
  return c;
}

ClassifierBatch<float> random_batch(std::size_t b, std::uint64_t seed, std::size_t channels = 6) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n;
  ClassifierBatch<float> batch;
  const nn::Shape shape{b, channels, kWindowLength};
  batch.x = Tensor<float>(shape);
  for (auto& v : batch.x.storage()) v = n(rng);
  for (auto& band : batch.bands) {
    band = Tensor<float>(shape);
    for (auto& v : band.storage()) v = n(rng);
  }
  return batch;
}

std::size_t conv_params(std::size_t in, std::size_t out, std::size_t k) { return in * out * k + out; }

double softmax_sum(const Tensor<float>& logits, std::size_t row) {
  const std::size_t c = logits.dim(1);
  double mx = -1e300, s = 0.0, total = 0.0;
  for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, double(logits[row * c + j]));
  for (std::size_t j = 0; j < c; ++j) s += std::exp(double(logits[row * c + j]) - mx);
  for (std::size_t j = 0; j < c; ++j) total += std::exp(double(logits[row * c + j]) - mx) / s;
  return total;
}

}  // namespace

TEST_CASE("forward shapes and attention range") {
  Classifier<float> model(small_config(), 1);
  const auto out = model.forward(random_batch(3, 2), nn::Mode::eval);
  CHECK(out.main_logits.shape() == nn::Shape{3, 6});
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(out.aux_logits[i].shape() == nn::Shape{3, 6});
    CHECK(out.attention[i].shape() == nn::Shape{3, 1, kWindowLength});
    for (float a : out.attention[i].storage()) {
      CHECK(a > 0.0f);
      CHECK(a < 1.0f);
    }
  }
  for (std::size_t r = 0; r < 3; ++r) CHECK(std::abs(softmax_sum(out.main_logits, r) - 1.0) < 1e-9);
}

TEST_CASE("same seed gives identical outputs") {
  Classifier<float> a(small_config(), 7), b(small_config(), 7), c(small_config(), 8);
  const auto batch = random_batch(2, 3);
  CHECK(a.forward(batch, nn::Mode::eval).main_logits.storage() ==
        b.forward(batch, nn::Mode::eval).main_logits.storage());
  CHECK(a.forward(batch, nn::Mode::eval).main_logits.storage() !=
        c.forward(batch, nn::Mode::eval).main_logits.storage());
}

TEST_CASE("parameter count follows the layer formula") {
  const ClassifierConfig cfg;
  std::size_t expect = 0, in = cfg.input_channels();
  for (std::size_t out : cfg.sub_block_channels) {
    expect += conv_params(in, out, cfg.kernel) + 2 * out;
    in = out;
  }
  for (std::size_t out : cfg.backbone_channels) {
    expect += conv_params(in, out, cfg.kernel) + 2 * out;
    in = out;
  }
  expect += in * 6 + 6;
  const std::size_t h = cfg.attention_classifier_channels;
  const std::size_t attention = 3 * (conv_params(6, 1, cfg.kernel) + conv_params(1, h, cfg.kernel) + h * 6 + 6);
  CHECK(Classifier<float>(cfg, 1).parameter_count() == expect + attention);
  ClassifierConfig plain = cfg;
  plain.use_attention = false;
  CHECK(Classifier<float>(plain, 1).parameter_count() == expect);
}

TEST_CASE("classifier loss") {
  ClassifierOutput<double> out;
  out.main_logits = Tensor<double>({1, 6});
  for (auto& a : out.aux_logits) a = Tensor<double>({1, 6});
  const std::vector<int> target = {2};
  CHECK(classifier_loss(out, target) == doctest::Approx(4.0 * std::log(6.0)));
  out.main_logits[2] = 60.0;
  CHECK(classifier_loss(out, target) == doctest::Approx(3.0 * std::log(6.0)).epsilon(1e-9));
}

TEST_CASE("without attention the gates are ones and there are no aux heads") {
  auto cfg = small_config();
  cfg.use_attention = false;
  Classifier<float> model(cfg, 4);
  const auto out = model.forward(random_batch(2, 5), nn::Mode::eval);
  for (const auto& a : out.attention)
    for (float v : a.storage()) CHECK(v == 1.0f);
  for (const auto& a : out.aux_logits) CHECK(a.empty());
}

TEST_CASE("config validation and JSON round trip") {
  ClassifierConfig c;
  c.band_spec = {3.0, 18.0};
  c.channels = {0, 1, 2};
  CHECK(ClassifierConfig::from_json(c.to_json()).to_json() == c.to_json());
  ClassifierConfig bad;
  bad.kernel = 10;
  CHECK_THROWS(bad.validate());
  bad = {};
  bad.num_classes = 5;
  CHECK_THROWS(bad.validate());
  bad = {};
  bad.channels = {0, 7};
  CHECK_THROWS(bad.validate());
  bad = {};
  bad.impact_index = 200;
  CHECK_THROWS(bad.validate());
  CHECK_THROWS(Classifier<float>(bad, 1));
}

TEST_CASE("prediction is deterministic, normalised and independent of batch order") {
  Classifier<float> model(small_config(), 3);
  const auto ckpt = make_classifier_checkpoint(model, NormScaler{-40, 40, -800, 800});
  ShotClassifier clf(ckpt);
  std::vector<ShotSegment> segs;
  const auto profile = synth::nominal_profile("S01");
  for (std::size_t k = 0; k < 12; ++k) {
    segs.push_back(apply_scaler(synth::gen_shot(class_from_index(int(k % 6)), profile, k), *ckpt.scaler));
  }
  const auto prepared = prepare_normalized(segs, clf.config());
  const auto first = clf.predict(prepared);
  const auto second = clf.predict(prepared);
  REQUIRE(first.size() == segs.size());
  for (std::size_t i = 0; i < segs.size(); ++i) {
    CHECK(first[i].probabilities == second[i].probabilities);
    const double s = std::accumulate(first[i].probabilities.begin(), first[i].probabilities.end(), 0.0);
    CHECK(std::abs(s - 1.0) < 1e-9);
    const auto single = clf.predict(segs[i]);
    CHECK(single.cls == first[i].cls);
    for (std::size_t c = 0; c < 6; ++c) CHECK(single.probabilities[c] == doctest::Approx(first[i].probabilities[c]).epsilon(1e-5));
  }
  std::vector<ShotSegment> reversed(segs.rbegin(), segs.rend());
  const auto rev = clf.predict(prepare_normalized(reversed, clf.config()));
  for (std::size_t i = 0; i < segs.size(); ++i) CHECK(rev[segs.size() - 1 - i].cls == first[i].cls);
  CHECK(predict(ckpt, segs[0]).cls == first[0].cls);
}

TEST_CASE("sensor subsets build three-channel models") {
  auto cfg = small_config();
  cfg.channels = {0, 1, 2};
  Classifier<float> model(cfg, 1);
  CHECK(model.forward(random_batch(1, 1, 3), nn::Mode::eval).main_logits.shape() == nn::Shape{1, 6});
  CHECK_THROWS(model.forward(random_batch(1, 1, 6), nn::Mode::eval));
}

TEST_CASE("fine-tuning with zero epochs or zero lr changes nothing") {
  Classifier<float> model(small_config(), 3);
  const auto ckpt = make_classifier_checkpoint(model, NormScaler{-40, 40, -800, 800});
  std::vector<ShotSegment> segs;
  for (std::size_t k = 0; k < 8; ++k)
    segs.push_back(apply_scaler(synth::gen_shot(class_from_index(int(k % 6)), synth::nominal_profile("S02"), k),
                                *ckpt.scaler));
  const auto prepared = prepare_normalized(segs, small_config());
  FineTuneOptions none;
  none.epochs = 0;
  CHECK(fine_tune(ckpt, prepared, none, 1) == ckpt);
  FineTuneOptions zero;
  zero.epochs = 3;
  zero.lr = 0.0;
  const auto tuned = fine_tune(ckpt, prepared, zero, 1);
  CHECK(tuned.arrays == ckpt.arrays);
}
