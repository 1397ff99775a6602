#include "shottrack/grad_audit.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <random>
#include <sstream>

#include "shottrack/classifier.hpp"
#include "shottrack/detector.hpp"
#include "shottrack/nn/grad_check.hpp"
#include "shottrack/nn/layers.hpp"
#include "shottrack/nn/loss.hpp"

namespace shottrack {

using nn::Tensor;

bool AuditReport::passed() const {
  return !entries.empty() &&
         std::all_of(entries.begin(), entries.end(), [](const AuditEntry& e) { return e.passed(); });
}

std::string AuditReport::to_text() const {
  std::ostringstream o;
  o << std::left << std::setw(28) << "op" << std::right << std::setw(7) << "cases" << std::setw(10)
    << "coords" << std::setw(14) << "max rel err" << std::setw(10) << "tol" << "  status\n";
  for (const auto& e : entries) {
    o << std::left << std::setw(28) << e.op << std::right << std::setw(7) << e.cases << std::setw(10)
      << e.coordinates << std::setw(14) << std::scientific << std::setprecision(2) << e.max_rel_error
      << std::setw(10) << e.tolerance << std::defaultfloat << "  " << (e.passed() ? "ok" : "FAIL")
      << "\n";
  }
  o << (passed() ? "all gradients agree" : "gradient mismatch") << " (" << std::fixed
    << std::setprecision(1) << seconds << " s)\n";
  return o.str();
}

nlohmann::json AuditReport::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : entries) {
    arr.push_back({{"op", e.op},
                   {"cases", e.cases},
                   {"coordinates", e.coordinates},
                   {"max_rel_error", e.max_rel_error},
                   {"tolerance", e.tolerance},
                   {"passed", e.passed()}});
  }
  return {{"entries", arr}, {"passed", passed()}, {"seconds", seconds}};
}

namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

Tensor<double> random_tensor(Rng& rng, nn::Shape shape, bool away_from_zero = false) {
  Tensor<double> t(std::move(shape));
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& v : t.storage()) {
    v = n(rng);
    if (away_from_zero) v = (v < 0 ? -1.0 : 1.0) * (0.05 + std::abs(v));
  }
  return t;
}

double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// One differentiable op over a list of input tensors plus an optional
// parameter store. forward() returns the output; backward(dy) returns the
// input gradients and accumulates parameter grads.
struct OpCase {
  std::vector<Tensor<double>> inputs;
  nn::ParamStore<double>* store = nullptr;
  std::function<Tensor<double>(const std::vector<Tensor<double>>&)> forward;
  std::function<std::vector<Tensor<double>>(const Tensor<double>&)> backward;
};

// Checks L = sum(r * y) for a random fixed r against all coordinates of
// inputs and parameters.
nn::GradCheckReport check_op(OpCase& op, Rng& rng, double tol, double step) {
  std::size_t n_in = 0;
  for (const auto& t : op.inputs) n_in += t.size();
  auto unpack = [&op, n_in](std::span<const double> v) {
    std::vector<Tensor<double>> xs = op.inputs;
    std::size_t k = 0;
    for (auto& t : xs)
      for (auto& e : t.storage()) e = v[k++];
    if (op.store) op.store->set_flat_values(v.subspan(n_in));
    return xs;
  };
  std::vector<double> x0;
  for (const auto& t : op.inputs) x0.insert(x0.end(), t.storage().begin(), t.storage().end());
  if (op.store) {
    const auto p = op.store->flat_values();
    x0.insert(x0.end(), p.begin(), p.end());
  }
  const auto y0 = op.forward(op.inputs);
  const auto r = random_tensor(rng, y0.shape());

  nn::ScalarFunction fn;
  fn.value = [&](std::span<const double> v) { return dot(r, op.forward(unpack(v))); };
  fn.gradient = [&](std::span<const double> v) {
    op.forward(unpack(v));
    if (op.store) op.store->zero_grad();
    const auto dxs = op.backward(r);
    std::vector<double> g;
    for (const auto& t : dxs) g.insert(g.end(), t.storage().begin(), t.storage().end());
    if (op.store) {
      const auto pg = op.store->flat_grads();
      g.insert(g.end(), pg.begin(), pg.end());
    }
    return g;
  };
  auto rep = nn::grad_check(fn, x0, tol, {}, step);
  unpack(x0);
  return rep;
}

void fold(AuditEntry& e, const nn::GradCheckReport& r) {
  ++e.cases;
  e.coordinates += r.checked;
  e.max_rel_error = std::max(e.max_rel_error, r.max_rel_error);
}

AuditEntry audit_conv(Rng& rng, const AuditOptions& o) {
  AuditEntry e{"conv1d", 0, 0, 0.0, o.op_tolerance};
  const std::size_t kernels[] = {1, 3, 5, 7, 11};
  for (std::size_t c = 0; c < o.cases_per_op; ++c) {
    const std::size_t b = pick(rng, 1, 3), cin = pick(rng, 1, 4), cout = pick(rng, 1, 4);
    const std::size_t k = kernels[pick(rng, 0, 4)], dil = pick(rng, 1, 4), len = pick(rng, 4, 20);
    nn::ParamStore<double> store;
    nn::Conv1d<double> conv(store, "c", cin, cout, k, dil);
    store.initialize(rng());
    OpCase op;
    op.inputs = {random_tensor(rng, {b, cin, len})};
    op.store = &store;
    op.forward = [&](const auto& xs) { return conv.forward(xs[0]); };
    op.backward = [&](const auto& dy) { return std::vector{conv.backward(dy)}; };
    fold(e, check_op(op, rng, o.op_tolerance, o.op_step));
  }
  return e;
}

AuditEntry audit_batchnorm(Rng& rng, const AuditOptions& o, nn::Mode mode) {
  AuditEntry e{mode == nn::Mode::train ? "batchnorm (train)" : "batchnorm (eval)", 0, 0, 0.0,
               o.op_tolerance};
  for (std::size_t c = 0; c < o.cases_per_op; ++c) {
    const std::size_t b = pick(rng, 1, 3), ch = pick(rng, 1, 4), len = pick(rng, 4, 16);
    nn::ParamStore<double> store;
    nn::BatchNorm1d<double> bn(store, "bn", ch);
    store.initialize(rng());
    // Non-trivial affine and running statistics.
    auto& gamma = store[0].value;
    auto& beta = store[1].value;
    for (auto& v : gamma.storage()) v = uniform(rng, 0.5, 1.5);
    for (auto& v : beta.storage()) v = uniform(rng, -0.5, 0.5);
    for (int w = 0; w < 3; ++w) {
      auto warm = random_tensor(rng, {b, ch, len});
      for (auto& v : warm.storage()) v = 2.0 * v + 0.7;
      bn.forward(warm, nn::Mode::train);
    }
    OpCase op;
    op.inputs = {random_tensor(rng, {b, ch, len})};
    op.store = &store;
    op.forward = [&bn, mode](const auto& xs) { return bn.forward(xs[0], mode); };
    op.backward = [&](const auto& dy) { return std::vector{bn.backward(dy)}; };
    fold(e, check_op(op, rng, o.op_tolerance, o.op_step));
  }
  return e;
}

AuditEntry audit_activation(Rng& rng, const AuditOptions& o, nn::ActivationKind kind, const char* name) {
  AuditEntry e{name, 0, 0, 0.0, o.op_tolerance};
  for (std::size_t c = 0; c < o.cases_per_op; ++c) {
    nn::Activation<double> act(kind);
    OpCase op;
    op.inputs = {random_tensor(rng, {pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 2, 16)}, true)};
    for (auto& v : op.inputs[0].storage()) v *= 2.0;
    op.forward = [&](const auto& xs) { return act.forward(xs[0]); };
    op.backward = [&](const auto& dy) { return std::vector{act.backward(dy)}; };
    fold(e, check_op(op, rng, o.op_tolerance, o.op_step));
  }
  return e;
}

AuditEntry audit_pool(Rng& rng, const AuditOptions& o) {
  AuditEntry e{"global_avg_pool", 0, 0, 0.0, o.op_tolerance};
  for (std::size_t c = 0; c < o.cases_per_op; ++c) {
    nn::GlobalAvgPool<double> pool;
    OpCase op;
    op.inputs = {random_tensor(rng, {pick(rng, 1, 3), pick(rng, 1, 5), pick(rng, 1, 20)})};
    op.forward = [&](const auto& xs) { return pool.forward(xs[0]); };
    op.backward = [&](const auto& dy) { return std::vector{pool.backward(dy)}; };
    fold(e, check_op(op, rng, o.op_tolerance, o.op_step));
  }
  return e;
}

AuditEntry audit_linear(Rng& rng, const AuditOptions& o) {
  AuditEntry e{"linear", 0, 0, 0.0, o.op_tolerance};
  for (std::size_t c = 0; c < o.cases_per_op; ++c) {
    const std::size_t b = pick(rng, 1, 4), in = pick(rng, 1, 8), out = pick(rng, 1, 6);
    nn::ParamStore<double> store;
    nn::Linear<double> lin(store, "fc", in, out);
    store.initialize(rng());
    OpCase op;
    op.inputs = {random_tensor(rng, {b, in})};
    op.store = &store;
    op.forward = [&](const auto& xs) { return lin.forward(xs[0]); };
    op.backward = [&](const auto& dy) { return std::vector{lin.backward(dy)}; };
    fold(e, check_op(op, rng, o.op_tolerance, o.op_step));
  }
  return e;
}

AuditEntry audit_softmax(Rng& rng, const AuditOptions& o) {
  AuditEntry e{"channel_softmax", 0, 0, 0.0, o.op_tolerance};
  for (std::size_t c = 0; c < o.cases_per_op; ++c) {
    nn::ChannelSoftmax<double> sm;
    OpCase op;
    op.inputs = {random_tensor(rng, {pick(rng, 1, 3), pick(rng, 2, 5), pick(rng, 1, 12)})};
    op.forward = [&](const auto& xs) { return sm.forward(xs[0]); };
    op.backward = [&](const auto& dy) { return std::vector{sm.backward(dy)}; };
    fold(e, check_op(op, rng, o.op_tolerance, o.op_step));
  }
  return e;
}

AuditEntry audit_gate(Rng& rng, const AuditOptions& o) {
  AuditEntry e{"gate_multiply", 0, 0, 0.0, o.op_tolerance};
  for (std::size_t c = 0; c < o.cases_per_op; ++c) {
    const std::size_t b = pick(rng, 1, 3), ch = pick(rng, 1, 5), len = pick(rng, 1, 12);
    OpCase op;
    op.inputs = {random_tensor(rng, {b, ch, len}), random_tensor(rng, {b, 1, len})};
    op.forward = [](const auto& xs) { return nn::gate_multiply(xs[0], xs[1]); };
    op.backward = [&op](const auto& dy) {
      Tensor<double> dx, dg;
      nn::gate_multiply_backward(op.inputs[0], op.inputs[1], dy, dx, dg);
      return std::vector{dx, dg};
    };
    // backward reads op.inputs, so keep them in sync with the probe point.
    auto fwd = op.forward;
    op.forward = [&op, fwd](const auto& xs) {
      op.inputs = xs;
      return fwd(xs);
    };
    fold(e, check_op(op, rng, o.op_tolerance, o.op_step));
  }
  return e;
}

AuditEntry audit_cross_entropy(Rng& rng, const AuditOptions& o) {
  AuditEntry e{"weighted_cross_entropy", 0, 0, 0.0, o.op_tolerance};
  for (std::size_t c = 0; c < o.cases_per_op; ++c) {
    const bool seq = c % 2 == 1;
    const std::size_t b = pick(rng, 1, 3), classes = pick(rng, 2, 6), len = seq ? pick(rng, 1, 8) : 1;
    const nn::Shape shape = seq ? nn::Shape{b, classes, len} : nn::Shape{b, classes};
    const auto x0t = random_tensor(rng, shape);
    std::vector<int> targets(b * len);
    for (auto& t : targets) t = static_cast<int>(pick(rng, 0, classes - 1));
    std::vector<double> weights;
    if (c % 3 != 0)
      for (std::size_t k = 0; k < classes; ++k) weights.push_back(uniform(rng, 0.5, 5.0));
    nn::ScalarFunction fn;
    fn.value = [&](std::span<const double> v) {
      Tensor<double> x(shape, std::vector<double>(v.begin(), v.end()));
      return nn::weighted_cross_entropy<double>(x, targets, weights).loss;
    };
    fn.gradient = [&](std::span<const double> v) {
      Tensor<double> x(shape, std::vector<double>(v.begin(), v.end()));
      return nn::weighted_cross_entropy<double>(x, targets, weights).grad.storage();
    };
    fold(e, nn::grad_check(fn, x0t.storage(), o.op_tolerance, {}, o.op_step));
  }
  return e;
}

// Coordinates to probe: every one, or `per_tensor` random ones per tensor.
std::vector<std::size_t> model_coords(const nn::ParamStore<double>& store, std::size_t per_tensor, Rng& rng) {
  std::vector<std::size_t> out;
  std::size_t offset = 0;
  for (std::size_t i = 0; i < store.size(); ++i) {
    const std::size_t n = store[i].value.size();
    if (per_tensor == 0) {
      for (std::size_t k = 0; k < n; ++k) out.push_back(offset + k);
    } else {
      for (std::size_t k = 0; k < per_tensor; ++k) out.push_back(offset + pick(rng, 0, n - 1));
    }
    offset += n;
  }
  return out;
}

AuditEntry audit_classifier(Rng& rng, const AuditOptions& o, const ClassifierConfig& cfg, std::size_t batch,
                            std::size_t per_tensor, std::string name) {
  AuditEntry e{std::move(name), 0, 0, 0.0, o.model_tolerance};
  Classifier<double> model(cfg, rng());
  ClassifierBatch<double> in;
  const nn::Shape shape{batch, cfg.input_channels(), cfg.segment_len};
  in.x = random_tensor(rng, shape);
  for (auto& band : in.bands) band = random_tensor(rng, shape);
  for (std::size_t b = 0; b < batch; ++b) in.labels.push_back(static_cast<int>(pick(rng, 0, cfg.num_classes - 1)));
  auto& store = model.params();

  nn::ScalarFunction fn;
  fn.value = [&](std::span<const double> v) {
    store.set_flat_values(v);
    return classifier_loss(model.forward(in, nn::Mode::train), in.labels);
  };
  fn.gradient = [&](std::span<const double> v) {
    store.set_flat_values(v);
    const auto out = model.forward(in, nn::Mode::train);
    store.zero_grad();
    model.backward(out, in.labels);
    return store.flat_grads();
  };
  const auto x0 = store.flat_values();
  const auto coords = model_coords(store, per_tensor, rng);
  fold(e, nn::grad_check(fn, x0, o.model_tolerance, coords, o.model_step));
  return e;
}

AuditEntry audit_detector(Rng& rng, const AuditOptions& o, const DetectorConfig& cfg, std::size_t len,
                          std::size_t per_tensor, std::string name) {
  AuditEntry e{std::move(name), 0, 0, 0.0, o.model_tolerance};
  Detector<double> model(cfg, rng());
  const auto x = random_tensor(rng, {1, cfg.input_channels(), len});
  std::vector<int> targets(len, 0);
  const std::size_t start = pick(rng, 0, len / 2);
  for (std::size_t t = start; t < std::min(len, start + len / 3); ++t) targets[t] = 1;
  auto& store = model.params();

  nn::ScalarFunction fn;
  fn.value = [&](std::span<const double> v) {
    store.set_flat_values(v);
    return detector_loss(model.forward(x), targets, cfg.class_weight_positive);
  };
  fn.gradient = [&](std::span<const double> v) {
    store.set_flat_values(v);
    const auto out = model.forward(x);
    store.zero_grad();
    model.backward(out, targets);
    return store.flat_grads();
  };
  const auto x0 = store.flat_values();
  const auto coords = model_coords(store, per_tensor, rng);
  fold(e, nn::grad_check(fn, x0, o.model_tolerance, coords, o.model_step));
  return e;
}

}  // namespace

AuditReport run_grad_audit(std::uint64_t seed, const AuditOptions& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(seed);
  AuditReport rep;
  rep.entries.push_back(audit_conv(rng, opts));
  rep.entries.push_back(audit_batchnorm(rng, opts, nn::Mode::train));
  rep.entries.push_back(audit_batchnorm(rng, opts, nn::Mode::eval));
  rep.entries.push_back(audit_activation(rng, opts, nn::ActivationKind::mish, "mish"));
  rep.entries.push_back(audit_activation(rng, opts, nn::ActivationKind::relu, "relu"));
  rep.entries.push_back(audit_activation(rng, opts, nn::ActivationKind::sigmoid, "sigmoid"));
  rep.entries.push_back(audit_pool(rng, opts));
  rep.entries.push_back(audit_linear(rng, opts));
  rep.entries.push_back(audit_softmax(rng, opts));
  rep.entries.push_back(audit_gate(rng, opts));
  rep.entries.push_back(audit_cross_entropy(rng, opts));

  ClassifierConfig small;
  small.sub_block_channels = {4, 8, 8, 8};
  small.backbone_channels = {8, 8};
  small.attention_classifier_channels = 4;
  rep.entries.push_back(audit_classifier(rng, opts, small, 2, 0, "classifier (reduced width)"));
  small.use_attention = false;
  rep.entries.push_back(audit_classifier(rng, opts, small, 2, 0, "classifier (no attention)"));

  DetectorConfig det;
  det.hidden = 8;
  rep.entries.push_back(audit_detector(rng, opts, det, 48, 0, "detector (reduced width)"));

  if (opts.full_width) {
    rep.entries.push_back(audit_classifier(rng, opts, ClassifierConfig{}, 2, 1, "classifier (default)"));
    rep.entries.push_back(audit_detector(rng, opts, DetectorConfig{}, 96, 2, "detector (default)"));
  }
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

}  // namespace shottrack
