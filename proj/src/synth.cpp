#include "shottrack/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <random>

namespace shottrack::synth {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr std::uint64_t kTemplateSeed = 0x7e4d15c0ffee0001ull;

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

double uniform(std::mt19937_64& rng, double a, double b) {
  return std::uniform_real_distribution<double>(a, b)(rng);
}

double signed_uniform(std::mt19937_64& rng, double a, double b) {
  const double v = uniform(rng, a, b);
  return (rng() & 1u) ? v : -v;
}

struct Wave {
  enum Kind { carrier, arc, burst, ring } kind;
  double amp, mu, width, freq, phase;
};

using ClassWaves = std::array<std::vector<Wave>, kNumChannels>;

double channel_amplitude(std::size_t c) { return c < 3 ? kAccelAmplitude : kGyroAmplitude; }

ClassWaves make_waves(std::mt19937_64& rng) {
  ClassWaves w;
  for (std::size_t c = 0; c < kNumChannels; ++c) {
    const double a = channel_amplitude(c);
    w[c].push_back({Wave::carrier, a * signed_uniform(rng, 0.3, 1.0), 0.0, 0.0,
                    uniform(rng, 1.0, 2.0), uniform(rng, 0.0, kTwoPi)});
    for (int k = 0; k < 2; ++k) {
      w[c].push_back({Wave::arc, a * signed_uniform(rng, 0.4, 1.0), uniform(rng, -0.7, 0.2),
                      uniform(rng, 0.12, 0.3), uniform(rng, 1.0, 3.0), uniform(rng, 0.0, kTwoPi)});
    }
    w[c].push_back({Wave::burst, a * signed_uniform(rng, 0.2, 0.5), uniform(rng, -0.15, 0.05), 0.06,
                    uniform(rng, 8.0, 15.0), uniform(rng, 0.0, kTwoPi)});
    w[c].push_back({Wave::ring, a * signed_uniform(rng, 0.1, 0.3), 0.0, 0.04, 30.0, 0.0});
  }
  return w;
}

const std::array<ClassWaves, kNumClasses>& class_templates() {
  static const auto templates = [] {
    std::array<ClassWaves, kNumClasses> t;
    for (std::size_t k = 0; k < kNumClasses; ++k) {
      std::mt19937_64 rng(mix(kTemplateSeed, k));
      t[k] = make_waves(rng);
    }
    return t;
  }();
  return templates;
}

ClassWaves style_waves(const SubjectProfile& p, ShotClass cls) {
  std::mt19937_64 rng(mix(p.style_seed, static_cast<std::uint64_t>(class_index(cls))));
  return make_waves(rng);
}

// Raised cosine over the motion window, zero outside it.
double envelope(double t) {
  if (t < -kMotionBefore || t >= kMotionAfter) return 0.0;
  return 0.5 * (1.0 - std::cos(kTwoPi * (t + kMotionBefore) / (kMotionBefore + kMotionAfter)));
}

// Arcs, bursts and the carrier follow the performer's timing `shift`; the
// envelope and the impact ring stay locked to the impact.
double evaluate(const std::vector<Wave>& waves, double t, double shift) {
  const double ts = t - shift;
  double v = 0.0;
  for (const auto& w : waves) {
    switch (w.kind) {
      case Wave::carrier:
        v += w.amp * std::sin(kTwoPi * w.freq * ts + w.phase);
        break;
      case Wave::arc: {
        const double z = (ts - w.mu) / w.width;
        v += w.amp * std::exp(-0.5 * z * z) * std::cos(kTwoPi * w.freq * (ts - w.mu) + w.phase);
        break;
      }
      case Wave::burst: {
        const double z = (ts - w.mu) / w.width;
        v += w.amp * std::exp(-0.5 * z * z) * std::sin(kTwoPi * w.freq * (ts - w.mu) + w.phase);
        break;
      }
      case Wave::ring:
        if (t >= 0.0) v += w.amp * std::exp(-t / w.width) * std::sin(kTwoPi * w.freq * t);
        break;
    }
  }
  return envelope(t) * v;
}

// One performance of a class: the template (plus the subject's style) with
// subject and per-shot scale and timing applied.
struct Performance {
  const ClassWaves* base;
  ClassWaves style;
  double style_weight;
  double scale;
  double shift;

  double at(std::size_t c, double t) const {
    if (t < -kMotionBefore || t >= kMotionAfter) return 0.0;
    double v = evaluate((*base)[c], t, shift);
    if (style_weight != 0.0) v += style_weight * evaluate(style[c], t, shift);
    return scale * v;
  }
};

Performance perform(ShotClass cls, const SubjectProfile& p, std::mt19937_64& rng) {
  const auto k = static_cast<std::size_t>(class_index(cls));
  Performance perf{&class_templates()[k], {}, p.style_weight, p.class_scale[k], p.class_offset_s[k]};
  if (p.style_weight != 0.0) perf.style = style_waves(p, cls);
  if (p.amplitude_jitter > 0.0) {
    perf.scale *= std::max(0.1, 1.0 + p.amplitude_jitter * std::normal_distribution<double>()(rng));
  }
  if (p.timing_jitter_s > 0.0) perf.shift += uniform(rng, -p.timing_jitter_s, p.timing_jitter_s);
  return perf;
}

// Gravity on az, a slow per-channel wander and white noise.
struct Background {
  std::array<std::array<double, 4>, kNumChannels> wander{};  // amp1, f1, amp2, f2
  std::array<std::array<double, 2>, kNumChannels> phase{};

  Background(std::mt19937_64& rng) {
    for (std::size_t c = 0; c < kNumChannels; ++c) {
      const double a = c < 3 ? 0.3 : 5.0;
      wander[c] = {a * uniform(rng, 0.3, 1.0), uniform(rng, 0.05, 0.3), a * uniform(rng, 0.3, 1.0),
                   uniform(rng, 0.05, 0.3)};
      phase[c] = {uniform(rng, 0.0, kTwoPi), uniform(rng, 0.0, kTwoPi)};
    }
  }

  double at(std::size_t c, double t) const {
    const auto& w = wander[c];
    double v = w[0] * std::sin(kTwoPi * w[1] * t + phase[c][0]) +
               w[2] * std::sin(kTwoPi * w[3] * t + phase[c][1]);
    if (c == kAz) v += kGravity;
    return v;
  }
};

std::array<double, kNumChannels> noise_sample(const SubjectProfile& p, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  std::array<double, kNumChannels> out{};
  for (std::size_t c = 0; c < kNumChannels; ++c) out[c] = n(rng) * (c < 3 ? p.accel_sigma : p.gyro_sigma);
  return out;
}

SubjectMeta right_handed(SubjectMeta m) {
  m.handedness = Handedness::right;
  return m;
}

}  // namespace

void SubjectProfile::validate() const {
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    if (!(class_scale[k] > 0.0)) throw std::invalid_argument("profile: class scales must be > 0");
    if (std::abs(class_offset_s[k]) > 0.25) throw std::invalid_argument("profile: offset too large");
  }
  if (accel_sigma < 0.0 || gyro_sigma < 0.0) throw std::invalid_argument("profile: sigma < 0");
  if (amplitude_jitter < 0.0 || timing_jitter_s < 0.0) {
    throw std::invalid_argument("profile: jitter < 0");
  }
}

SubjectProfile nominal_profile(const std::string& id, Handedness h) {
  SubjectProfile p;
  p.meta.id = id;
  p.meta.handedness = h;
  return p;
}

SubjectProfile random_profile(const SubjectMeta& meta, std::uint64_t seed) {
  std::mt19937_64 rng(mix(seed, 0x51ull));
  SubjectProfile p;
  p.meta = meta;
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    p.class_scale[k] = uniform(rng, 0.6, 1.4);
    p.class_offset_s[k] = uniform(rng, -0.1, 0.1);
  }
  p.style_weight = 0.3;
  p.style_seed = mix(seed, 0x57ull);
  p.amplitude_jitter = 0.05;
  p.timing_jitter_s = 0.02;
  return p;
}

std::array<double, kNumChannels> template_motion(ShotClass cls, double t) {
  const auto& waves = class_templates()[static_cast<std::size_t>(class_index(cls))];
  std::array<double, kNumChannels> out{};
  for (std::size_t c = 0; c < kNumChannels; ++c) out[c] = evaluate(waves[c], t, 0.0);
  return out;
}

ShotSegment gen_shot(ShotClass cls, const SubjectProfile& profile, std::uint64_t seed) {
  profile.validate();
  std::mt19937_64 rng(seed);
  const Background bg(rng);
  const auto perf = perform(cls, profile, rng);
  ShotSegment seg;
  seg.label = cls;
  seg.frames.resize(kWindowLength);
  for (std::size_t i = 0; i < kWindowLength; ++i) {
    const double t = (static_cast<double>(i) - static_cast<double>(kWindowBefore)) / kSampleRate;
    const auto n = noise_sample(profile, rng);
    for (std::size_t c = 0; c < kNumChannels; ++c) {
      seg.frames[i][c] = bg.at(c, t) + perf.at(c, t) + n[c];
    }
  }
  return profile.meta.handedness == Handedness::left ? mirror_handedness(seg) : seg;
}

std::array<ShotSegment, kNumClasses> nominal_templates() {
  std::array<ShotSegment, kNumClasses> out;
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    const auto cls = class_from_index(static_cast<int>(k));
    auto& seg = out[k];
    seg.label = cls;
    seg.frames.resize(kWindowLength);
    for (std::size_t i = 0; i < kWindowLength; ++i) {
      const double t = (static_cast<double>(i) - static_cast<double>(kWindowBefore)) / kSampleRate;
      seg.frames[i] = template_motion(cls, t);
      seg.frames[i][kAz] += kGravity;
    }
  }
  return out;
}

NearestTemplateOracle::NearestTemplateOracle() : templates_(nominal_templates()) {}

double NearestTemplateOracle::distance(const ShotSegment& a, const ShotSegment& b) const {
  if (a.length() != b.length()) throw std::invalid_argument("oracle: segment lengths differ");
  double d = 0.0;
  for (std::size_t i = 0; i < a.length(); ++i) {
    for (std::size_t c = 0; c < kNumChannels; ++c) {
      const double z = (a.frames[i][c] - b.frames[i][c]) / channel_amplitude(c);
      d += z * z;
    }
  }
  return std::sqrt(d);
}

ShotClass NearestTemplateOracle::classify(const ShotSegment& raw) const {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    const double d = distance(raw, templates_[k]);
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return class_from_index(static_cast<int>(best));
}

void SessionScript::validate() const {
  if (!(length_s > 0.0)) throw std::invalid_argument("session script: length must be > 0");
  for (std::size_t i = 0; i < shots.size(); ++i) {
    const double t = shots[i].impact_time;
    if (t < 1.0 || t > length_s - 1.0) {
      throw std::invalid_argument("session script: impact at " + std::to_string(t) +
                                  " s is closer than 1 s to an end");
    }
    if (i > 0 && t - shots[i - 1].impact_time < 1.5) {
      throw std::invalid_argument("session script: shots at " +
                                  std::to_string(shots[i - 1].impact_time) + " and " +
                                  std::to_string(t) + " s overlap");
    }
  }
}

SessionScript random_script(double length_s, std::uint64_t seed, double min_gap_s, double max_gap_s) {
  if (!(min_gap_s >= 1.5) || max_gap_s < min_gap_s) {
    throw std::invalid_argument("random_script: need 1.5 <= min_gap <= max_gap");
  }
  std::mt19937_64 rng(seed);
  SessionScript s;
  s.length_s = length_s;
  for (double t = 1.0 + uniform(rng, 0.5, 2.0); t <= length_s - 1.0;
       t += uniform(rng, min_gap_s, max_gap_s)) {
    const auto cls = class_from_index(static_cast<int>(rng() % kNumClasses));
    s.shots.push_back({t, cls});
  }
  return s;
}

GeneratedSession gen_session(const SessionScript& script, const SubjectProfile& profile,
                             std::uint64_t seed, const SessionOptions& opts) {
  script.validate();
  profile.validate();
  if (!(opts.rate > 0.0)) throw std::invalid_argument("gen_session: rate must be > 0");
  const auto n = static_cast<std::size_t>(std::floor(script.length_s * opts.rate));
  const auto before = static_cast<std::size_t>(std::lround(kMotionBefore * opts.rate));
  const auto after = static_cast<std::size_t>(std::lround(kMotionAfter * opts.rate));

  std::mt19937_64 rng(seed);
  const Background bg(rng);
  GeneratedSession out;
  auto& seq = out.sequence;
  seq.rate = opts.rate;
  seq.arm = opts.arm;
  seq.subject = right_handed(profile.meta);
  seq.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& s = seq.samples[i];
    s.t = static_cast<double>(i) / opts.rate;
    const auto noise = noise_sample(profile, rng);
    for (std::size_t c = 0; c < kNumChannels; ++c) s.channel(c) = bg.at(c, s.t) + noise[c];
  }
  out.labels.labels.assign(n, 0);

  for (std::size_t k = 0; k < script.shots.size(); ++k) {
    const auto& shot = script.shots[k];
    std::mt19937_64 shot_rng(mix(seed, k + 1));
    const auto perf = perform(shot.cls, profile, shot_rng);
    const auto impact = static_cast<std::size_t>(std::lround(shot.impact_time * opts.rate));
    const double t0 = static_cast<double>(impact) / opts.rate;
    const std::size_t lo = impact >= before ? impact - before : 0;
    const std::size_t hi = std::min(n, impact + after);
    for (std::size_t i = lo; i < hi; ++i) {
      auto& s = seq.samples[i];
      const double t = s.t - t0;
      for (std::size_t c = 0; c < kNumChannels; ++c) s.channel(c) += perf.at(c, t);
      if (opts.arm == Arm::dominant && t >= 0.0) s.accel[0] += opts.impact_spike * std::exp(-t / 0.01);
      out.labels.labels[i] = 1;
    }
    out.shots.push_back({impact, shot.cls});
    ShotEvent e;
    e.window_start = lo;
    e.window_end = hi;
    e.center_frame = (lo + hi) / 2;
    e.confidence = 1.0;
    out.events.push_back(e);
  }
  if (profile.meta.handedness == Handedness::left) seq = mirror_handedness(seq);
  return out;
}

Recording gen_feeding_recording(ShotClass cls, std::size_t count, const SubjectProfile& profile,
                                std::uint64_t seed) {
  constexpr double kSpacing = 2.0;
  SessionScript script;
  script.length_s = kSpacing * static_cast<double>(count + 1);
  for (std::size_t i = 0; i < count; ++i) script.shots.push_back({kSpacing * static_cast<double>(i + 1), cls});
  auto session = gen_session(script, profile, seed);
  Recording rec;
  rec.name = profile.meta.id + "_" + std::string(class_name(cls));
  rec.kind = RecordingKind::feeding;
  rec.sequence = std::move(session.sequence);
  rec.shots = std::move(session.shots);
  return rec;
}

Dataset gen_cohort(const CohortConfig& cfg, std::uint64_t seed) {
  if (cfg.subjects == 0) throw std::invalid_argument("gen_cohort: need at least one subject");
  if (cfg.detection_subjects > cfg.subjects) {
    throw std::invalid_argument("gen_cohort: more detection subjects than subjects");
  }
  std::mt19937_64 rng(mix(seed, 0xc0ull));
  const std::size_t n = cfg.subjects;
  auto balanced = [&](std::size_t ones) {
    std::vector<bool> v(n, false);
    std::fill(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(ones), true);
    std::shuffle(v.begin(), v.end(), rng);
    return v;
  };
  const auto female = balanced(n / 2);
  const auto one_hand = balanced(n / 2);
  const auto left = balanced(n / 5);

  Dataset ds;
  std::vector<SubjectProfile> profiles;
  for (std::size_t i = 0; i < n; ++i) {
    SubjectMeta m;
    char id[16];
    std::snprintf(id, sizeof id, "S%02zu", i + 1);
    m.id = id;
    m.gender = female[i] ? "female" : "male";
    m.backhand = one_hand[i] ? Backhand::one_hand : Backhand::two_hand;
    m.handedness = left[i] ? Handedness::left : Handedness::right;
    m.experience_years = std::round(uniform(rng, 0.5, 12.0) * 2.0) / 2.0;
    ds.subjects.push_back(m);
    profiles.push_back(random_profile(m, mix(seed, 1000 + i)));
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (auto cls : kAllClasses) {
      const auto k = static_cast<std::uint64_t>(class_index(cls));
      ds.recordings.push_back(
          gen_feeding_recording(cls, cfg.shots_per_class, profiles[i], mix(seed, 2000 + i * 16 + k)));
    }
  }
  for (std::size_t i = 0; i < cfg.detection_subjects; ++i) {
    for (std::size_t s = 0; s < cfg.sessions_per_subject; ++s) {
      const auto script = random_script(cfg.session_length_s, mix(seed, 5000 + i * 16 + s));
      auto session = gen_session(script, profiles[i], mix(seed, 7000 + i * 16 + s));
      Recording rec;
      rec.name = profiles[i].meta.id + "_rally" + std::to_string(s + 1);
      rec.kind = RecordingKind::rally;
      rec.sequence = std::move(session.sequence);
      rec.frame_labels = std::move(session.labels);
      rec.shots = std::move(session.shots);
      ds.recordings.push_back(std::move(rec));
    }
  }
  ds.validate();
  return ds;
}

}  // namespace shottrack::synth
