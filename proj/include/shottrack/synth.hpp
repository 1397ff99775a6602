#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "shottrack/dataset.hpp"
#include "shottrack/detector.hpp"
#include "shottrack/imu.hpp"

namespace shottrack::synth {

inline constexpr double kGravity = 9.81;
inline constexpr double kAccelAmplitude = 6.0;   // m/s^2
inline constexpr double kGyroAmplitude = 120.0;  // degree/s
inline constexpr double kDefaultAccelSigma = 0.3;
inline constexpr double kDefaultGyroSigma = 6.0;
// Shot motion is confined to [-1.0, 0.5) s around the impact.
inline constexpr double kMotionBefore = 1.0;
inline constexpr double kMotionAfter = 0.5;

struct SubjectProfile {
  SubjectMeta meta;
  std::array<double, kNumClasses> class_scale{1, 1, 1, 1, 1, 1};    // 0.6 .. 1.4
  std::array<double, kNumClasses> class_offset_s{0, 0, 0, 0, 0, 0};  // -0.1 .. 0.1 s
  double accel_sigma = kDefaultAccelSigma;
  double gyro_sigma = kDefaultGyroSigma;
  double style_weight = 0.0;
  std::uint64_t style_seed = 0;
  // Per-shot variation.
  double amplitude_jitter = 0.0;  // relative, 1 sigma
  double timing_jitter_s = 0.0;   // uniform half-width

  void validate() const;
};

// Unit scales, no offsets or style, default noise.
SubjectProfile nominal_profile(const std::string& id, Handedness h = Handedness::right);
// Subject-specific scales, offsets and style drawn from `seed`.
SubjectProfile random_profile(const SubjectMeta& meta, std::uint64_t seed);

// Noiseless class motion of the nominal subject, right-handed, in raw units
// and without gravity. t is seconds relative to the impact.
std::array<double, kNumChannels> template_motion(ShotClass cls, double t);

// One labelled 180-frame segment: idle background plus the class motion as
// performed by `profile`, impact at frame 120. Left-handed profiles give the
// mirror image of the right-handed generation.
ShotSegment gen_shot(ShotClass cls, const SubjectProfile& profile, std::uint64_t seed);

// Noiseless nominal segment per class (gravity included).
std::array<ShotSegment, kNumClasses> nominal_templates();

// Assigns each segment the class of the closest nominal template, each
// channel group measured in units of its motion amplitude.
class NearestTemplateOracle {
 public:
  NearestTemplateOracle();
  ShotClass classify(const ShotSegment& raw) const;
  double distance(const ShotSegment& a, const ShotSegment& b) const;

 private:
  std::array<ShotSegment, kNumClasses> templates_;
};

struct ScriptedShot {
  double impact_time = 0.0;  // s
  ShotClass cls = ShotClass::Serve;
};

struct SessionScript {
  std::vector<ScriptedShot> shots;
  double length_s = 0.0;

  // Impacts >= 1 s from both ends, >= 1.5 s apart, strictly increasing.
  void validate() const;
};

// Shots 2.5-6 s apart with uniformly drawn classes.
SessionScript random_script(double length_s, std::uint64_t seed, double min_gap_s = 2.5,
                            double max_gap_s = 6.0);

struct SessionOptions {
  double rate = kSampleRate;
  Arm arm = Arm::passive;
  // Dominant-arm recordings carry a sharp acceleration spike at each impact.
  double impact_spike = 30.0;  // m/s^2
};

struct GeneratedSession {
  ImuSequence sequence;
  FrameLabels labels;             // 1 on [impact - 1 s, impact + 0.5 s)
  std::vector<ShotLabel> shots;   // impact frames and classes
  std::vector<ShotEvent> events;  // exact windows, confidence 1
};

GeneratedSession gen_session(const SessionScript& script, const SubjectProfile& profile,
                             std::uint64_t seed, const SessionOptions& opts = {});

// Ball-feeding recording: `count` shots of one class, impacts every 2 s
// starting at frame 240.
Recording gen_feeding_recording(ShotClass cls, std::size_t count, const SubjectProfile& profile,
                                std::uint64_t seed);

struct CohortConfig {
  std::size_t subjects = 20;
  std::size_t shots_per_class = 50;
  std::size_t detection_subjects = 10;
  std::size_t sessions_per_subject = 2;
  double session_length_s = 90.0;
};

// Subjects with balanced attributes, one feeding recording per class and
// subject, and rally sessions for the first `detection_subjects` subjects.
Dataset gen_cohort(const CohortConfig& cfg, std::uint64_t seed);

}  // namespace shottrack::synth
