#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include "shottrack/imu.hpp"

namespace shottrack {

// Frequency partition used by the band attention:
//   low  : |f| <= low_cut            (includes DC)
//   mid  : low_cut < |f| <= high_cut
//   high : |f| > high_cut            (includes Nyquist)
struct BandSpec {
  double low_cut = 4.0;
  double high_cut = 20.0;

  void validate(double rate) const;
  bool operator==(const BandSpec&) const = default;
};

enum class Band { low = 0, mid = 1, high = 2 };

// Channel-major signal block: data[c * length + i].
struct SignalBlock {
  std::size_t channels = 0;
  std::size_t length = 0;
  std::vector<double> data;

  double& at(std::size_t c, std::size_t i) { return data[c * length + i]; }
  double at(std::size_t c, std::size_t i) const { return data[c * length + i]; }
};

struct BandTriple {
  SignalBlock low;
  SignalBlock mid;
  SignalBlock high;
};

struct PowerSeries {
  std::vector<double> values;
};

// Mixed-radix DFT for any length (radix 2/3/4/5 butterflies, direct DFT for
// other prime factors). inverse() includes the 1/n normalisation.
void fft(std::span<std::complex<double>> x);
void ifft(std::span<std::complex<double>> x);

Band band_of_bin(std::size_t k, std::size_t n, double rate, const BandSpec& spec);

SignalBlock to_block(const ShotSegment& seg);
BandTriple band_decompose(const SignalBlock& block, double rate, const BandSpec& spec = {});
BandTriple band_decompose(const ShotSegment& seg, double rate, const BandSpec& spec = {});

PowerSeries accel_power(const ImuSequence& seq);

// Squared acceleration magnitude of a ~20 m/s^2 impact.
inline constexpr double kDefaultPeakThreshold = 400.0;

// Local maxima above threshold; among candidates closer than min_separation
// frames only the highest survives (earlier frame wins ties).
std::vector<std::size_t> detect_peaks_threshold(const PowerSeries& p, double threshold,
                                                std::size_t min_separation = 180);

}  // namespace shottrack
