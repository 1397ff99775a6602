#include "shottrack/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <stdexcept>

namespace shottrack {

namespace {

using cd = std::complex<double>;

std::size_t smallest_factor(std::size_t n) {
  if (n % 4 == 0) return 4;
  for (std::size_t p = 2; p * p <= n; ++p) {
    if (n % p == 0) return p;
  }
  return n;
}

// out[k] = sum_j in[j * stride] * W^(j k) over a length-n transform, where
// roots holds W_N^j for the top-level size N and n divides N.
void fft_recursive(const cd* in, std::size_t stride, std::size_t n, cd* out,
                   const std::vector<cd>& roots) {
  if (n == 1) {
    out[0] = in[0];
    return;
  }
  const std::size_t big_n = roots.size();
  const std::size_t p = smallest_factor(n);
  const std::size_t m = n / p;
  for (std::size_t r = 0; r < p; ++r) {
    fft_recursive(in + r * stride, stride * p, m, out + r * m, roots);
  }
  const std::size_t root_step = big_n / n;
  std::vector<cd> t(p);
  std::vector<cd> y(p);
  for (std::size_t k = 0; k < m; ++k) {
    for (std::size_t r = 0; r < p; ++r) {
      t[r] = out[r * m + k] * roots[(r * k * root_step) % big_n];
    }
    for (std::size_t q = 0; q < p; ++q) {
      cd acc = 0.0;
      for (std::size_t r = 0; r < p; ++r) {
        acc += t[r] * roots[((r * q) % p) * m * root_step];
      }
      y[q] = acc;
    }
    for (std::size_t q = 0; q < p; ++q) out[k + q * m] = y[q];
  }
}

void transform(std::span<cd> x) {
  const std::size_t n = x.size();
  if (n <= 1) return;
  std::vector<cd> roots(n);
  for (std::size_t j = 0; j < n; ++j) {
    const double angle = -2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(n);
    roots[j] = {std::cos(angle), std::sin(angle)};
  }
  std::vector<cd> in(x.begin(), x.end());
  fft_recursive(in.data(), 1, n, x.data(), roots);
}

}  // namespace

void BandSpec::validate(double rate) const {
  if (!(low_cut > 0.0 && low_cut < high_cut && high_cut < rate / 2.0)) {
    throw std::invalid_argument("band spec requires 0 < low_cut < high_cut < rate/2");
  }
}

void fft(std::span<std::complex<double>> x) { transform(x); }

void ifft(std::span<std::complex<double>> x) {
  for (auto& v : x) v = std::conj(v);
  transform(x);
  const double inv = 1.0 / static_cast<double>(x.size());
  for (auto& v : x) v = std::conj(v) * inv;
}

Band band_of_bin(std::size_t k, std::size_t n, double rate, const BandSpec& spec) {
  const std::size_t folded = std::min(k, n - k);
  const double f = static_cast<double>(folded) * rate / static_cast<double>(n);
  if (f <= spec.low_cut) return Band::low;
  if (f <= spec.high_cut) return Band::mid;
  return Band::high;
}

SignalBlock to_block(const ShotSegment& seg) {
  SignalBlock b{kNumChannels, seg.length(), std::vector<double>(kNumChannels * seg.length())};
  for (std::size_t i = 0; i < seg.length(); ++i) {
    for (std::size_t c = 0; c < kNumChannels; ++c) b.at(c, i) = seg.frames[i][c];
  }
  return b;
}

BandTriple band_decompose(const SignalBlock& block, double rate, const BandSpec& spec) {
  spec.validate(rate);
  for (double v : block.data) {
    if (!std::isfinite(v)) throw std::invalid_argument("band_decompose: non-finite input");
  }
  const std::size_t n = block.length;
  BandTriple out;
  for (auto* b : {&out.low, &out.mid, &out.high}) {
    *b = SignalBlock{block.channels, n, std::vector<double>(block.channels * n)};
  }
  if (n == 0) return out;

  std::vector<Band> bin_band(n);
  for (std::size_t k = 0; k < n; ++k) bin_band[k] = band_of_bin(k, n, rate, spec);

  std::vector<cd> spectrum(n);
  std::vector<cd> work(n);
  for (std::size_t c = 0; c < block.channels; ++c) {
    for (std::size_t i = 0; i < n; ++i) spectrum[i] = block.at(c, i);
    fft(spectrum);
    for (auto band : {Band::low, Band::mid, Band::high}) {
      for (std::size_t k = 0; k < n; ++k) work[k] = bin_band[k] == band ? spectrum[k] : cd{};
      ifft(work);
      SignalBlock& dst = band == Band::low ? out.low : band == Band::mid ? out.mid : out.high;
      for (std::size_t i = 0; i < n; ++i) dst.at(c, i) = work[i].real();
    }
  }
  return out;
}

BandTriple band_decompose(const ShotSegment& seg, double rate, const BandSpec& spec) {
  return band_decompose(to_block(seg), rate, spec);
}

PowerSeries accel_power(const ImuSequence& seq) {
  PowerSeries p;
  p.values.reserve(seq.size());
  for (const auto& s : seq.samples) {
    p.values.push_back(s.accel[0] * s.accel[0] + s.accel[1] * s.accel[1] +
                       s.accel[2] * s.accel[2]);
  }
  return p;
}

std::vector<std::size_t> detect_peaks_threshold(const PowerSeries& p, double threshold,
                                                std::size_t min_separation) {
  if (!(threshold > 0.0)) throw std::invalid_argument("threshold must be positive");
  if (min_separation < 1) throw std::invalid_argument("min_separation must be >= 1");
  const auto& v = p.values;
  const std::size_t n = v.size();

  // Local maximum: strictly above the left neighbour, not below the right one.
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(v[i] > threshold)) continue;
    const bool left_ok = i == 0 || v[i] > v[i - 1];
    const bool right_ok = i + 1 == n || v[i] >= v[i + 1];
    if (left_ok && right_ok) candidates.push_back(i);
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });

  std::set<std::size_t> kept;
  for (std::size_t c : candidates) {
    auto hi = kept.lower_bound(c);
    if (hi != kept.end() && *hi - c < min_separation) continue;
    if (hi != kept.begin() && c - *std::prev(hi) < min_separation) continue;
    kept.insert(c);
  }
  return {kept.begin(), kept.end()};
}

}  // namespace shottrack
