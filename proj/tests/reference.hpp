#pragma once

// Slow, literal implementations used as oracles by the unit and acceptance
// tests. They share no code with the library.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <vector>

namespace shottrack::reference {

// Scan every frame for local maxima above threshold, then repeatedly keep the
// highest remaining candidate (earliest on ties) and drop every candidate
// closer than min_separation to it.
inline std::vector<std::size_t> peaks(const std::vector<double>& v, double threshold,
                                      std::size_t min_separation) {
  const std::size_t n = v.size();
  std::vector<std::size_t> alive;
  for (std::size_t i = 0; i < n; ++i) {
    const bool above = v[i] > threshold;
    const bool left = i == 0 || v[i] > v[i - 1];
    const bool right = i + 1 == n || v[i] >= v[i + 1];
    if (above && left && right) alive.push_back(i);
  }
  std::vector<std::size_t> kept;
  while (!alive.empty()) {
    std::size_t best = alive[0];
    for (std::size_t c : alive)
      if (v[c] > v[best]) best = c;
    kept.push_back(best);
    std::vector<std::size_t> rest;
    for (std::size_t c : alive) {
      const std::size_t d = c > best ? c - best : best - c;
      if (d >= min_separation) rest.push_back(c);
    }
    alive = rest;
  }
  std::sort(kept.begin(), kept.end());
  return kept;
}

struct RefEvent {
  std::size_t center = 0;
  std::size_t start = 0;
  std::size_t end = 0;
  double confidence = 0.0;
};

// Runs of >= k ones give windows centred at floor((first + last) / 2). A
// merged window sits at the floored mean of all its member run centres and is
// shifted to lie inside [0, n). The first overlapping pair (by start) is
// merged until no two windows intersect.
inline std::vector<RefEvent> refine(const std::vector<std::uint8_t>& labels, const std::vector<double>& probs,
                                    std::size_t k, std::size_t len) {
  const std::size_t n = labels.size();
  if (n < len) return {};
  std::vector<std::vector<std::size_t>> members;
  std::size_t run = 0;
  for (std::size_t i = 0; i <= n; ++i) {
    if (i < n && labels[i] == 1) {
      ++run;
      continue;
    }
    if (run >= k) members.push_back({(i - run + (i - 1)) / 2});
    run = 0;
  }
  auto window = [&](const std::vector<std::size_t>& m) {
    const std::size_t mean = std::accumulate(m.begin(), m.end(), std::size_t{0}) / m.size();
    long long start = static_cast<long long>(mean) - static_cast<long long>(len / 2);
    start = std::max(0LL, std::min(start, static_cast<long long>(n - len)));
    return static_cast<std::size_t>(start);
  };
  for (;;) {
    bool merged = false;
    for (std::size_t a = 0; a < members.size() && !merged; ++a) {
      for (std::size_t b = a + 1; b < members.size() && !merged; ++b) {
        const std::size_t sa = window(members[a]), sb = window(members[b]);
        if (std::max(sa, sb) < std::min(sa, sb) + len) {
          members[a].insert(members[a].end(), members[b].begin(), members[b].end());
          members.erase(members.begin() + static_cast<std::ptrdiff_t>(b));
          merged = true;
        }
      }
    }
    if (!merged) break;
  }
  std::vector<RefEvent> out;
  for (const auto& m : members) {
    RefEvent e;
    e.start = window(m);
    e.end = e.start + len;
    e.center = e.start + len / 2;
    for (std::size_t f = e.start; f < e.end; ++f) e.confidence += probs[f];
    e.confidence /= static_cast<double>(len);
    out.push_back(e);
  }
  std::sort(out.begin(), out.end(), [](const RefEvent& x, const RefEvent& y) { return x.center < y.center; });
  return out;
}

}  // namespace shottrack::reference
