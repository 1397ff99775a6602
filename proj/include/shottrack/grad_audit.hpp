#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace shottrack {

struct AuditEntry {
  std::string op;
  std::size_t cases = 0;
  std::size_t coordinates = 0;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed() const { return max_rel_error < tolerance; }
};

struct AuditReport {
  std::vector<AuditEntry> entries;
  double seconds = 0.0;
  bool passed() const;
  std::string to_text() const;
  nlohmann::json to_json() const;
};

struct AuditOptions {
  std::size_t cases_per_op = 20;
  double op_tolerance = 1e-4;
  double model_tolerance = 1e-3;
  // Central-difference steps. Whole-model checks use a smaller step so a
  // probe rarely straddles a ReLU kink.
  double op_step = 1e-4;
  double model_step = 1e-6;
  // Also probe sampled coordinates of the default-width models.
  bool full_width = true;
};

// Central-difference checks (double precision) of every layer's backward
// pass on random shapes, and of the complete classifier and detector losses.
AuditReport run_grad_audit(std::uint64_t seed, const AuditOptions& opts = {});

}  // namespace shottrack
