#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <json.hpp>

#include "cstvsr/flow_estimation.hpp"
#include "cstvsr/model.hpp"

namespace cstvsr {

// Live CPU tensor bytes, tracked by a counting allocator installed in front of
// the default CPU allocator on first use.
class MemoryTracker {
 public:
  static void install();
  static int64_t current_bytes();
  static int64_t peak_bytes();
  // Restarts peak tracking from the current live byte count.
  static void reset_peak();
};

// Peak live tensor bytes above the level at scope entry.
class PeakMemoryScope {
 public:
  PeakMemoryScope();
  int64_t peak_above_baseline() const;
  int64_t baseline() const { return baseline_; }

 private:
  int64_t baseline_;
};

struct MemoryRecord {
  int64_t frames = 0;
  int64_t height = 0;
  int64_t width = 0;
  ScaleSpec scale;
  int64_t output_frames = 0;
  int64_t peak_bytes = 0;  // above the pre-inference baseline; excludes model weights and inputs
  double seconds = 0.0;

  nlohmann::json to_json() const;
};

// Streams inference over an n-frame synthetic clip of the given low-resolution
// size, discarding outputs as they arrive, and records the peak.
MemoryRecord profile_memory(CstvsrNet& net, const FlowEstimator& estimator, int64_t n, int64_t height,
                            int64_t width, const ScaleSpec& scale, uint64_t seed = 0);

}  // namespace cstvsr
