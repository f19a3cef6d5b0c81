#pragma once

#include <torch/torch.h>

#include <atomic>
#include <cstdint>
#include <memory>

#include "cstvsr/flow_ops.hpp"

namespace cstvsr {

struct FlowPair {
  FlowField forward;   // V_{a->b}
  FlowField backward;  // V_{b->a}
};

// Motion estimator interface. Images are RGB [B, 3, H, W] (or [3, H, W]) in
// [0, 1]. Implementations must be deterministic for fixed inputs.
class FlowEstimator {
 public:
  virtual ~FlowEstimator() = default;

  // V_{a->b}: backward_warp(frame_b, result) approximates frame_a.
  virtual FlowField estimate(const torch::Tensor& frame_a, const torch::Tensor& frame_b) const = 0;

  // Both directions for one adjacent pair. Counts as a single estimation in
  // pair_calls(); the pipeline relies on this to verify flow reuse.
  FlowPair estimate_pair(const torch::Tensor& frame_a, const torch::Tensor& frame_b) const;

  int64_t pair_calls() const { return pair_calls_.load(); }
  void reset_counter() { pair_calls_ = 0; }

 private:
  mutable std::atomic<int64_t> pair_calls_{0};
};

struct PyramidFlowOptions {
  int levels = 3;
  int iterations = 5;     // refinement steps per level
  int window = 5;         // side of the box window accumulating the normal equations
  double damping = 1e-2;  // Tikhonov term; textureless regions get a zero update
  double max_step = 1.0;  // per-iteration update clamp, pixels
  int smoothing = 3;      // box filter side applied to the flow after every step; 1 disables
};

// Coarse-to-fine iterative Lucas-Kanade on luminance.
class PyramidFlowEstimator final : public FlowEstimator {
 public:
  explicit PyramidFlowEstimator(PyramidFlowOptions options = {}) : options_(options) {}

  FlowField estimate(const torch::Tensor& frame_a, const torch::Tensor& frame_b) const override;

  const PyramidFlowOptions& options() const { return options_; }

 private:
  PyramidFlowOptions options_;
};

std::shared_ptr<FlowEstimator> make_default_flow_estimator();

// ITU-R BT.601 luma of an RGB batch [B, 3, H, W] -> [B, 1, H, W].
torch::Tensor rgb_to_luma(const torch::Tensor& rgb);

}  // namespace cstvsr
