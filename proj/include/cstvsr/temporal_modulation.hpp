#pragma once

#include <torch/torch.h>

#include <array>
#include <optional>

#include "cstvsr/flow_ops.hpp"
#include "cstvsr/layers.hpp"

namespace cstvsr {

inline constexpr int kPyramidLevels = 3;

struct FeaturePyramid {
  // Level l has spatial size ceil(H / 2^l) x ceil(W / 2^l).
  std::array<torch::Tensor, kPyramidLevels> levels;
};

// Output of the forward-warping step at one level. f0t / f1t are the
// complementarily filled features, m0 / m1 the coverage masks of the raw
// splats (1 = received mass).
struct WarpedLevel {
  torch::Tensor f0t;
  torch::Tensor f1t;
  torch::Tensor m0;
  torch::Tensor m1;
};

// Deformable offsets per side, [B, 2*K*K, H_l, W_l] in level pixels.
struct OffsetField {
  torch::Tensor side0;
  torch::Tensor side1;
};

struct RefinedLevel {
  torch::Tensor aligned0;
  torch::Tensor aligned1;
  OffsetField offsets;
};

struct TemporalOptions {
  int64_t channels = 32;
  int kernel = 3;
  bool forward_warping = true;  // off: features are not moved before refinement
  bool deformable = true;       // off: refinement offsets are not applied
};

// Synthesises the feature at t in (0, 1) between two propagated features.
class TemporalModulatorImpl : public torch::nn::Module {
 public:
  explicit TemporalModulatorImpl(const TemporalOptions& options = {});

  // H, W >= 4. Level 0 is one conv of the input, levels 1 and 2 stride-2 convs.
  FeaturePyramid build_pyramid(const torch::Tensor& feat);

  // Flows must already be at the level's resolution and magnitude.
  WarpedLevel fwga_warp_level(const torch::Tensor& f0, const torch::Tensor& f1,
                              const torch::Tensor& v01, const torch::Tensor& v10, double t);

  // prev is empty only at the coarsest level. With align = false only the
  // offsets are computed (aligned0 / aligned1 stay undefined).
  RefinedLevel refine_level(int level, const torch::Tensor& f0t, const torch::Tensor& f1t,
                            const std::optional<OffsetField>& prev, bool align = true);

  // W * aligned0 + (1 - W) * aligned1 with W = sigmoid(conv([aligned0, aligned1])).
  torch::Tensor blend(const torch::Tensor& aligned0, const torch::Tensor& aligned1);
  torch::Tensor blend_weight(const torch::Tensor& aligned0, const torch::Tensor& aligned1);

  torch::Tensor forward(const torch::Tensor& f0, const torch::Tensor& f1, const torch::Tensor& v01,
                        const torch::Tensor& v10, double t);

  // Softmax splatting importance: -beta * mean_c |own - backward_warp(other, flow)|.
  torch::Tensor importance(const torch::Tensor& own, const torch::Tensor& other,
                           const torch::Tensor& flow);

  // Upsampled coarse offsets as used at the next finer level: bilinear x2 to
  // (h, w) and magnitudes doubled.
  static torch::Tensor offset_prior(const torch::Tensor& coarse, int64_t h, int64_t w);

  // Test mode: side 1 uses side 0's weights and the blend is antisymmetric,
  // making the module exactly symmetric under swapping its inputs at t = 0.5.
  void tie_weights();

  // Number of forward() invocations since construction or the last reset.
  int64_t calls() const { return calls_; }
  void reset_calls() { calls_ = 0; }

  const TemporalOptions& options() const { return options_; }
  torch::nn::Conv2d& pyramid_conv(int level) { return pyramid_[level]; }
  torch::nn::Conv2d& blend_conv() { return blend_; }
  torch::Tensor& importance_scale() { return beta_; }

 private:
  struct SideHead {
    torch::nn::Conv2d conv1{nullptr};
    torch::nn::Conv2d conv2{nullptr};
    torch::nn::Conv2d out{nullptr};
    DeformConv2d align{nullptr};
  };

  std::pair<torch::Tensor, torch::Tensor> predict(SideHead& head, const torch::Tensor& own,
                                                  const torch::Tensor& other,
                                                  const torch::Tensor& prior);

  TemporalOptions options_;
  std::array<torch::nn::Conv2d, kPyramidLevels> pyramid_{nullptr, nullptr, nullptr};
  std::array<std::array<SideHead, 2>, kPyramidLevels> heads_;
  torch::nn::Conv2d blend_{nullptr};
  torch::Tensor beta_;
  int64_t calls_ = 0;
};
TORCH_MODULE(TemporalModulator);

// Uniform intermediate timestamps j / rate, j = 1 .. rate - 1.
std::vector<double> intermediate_times(int rate);

// Flow brought to a pyramid level: resized to (h, w), magnitudes scaled by 2^-level.
torch::Tensor flow_at_level(const torch::Tensor& flow, int level, int64_t h, int64_t w);

}  // namespace cstvsr
