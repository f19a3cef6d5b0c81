#pragma once

#include <torch/torch.h>

#include <vector>

#include "cstvsr/flow_ops.hpp"
#include "cstvsr/layers.hpp"
#include "cstvsr/spatial_upsampling.hpp"

namespace cstvsr {

struct FeatureMap {
  torch::Tensor data;  // [B, C, H, W]
  int64_t frame_index = 0;
  double time = 0.0;
};

enum class Direction { kForward, kBackward };

struct PropagationState {
  FeatureMap hidden;
  Direction direction = Direction::kForward;
};

struct PropagationOptions {
  int64_t channels = 32;
  int extract_blocks = 5;
  int fusion_blocks = 2;
  int kernel = 3;
};

// Shallow head plus scale-aware residual blocks, applied per frame.
class FeatureExtractorImpl : public torch::nn::Module {
 public:
  explicit FeatureExtractorImpl(const PropagationOptions& options = {});

  // frames [B, 3, H, W] -> [B, C, H, W]
  torch::Tensor forward(const torch::Tensor& frames, double scale_h, double scale_w);

  void set_scale_conditioning(bool enabled);

 private:
  torch::nn::Conv2d head_{nullptr};
  std::vector<ScaleAwareBlock> blocks_;
};
TORCH_MODULE(FeatureExtractor);

// Frame features (one FeatureMap per frame, batched over clips).
std::vector<FeatureMap> extract_features(FeatureExtractor& extractor,
                                         const std::vector<torch::Tensor>& frames,
                                         const std::vector<double>& times, double scale_h,
                                         double scale_w);

// One recurrent direction: flow pre-alignment of the previous hidden state,
// deformable refinement driven by [warped hidden, current feature, flow], and
// fusion with the current feature.
class PropagationBranchImpl : public torch::nn::Module {
 public:
  explicit PropagationBranchImpl(const PropagationOptions& options = {});

  // prev may be undefined (first frame of the pass). flow_to_prev maps the
  // current frame onto the frame that produced prev.
  torch::Tensor forward(const torch::Tensor& prev, const torch::Tensor& feat,
                        const torch::Tensor& flow_to_prev);

 private:
  int64_t channels_;
  torch::nn::Conv2d offset1_{nullptr};
  torch::nn::Conv2d offset2_{nullptr};
  torch::nn::Conv2d offset_out_{nullptr};
  DeformConv2d align_{nullptr};
  torch::nn::Conv2d fuse_{nullptr};
  std::vector<ResidualBlock> blocks_;
  int kernel_;
};
TORCH_MODULE(PropagationBranch);

// Bidirectional recurrent propagation with a skip connection from the
// extracted features.
class PropagatorImpl : public torch::nn::Module {
 public:
  explicit PropagatorImpl(const PropagationOptions& options = {});

  // flows_fwd[i] = V_{i->i+1}, flows_bwd[i] = V_{i+1->i}; both of length N-1.
  std::vector<FeatureMap> forward(const std::vector<FeatureMap>& features,
                                  const std::vector<FlowField>& flows_fwd,
                                  const std::vector<FlowField>& flows_bwd);

  // Single recurrence steps, for streaming callers that manage their own storage.
  torch::Tensor step(Direction direction, const torch::Tensor& prev, const torch::Tensor& feat,
                     const torch::Tensor& flow_to_prev);
  torch::Tensor fuse(const torch::Tensor& backward_hidden, const torch::Tensor& forward_hidden,
                     const torch::Tensor& skip);

  // Test mode: both directions use the backward branch's weights and the
  // fusion treats the two hidden states symmetrically.
  void tie_branches();

 private:
  int64_t channels_;
  PropagationBranch backward_{nullptr};
  PropagationBranch forward_{nullptr};
  torch::nn::Conv2d fusion_{nullptr};
};
TORCH_MODULE(Propagator);

}  // namespace cstvsr
