#pragma once

#include <torch/torch.h>

#include <json.hpp>
#include <vector>

#include "cstvsr/feature_propagation.hpp"
#include "cstvsr/flow_ops.hpp"
#include "cstvsr/spatial_upsampling.hpp"
#include "cstvsr/temporal_modulation.hpp"

namespace cstvsr {

struct ModelConfig {
  int64_t channels = 32;
  int extract_blocks = 5;
  int fusion_blocks = 2;
  int kernel = 3;
  bool scale_conditioning = true;    // false for the fixed-scale model
  bool forward_warping = true;       // ablation switch for the forward-warping guidance
  bool deformable_alignment = true;  // ablation switch for deformable refinement in stage 2

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

// The only scale a model without scale conditioning accepts.
inline constexpr double kFixedModelScale = 4.0;

struct InterpolatedFrame {
  int64_t pair = 0;  // between input frames pair and pair + 1
  double t = 0.5;
  torch::Tensor image;  // [B, 3, H', W']
};

struct ClipPrediction {
  std::vector<torch::Tensor> existing;  // one [B, 3, H', W'] per input frame
  std::vector<InterpolatedFrame> interpolated;
};

// Three-stage network: feature propagation, temporal modulation, spatial upsampling.
class CstvsrNetImpl : public torch::nn::Module {
 public:
  explicit CstvsrNetImpl(const ModelConfig& config = {});

  // Whole-clip forward pass with autograd. frames: N tensors [B, 3, h, w];
  // flows_fwd[i] = V_{i->i+1}, flows_bwd[i] = V_{i+1->i} at (h, w).
  ClipPrediction forward(const std::vector<torch::Tensor>& frames,
                         const std::vector<FlowField>& flows_fwd,
                         const std::vector<FlowField>& flows_bwd, const ScaleSpec& scale);

  // Rejects scales the model cannot serve (fixed-scale models only serve x4).
  void check_scale(const ScaleSpec& scale) const;

  const ModelConfig& config() const { return config_; }

  FeatureExtractor extractor{nullptr};
  Propagator propagator{nullptr};
  TemporalModulator temporal{nullptr};
  Upsampler upsampler{nullptr};

 private:
  ModelConfig config_;
};
TORCH_MODULE(CstvsrNet);

// Low-resolution base image at t: both neighbours backward-warped with the
// reversed flows and mixed linearly in t.
torch::Tensor interpolation_base(const torch::Tensor& i0, const torch::Tensor& i1,
                                 const FlowField& v01, const FlowField& v10, double t);

}  // namespace cstvsr
