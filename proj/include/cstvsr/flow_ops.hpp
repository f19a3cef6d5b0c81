#pragma once

#include <torch/torch.h>

#include <utility>

namespace cstvsr {

// Per-pixel displacement in pixels, shape [B, 2, H, W]. Channel 0 is the
// horizontal component, channel 1 the vertical one.
//
// Convention used everywhere in this library: a flow V_{a->b} maps a pixel at
// position x in the frame at time a to x + V_{a->b}(x) in the frame at time b.
// Consequently backward_warp(I_b, V_{a->b}) reconstructs I_a, and
// forward_splat(I_a, V_{a->b}) moves I_a towards time b.
struct FlowField {
  torch::Tensor data;
  double src_time = 0.0;
  double dst_time = 1.0;
};

enum class SplatKind { kSummation, kAverage, kSoftmax };

struct SplatMode {
  SplatKind kind = SplatKind::kAverage;
  // [B, 1, H, W]; only read by kSoftmax. Contributions are weighted by exp(Z).
  torch::Tensor importance;

  static SplatMode summation() { return {SplatKind::kSummation, {}}; }
  static SplatMode average() { return {SplatKind::kAverage, {}}; }
  static SplatMode softmax(torch::Tensor z) { return {SplatKind::kSoftmax, std::move(z)}; }
};

struct SplatResult {
  torch::Tensor output;  // [B, C, H, W]
  torch::Tensor mask;    // [B, 1, H, W]; 1 where the pixel received splat mass, 0 for holes
};

// Accumulated bilinear weight at or below this value marks a hole.
inline constexpr double kHoleEpsilon = 1e-6;

// Bilinear sample of feat at (x + u, y + v). Sample positions outside the
// image are clamped onto the border (replication). Differentiable in both
// arguments.
torch::Tensor backward_warp(const torch::Tensor& feat, const torch::Tensor& flow);

// Scatters every source pixel onto the four destination neighbours of
// x + flow(x) with bilinear weights. Mass landing outside the image is
// discarded. Differentiable in feat, flow and (softmax) importance.
SplatResult forward_splat(const torch::Tensor& feat, const torch::Tensor& flow,
                          const SplatMode& mode);

// Approximates V_{t->0} and V_{t->1} from the two inter-frame flows.
// V_{t->0} is the average-mode splat of -t*V01 along t*V01, with holes filled
// from t*V10; V_{t->1} is built symmetrically. Not differentiable (flows are
// treated as given data).
std::pair<FlowField, FlowField> reverse_flow_to_t(const FlowField& v01, const FlowField& v10,
                                                  double t);

// Mean flow over non-overlapping patch x patch blocks. Inputs whose size is
// not a multiple of the patch are padded by replication first, so the output
// has ceil(H / patch) x ceil(W / patch) cells.
torch::Tensor avg_pool_flow(const torch::Tensor& flow, int patch = 4);

// Resizes a flow field to (h, w) bilinearly and rescales its components by
// the size ratio so that displacements stay in target pixel units.
torch::Tensor resize_flow(const torch::Tensor& flow, int64_t h, int64_t w);

// Largest offset magnitude the deformable sampler accepts: ceil(max(H, W) / 4).
int64_t offset_clamp_bound(int64_t h, int64_t w);

// Modulated deformable sampling in column form.
//   offsets: [B, 2*K*K, H, W], tap k owns channels (2k: dx, 2k+1: dy)
//   mask:    [B, K*K, H, W], modulation already squashed to (0, 1)
// Returns [B, C*K*K, H, W] where channel c*K*K + k holds
//   mask_k * feat_c(x + kx - K/2 + dx_k, y + ky - K/2 + dy_k).
// Offsets beyond offset_clamp_bound are clamped.
torch::Tensor deformable_columns(const torch::Tensor& feat, const torch::Tensor& offsets,
                                 const torch::Tensor& mask, int kernel);

// Deformable convolution: columns from deformable_columns(feat, offsets,
// sigmoid(mask_logits)) contracted with weight [C_out, C, K, K] plus bias.
torch::Tensor deformable_sample(const torch::Tensor& feat, const torch::Tensor& offsets,
                                const torch::Tensor& mask_logits, const torch::Tensor& weight,
                                const torch::Tensor& bias, int kernel);

// Modulated deformable 3x3 (by default) convolution with its own kernel weights.
class DeformConv2dImpl : public torch::nn::Module {
 public:
  DeformConv2dImpl(int64_t in_channels, int64_t out_channels, int kernel = 3);

  torch::Tensor forward(const torch::Tensor& feat, const torch::Tensor& offsets,
                        const torch::Tensor& mask_logits);

  // Centre tap of channel i -> output channel i, zero bias. With zero offsets
  // and saturated mask logits the layer is then an exact identity.
  void set_identity();

  int kernel() const { return kernel_; }

  torch::Tensor weight;
  torch::Tensor bias;

 private:
  int kernel_;
};
TORCH_MODULE(DeformConv2d);

}  // namespace cstvsr
