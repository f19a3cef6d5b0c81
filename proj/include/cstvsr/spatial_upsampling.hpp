#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>

#include "cstvsr/layers.hpp"

namespace cstvsr {

inline constexpr double kMinSpatialScale = 1.0;
inline constexpr double kMaxSpatialScale = 8.0;

// Temporal factor and (possibly anisotropic, fractional) spatial factors.
struct ScaleSpec {
  int rate = 1;
  double scale_h = 1.0;
  double scale_w = 1.0;

  // Throws std::invalid_argument outside rate >= 1, 1 <= S <= 8.
  void validate() const;
};

// ceil(n * s), tolerant to the representation error of decimal scales.
int64_t output_extent(int64_t n, double s);

// Depth-to-space: out(c, r*y + dy, r*x + dx) = in(c*r*r + dy*r + dx, y, x).
torch::Tensor pixel_shuffle(const torch::Tensor& feat, int64_t r);

// Inverse of pixel_shuffle.
torch::Tensor space_to_depth(const torch::Tensor& feat, int64_t r);

// Position of every output pixel relative to its source low-resolution cell.
struct OffsetMap {
  torch::Tensor dis;     // [2, H', W'] float64; channel 0 Dis_x, channel 1 Dis_y, in [-0.5, 0.5)
  torch::Tensor coords;  // [2, H', W'] int64; source column / row
};

// LR(s) = (s + 0.5) / S - 0.5 and Dis = LR(s) - floor((s + 0.5) / S) per axis.
OffsetMap relative_offsets(int64_t h_out, int64_t w_out, double scale_h, double scale_w);

// Bilinear resampling to (out_h, out_w) where output pixel (x, y) reads the
// source at ((x + 0.5) / scale_w - 0.5, (y + 0.5) / scale_h - 0.5), plus an
// optional per-pixel shift [1 or B, 2, out_h, out_w] in source pixels. Border
// replication outside the source.
torch::Tensor bilinear_resample(const torch::Tensor& src, int64_t out_h, int64_t out_w,
                                double scale_h, double scale_w,
                                const torch::Tensor& shift = torch::Tensor());

// Per-pixel MLP (Dis_x, Dis_y, S_H, S_W) -> (dx, dy) in low-resolution pixels,
// bounded by tanh to +-1. The output layer starts at zero.
class ScaleMlpImpl : public torch::nn::Module {
 public:
  explicit ScaleMlpImpl(int64_t hidden = 32);
  torch::Tensor forward(const OffsetMap& offsets, double scale_h, double scale_w);

 private:
  torch::nn::Conv2d fc1_{nullptr};
  torch::nn::Conv2d fc2_{nullptr};
  torch::nn::Conv2d out_{nullptr};
};
TORCH_MODULE(ScaleMlp);

// Residual block whose input is modulated channel-wise by 2*sigmoid(mlp(S_H, S_W)).
// The modulation equals 1 at initialisation and whenever conditioning is off.
class ScaleAwareBlockImpl : public torch::nn::Module {
 public:
  explicit ScaleAwareBlockImpl(int64_t channels);
  torch::Tensor forward(const torch::Tensor& x, double scale_h, double scale_w);
  torch::Tensor modulation(double scale_h, double scale_w);

  void set_conditioning(bool enabled) { conditioning_ = enabled; }
  bool conditioning() const { return conditioning_; }
  ResidualBlock& body() { return body_; }

 private:
  torch::nn::Linear mod1_{nullptr};
  torch::nn::Linear mod2_{nullptr};
  ResidualBlock body_{nullptr};
  bool conditioning_ = true;
};
TORCH_MODULE(ScaleAwareBlock);

// Cascaded depth-to-space upsampler. Branches l = 1, 2, 3 project the
// features to C * 4^l channels, shuffle by 2^l, resample to the exact target
// size with factor S / 2^l (shifted by the scale MLP output) and are fused
// into an RGB residual on top of the bilinearly upsampled base frame.
class UpsamplerImpl : public torch::nn::Module {
 public:
  static constexpr int kBranches = 3;

  explicit UpsamplerImpl(int64_t channels = 32);

  // feat [B, C, h, w], base [B, 3, h, w] -> [B, 3, ceil(h*S_H), ceil(w*S_W)] in [0, 1].
  torch::Tensor forward(const torch::Tensor& feat, const ScaleSpec& scale,
                        const torch::Tensor& base);

  // Scale MLP output on the target grid, zero when conditioning is off.
  torch::Tensor offset_delta(int64_t h_out, int64_t w_out, const ScaleSpec& scale);

  void set_conditioning(bool enabled) { conditioning_ = enabled; }

  ScaleMlp& scale_mlp() { return mlp_; }

 private:
  int64_t channels_;
  std::array<torch::nn::Conv2d, kBranches> proj_{nullptr, nullptr, nullptr};
  ScaleMlp mlp_{nullptr};
  torch::nn::Conv2d fuse1_{nullptr};
  torch::nn::Conv2d fuse2_{nullptr};
  bool conditioning_ = true;
};
TORCH_MODULE(Upsampler);

}  // namespace cstvsr
