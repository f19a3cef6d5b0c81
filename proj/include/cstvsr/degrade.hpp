#pragma once

#include <torch/torch.h>

#include <vector>

#include "cstvsr/frame_io.hpp"
#include "cstvsr/spatial_upsampling.hpp"

namespace cstvsr {

// Antialiased bicubic downsampling of [B, 3, H, W] (or [3, H, W]) to
// floor(H / S_H) x floor(W / S_W); output pixel x covers source
// [x * S, (x + 1) * S). Factor 1 passes the input through unchanged.
torch::Tensor bicubic_downsample(const torch::Tensor& frames, double scale_h, double scale_w);

// Bicubic resampling with the same pixel mapping as bilinear_resample,
// clamped to [0, 1]. Used for the per-frame bicubic baseline.
torch::Tensor bicubic_resample(const torch::Tensor& frames, int64_t out_h, int64_t out_w,
                               double scale_h, double scale_w);

// Top-left (h, w) crop of the last two dimensions.
torch::Tensor crop_top_left(const torch::Tensor& frames, int64_t h, int64_t w);

// Indices of the frames kept as low-resolution inputs: 0, R, 2R, ... (the
// 1st, (R+1)-th, ... frames).
std::vector<int64_t> kept_indices(int64_t n, int rate);

// Temporal subsampling by scale.rate followed by bicubic downsampling.
FrameSequence degrade(const FrameSequence& hr, const ScaleSpec& scale);

// A degraded clip with its high-resolution targets in output order
// (R * (M - 1) + 1 frames for M kept inputs), each cropped to
// (ceil(h * S_H), ceil(w * S_W)).
struct DegradedClip {
  FrameSequence lr;
  std::vector<torch::Tensor> targets;
  std::vector<bool> existing;  // per target: true at input timestamps
};

DegradedClip degrade_clip(const FrameSequence& hr, const ScaleSpec& scale);

// Per-frame bicubic baseline in the same output order as run_inference.
// Interpolated timestamps use bicubic of the linear mix of the neighbouring
// inputs.
std::vector<torch::Tensor> bicubic_baseline(const FrameSequence& lr, const ScaleSpec& scale);

}  // namespace cstvsr
