#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <vector>

#include "cstvsr/frame_io.hpp"

namespace cstvsr {

struct SyntheticOptions {
  int64_t height = 64;
  int64_t width = 64;
  int frames = 7;
  int rectangles = 3;
  double max_speed = 1.5;       // pixels per frame, per axis
  double background_speed = 0.75;
};

// Clip of a drifting sinusoidal grating overlaid with textured rectangles in
// constant motion, rendered with exact area coverage. flows[i] is the
// ground-truth V_{i->i+1} [2, H, W] of the topmost layer at each pixel.
struct SyntheticClip {
  FrameSequence sequence;
  std::vector<torch::Tensor> flows;
};

SyntheticClip make_synthetic_clip(const SyntheticOptions& options, uint64_t seed);

// root/clip_XXXX/frame_XXXX.png plus flow_XXXX.f32 (with sidecars) per pair.
// Clip i uses seed + i.
void write_synthetic_dataset(const std::filesystem::path& root, int clips,
                             const SyntheticOptions& options, uint64_t seed);

// Sorted clip directories below root (each holding at least one image).
std::vector<std::filesystem::path> list_clips(const std::filesystem::path& root);

}  // namespace cstvsr
