#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <vector>

namespace cstvsr {

// Ordered RGB frames [3, H, W] float32 in [0, 1] with uniform timestamps.
struct FrameSequence {
  std::vector<torch::Tensor> frames;
  std::vector<double> timestamps;
  std::string source_path;

  int64_t size() const { return static_cast<int64_t>(frames.size()); }
  int64_t height() const { return frames.empty() ? 0 : frames.front().size(1); }
  int64_t width() const { return frames.empty() ? 0 : frames.front().size(2); }

  // Throws unless frames are non-empty [3, H, W] of one size and timestamps increase strictly.
  void validate() const;

  // Frames stacked into [N, 3, H, W].
  torch::Tensor stacked() const;
};

// i / (n - 1) for n > 1, {0} for a single frame.
std::vector<double> uniform_timestamps(int64_t n);

FrameSequence make_sequence(std::vector<torch::Tensor> frames, std::string source = {});

// Directory of lexicographically ordered 8-bit images (png, jpg, bmp, ppm), or
// a raw float32 tensor file with a "<file>.json" sidecar {n, c, h, w}.
FrameSequence ingest(const std::filesystem::path& path);

std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

torch::Tensor read_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const torch::Tensor& image);

// frame_0000.png, frame_0001.png, ... inside dir (created if missing).
void write_sequence(const std::filesystem::path& dir, const FrameSequence& seq);
std::filesystem::path frame_filename(int64_t index);

// Little-endian float32, C order, with "<file>.json" holding the shape.
void write_raw_tensor(const std::filesystem::path& path, const torch::Tensor& tensor);
torch::Tensor read_raw_tensor(const std::filesystem::path& path);

}  // namespace cstvsr
