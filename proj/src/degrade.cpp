#include "cstvsr/degrade.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "cstvsr/temporal_modulation.hpp"

namespace cstvsr {
namespace {

namespace F = torch::nn::functional;

torch::Tensor as_batch(const torch::Tensor& t) { return t.dim() == 3 ? t.unsqueeze(0) : t; }

}  // namespace

torch::Tensor bicubic_downsample(const torch::Tensor& frames, double scale_h, double scale_w) {
  if (!(scale_h >= 1.0) || !(scale_w >= 1.0)) {
    throw std::invalid_argument("degrade: spatial factors must be >= 1, got (" + std::to_string(scale_h) + ", " +
                                std::to_string(scale_w) + ")");
  }
  if (scale_h == 1.0 && scale_w == 1.0) return frames;
  auto x = as_batch(frames);
  const auto h = static_cast<int64_t>(std::floor(static_cast<double>(x.size(2)) / scale_h + 1e-9));
  const auto w = static_cast<int64_t>(std::floor(static_cast<double>(x.size(3)) / scale_w + 1e-9));
  if (h < 1 || w < 1) throw std::invalid_argument("degrade: frame too small for the requested factor");
  auto out = F::interpolate(x, F::InterpolateFuncOptions()
                                   .scale_factor(std::vector<double>{1.0 / scale_h, 1.0 / scale_w})
                                   .recompute_scale_factor(false)
                                   .mode(torch::kBicubic)
                                   .align_corners(false)
                                   .antialias(true));
  // The interpolate size rule can disagree with the tolerant floor above by one pixel.
  out = out.narrow(2, 0, std::min(h, out.size(2))).narrow(3, 0, std::min(w, out.size(3)));
  if (out.size(2) != h || out.size(3) != w) {
    out = F::pad(out, F::PadFuncOptions({0, w - out.size(3), 0, h - out.size(2)}).mode(torch::kReplicate));
  }
  out = out.clamp(0.0, 1.0);
  return frames.dim() == 3 ? out.squeeze(0) : out;
}

torch::Tensor bicubic_resample(const torch::Tensor& frames, int64_t out_h, int64_t out_w,
                               double scale_h, double scale_w) {
  auto x = as_batch(frames);
  const int64_t in_h = x.size(2);
  const int64_t in_w = x.size(3);
  auto px = (torch::arange(out_w, torch::kFloat64) + 0.5) / scale_w - 0.5;
  auto py = (torch::arange(out_h, torch::kFloat64) + 0.5) / scale_h - 0.5;
  auto gx = ((2.0 * px + 1.0) / static_cast<double>(in_w) - 1.0).view({1, 1, out_w}).expand({1, out_h, out_w});
  auto gy = ((2.0 * py + 1.0) / static_cast<double>(in_h) - 1.0).view({1, out_h, 1}).expand({1, out_h, out_w});
  auto grid = torch::stack({gx, gy}, -1).to(x.dtype()).expand({x.size(0), out_h, out_w, 2});
  auto out = F::grid_sample(x, grid, F::GridSampleFuncOptions()
                                         .mode(torch::kBicubic)
                                         .padding_mode(torch::kBorder)
                                         .align_corners(false))
                 .clamp(0.0, 1.0);
  return frames.dim() == 3 ? out.squeeze(0) : out;
}

torch::Tensor crop_top_left(const torch::Tensor& frames, int64_t h, int64_t w) {
  const int64_t d = frames.dim();
  if (frames.size(d - 2) < h || frames.size(d - 1) < w) throw std::invalid_argument("crop larger than the frame");
  return frames.narrow(d - 2, 0, h).narrow(d - 1, 0, w);
}

std::vector<int64_t> kept_indices(int64_t n, int rate) {
  if (rate < 1) throw std::invalid_argument("degrade: temporal factor must be >= 1");
  std::vector<int64_t> idx;
  for (int64_t i = 0; i < n; i += rate) idx.push_back(i);
  return idx;
}

FrameSequence degrade(const FrameSequence& hr, const ScaleSpec& scale) {
  hr.validate();
  scale.validate();
  FrameSequence lr;
  lr.source_path = hr.source_path;
  for (const auto i : kept_indices(hr.size(), scale.rate)) {
    lr.frames.push_back(bicubic_downsample(hr.frames[i], scale.scale_h, scale.scale_w));
    lr.timestamps.push_back(hr.timestamps[i]);
  }
  return lr;
}

DegradedClip degrade_clip(const FrameSequence& hr, const ScaleSpec& scale) {
  DegradedClip clip;
  clip.lr = degrade(hr, scale);
  const int64_t h = output_extent(clip.lr.height(), scale.scale_h);
  const int64_t w = output_extent(clip.lr.width(), scale.scale_w);
  const int64_t last = (clip.lr.size() - 1) * scale.rate;
  for (int64_t i = 0; i <= last; ++i) {
    clip.targets.push_back(crop_top_left(hr.frames[i], h, w));
    clip.existing.push_back(i % scale.rate == 0);
  }
  return clip;
}

std::vector<torch::Tensor> bicubic_baseline(const FrameSequence& lr, const ScaleSpec& scale) {
  scale.validate();
  const int64_t h = output_extent(lr.height(), scale.scale_h);
  const int64_t w = output_extent(lr.width(), scale.scale_w);
  auto up = [&](const torch::Tensor& f) { return bicubic_resample(f, h, w, scale.scale_h, scale.scale_w); };
  std::vector<torch::Tensor> out;
  const auto ts = intermediate_times(scale.rate);
  for (int64_t k = 0; k < lr.size(); ++k) {
    if (k > 0) {
      for (double t : ts) out.push_back(up((1 - t) * lr.frames[k - 1] + t * lr.frames[k]));
    }
    out.push_back(up(lr.frames[k]));
  }
  return out;
}

}  // namespace cstvsr
