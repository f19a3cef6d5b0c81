#include "cstvsr/spatial_upsampling.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace cstvsr {
namespace {

namespace F = torch::nn::functional;

bool in_scale_range(double s) { return std::isfinite(s) && s >= kMinSpatialScale && s <= kMaxSpatialScale; }

// Source pixel coordinate read by each output index along one axis.
torch::Tensor axis_grid(int64_t out_n, double scale) {
  return (torch::arange(out_n, torch::kFloat64) + 0.5) / scale - 0.5;
}

}  // namespace

void ScaleSpec::validate() const {
  if (rate < 1) throw std::invalid_argument("temporal factor must be >= 1, got " + std::to_string(rate));
  if (!in_scale_range(scale_h) || !in_scale_range(scale_w)) {
    throw std::invalid_argument("spatial factors must lie in [1, 8], got (" + std::to_string(scale_h) +
                                ", " + std::to_string(scale_w) + ")");
  }
}

int64_t output_extent(int64_t n, double s) {
  return static_cast<int64_t>(std::ceil(static_cast<double>(n) * s - 1e-9));
}

torch::Tensor pixel_shuffle(const torch::Tensor& feat, int64_t r) {
  if (feat.dim() != 4) throw std::invalid_argument("pixel_shuffle: expected [B, C*r*r, H, W]");
  if (r < 1 || feat.size(1) % (r * r) != 0) {
    throw std::invalid_argument("pixel_shuffle: channel count " + std::to_string(feat.size(1)) +
                                " is not divisible by r^2 = " + std::to_string(r * r));
  }
  if (r == 1) return feat;
  const int64_t b = feat.size(0);
  const int64_t c = feat.size(1) / (r * r);
  const int64_t h = feat.size(2);
  const int64_t w = feat.size(3);
  return feat.reshape({b, c, r, r, h, w}).permute({0, 1, 4, 2, 5, 3}).reshape({b, c, h * r, w * r});
}

torch::Tensor space_to_depth(const torch::Tensor& feat, int64_t r) {
  if (feat.dim() != 4 || r < 1 || feat.size(2) % r != 0 || feat.size(3) % r != 0) {
    throw std::invalid_argument("space_to_depth: spatial size must be divisible by r");
  }
  if (r == 1) return feat;
  const int64_t b = feat.size(0);
  const int64_t c = feat.size(1);
  const int64_t h = feat.size(2) / r;
  const int64_t w = feat.size(3) / r;
  return feat.reshape({b, c, h, r, w, r}).permute({0, 1, 3, 5, 2, 4}).reshape({b, c * r * r, h, w});
}

OffsetMap relative_offsets(int64_t h_out, int64_t w_out, double scale_h, double scale_w) {
  if (!(scale_h > 0.0) || !(scale_w > 0.0)) {
    throw std::invalid_argument("relative_offsets: scales must be positive");
  }
  auto axis = [](int64_t n, double s) {
    auto q = (torch::arange(n, torch::kFloat64) + 0.5) / s;
    auto cell = torch::floor(q);
    return std::pair{q - 0.5 - cell, cell.to(torch::kInt64)};
  };
  auto [dis_x, col] = axis(w_out, scale_w);
  auto [dis_y, row] = axis(h_out, scale_h);
  OffsetMap map;
  map.dis = torch::stack({dis_x.view({1, w_out}).expand({h_out, w_out}),
                          dis_y.view({h_out, 1}).expand({h_out, w_out})})
                .contiguous();
  map.coords = torch::stack({col.view({1, w_out}).expand({h_out, w_out}),
                             row.view({h_out, 1}).expand({h_out, w_out})})
                   .contiguous();
  return map;
}

torch::Tensor bilinear_resample(const torch::Tensor& src, int64_t out_h, int64_t out_w,
                                double scale_h, double scale_w, const torch::Tensor& shift) {
  if (src.dim() != 4) throw std::invalid_argument("bilinear_resample: expected [B, C, H, W]");
  const int64_t in_h = src.size(2);
  const int64_t in_w = src.size(3);
  if (!shift.defined() && scale_h == 1.0 && scale_w == 1.0 && out_h == in_h && out_w == in_w) {
    return src;
  }
  auto xs = axis_grid(out_w, scale_w).to(src.options());
  auto ys = axis_grid(out_h, scale_h).to(src.options());
  auto px = xs.view({1, 1, out_w}).expand({1, out_h, out_w});
  auto py = ys.view({1, out_h, 1}).expand({1, out_h, out_w});
  if (shift.defined()) {
    px = px + shift.select(1, 0);
    py = py + shift.select(1, 1);
  }
  // align_corners=false: normalised = (2 * pixel + 1) / size - 1
  auto gx = (2.0 * px + 1.0) / static_cast<double>(in_w) - 1.0;
  auto gy = (2.0 * py + 1.0) / static_cast<double>(in_h) - 1.0;
  auto grid = torch::stack({gx, gy}, -1);
  if (grid.size(0) != src.size(0)) grid = grid.expand({src.size(0), out_h, out_w, 2});
  return F::grid_sample(src, grid, F::GridSampleFuncOptions()
                                       .mode(torch::kBilinear)
                                       .padding_mode(torch::kBorder)
                                       .align_corners(false));
}

ScaleMlpImpl::ScaleMlpImpl(int64_t hidden)
    : fc1_(register_module("fc1", conv(4, hidden, 1))),
      fc2_(register_module("fc2", conv(hidden, hidden, 1))),
      out_(register_module("out", conv(hidden, 2, 1))) {
  zero_init(out_);
}

torch::Tensor ScaleMlpImpl::forward(const OffsetMap& offsets, double scale_h, double scale_w) {
  const auto opts = fc1_->weight.options();
  const int64_t h = offsets.dis.size(1);
  const int64_t w = offsets.dis.size(2);
  auto dis = offsets.dis.to(opts).unsqueeze(0);
  auto scales = torch::tensor({scale_h, scale_w}, opts).view({1, 2, 1, 1}).expand({1, 2, h, w});
  auto x = torch::cat({dis, scales}, 1);
  x = torch::relu(fc1_(x));
  x = torch::relu(fc2_(x));
  return torch::tanh(out_(x));
}

ScaleAwareBlockImpl::ScaleAwareBlockImpl(int64_t channels)
    : mod1_(register_module("mod1", torch::nn::Linear(2, 32))),
      mod2_(register_module("mod2", torch::nn::Linear(32, channels))),
      body_(register_module("body", ResidualBlock(channels))) {
  torch::NoGradGuard no_grad;
  mod2_->weight.zero_();
  mod2_->bias.zero_();
}

torch::Tensor ScaleAwareBlockImpl::modulation(double scale_h, double scale_w) {
  auto s = torch::tensor({scale_h, scale_w}, mod1_->weight.options()).view({1, 2});
  return 2.0 * torch::sigmoid(mod2_(torch::relu(mod1_(s))));
}

torch::Tensor ScaleAwareBlockImpl::forward(const torch::Tensor& x, double scale_h, double scale_w) {
  if (!conditioning_) return body_(x);
  auto m = modulation(scale_h, scale_w).view({1, -1, 1, 1});
  return body_(x * m);
}

UpsamplerImpl::UpsamplerImpl(int64_t channels) : channels_(channels) {
  for (int l = 1; l <= kBranches; ++l) {
    const int64_t r = int64_t{1} << l;
    proj_[l - 1] = register_module("proj" + std::to_string(l), conv(channels, channels * r * r, 1));
  }
  mlp_ = register_module("scale_mlp", ScaleMlp());
  fuse1_ = register_module("fuse1", conv(kBranches * channels, channels, 1));
  fuse2_ = register_module("fuse2", conv(channels, 3));
  zero_init(fuse2_);
}

torch::Tensor UpsamplerImpl::offset_delta(int64_t h_out, int64_t w_out, const ScaleSpec& scale) {
  if (!conditioning_) return torch::Tensor();
  return mlp_(relative_offsets(h_out, w_out, scale.scale_h, scale.scale_w), scale.scale_h,
              scale.scale_w);
}

torch::Tensor UpsamplerImpl::forward(const torch::Tensor& feat, const ScaleSpec& scale,
                                     const torch::Tensor& base) {
  scale.validate();
  if (feat.dim() != 4 || feat.size(1) != channels_) {
    throw std::invalid_argument("upsample: expected features [B, " + std::to_string(channels_) + ", h, w]");
  }
  const int64_t h_out = output_extent(feat.size(2), scale.scale_h);
  const int64_t w_out = output_extent(feat.size(3), scale.scale_w);
  const auto delta = offset_delta(h_out, w_out, scale);

  std::vector<torch::Tensor> branches;
  branches.reserve(kBranches);
  for (int l = 1; l <= kBranches; ++l) {
    const int64_t r = int64_t{1} << l;
    auto shuffled = cstvsr::pixel_shuffle(proj_[l - 1](feat), r);
    const double sh = scale.scale_h / static_cast<double>(r);
    const double sw = scale.scale_w / static_cast<double>(r);
    if (!delta.defined() && shuffled.size(2) == h_out && shuffled.size(3) == w_out && sh == 1.0 &&
        sw == 1.0) {
      branches.push_back(shuffled);
    } else {
      branches.push_back(bilinear_resample(shuffled, h_out, w_out, sh, sw,
                                           delta.defined() ? delta * static_cast<double>(r) : delta));
    }
  }
  auto residual = fuse2_(lrelu(fuse1_(torch::cat(branches, 1))));
  branches.clear();
  auto upsampled = bilinear_resample(base, h_out, w_out, scale.scale_h, scale.scale_w);
  return (upsampled + residual).clamp(0.0, 1.0);
}

}  // namespace cstvsr
