#include "cstvsr/temporal_modulation.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace cstvsr {
namespace {

namespace F = torch::nn::functional;

torch::Tensor resize_bilinear(const torch::Tensor& x, int64_t h, int64_t w) {
  if (x.size(2) == h && x.size(3) == w) return x;
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<int64_t>{h, w})
                               .mode(torch::kBilinear)
                               .align_corners(false));
}

void check_time(double t, const char* op) {
  if (!(t > 0.0 && t < 1.0)) {
    throw std::invalid_argument(std::string(op) + ": t must lie in (0, 1), got " + std::to_string(t));
  }
}

}  // namespace

std::vector<double> intermediate_times(int rate) {
  std::vector<double> times;
  for (int j = 1; j < rate; ++j) times.push_back(static_cast<double>(j) / rate);
  return times;
}

torch::Tensor flow_at_level(const torch::Tensor& flow, int level, int64_t h, int64_t w) {
  if (level == 0 && flow.size(2) == h && flow.size(3) == w) return flow;
  return resize_bilinear(flow, h, w) * std::ldexp(1.0, -level);
}

TemporalModulatorImpl::TemporalModulatorImpl(const TemporalOptions& options) : options_(options) {
  const int64_t c = options.channels;
  const int64_t taps = static_cast<int64_t>(options.kernel) * options.kernel;
  for (int l = 0; l < kPyramidLevels; ++l) {
    pyramid_[l] = register_module("pyramid" + std::to_string(l), conv(c, c, 3, l == 0 ? 1 : 2));
    for (int side = 0; side < 2; ++side) {
      const std::string prefix = "level" + std::to_string(l) + "_side" + std::to_string(side) + "_";
      const int64_t prior_channels = l + 1 < kPyramidLevels ? 2 * taps : 0;
      auto& head = heads_[l][side];
      head.conv1 = register_module(prefix + "conv1", conv(2 * c + prior_channels, c));
      head.conv2 = register_module(prefix + "conv2", conv(c, c));
      head.out = register_module(prefix + "out", conv(c, 3 * taps));
      zero_init(head.out);
      head.align = register_module(prefix + "align", DeformConv2d(c, c, options.kernel));
    }
  }
  blend_ = register_module("blend", conv(2 * c, c));
  beta_ = register_parameter("importance_scale", torch::ones({1}));
}

FeaturePyramid TemporalModulatorImpl::build_pyramid(const torch::Tensor& feat) {
  if (feat.dim() != 4 || feat.size(2) < 4 || feat.size(3) < 4) {
    throw std::invalid_argument("build_pyramid: features must be [B, C, H, W] with H, W >= 4");
  }
  FeaturePyramid pyramid;
  pyramid.levels[0] = lrelu(pyramid_[0](feat));
  for (int l = 1; l < kPyramidLevels; ++l) pyramid.levels[l] = lrelu(pyramid_[l](pyramid.levels[l - 1]));
  return pyramid;
}

torch::Tensor TemporalModulatorImpl::importance(const torch::Tensor& own, const torch::Tensor& other,
                                                const torch::Tensor& flow) {
  return -beta_ * (own - backward_warp(other, flow)).abs().mean(1, true);
}

WarpedLevel TemporalModulatorImpl::fwga_warp_level(const torch::Tensor& f0, const torch::Tensor& f1,
                                                   const torch::Tensor& v01,
                                                   const torch::Tensor& v10, double t) {
  check_time(t, "fwga_warp_level");
  WarpedLevel out;
  torch::Tensor warped0;
  torch::Tensor warped1;
  if (options_.forward_warping) {
    auto s0 = forward_splat(f0, t * v01, SplatMode::softmax(importance(f0, f1, v01)));
    auto s1 = forward_splat(f1, (1 - t) * v10, SplatMode::softmax(importance(f1, f0, v10)));
    warped0 = t * s0.output;
    warped1 = (1 - t) * s1.output;
    out.m0 = s0.mask;
    out.m1 = s1.mask;
  } else {
    warped0 = t * f0;
    warped1 = (1 - t) * f1;
    out.m0 = torch::ones({f0.size(0), 1, f0.size(2), f0.size(3)}, f0.options());
    out.m1 = out.m0;
  }
  // Holes of one side are filled with the other side's warped values.
  out.f0t = warped0 * out.m0 + warped1 * (1 - out.m0);
  out.f1t = warped1 * out.m1 + warped0 * (1 - out.m1);
  return out;
}

torch::Tensor TemporalModulatorImpl::offset_prior(const torch::Tensor& coarse, int64_t h, int64_t w) {
  return resize_bilinear(coarse, h, w) * 2.0;
}

std::pair<torch::Tensor, torch::Tensor> TemporalModulatorImpl::predict(SideHead& head,
                                                                       const torch::Tensor& own,
                                                                       const torch::Tensor& other,
                                                                       const torch::Tensor& prior) {
  auto x = prior.defined() ? torch::cat({own, other, prior}, 1) : torch::cat({own, other}, 1);
  x = head.out(lrelu(head.conv2(lrelu(head.conv1(x)))));
  const int64_t taps = static_cast<int64_t>(options_.kernel) * options_.kernel;
  auto offsets = x.narrow(1, 0, 2 * taps);
  if (prior.defined()) offsets = offsets + prior;
  return {offsets, x.narrow(1, 2 * taps, taps)};
}

RefinedLevel TemporalModulatorImpl::refine_level(int level, const torch::Tensor& f0t,
                                                 const torch::Tensor& f1t,
                                                 const std::optional<OffsetField>& prev,
                                                 bool align) {
  if (level < 0 || level >= kPyramidLevels) throw std::invalid_argument("refine_level: bad level");
  const bool coarsest = level + 1 == kPyramidLevels;
  if (coarsest == prev.has_value()) {
    throw std::invalid_argument("refine_level: previous offsets are required at every level but the coarsest");
  }
  const int64_t h = f0t.size(2);
  const int64_t w = f0t.size(3);
  torch::Tensor prior0;
  torch::Tensor prior1;
  if (prev) {
    prior0 = offset_prior(prev->side0, h, w);
    prior1 = offset_prior(prev->side1, h, w);
  }
  auto& heads = heads_[level];
  auto [off0, mask0] = predict(heads[0], f0t, f1t, prior0);
  auto [off1, mask1] = predict(heads[1], f1t, f0t, prior1);
  RefinedLevel out;
  out.offsets = {off0, off1};
  if (!align) return out;
  if (options_.deformable) {
    out.aligned0 = heads[0].align(f0t, off0, mask0);
    out.aligned1 = heads[1].align(f1t, off1, mask1);
  } else {
    out.aligned0 = f0t;
    out.aligned1 = f1t;
  }
  return out;
}

torch::Tensor TemporalModulatorImpl::blend_weight(const torch::Tensor& aligned0,
                                                  const torch::Tensor& aligned1) {
  return torch::sigmoid(blend_(torch::cat({aligned0, aligned1}, 1)));
}

torch::Tensor TemporalModulatorImpl::blend(const torch::Tensor& aligned0, const torch::Tensor& aligned1) {
  auto weight = blend_weight(aligned0, aligned1);
  return weight * aligned0 + (1 - weight) * aligned1;
}

torch::Tensor TemporalModulatorImpl::forward(const torch::Tensor& f0, const torch::Tensor& f1,
                                             const torch::Tensor& v01, const torch::Tensor& v10,
                                             double t) {
  check_time(t, "interpolate_feature");
  ++calls_;
  if (f0.sizes() != f1.sizes()) throw std::invalid_argument("interpolate_feature: feature shapes differ");
  const auto p0 = build_pyramid(f0);
  const auto p1 = build_pyramid(f1);
  std::optional<OffsetField> prev;
  RefinedLevel refined;
  for (int l = kPyramidLevels - 1; l >= 0; --l) {
    const auto& a = p0.levels[l];
    const auto& b = p1.levels[l];
    const auto warped = fwga_warp_level(a, b, flow_at_level(v01, l, a.size(2), a.size(3)),
                                        flow_at_level(v10, l, a.size(2), a.size(3)), t);
    refined = refine_level(l, warped.f0t, warped.f1t, prev, l == 0);
    prev = refined.offsets;
  }
  return blend(refined.aligned0, refined.aligned1);
}

void TemporalModulatorImpl::tie_weights() {
  for (auto& level : heads_) {
    copy_parameters(*level[0].conv1, *level[1].conv1);
    copy_parameters(*level[0].conv2, *level[1].conv2);
    copy_parameters(*level[0].out, *level[1].out);
    copy_parameters(*level[0].align, *level[1].align);
  }
  torch::NoGradGuard no_grad;
  const int64_t c = options_.channels;
  auto& w = blend_->weight;
  auto a = w.narrow(1, 0, c);
  auto b = w.narrow(1, c, c);
  auto half = (a - b) / 2;
  a.copy_(half);
  b.copy_(-half);
  blend_->bias.zero_();
}

}  // namespace cstvsr
