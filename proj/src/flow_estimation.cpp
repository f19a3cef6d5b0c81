#include "cstvsr/flow_estimation.hpp"

#include <algorithm>
#include <stdexcept>
#include <vector>

namespace cstvsr {
namespace {

namespace F = torch::nn::functional;

torch::Tensor as_batch(const torch::Tensor& img) {
  if (img.dim() == 3) return img.unsqueeze(0);
  if (img.dim() != 4) throw std::invalid_argument("flow estimation: expected [B, 3, H, W] images");
  return img;
}

torch::Tensor box_sum(const torch::Tensor& x, int window) {
  const int pad = window / 2;
  auto padded = F::pad(x, F::PadFuncOptions({pad, pad, pad, pad}).mode(torch::kReplicate));
  return F::avg_pool2d(padded, F::AvgPool2dFuncOptions(window).stride(1));
}

// Central differences with replicated borders.
std::pair<torch::Tensor, torch::Tensor> gradients(const torch::Tensor& img) {
  auto padded = F::pad(img, F::PadFuncOptions({1, 1, 1, 1}).mode(torch::kReplicate));
  const int64_t h = img.size(2);
  const int64_t w = img.size(3);
  using torch::indexing::Slice;
  auto gx = 0.5 * (padded.index({Slice(), Slice(), Slice(1, h + 1), Slice(2, w + 2)}) -
                   padded.index({Slice(), Slice(), Slice(1, h + 1), Slice(0, w)}));
  auto gy = 0.5 * (padded.index({Slice(), Slice(), Slice(2, h + 2), Slice(1, w + 1)}) -
                   padded.index({Slice(), Slice(), Slice(0, h), Slice(1, w + 1)}));
  return {gx, gy};
}

torch::Tensor downsample(const torch::Tensor& img) {
  const int64_t h = (img.size(2) + 1) / 2;
  const int64_t w = (img.size(3) + 1) / 2;
  return F::interpolate(img, F::InterpolateFuncOptions()
                                 .size(std::vector<int64_t>{h, w})
                                 .mode(torch::kBilinear)
                                 .align_corners(false)
                                 .antialias(true));
}

}  // namespace

FlowPair FlowEstimator::estimate_pair(const torch::Tensor& frame_a,
                                      const torch::Tensor& frame_b) const {
  ++pair_calls_;
  return {estimate(frame_a, frame_b), estimate(frame_b, frame_a)};
}

torch::Tensor rgb_to_luma(const torch::Tensor& rgb) {
  if (rgb.dim() != 4 || rgb.size(1) != 3) throw std::invalid_argument("rgb_to_luma: expected [B, 3, H, W]");
  auto weights = torch::tensor({0.299, 0.587, 0.114}, rgb.options()).view({1, 3, 1, 1});
  return (rgb * weights).sum(1, true);
}

FlowField PyramidFlowEstimator::estimate(const torch::Tensor& frame_a,
                                         const torch::Tensor& frame_b) const {
  auto a = as_batch(frame_a);
  auto b = as_batch(frame_b);
  if (a.sizes() != b.sizes()) throw std::invalid_argument("estimate_flow: frames differ in shape");
  torch::NoGradGuard no_grad;
  a = rgb_to_luma(a.to(torch::kFloat));
  b = rgb_to_luma(b.to(torch::kFloat));

  std::vector<std::pair<torch::Tensor, torch::Tensor>> pyramid{{a, b}};
  for (int level = 1; level < options_.levels; ++level) {
    const auto& [pa, pb] = pyramid.back();
    if (std::min(pa.size(2), pa.size(3)) < 4) break;
    pyramid.emplace_back(downsample(pa), downsample(pb));
  }

  torch::Tensor flow;
  for (auto it = pyramid.rbegin(); it != pyramid.rend(); ++it) {
    const auto& [la, lb] = *it;
    if (!flow.defined()) {
      flow = torch::zeros({la.size(0), 2, la.size(2), la.size(3)}, la.options());
    } else {
      flow = resize_flow(flow, la.size(2), la.size(3));
    }
    for (int iter = 0; iter < options_.iterations; ++iter) {
      auto warped = backward_warp(lb, flow);
      auto [gx, gy] = gradients(warped);
      auto dt = warped - la;
      auto sxx = box_sum(gx * gx, options_.window) + options_.damping;
      auto syy = box_sum(gy * gy, options_.window) + options_.damping;
      auto sxy = box_sum(gx * gy, options_.window);
      auto sxt = box_sum(gx * dt, options_.window);
      auto syt = box_sum(gy * dt, options_.window);
      auto det = sxx * syy - sxy * sxy;
      auto du = -(syy * sxt - sxy * syt) / det;
      auto dv = -(sxx * syt - sxy * sxt) / det;
      auto step = torch::cat({du, dv}, 1).clamp(-options_.max_step, options_.max_step);
      flow = flow + step;
      if (options_.smoothing > 1) flow = box_sum(flow, options_.smoothing);
    }
  }
  return FlowField{flow, 0.0, 1.0};
}

std::shared_ptr<FlowEstimator> make_default_flow_estimator() {
  return std::make_shared<PyramidFlowEstimator>();
}

}  // namespace cstvsr
