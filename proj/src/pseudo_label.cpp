#include "cstvsr/pseudo_label.hpp"

#include <stdexcept>
#include <string>

#include "cstvsr/flow_estimation.hpp"

namespace cstvsr {
namespace {

namespace F = torch::nn::functional;
using torch::indexing::Slice;

int64_t cells(int64_t n, int patch) { return (n + patch - 1) / patch; }

// Repeats each grid cell over its patch x patch block and crops to (h, w).
torch::Tensor expand_grid(const torch::Tensor& grid, int patch, int64_t h, int64_t w) {
  return grid.repeat_interleave(patch, 2)
      .repeat_interleave(patch, 3)
      .index({Slice(), Slice(), Slice(0, h), Slice(0, w)});
}

// Sum of a [B, C, H, W] map over each patch, zero-padded at ragged edges.
torch::Tensor patch_sum(const torch::Tensor& x, int patch) {
  const int64_t pad_h = (patch - x.size(2) % patch) % patch;
  const int64_t pad_w = (patch - x.size(3) % patch) % patch;
  auto padded = F::pad(x, F::PadFuncOptions({0, pad_w, 0, pad_h}));
  return F::avg_pool2d(padded, F::AvgPool2dFuncOptions(patch).stride(patch)) *
         static_cast<double>(patch * patch);
}

}  // namespace

torch::Tensor census_transform(const torch::Tensor& luma) {
  if (luma.dim() != 4 || luma.size(1) != 1) {
    throw std::invalid_argument("census_transform: expected luminance shaped [B, 1, H, W]");
  }
  const int64_t h = luma.size(2);
  const int64_t w = luma.size(3);
  auto padded = F::pad(luma, F::PadFuncOptions({1, 1, 1, 1}).mode(torch::kReplicate));
  std::vector<torch::Tensor> channels;
  channels.reserve(8);
  for (int dy = -1; dy <= 1; ++dy) {
    for (int dx = -1; dx <= 1; ++dx) {
      if (dx == 0 && dy == 0) continue;
      auto neighbour = padded.index({Slice(), Slice(), Slice(1 + dy, 1 + dy + h), Slice(1 + dx, 1 + dx + w)});
      channels.push_back(torch::where(luma >= neighbour, 1.0, -1.0).to(luma.scalar_type()));
    }
  }
  return torch::cat(channels, 1);
}

std::pair<torch::Tensor, torch::Tensor> warp_patches(const torch::Tensor& i0, const torch::Tensor& i1,
                                                     const torch::Tensor& vt0_avg,
                                                     const torch::Tensor& vt1_avg, int patch) {
  if (patch <= 0) throw std::invalid_argument("warp_patches: patch size must be positive");
  if (i0.sizes() != i1.sizes() || i0.dim() != 4) throw std::invalid_argument("warp_patches: frame shapes differ");
  const int64_t h = i0.size(2);
  const int64_t w = i0.size(3);
  for (const auto* flow : {&vt0_avg, &vt1_avg}) {
    if (flow->dim() != 4 || flow->size(1) != 2 || flow->size(2) != cells(h, patch) ||
        flow->size(3) != cells(w, patch)) {
      throw std::invalid_argument("warp_patches: patch flow must be [B, 2, " + std::to_string(cells(h, patch)) +
                                  ", " + std::to_string(cells(w, patch)) + "]");
    }
  }
  return {backward_warp(i0, expand_grid(vt0_avg, patch, h, w)),
          backward_warp(i1, expand_grid(vt1_avg, patch, h, w))};
}

torch::Tensor select_sources(const torch::Tensor& dist0, const torch::Tensor& dist1) {
  return (dist1 < dist0).to(torch::kInt64);
}

PseudoLabel select_pseudo(const torch::Tensor& pred, const torch::Tensor& i0_warped,
                          const torch::Tensor& i1_warped, int patch) {
  if (patch <= 0) throw std::invalid_argument("select_pseudo: patch size must be positive");
  if (pred.sizes() != i0_warped.sizes() || pred.sizes() != i1_warped.sizes() || pred.dim() != 4 ||
      pred.size(1) != 3) {
    throw std::invalid_argument("select_pseudo: expected three RGB batches of equal shape");
  }
  torch::NoGradGuard no_grad;
  const auto target = census_transform(rgb_to_luma(pred.detach()));
  auto distance = [&](const torch::Tensor& candidate) {
    const auto diff = census_transform(rgb_to_luma(candidate)) - target;
    return patch_sum((diff * diff).sum(1, true), patch);
  };
  const auto d0 = distance(i0_warped);
  const auto d1 = distance(i1_warped);

  PseudoLabel label;
  label.grid.patch = patch;
  label.grid.rows = d0.size(2);
  label.grid.cols = d0.size(3);
  const auto ids = select_sources(d0, d1);
  label.grid.source_id = ids.squeeze(1);
  label.distances = torch::cat({d0, d1}, 1);
  label.candidate_evaluations = 2 * pred.size(0) * label.grid.rows * label.grid.cols;
  const auto take_one = expand_grid(ids, patch, pred.size(2), pred.size(3)).to(torch::kBool);
  label.image = torch::where(take_one, i1_warped, i0_warped);
  return label;
}

PseudoLabel make_pseudo_label(const torch::Tensor& i0, const torch::Tensor& i1,
                              const torch::Tensor& pred, const FlowField& v01, const FlowField& v10,
                              double t, int patch) {
  torch::NoGradGuard no_grad;
  const auto [vt0, vt1] = reverse_flow_to_t(v01, v10, t);
  const auto [w0, w1] = warp_patches(i0, i1, avg_pool_flow(vt0.data, patch),
                                     avg_pool_flow(vt1.data, patch), patch);
  return select_pseudo(pred, w0, w1, patch);
}

}  // namespace cstvsr
