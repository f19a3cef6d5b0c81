#pragma once

#include <torch/torch.h>

#include <utility>

#include "cstvsr/flow_ops.hpp"

namespace cstvsr {

inline constexpr int kDefaultPatch = 4;

// Per-patch winner of the pseudo-label selection.
struct PatchGrid {
  int patch = kDefaultPatch;
  int64_t rows = 0;  // ceil(H / patch)
  int64_t cols = 0;  // ceil(W / patch)
  torch::Tensor source_id;  // [B, rows, cols] int64, 0 = warped I0, 1 = warped I1
};

struct PseudoLabel {
  torch::Tensor image;      // [B, 3, H, W]
  PatchGrid grid;
  torch::Tensor distances;  // [B, 2, rows, cols] squared census distance of each candidate
  int64_t candidate_evaluations = 0;
};

// 3x3 census of a luminance batch [B, 1, H, W] -> [B, 8, H, W]. Channel k
// compares the centre with neighbour k in raster order (skipping the centre):
// +1 where centre >= neighbour, -1 otherwise. Borders replicate.
torch::Tensor census_transform(const torch::Tensor& luma);

// Rigid patch warping: each patch x patch block of the output samples the
// source with that block's single flow vector (backward warping).
// Flows are [B, 2, ceil(H / patch), ceil(W / patch)].
std::pair<torch::Tensor, torch::Tensor> warp_patches(const torch::Tensor& i0, const torch::Tensor& i1,
                                                     const torch::Tensor& vt0_avg,
                                                     const torch::Tensor& vt1_avg,
                                                     int patch = kDefaultPatch);

// 0 where dist0 <= dist1 (ties prefer source 0), 1 otherwise.
torch::Tensor select_sources(const torch::Tensor& dist0, const torch::Tensor& dist1);

// Picks, per patch, the warped candidate whose census descriptors are closest
// (L2) to the prediction's and assembles the RGB pseudo label from the
// winners. The prediction is detached.
PseudoLabel select_pseudo(const torch::Tensor& pred, const torch::Tensor& i0_warped,
                          const torch::Tensor& i1_warped, int patch = kDefaultPatch);

// Full pipeline from two reference frames, the prediction at t and the
// already-estimated inter-frame flows (at the frames' resolution).
PseudoLabel make_pseudo_label(const torch::Tensor& i0, const torch::Tensor& i1,
                              const torch::Tensor& pred, const FlowField& v01, const FlowField& v10,
                              double t, int patch = kDefaultPatch);

}  // namespace cstvsr
