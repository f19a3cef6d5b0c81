#pragma once

#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace cstvsr::testing {

struct GradCheckResult {
  double max_abs_error = 0.0;
  double max_reference = 0.0;
  double relative_error = 0.0;  // inf-norm of (analytic - numeric) over inf-norm of numeric
};

// Central-difference check of d(sum(f(inputs) * probe)) / d(inputs) for every
// input with requires_grad. Inputs must be float64.
inline GradCheckResult gradcheck(const std::function<torch::Tensor(const std::vector<torch::Tensor>&)>& f,
                                 std::vector<torch::Tensor> inputs, double h = 1e-6, uint64_t seed = 7) {
  for (auto& x : inputs) x = x.detach().clone().set_requires_grad(x.requires_grad());
  auto out = f(inputs);
  torch::manual_seed(seed);
  const auto probe = torch::randn(out.sizes(), out.options()).detach();
  auto objective = [&](const std::vector<torch::Tensor>& in) { return (f(in) * probe).sum(); };
  std::vector<torch::Tensor> diff_inputs;
  for (auto& x : inputs) {
    if (x.requires_grad()) diff_inputs.push_back(x);
  }
  const auto analytic = torch::autograd::grad({objective(inputs)}, diff_inputs, {}, false, false, true);

  GradCheckResult res;
  torch::NoGradGuard no_grad;
  size_t slot = 0;
  for (auto& x : inputs) {
    if (!x.requires_grad()) continue;
    auto ga = analytic[slot].defined() ? analytic[slot] : torch::zeros_like(x);
    ++slot;
    auto flat = x.view(-1);
    auto ga_flat = ga.reshape(-1);
    for (int64_t i = 0; i < flat.numel(); ++i) {
      const double orig = flat[i].item<double>();
      flat[i] = orig + h;
      const double up = objective(inputs).item<double>();
      flat[i] = orig - h;
      const double down = objective(inputs).item<double>();
      flat[i] = orig;
      const double numeric = (up - down) / (2 * h);
      res.max_abs_error = std::max(res.max_abs_error, std::abs(numeric - ga_flat[i].item<double>()));
      res.max_reference = std::max(res.max_reference, std::abs(numeric));
    }
  }
  res.relative_error = res.max_abs_error / std::max(res.max_reference, 1e-12);
  return res;
}

// Values bounded away from integers, so bilinear footprints stay fixed under
// a finite-difference step.
inline torch::Tensor fractional(std::vector<int64_t> sizes, double lo, double hi, uint64_t seed) {
  torch::manual_seed(seed);
  auto whole = torch::randint(static_cast<int64_t>(std::floor(lo)), static_cast<int64_t>(std::ceil(hi)), sizes,
                              torch::kFloat64);
  auto frac = torch::rand(sizes, torch::kFloat64) * 0.6 + 0.2;
  return whole + frac;
}

// Direct index permutation: out(c, r*y + dy, r*x + dx) = in(c*r*r + dy*r + dx, y, x).
inline torch::Tensor brute_pixel_shuffle(const torch::Tensor& in, int64_t r) {
  const int64_t b = in.size(0);
  const int64_t c = in.size(1) / (r * r);
  const int64_t h = in.size(2);
  const int64_t w = in.size(3);
  auto out = torch::empty({b, c, h * r, w * r}, in.options());
  auto src = in.accessor<double, 4>();
  auto dst = out.accessor<double, 4>();
  for (int64_t n = 0; n < b; ++n)
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
          for (int64_t dy = 0; dy < r; ++dy)
            for (int64_t dx = 0; dx < r; ++dx) dst[n][ch][r * y + dy][r * x + dx] = src[n][ch * r * r + dy * r + dx][y][x];
  return out;
}

// Luma of one RGB pixel, BT.601.
inline double luma(const torch::TensorAccessor<double, 3>& img, int64_t y, int64_t x) {
  return 0.299 * img[0][y][x] + 0.587 * img[1][y][x] + 0.114 * img[2][y][x];
}

// 3x3 census code of pixel (y, x) in raster neighbour order, replicate borders.
inline std::array<double, 8> brute_census(const torch::TensorAccessor<double, 3>& img, int64_t h, int64_t w,
                                          int64_t y, int64_t x) {
  std::array<double, 8> code{};
  int k = 0;
  const double centre = luma(img, y, x);
  for (int dy = -1; dy <= 1; ++dy) {
    for (int dx = -1; dx <= 1; ++dx) {
      if (dy == 0 && dx == 0) continue;
      const int64_t ny = std::clamp<int64_t>(y + dy, 0, h - 1);
      const int64_t nx = std::clamp<int64_t>(x + dx, 0, w - 1);
      code[k++] = centre >= luma(img, ny, nx) ? 1.0 : -1.0;
    }
  }
  return code;
}

struct BruteSelection {
  torch::Tensor source_id;  // [rows, cols] int64
  torch::Tensor pseudo;     // [3, H, W]
  torch::Tensor distances;  // [2, rows, cols]
};

// Per-patch loop over both candidates with explicit census-L2 distances.
inline BruteSelection brute_select_pseudo(const torch::Tensor& pred, const torch::Tensor& w0, const torch::Tensor& w1,
                                          int64_t p) {
  const int64_t h = pred.size(1);
  const int64_t w = pred.size(2);
  const int64_t rows = (h + p - 1) / p;
  const int64_t cols = (w + p - 1) / p;
  auto pa = pred.accessor<double, 3>();
  auto a0 = w0.accessor<double, 3>();
  auto a1 = w1.accessor<double, 3>();
  BruteSelection sel;
  sel.source_id = torch::zeros({rows, cols}, torch::kInt64);
  sel.distances = torch::zeros({2, rows, cols}, torch::kFloat64);
  sel.pseudo = torch::empty_like(pred);
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t c = 0; c < cols; ++c) {
      double d[2] = {0.0, 0.0};
      for (int64_t y = r * p; y < std::min(h, (r + 1) * p); ++y) {
        for (int64_t x = c * p; x < std::min(w, (c + 1) * p); ++x) {
          const auto cp = brute_census(pa, h, w, y, x);
          const auto c0 = brute_census(a0, h, w, y, x);
          const auto c1 = brute_census(a1, h, w, y, x);
          for (int k = 0; k < 8; ++k) {
            d[0] += (c0[k] - cp[k]) * (c0[k] - cp[k]);
            d[1] += (c1[k] - cp[k]) * (c1[k] - cp[k]);
          }
        }
      }
      const int64_t win = d[1] < d[0] ? 1 : 0;
      sel.source_id[r][c] = win;
      sel.distances[0][r][c] = d[0];
      sel.distances[1][r][c] = d[1];
      const auto& src = win == 0 ? w0 : w1;
      const int64_t y0 = r * p;
      const int64_t x0 = c * p;
      const int64_t ph = std::min(p, h - y0);
      const int64_t pw = std::min(p, w - x0);
      sel.pseudo.narrow(1, y0, ph).narrow(2, x0, pw).copy_(src.narrow(1, y0, ph).narrow(2, x0, pw));
    }
  }
  return sel;
}

// Hand evaluation of the relative distance vector along one axis.
inline double hand_dis(int64_t sigma, double s) {
  const double lr = (static_cast<double>(sigma) + 0.5) / s - 0.5;
  return lr - std::floor((static_cast<double>(sigma) + 0.5) / s);
}

}  // namespace cstvsr::testing
