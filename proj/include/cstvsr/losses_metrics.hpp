#pragma once

#include <torch/torch.h>

#include <limits>
#include <vector>

namespace cstvsr {

inline constexpr double kCharbonnierEps = 1e-3;
inline constexpr double kPseudoWeight = 0.1;

struct LossReport {
  torch::Tensor loss_exist;  // scalar, >= 0
  torch::Tensor loss_inter;  // scalar, >= 0 (zero when there are no interpolated frames)
  torch::Tensor loss_total;  // loss_exist + loss_inter
  double alpha = kPseudoWeight;
  double eps = kCharbonnierEps;
};

// mean(sqrt((pred - gt)^2 + eps^2))
torch::Tensor charbonnier(const torch::Tensor& pred, const torch::Tensor& gt,
                          double eps = kCharbonnierEps);

// mean|pred - gt| + alpha * mean|pred - pseudo|; pseudo is detached.
torch::Tensor inter_loss(const torch::Tensor& pred, const torch::Tensor& gt,
                         const torch::Tensor& pseudo, double alpha = kPseudoWeight);

struct InterpolatedTerm {
  torch::Tensor pred;
  torch::Tensor gt;
  torch::Tensor pseudo;  // may be undefined when the pseudo-label term is disabled
};

struct ExistingTerm {
  torch::Tensor pred;
  torch::Tensor gt;
};

// Charbonnier averaged over existing frames plus inter_loss averaged over
// interpolated frames.
LossReport total_loss(const std::vector<ExistingTerm>& existing,
                      const std::vector<InterpolatedTerm>& interpolated,
                      double alpha = kPseudoWeight, double eps = kCharbonnierEps);

// 10 * log10(1 / MSE) on [0, 1] images; +infinity for identical inputs.
double psnr(const torch::Tensor& pred, const torch::Tensor& gt);
double psnr_y(const torch::Tensor& pred, const torch::Tensor& gt);

// Windowed SSIM on luminance with an 11x11 Gaussian window (sigma 1.5),
// averaged over valid window positions. Images smaller than the window use
// the largest odd window that fits.
double ssim(const torch::Tensor& pred, const torch::Tensor& gt);

}  // namespace cstvsr
