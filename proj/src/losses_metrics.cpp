#include "cstvsr/losses_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cstvsr/flow_estimation.hpp"

namespace cstvsr {
namespace {

namespace F = torch::nn::functional;

void check_same(const torch::Tensor& a, const torch::Tensor& b, const char* op) {
  if (!a.defined() || !b.defined() || a.sizes() != b.sizes()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
  }
}

torch::Tensor as_batch(const torch::Tensor& img) { return img.dim() == 3 ? img.unsqueeze(0) : img; }

torch::Tensor gaussian_window(int size, double sigma) {
  auto x = torch::arange(size, torch::kFloat64) - (size - 1) / 2.0;
  auto g = torch::exp(-(x * x) / (2 * sigma * sigma));
  g = g / g.sum();
  return torch::outer(g, g).view({1, 1, size, size});
}

}  // namespace

torch::Tensor charbonnier(const torch::Tensor& pred, const torch::Tensor& gt, double eps) {
  check_same(pred, gt, "charbonnier");
  if (!(eps > 0.0)) throw std::invalid_argument("charbonnier: eps must be positive");
  const auto diff = pred - gt;
  return torch::sqrt(diff * diff + eps * eps).mean();
}

torch::Tensor inter_loss(const torch::Tensor& pred, const torch::Tensor& gt,
                         const torch::Tensor& pseudo, double alpha) {
  check_same(pred, gt, "inter_loss");
  auto loss = (pred - gt).abs().mean();
  if (alpha != 0.0 && pseudo.defined()) {
    check_same(pred, pseudo, "inter_loss");
    loss = loss + alpha * (pred - pseudo.detach()).abs().mean();
  }
  return loss;
}

LossReport total_loss(const std::vector<ExistingTerm>& existing,
                      const std::vector<InterpolatedTerm>& interpolated, double alpha, double eps) {
  if (existing.empty()) throw std::invalid_argument("total_loss: at least one existing frame is required");
  LossReport report;
  report.alpha = alpha;
  report.eps = eps;
  auto exist = charbonnier(existing.front().pred, existing.front().gt, eps);
  for (size_t i = 1; i < existing.size(); ++i) exist = exist + charbonnier(existing[i].pred, existing[i].gt, eps);
  report.loss_exist = exist / static_cast<double>(existing.size());
  if (interpolated.empty()) {
    report.loss_inter = torch::zeros({}, report.loss_exist.options());
  } else {
    torch::Tensor inter;
    for (const auto& term : interpolated) {
      auto l = inter_loss(term.pred, term.gt, term.pseudo, alpha);
      inter = inter.defined() ? inter + l : l;
    }
    report.loss_inter = inter / static_cast<double>(interpolated.size());
  }
  report.loss_total = report.loss_exist + report.loss_inter;
  return report;
}

double psnr(const torch::Tensor& pred, const torch::Tensor& gt) {
  check_same(pred, gt, "psnr");
  const double mse = (pred.to(torch::kFloat64) - gt.to(torch::kFloat64)).pow(2).mean().item<double>();
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

double psnr_y(const torch::Tensor& pred, const torch::Tensor& gt) {
  check_same(pred, gt, "psnr_y");
  return psnr(rgb_to_luma(as_batch(pred).to(torch::kFloat64)), rgb_to_luma(as_batch(gt).to(torch::kFloat64)));
}

double ssim(const torch::Tensor& pred, const torch::Tensor& gt) {
  check_same(pred, gt, "ssim");
  torch::NoGradGuard no_grad;
  auto x = as_batch(pred).to(torch::kFloat64);
  auto y = as_batch(gt).to(torch::kFloat64);
  if (x.size(1) == 3) {
    x = rgb_to_luma(x);
    y = rgb_to_luma(y);
  }
  int size = static_cast<int>(std::min<int64_t>({11, x.size(2), x.size(3)}));
  if (size % 2 == 0) --size;
  const auto window = gaussian_window(size, 1.5);
  auto filt = [&](const torch::Tensor& v) { return F::conv2d(v, window); };
  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  const auto mx = filt(x);
  const auto my = filt(y);
  const auto sxx = filt(x * x) - mx * mx;
  const auto syy = filt(y * y) - my * my;
  const auto sxy = filt(x * y) - mx * my;
  const auto map = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
  return map.mean().item<double>();
}

}  // namespace cstvsr
