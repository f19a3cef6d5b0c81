#include "cstvsr/layers.hpp"

#include <stdexcept>

namespace cstvsr {

torch::nn::Conv2d conv(int64_t in, int64_t out, int64_t kernel, int64_t stride) {
  return torch::nn::Conv2d(
      torch::nn::Conv2dOptions(in, out, kernel).stride(stride).padding(kernel / 2));
}

void zero_init(torch::nn::Conv2d& layer) {
  torch::NoGradGuard no_grad;
  layer->weight.zero_();
  if (layer->bias.defined()) layer->bias.zero_();
}

void identity_init(torch::nn::Conv2d& layer) {
  torch::NoGradGuard no_grad;
  auto& w = layer->weight;
  if (w.size(0) != w.size(1)) throw std::invalid_argument("identity_init: channel counts differ");
  w.zero_();
  const int64_t ky = w.size(2) / 2;
  const int64_t kx = w.size(3) / 2;
  for (int64_t c = 0; c < w.size(0); ++c) w[c][c][ky][kx] = 1.0;
  if (layer->bias.defined()) layer->bias.zero_();
}

ResidualBlockImpl::ResidualBlockImpl(int64_t channels)
    : conv1_(register_module("conv1", conv(channels, channels))),
      conv2_(register_module("conv2", conv(channels, channels))) {
  torch::NoGradGuard no_grad;
  conv2_->weight.mul_(0.1);
  conv2_->bias.zero_();
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) {
  return x + conv2_(lrelu(conv1_(x)));
}

void copy_parameters(const torch::nn::Module& src, torch::nn::Module& dst) {
  torch::NoGradGuard no_grad;
  const auto from = src.named_parameters(true);
  auto to = dst.named_parameters(true);
  if (from.size() != to.size()) throw std::invalid_argument("copy_parameters: structure differs");
  for (const auto& item : from) {
    auto* target = to.find(item.key());
    if (target == nullptr || target->sizes() != item.value().sizes()) {
      throw std::invalid_argument("copy_parameters: no matching parameter for " + item.key());
    }
    target->copy_(item.value());
  }
}

}  // namespace cstvsr
