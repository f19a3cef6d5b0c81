#pragma once

#include <torch/torch.h>

namespace cstvsr {

inline constexpr double kLeakySlope = 0.1;

inline torch::Tensor lrelu(const torch::Tensor& x) {
  return torch::leaky_relu(x, kLeakySlope);
}

torch::nn::Conv2d conv(int64_t in, int64_t out, int64_t kernel = 3, int64_t stride = 1);

void zero_init(torch::nn::Conv2d& layer);

// Centre tap of channel i -> output channel i, zero bias.
void identity_init(torch::nn::Conv2d& layer);

// x + conv(lrelu(conv(x))), the second conv scaled down at initialisation.
class ResidualBlockImpl : public torch::nn::Module {
 public:
  explicit ResidualBlockImpl(int64_t channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d conv1_{nullptr};
  torch::nn::Conv2d conv2_{nullptr};
};
TORCH_MODULE(ResidualBlock);

// Copies every parameter and buffer of src into dst. Both modules must have
// identical structure.
void copy_parameters(const torch::nn::Module& src, torch::nn::Module& dst);

}  // namespace cstvsr
