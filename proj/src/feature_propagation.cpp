#include "cstvsr/feature_propagation.hpp"

#include <stdexcept>
#include <string>

namespace cstvsr {

FeatureExtractorImpl::FeatureExtractorImpl(const PropagationOptions& options)
    : head_(register_module("head", conv(3, options.channels))) {
  for (int i = 0; i < options.extract_blocks; ++i) {
    blocks_.push_back(register_module("block" + std::to_string(i), ScaleAwareBlock(options.channels)));
  }
}

torch::Tensor FeatureExtractorImpl::forward(const torch::Tensor& frames, double scale_h,
                                            double scale_w) {
  auto x = lrelu(head_(frames));
  for (auto& block : blocks_) x = block(x, scale_h, scale_w);
  return x;
}

void FeatureExtractorImpl::set_scale_conditioning(bool enabled) {
  for (auto& block : blocks_) block->set_conditioning(enabled);
}

std::vector<FeatureMap> extract_features(FeatureExtractor& extractor,
                                         const std::vector<torch::Tensor>& frames,
                                         const std::vector<double>& times, double scale_h,
                                         double scale_w) {
  if (frames.empty()) throw std::invalid_argument("extract_features: empty frame sequence");
  if (times.size() != frames.size()) throw std::invalid_argument("extract_features: one timestamp per frame");
  const int64_t batch = frames.front().size(0);
  // All frames go through the extractor as one batch.
  auto features = extractor(torch::cat(frames, 0), scale_h, scale_w);
  auto parts = features.split(batch, 0);
  std::vector<FeatureMap> out;
  out.reserve(frames.size());
  for (size_t i = 0; i < frames.size(); ++i) {
    out.push_back({parts[i], static_cast<int64_t>(i), times[i]});
  }
  return out;
}

PropagationBranchImpl::PropagationBranchImpl(const PropagationOptions& options)
    : channels_(options.channels), kernel_(options.kernel) {
  const int64_t c = options.channels;
  const int64_t taps = static_cast<int64_t>(options.kernel) * options.kernel;
  offset1_ = register_module("offset1", conv(2 * c + 2, c));
  offset2_ = register_module("offset2", conv(c, c));
  offset_out_ = register_module("offset_out", conv(c, 3 * taps));
  zero_init(offset_out_);
  align_ = register_module("align", DeformConv2d(c, c, options.kernel));
  fuse_ = register_module("fuse", conv(2 * c, c));
  for (int i = 0; i < options.fusion_blocks; ++i) {
    blocks_.push_back(register_module("block" + std::to_string(i), ResidualBlock(c)));
  }
}

torch::Tensor PropagationBranchImpl::forward(const torch::Tensor& prev, const torch::Tensor& feat,
                                             const torch::Tensor& flow_to_prev) {
  torch::Tensor aligned;
  if (prev.defined()) {
    auto warped = backward_warp(prev, flow_to_prev);
    auto head = lrelu(offset1_(torch::cat({warped, feat, flow_to_prev.to(feat.scalar_type())}, 1)));
    head = offset_out_(lrelu(offset2_(head)));
    const int64_t taps = static_cast<int64_t>(kernel_) * kernel_;
    auto offsets = head.narrow(1, 0, 2 * taps);
    auto mask_logits = head.narrow(1, 2 * taps, taps);
    aligned = align_(warped, offsets, mask_logits);
  } else {
    aligned = torch::zeros_like(feat);
  }
  auto h = lrelu(fuse_(torch::cat({aligned, feat}, 1)));
  for (auto& block : blocks_) h = block(h);
  return h;
}

PropagatorImpl::PropagatorImpl(const PropagationOptions& options)
    : channels_(options.channels),
      backward_(register_module("backward", PropagationBranch(options))),
      forward_(register_module("forward", PropagationBranch(options))),
      fusion_(register_module("fusion", conv(3 * options.channels, options.channels, 1))) {}

torch::Tensor PropagatorImpl::step(Direction direction, const torch::Tensor& prev,
                                   const torch::Tensor& feat, const torch::Tensor& flow_to_prev) {
  auto& branch = direction == Direction::kBackward ? backward_ : forward_;
  return branch(prev, feat, flow_to_prev);
}

torch::Tensor PropagatorImpl::fuse(const torch::Tensor& backward_hidden,
                                   const torch::Tensor& forward_hidden, const torch::Tensor& skip) {
  return fusion_(torch::cat({backward_hidden, forward_hidden, skip}, 1));
}

std::vector<FeatureMap> PropagatorImpl::forward(const std::vector<FeatureMap>& features,
                                                const std::vector<FlowField>& flows_fwd,
                                                const std::vector<FlowField>& flows_bwd) {
  const size_t n = features.size();
  if (n == 0) throw std::invalid_argument("propagate: empty feature list");
  if (flows_fwd.size() != n - 1 || flows_bwd.size() != n - 1) {
    throw std::invalid_argument("propagate: expected " + std::to_string(n - 1) +
                                " flows per direction, got " + std::to_string(flows_fwd.size()) +
                                " and " + std::to_string(flows_bwd.size()));
  }
  std::vector<torch::Tensor> backward_hidden(n);
  torch::Tensor h;
  for (size_t k = n; k-- > 0;) {
    h = step(Direction::kBackward, h, features[k].data, k + 1 < n ? flows_fwd[k].data : torch::Tensor());
    backward_hidden[k] = h;
  }
  std::vector<FeatureMap> out;
  out.reserve(n);
  h = torch::Tensor();
  for (size_t k = 0; k < n; ++k) {
    h = step(Direction::kForward, h, features[k].data, k > 0 ? flows_bwd[k - 1].data : torch::Tensor());
    out.push_back({fuse(backward_hidden[k], h, features[k].data), features[k].frame_index,
                   features[k].time});
  }
  return out;
}

void PropagatorImpl::tie_branches() {
  copy_parameters(*backward_, *forward_);
  torch::NoGradGuard no_grad;
  auto& w = fusion_->weight;
  auto a = w.narrow(1, 0, channels_);
  auto b = w.narrow(1, channels_, channels_);
  auto mean = (a + b) / 2;
  a.copy_(mean);
  b.copy_(mean);
}

}  // namespace cstvsr
