#include "cstvsr/inference.hpp"

#include <stdexcept>

namespace cstvsr {

int64_t output_frame_count(int64_t n, int rate) { return n < 1 ? 0 : rate * (n - 1) + 1; }

InferenceStats stream_inference(const FrameSequence& seq, const ScaleSpec& scale, CstvsrNet& net,
                                const FlowEstimator& estimator, const FrameSink& sink) {
  seq.validate();
  net->check_scale(scale);
  const int64_t n = seq.size();
  if (n < 2 && scale.rate > 1) throw std::invalid_argument("temporal upsampling needs at least two input frames");
  torch::NoGradGuard no_grad;
  net->eval();

  InferenceStats stats;
  const auto pair_calls0 = estimator.pair_calls();
  const auto temporal_calls0 = net->temporal->calls();

  std::vector<torch::Tensor> frames(n);
  for (int64_t k = 0; k < n; ++k) frames[k] = seq.frames[k].unsqueeze(0);
  std::vector<FlowField> fwd;
  std::vector<FlowField> bwd;
  for (int64_t k = 0; k + 1 < n; ++k) {
    auto pair = estimator.estimate_pair(frames[k], frames[k + 1]);
    fwd.push_back(std::move(pair.forward));
    bwd.push_back(std::move(pair.backward));
  }

  std::vector<torch::Tensor> skip(n);
  for (int64_t k = 0; k < n; ++k) skip[k] = net->extractor(frames[k], scale.scale_h, scale.scale_w);

  std::vector<torch::Tensor> backward_hidden(n);
  torch::Tensor h;
  for (int64_t k = n; k-- > 0;) {
    h = net->propagator->step(Direction::kBackward, h, skip[k], k + 1 < n ? fwd[k].data : torch::Tensor());
    backward_hidden[k] = h;
  }

  const auto ts = intermediate_times(scale.rate);
  int64_t index = 0;
  torch::Tensor fused_prev;
  h = torch::Tensor();
  for (int64_t k = 0; k < n; ++k) {
    h = net->propagator->step(Direction::kForward, h, skip[k], k > 0 ? bwd[k - 1].data : torch::Tensor());
    auto fused = net->propagator->fuse(backward_hidden[k], h, skip[k]);
    backward_hidden[k] = torch::Tensor();
    skip[k] = torch::Tensor();
    if (k > 0) {
      for (double t : ts) {
        auto feat = net->temporal(fused_prev, fused, fwd[k - 1].data, bwd[k - 1].data, t);
        auto base = interpolation_base(frames[k - 1], frames[k], fwd[k - 1], bwd[k - 1], t);
        auto image = net->upsampler(feat, scale, base).squeeze(0);
        sink({index++, static_cast<double>(k - 1) + t, false, image});
        ++stats.interpolated_frames;
      }
    }
    auto image = net->upsampler(fused, scale, frames[k]).squeeze(0);
    sink({index++, static_cast<double>(k), true, image});
    ++stats.existing_frames;
    fused_prev = fused;
  }

  stats.flow_pair_calls = estimator.pair_calls() - pair_calls0;
  stats.temporal_calls = net->temporal->calls() - temporal_calls0;
  return stats;
}

FrameSequence run_inference(const FrameSequence& seq, const ScaleSpec& scale, CstvsrNet& net,
                            const FlowEstimator& estimator, InferenceStats* stats) {
  FrameSequence out;
  out.source_path = seq.source_path;
  std::vector<double> times;
  const auto s = stream_inference(seq, scale, net, estimator, [&](const OutputFrame& f) {
    out.frames.push_back(f.image);
    times.push_back(f.time);
  });
  const double span = seq.size() > 1 ? static_cast<double>(seq.size() - 1) : 1.0;
  for (double t : times) out.timestamps.push_back(t / span);
  if (stats) *stats = s;
  return out;
}

}  // namespace cstvsr
