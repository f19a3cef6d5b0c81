#include "cstvsr/model.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace cstvsr {

nlohmann::json ModelConfig::to_json() const {
  return {{"channels", channels},
          {"extract_blocks", extract_blocks},
          {"fusion_blocks", fusion_blocks},
          {"kernel", kernel},
          {"scale_conditioning", scale_conditioning},
          {"forward_warping", forward_warping},
          {"deformable_alignment", deformable_alignment}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.channels = j.value("channels", c.channels);
  c.extract_blocks = j.value("extract_blocks", c.extract_blocks);
  c.fusion_blocks = j.value("fusion_blocks", c.fusion_blocks);
  c.kernel = j.value("kernel", c.kernel);
  c.scale_conditioning = j.value("scale_conditioning", c.scale_conditioning);
  c.forward_warping = j.value("forward_warping", c.forward_warping);
  c.deformable_alignment = j.value("deformable_alignment", c.deformable_alignment);
  return c;
}

CstvsrNetImpl::CstvsrNetImpl(const ModelConfig& config) : config_(config) {
  PropagationOptions prop;
  prop.channels = config.channels;
  prop.extract_blocks = config.extract_blocks;
  prop.fusion_blocks = config.fusion_blocks;
  prop.kernel = config.kernel;
  TemporalOptions temp;
  temp.channels = config.channels;
  temp.kernel = config.kernel;
  temp.forward_warping = config.forward_warping;
  temp.deformable = config.deformable_alignment;

  extractor = register_module("extractor", FeatureExtractor(prop));
  propagator = register_module("propagator", Propagator(prop));
  temporal = register_module("temporal", TemporalModulator(temp));
  upsampler = register_module("upsampler", Upsampler(config.channels));
  extractor->set_scale_conditioning(config.scale_conditioning);
  upsampler->set_conditioning(config.scale_conditioning);
}

void CstvsrNetImpl::check_scale(const ScaleSpec& scale) const {
  scale.validate();
  if (!config_.scale_conditioning &&
      (scale.scale_h != kFixedModelScale || scale.scale_w != kFixedModelScale)) {
    std::ostringstream msg;
    msg << "model was trained without scale conditioning and only serves x" << kFixedModelScale
        << ", requested (" << scale.scale_h << ", " << scale.scale_w << ")";
    throw std::invalid_argument(msg.str());
  }
}

ClipPrediction CstvsrNetImpl::forward(const std::vector<torch::Tensor>& frames,
                                      const std::vector<FlowField>& flows_fwd,
                                      const std::vector<FlowField>& flows_bwd,
                                      const ScaleSpec& scale) {
  check_scale(scale);
  if (frames.empty()) throw std::invalid_argument("forward: empty clip");
  if (frames.size() < 2 && scale.rate > 1) {
    throw std::invalid_argument("forward: temporal upsampling needs at least two frames");
  }
  std::vector<double> times(frames.size());
  for (size_t i = 0; i < frames.size(); ++i) times[i] = static_cast<double>(i);

  const auto features = extract_features(extractor, frames, times, scale.scale_h, scale.scale_w);
  const auto propagated = propagator(features, flows_fwd, flows_bwd);

  ClipPrediction out;
  for (size_t i = 0; i < propagated.size(); ++i) {
    out.existing.push_back(upsampler(propagated[i].data, scale, frames[i]));
  }
  const auto ts = intermediate_times(scale.rate);
  for (size_t i = 0; i + 1 < propagated.size(); ++i) {
    for (double t : ts) {
      auto feat = temporal(propagated[i].data, propagated[i + 1].data, flows_fwd[i].data,
                           flows_bwd[i].data, t);
      auto base = interpolation_base(frames[i], frames[i + 1], flows_fwd[i], flows_bwd[i], t);
      out.interpolated.push_back({static_cast<int64_t>(i), t, upsampler(feat, scale, base)});
    }
  }
  return out;
}

torch::Tensor interpolation_base(const torch::Tensor& i0, const torch::Tensor& i1,
                                 const FlowField& v01, const FlowField& v10, double t) {
  torch::NoGradGuard no_grad;
  const auto [vt0, vt1] = reverse_flow_to_t(v01, v10, t);
  return (1 - t) * backward_warp(i0, vt0.data) + t * backward_warp(i1, vt1.data);
}

}  // namespace cstvsr
