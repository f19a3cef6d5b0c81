#pragma once

#include <torch/torch.h>

#include <functional>
#include <vector>

#include "cstvsr/flow_estimation.hpp"
#include "cstvsr/frame_io.hpp"
#include "cstvsr/model.hpp"

namespace cstvsr {

struct OutputFrame {
  int64_t index = 0;     // position in the output sequence
  double time = 0.0;     // in input-frame units (input k sits at k)
  bool existing = true;  // false for synthesised intermediate frames
  torch::Tensor image;   // [3, H', W']
};

using FrameSink = std::function<void(const OutputFrame&)>;

struct InferenceStats {
  int64_t flow_pair_calls = 0;
  int64_t temporal_calls = 0;
  int64_t existing_frames = 0;
  int64_t interpolated_frames = 0;
};

// Number of output frames for n inputs at temporal factor rate: R * (n - 1) + 1.
int64_t output_frame_count(int64_t n, int rate);

// Streams R * (N - 1) + 1 frames of size (ceil(H * S_H), ceil(W * S_W)) to the
// sink in temporal order. Flows are estimated once per adjacent pair and
// shared by every stage; only the current and previous fused features are
// kept alive during the forward sweep.
InferenceStats stream_inference(const FrameSequence& seq, const ScaleSpec& scale, CstvsrNet& net,
                                const FlowEstimator& estimator, const FrameSink& sink);

// Collects the streamed frames into a sequence (timestamps in [0, 1]).
FrameSequence run_inference(const FrameSequence& seq, const ScaleSpec& scale, CstvsrNet& net,
                            const FlowEstimator& estimator, InferenceStats* stats = nullptr);

}  // namespace cstvsr
