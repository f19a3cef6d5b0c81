#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <json.hpp>
#include <string>
#include <vector>

#include "cstvsr/flow_estimation.hpp"
#include "cstvsr/frame_io.hpp"
#include "cstvsr/model.hpp"

namespace cstvsr {

struct FrameMetric {
  std::string sequence;
  int64_t frame_index = 0;
  bool existing = true;
  double psnr = 0.0;
  double psnr_y = 0.0;
  double ssim = 0.0;

  nlohmann::json to_json() const;
};

struct MetricAggregate {
  int64_t count = 0;
  double psnr = 0.0;  // means over frames
  double psnr_y = 0.0;
  double ssim = 0.0;

  nlohmann::json to_json() const;
};

struct EvalReport {
  std::vector<FrameMetric> frames;
  MetricAggregate existing;
  MetricAggregate interpolated;
  MetricAggregate overall;

  // Aggregates recomputed from frames.
  void finalize();
  // One JSON object per frame, then one per kind ("existing", "interpolated", "all").
  std::vector<nlohmann::json> json_lines() const;
  void write_jsonl(const std::filesystem::path& path) const;
};

// Output frame i is at an input timestamp iff i % rate == 0.
bool is_existing_index(int64_t index, int rate);

// Frame-by-frame comparison of two equally long lists of [3, H, W] images.
void append_metrics(EvalReport& report, const std::string& sequence, const std::vector<torch::Tensor>& pred,
                    const std::vector<torch::Tensor>& gt, int rate);

// Compares two trees of sequences. A root holding images directly is a
// single sequence; otherwise every subdirectory with images is one. Throws
// std::runtime_error listing every missing sequence or frame on either side.
EvalReport evaluate(const std::filesystem::path& pred_root, const std::filesystem::path& gt_root, int rate);

struct BenchmarkResult {
  EvalReport model;
  EvalReport bicubic;
};

// Degrades every high-resolution clip at scale, then scores the model's
// reconstruction and the per-frame bicubic baseline against the same targets.
BenchmarkResult benchmark_against_bicubic(CstvsrNet& net, const FlowEstimator& estimator,
                                          const std::vector<FrameSequence>& hr_clips, const ScaleSpec& scale);

}  // namespace cstvsr
