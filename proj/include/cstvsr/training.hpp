#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <json.hpp>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "cstvsr/flow_estimation.hpp"
#include "cstvsr/frame_io.hpp"
#include "cstvsr/losses_metrics.hpp"
#include "cstvsr/model.hpp"

namespace cstvsr {

enum class TrainMode { kFix, kContinuous };

struct TrainConfig {
  double lr_init = 2e-4;
  double lr_final = 1e-7;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::vector<double> scale_set = default_scale_set();
  double alpha = kPseudoWeight;
  bool flow_guided_loss = true;
  TrainMode mode = TrainMode::kContinuous;
  uint64_t seed = 0;
  int64_t iterations = 1000;
  int64_t crop = 64;       // high-resolution crop side
  int64_t batch = 4;
  int rate = 2;            // temporal factor of the training clips
  int input_frames = 4;    // low-resolution frames per sample
  double flip_probability = 0.5;
  int pseudo_patch = 4;
  int64_t log_every = 10;
  int64_t checkpoint_every = 0;  // 0: only the final checkpoint
  ModelConfig model;

  static std::vector<double> default_scale_set();  // 2.0, 2.2, ..., 4.0

  // Throws std::invalid_argument on an unusable configuration.
  void validate() const;
  // Scales the run draws from: {4} in fix mode, scale_set otherwise.
  std::vector<double> effective_scales() const;

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

// One optimisation batch. frames / flows are at low resolution; targets and
// references are the high-resolution crops in output order.
struct TrainBatch {
  ScaleSpec scale;
  std::vector<torch::Tensor> frames;     // M x [B, 3, h, w]
  std::vector<FlowField> flows_fwd;      // M - 1
  std::vector<FlowField> flows_bwd;      // M - 1
  std::vector<torch::Tensor> existing;   // M x [B, 3, H', W']
  std::vector<torch::Tensor> interpolated;  // (M - 1) * (R - 1), pair-major
  bool flipped = false;
};

struct StepRecord {
  int64_t iteration = 0;
  double loss_exist = 0.0;
  double loss_inter = 0.0;
  double loss_total = 0.0;
  double lr = 0.0;
  ScaleSpec scale;
};

class Trainer {
 public:
  Trainer(TrainConfig config, std::vector<FrameSequence> clips,
          std::shared_ptr<FlowEstimator> estimator = make_default_flow_estimator());

  TrainBatch sample_batch();

  // Forward pass and losses for a batch (no parameter update).
  LossReport compute_losses(const TrainBatch& batch, bool flow_guided_loss);

  // Samples a batch, applies one Adam update and returns the pre-update losses.
  // Throws std::runtime_error if the loss is not finite.
  StepRecord step();

  double learning_rate(int64_t iteration) const;

  CstvsrNet& net() { return net_; }
  const TrainConfig& config() const { return config_; }
  int64_t iteration() const { return iteration_; }

 private:
  TrainConfig config_;
  std::vector<FrameSequence> clips_;
  std::shared_ptr<FlowEstimator> estimator_;
  CstvsrNet net_{nullptr};
  std::unique_ptr<torch::optim::Adam> optimizer_;
  std::mt19937_64 rng_;
  int64_t iteration_ = 0;
};

// Loads every clip directory below root.
std::vector<FrameSequence> load_clips(const std::filesystem::path& root);

struct TrainResult {
  std::filesystem::path checkpoint;
  std::filesystem::path loss_log;
  std::vector<StepRecord> history;
};

// Full run: writes loss_log.csv (iteration, loss_exist, loss_inter, lr) and
// model.ckpt (plus periodic checkpoints) into out_dir.
TrainResult train(const TrainConfig& config, const std::filesystem::path& data_root,
                  const std::filesystem::path& out_dir,
                  const std::function<void(const StepRecord&)>& progress = {});

}  // namespace cstvsr
