#include "cstvsr/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "cstvsr/checkpoint.hpp"
#include "cstvsr/degrade.hpp"
#include "cstvsr/pseudo_label.hpp"
#include "cstvsr/synthetic.hpp"

namespace cstvsr {
namespace fs = std::filesystem;

std::vector<double> TrainConfig::default_scale_set() {
  std::vector<double> s;
  for (int i = 0; i <= 10; ++i) s.push_back(2.0 + 0.2 * i);
  return s;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("train config: " + m); };
  if (!(lr_init > 0) || !(lr_final >= 0) || lr_final > lr_init) fail("need 0 <= lr_final <= lr_init, lr_init > 0");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) fail("betas must lie in [0, 1)");
  if (mode == TrainMode::kContinuous && scale_set.empty()) fail("scale_set is empty");
  for (double s : scale_set) {
    if (!(s >= kMinSpatialScale && s <= kMaxSpatialScale)) fail("scale_set entries must lie in [1, 8]");
  }
  if (!(alpha >= 0)) fail("alpha must be non-negative");
  if (iterations < 1 || batch < 1) fail("iterations and batch must be positive");
  if (rate < 1 || input_frames < 2) fail("rate >= 1 and input_frames >= 2 required");
  if (!(flip_probability >= 0 && flip_probability <= 1)) fail("flip_probability must lie in [0, 1]");
  if (pseudo_patch < 1) fail("pseudo_patch must be positive");
  const double smax = mode == TrainMode::kFix ? kFixedModelScale : *std::max_element(scale_set.begin(), scale_set.end());
  if (crop < static_cast<int64_t>(std::ceil(4 * smax))) fail("crop too small for the largest scale");
  if (mode == TrainMode::kFix && model.scale_conditioning) fail("fix mode requires model.scale_conditioning = false");
}

std::vector<double> TrainConfig::effective_scales() const {
  return mode == TrainMode::kFix ? std::vector<double>{kFixedModelScale} : scale_set;
}

nlohmann::json TrainConfig::to_json() const {
  return {{"lr_init", lr_init},
          {"lr_final", lr_final},
          {"beta1", beta1},
          {"beta2", beta2},
          {"scale_set", scale_set},
          {"alpha", alpha},
          {"flow_guided_loss", flow_guided_loss},
          {"mode", mode == TrainMode::kFix ? "fix" : "continuous"},
          {"seed", seed},
          {"iterations", iterations},
          {"crop", crop},
          {"batch", batch},
          {"rate", rate},
          {"input_frames", input_frames},
          {"flip_probability", flip_probability},
          {"pseudo_patch", pseudo_patch},
          {"log_every", log_every},
          {"checkpoint_every", checkpoint_every},
          {"model", model.to_json()}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.lr_init = j.value("lr_init", c.lr_init);
  c.lr_final = j.value("lr_final", c.lr_final);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.scale_set = j.value("scale_set", c.scale_set);
  c.alpha = j.value("alpha", c.alpha);
  c.flow_guided_loss = j.value("flow_guided_loss", c.flow_guided_loss);
  const auto mode = j.value("mode", std::string("continuous"));
  if (mode != "fix" && mode != "continuous") throw std::invalid_argument("train config: mode must be fix or continuous");
  c.mode = mode == "fix" ? TrainMode::kFix : TrainMode::kContinuous;
  c.seed = j.value("seed", c.seed);
  c.iterations = j.value("iterations", c.iterations);
  c.crop = j.value("crop", c.crop);
  c.batch = j.value("batch", c.batch);
  c.rate = j.value("rate", c.rate);
  c.input_frames = j.value("input_frames", c.input_frames);
  c.flip_probability = j.value("flip_probability", c.flip_probability);
  c.pseudo_patch = j.value("pseudo_patch", c.pseudo_patch);
  c.log_every = j.value("log_every", c.log_every);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model"));
  if (c.mode == TrainMode::kFix) c.model.scale_conditioning = false;
  return c;
}

Trainer::Trainer(TrainConfig config, std::vector<FrameSequence> clips, std::shared_ptr<FlowEstimator> estimator)
    : config_(std::move(config)), clips_(std::move(clips)), estimator_(std::move(estimator)), rng_(config_.seed) {
  config_.validate();
  if (clips_.empty()) throw std::invalid_argument("train: no training clips");
  const int64_t window = static_cast<int64_t>(config_.input_frames - 1) * config_.rate + 1;
  for (const auto& clip : clips_) {
    clip.validate();
    if (clip.size() < window) {
      throw std::invalid_argument("train: clip " + clip.source_path + " has " + std::to_string(clip.size()) +
                                  " frames, a sample needs " + std::to_string(window));
    }
    if (clip.height() < config_.crop || clip.width() < config_.crop) {
      throw std::invalid_argument("train: clip " + clip.source_path + " is smaller than the crop");
    }
  }
  torch::manual_seed(config_.seed);
  net_ = CstvsrNet(config_.model);
  optimizer_ = std::make_unique<torch::optim::Adam>(
      net_->parameters(),
      torch::optim::AdamOptions(config_.lr_init).betas({config_.beta1, config_.beta2}));
}

double Trainer::learning_rate(int64_t iteration) const {
  const double progress = std::min(1.0, static_cast<double>(iteration) / static_cast<double>(config_.iterations));
  return config_.lr_final +
         0.5 * (config_.lr_init - config_.lr_final) * (1.0 + std::cos(std::numbers::pi * progress));
}

TrainBatch Trainer::sample_batch() {
  const auto scales = config_.effective_scales();
  std::uniform_int_distribution<size_t> pick_scale(0, scales.size() - 1);
  std::uniform_int_distribution<size_t> pick_clip(0, clips_.size() - 1);
  std::uniform_real_distribution<double> coin(0.0, 1.0);

  TrainBatch batch;
  const double s = scales[pick_scale(rng_)];
  batch.scale = ScaleSpec{config_.rate, s, s};
  batch.flipped = coin(rng_) < config_.flip_probability;
  const int64_t window = static_cast<int64_t>(config_.input_frames - 1) * config_.rate + 1;

  // Per sample: HR window [L, 3, crop, crop].
  std::vector<torch::Tensor> windows;
  for (int64_t b = 0; b < config_.batch; ++b) {
    const auto& clip = clips_[pick_clip(rng_)];
    std::uniform_int_distribution<int64_t> pick_t(0, clip.size() - window);
    std::uniform_int_distribution<int64_t> pick_y(0, clip.height() - config_.crop);
    std::uniform_int_distribution<int64_t> pick_x(0, clip.width() - config_.crop);
    const int64_t t0 = pick_t(rng_);
    const int64_t y0 = pick_y(rng_);
    const int64_t x0 = pick_x(rng_);
    std::vector<torch::Tensor> frames;
    for (int64_t i = 0; i < window; ++i) {
      frames.push_back(clip.frames[t0 + i].narrow(1, y0, config_.crop).narrow(2, x0, config_.crop));
    }
    if (batch.flipped) std::reverse(frames.begin(), frames.end());
    windows.push_back(torch::stack(frames, 0));
  }
  auto hr = torch::stack(windows, 1);  // [L, B, 3, crop, crop]

  const auto kept = kept_indices(window, config_.rate);
  std::vector<torch::Tensor> lr;
  for (const auto i : kept) lr.push_back(bicubic_downsample(hr[i], s, s));
  const int64_t h = output_extent(lr.front().size(2), s);
  const int64_t w = output_extent(lr.front().size(3), s);
  for (int64_t i = 0; i < window; ++i) {
    auto target = crop_top_left(hr[i], h, w).contiguous();
    if (i % config_.rate == 0) {
      batch.existing.push_back(target);
    } else {
      batch.interpolated.push_back(target);
    }
  }
  for (size_t k = 0; k + 1 < lr.size(); ++k) {
    auto pair = estimator_->estimate_pair(lr[k], lr[k + 1]);
    batch.flows_fwd.push_back(std::move(pair.forward));
    batch.flows_bwd.push_back(std::move(pair.backward));
  }
  batch.frames = std::move(lr);
  return batch;
}

LossReport Trainer::compute_losses(const TrainBatch& batch, bool flow_guided_loss) {
  net_->train();
  auto pred = net_->forward(batch.frames, batch.flows_fwd, batch.flows_bwd, batch.scale);
  std::vector<ExistingTerm> existing;
  for (size_t i = 0; i < pred.existing.size(); ++i) existing.push_back({pred.existing[i], batch.existing[i]});
  std::vector<InterpolatedTerm> inter;
  const bool fgl = flow_guided_loss && config_.alpha > 0;
  for (size_t i = 0; i < pred.interpolated.size(); ++i) {
    const auto& frame = pred.interpolated[i];
    InterpolatedTerm term{frame.image, batch.interpolated[i], {}};
    if (fgl) {
      const auto p = static_cast<size_t>(frame.pair);
      const auto& ref0 = batch.existing[p];
      const auto& ref1 = batch.existing[p + 1];
      const int64_t h = ref0.size(2);
      const int64_t w = ref0.size(3);
      const FlowField v01{resize_flow(batch.flows_fwd[p].data, h, w), 0.0, 1.0};
      const FlowField v10{resize_flow(batch.flows_bwd[p].data, h, w), 1.0, 0.0};
      term.pseudo = make_pseudo_label(ref0, ref1, frame.image.detach(), v01, v10, frame.t, config_.pseudo_patch).image;
    }
    inter.push_back(std::move(term));
  }
  return total_loss(existing, inter, fgl ? config_.alpha : 0.0);
}

StepRecord Trainer::step() {
  for (const auto& item : net_->named_parameters()) {
    if (!torch::isfinite(item.value()).all().item<bool>()) {
      throw std::runtime_error("training diverged at iteration " + std::to_string(iteration_) +
                               ": non-finite parameter " + item.key());
    }
  }
  const auto batch = sample_batch();
  const double lr = learning_rate(iteration_);
  for (auto& group : optimizer_->param_groups()) {
    static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
  }
  optimizer_->zero_grad();
  auto report = compute_losses(batch, config_.flow_guided_loss);
  StepRecord rec;
  rec.iteration = iteration_;
  rec.loss_exist = report.loss_exist.item<double>();
  rec.loss_inter = report.loss_inter.item<double>();
  rec.loss_total = report.loss_total.item<double>();
  rec.lr = lr;
  rec.scale = batch.scale;
  if (!std::isfinite(rec.loss_total)) {
    std::ostringstream msg;
    msg << "training diverged at iteration " << iteration_ << ": loss_exist=" << rec.loss_exist
        << " loss_inter=" << rec.loss_inter << " scale=" << batch.scale.scale_h << " lr=" << lr;
    throw std::runtime_error(msg.str());
  }
  report.loss_total.backward();
  optimizer_->step();
  ++iteration_;
  return rec;
}

std::vector<FrameSequence> load_clips(const fs::path& root) {
  std::vector<FrameSequence> clips;
  for (const auto& dir : list_clips(root)) clips.push_back(ingest(dir));
  if (clips.empty()) throw std::runtime_error("no clips found below " + root.string());
  return clips;
}

TrainResult train(const TrainConfig& config, const fs::path& data_root, const fs::path& out_dir,
                  const std::function<void(const StepRecord&)>& progress) {
  Trainer trainer(config, load_clips(data_root));
  fs::create_directories(out_dir);
  TrainResult result;
  result.loss_log = out_dir / "loss_log.csv";
  result.checkpoint = out_dir / "model.ckpt";
  std::ofstream log(result.loss_log, std::ios::trunc);
  if (!log) throw std::runtime_error("cannot write " + result.loss_log.string());
  log << "iteration,loss_exist,loss_inter,lr\n";
  log.precision(9);
  const nlohmann::json extra{{"train_config", trainer.config().to_json()}};
  for (int64_t it = 0; it < config.iterations; ++it) {
    const auto rec = trainer.step();
    log << rec.iteration << ',' << rec.loss_exist << ',' << rec.loss_inter << ',' << rec.lr << '\n';
    result.history.push_back(rec);
    if (progress && config.log_every > 0 && (it % config.log_every == 0 || it + 1 == config.iterations)) progress(rec);
    if (config.checkpoint_every > 0 && (it + 1) % config.checkpoint_every == 0 && it + 1 < config.iterations) {
      char name[40];
      std::snprintf(name, sizeof(name), "checkpoint_%06lld.ckpt", static_cast<long long>(it + 1));
      save_checkpoint(out_dir / name, trainer.net(), it + 1, extra);
    }
  }
  log.flush();
  save_checkpoint(result.checkpoint, trainer.net(), trainer.iteration(), extra);
  return result;
}

}  // namespace cstvsr
