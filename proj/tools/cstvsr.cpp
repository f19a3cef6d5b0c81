// Command-line front end: make-synth, train, infer, eval, pseudo-dump, profile.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "cstvsr/checkpoint.hpp"
#include "cstvsr/degrade.hpp"
#include "cstvsr/evaluation.hpp"
#include "cstvsr/flow_estimation.hpp"
#include "cstvsr/frame_io.hpp"
#include "cstvsr/inference.hpp"
#include "cstvsr/memory_profiler.hpp"
#include "cstvsr/pseudo_label.hpp"
#include "cstvsr/synthetic.hpp"
#include "cstvsr/training.hpp"

namespace fs = std::filesystem;
using namespace cstvsr;

namespace {

nlohmann::json load_config(const std::string& path) {
  if (path.empty()) return nlohmann::json::object();
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  nlohmann::json j;
  in >> j;
  if (!j.is_object()) throw std::runtime_error("config " + path + " must hold a JSON object");
  return j;
}

// Value from the command line when given, else from the config, else the default.
template <typename T>
T pick(CLI::App* app, const std::string& flag, const T& cli_value, const nlohmann::json& cfg, const std::string& key) {
  if (app->count(flag) > 0) return cli_value;
  if (cfg.contains(key)) return cfg.at(key).get<T>();
  return cli_value;
}

struct ScaleFlags {
  int rate = 2;
  double scale = 0.0;
  double scale_h = 4.0;
  double scale_w = 4.0;

  void add(CLI::App* app) {
    app->add_option("--rate", rate, "Temporal factor R");
    app->add_option("--scale", scale, "Isotropic spatial factor (overrides --scale-h/--scale-w)");
    app->add_option("--scale-h", scale_h, "Vertical spatial factor");
    app->add_option("--scale-w", scale_w, "Horizontal spatial factor");
  }

  ScaleSpec resolve(CLI::App* app, const nlohmann::json& cfg) const {
    ScaleSpec s;
    s.rate = pick(app, "--rate", rate, cfg, "rate");
    s.scale_h = pick(app, "--scale-h", scale_h, cfg, "scale_h");
    s.scale_w = pick(app, "--scale-w", scale_w, cfg, "scale_w");
    const double iso = pick(app, "--scale", scale, cfg, "scale");
    if (iso > 0.0) s.scale_h = s.scale_w = iso;
    s.validate();
    return s;
  }
};

CstvsrNet load_or_init(const std::string& checkpoint, const ModelConfig& fallback) {
  if (!checkpoint.empty()) return load_checkpoint(checkpoint).net;
  std::cerr << "warning: no checkpoint given, using an untrained model\n";
  return CstvsrNet(fallback);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continuous space-time video super-resolution"};
  app.require_subcommand(1);
  std::string config_path;
  uint64_t seed = 0;
  app.add_option("--config", config_path, "JSON config; command-line flags take precedence")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "Random seed");

  // make-synth
  auto* synth = app.add_subcommand("make-synth", "Render the synthetic moving-rectangle dataset");
  std::string synth_out;
  int synth_clips = 16;
  SyntheticOptions synth_opts;
  synth->add_option("--out", synth_out, "Output root")->required();
  synth->add_option("--clips", synth_clips, "Number of clips");
  synth->add_option("--frames", synth_opts.frames, "Frames per clip");
  synth->add_option("--height", synth_opts.height, "Frame height");
  synth->add_option("--width", synth_opts.width, "Frame width");
  synth->add_option("--seed", seed, "Random seed");

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a model on a folder of clips");
  std::string data_root;
  std::string train_out;
  int64_t iterations = 1000;
  int64_t batch = 4;
  std::string mode = "continuous";
  double alpha = kPseudoWeight;
  double lr_init = 2e-4;
  bool no_fgl = false;
  bool no_fwg = false;
  bool no_dcn = false;
  train_cmd->add_option("--data", data_root, "Root with one sub-folder per clip")->required();
  train_cmd->add_option("--out", train_out, "Output directory for checkpoints and the loss log")->required();
  train_cmd->add_option("--iterations", iterations, "Optimisation steps");
  train_cmd->add_option("--batch", batch, "Clips per batch");
  train_cmd->add_option("--mode", mode, "fix or continuous")->check(CLI::IsMember({"fix", "continuous"}));
  train_cmd->add_option("--alpha", alpha, "Pseudo-label loss weight");
  train_cmd->add_option("--lr", lr_init, "Initial learning rate");
  train_cmd->add_flag("--no-flow-guided-loss", no_fgl, "Drop the pseudo-label term");
  train_cmd->add_flag("--no-forward-warping", no_fwg, "Disable forward-warping guidance");
  train_cmd->add_flag("--no-deformable", no_dcn, "Disable deformable refinement in temporal modulation");
  train_cmd->add_option("--seed", seed, "Random seed");

  // infer
  auto* infer = app.add_subcommand("infer", "Upscale a sequence in space and time");
  std::string checkpoint;
  std::string input;
  std::string infer_out;
  ScaleFlags infer_scale;
  infer->add_option("--checkpoint", checkpoint, "Model checkpoint");
  infer->add_option("--input", input, "Folder of frames or raw float32 tensor")->required();
  infer->add_option("--output", infer_out, "Output folder")->required();
  infer_scale.add(infer);
  infer->add_option("--seed", seed, "Random seed");

  // eval
  auto* eval = app.add_subcommand("eval", "PSNR / SSIM of predicted frames against ground truth");
  std::string pred_root;
  std::string gt_root;
  std::string metrics_out;
  int eval_rate = 2;
  eval->add_option("--pred", pred_root, "Predicted sequence tree")->required();
  eval->add_option("--gt", gt_root, "Ground-truth sequence tree")->required();
  eval->add_option("--rate", eval_rate, "Temporal factor (frame i is existing iff i % rate == 0)");
  eval->add_option("--output", metrics_out, "JSON-lines report (default: stdout)");
  eval->add_option("--seed", seed, "Random seed");

  // pseudo-dump
  auto* dump = app.add_subcommand("pseudo-dump", "Write pseudo labels and source maps of a high-resolution clip");
  std::string dump_input;
  std::string dump_out;
  std::string dump_checkpoint;
  ScaleFlags dump_scale;
  int patch = kDefaultPatch;
  dump->add_option("--input", dump_input, "High-resolution clip (folder or raw tensor)")->required();
  dump->add_option("--output", dump_out, "Output folder")->required();
  dump->add_option("--checkpoint", dump_checkpoint, "Model producing the predictions");
  dump->add_option("--patch", patch, "Patch size");
  dump_scale.add(dump);
  dump->add_option("--seed", seed, "Random seed");

  // profile
  auto* profile = app.add_subcommand("profile", "Peak live tensor memory of streamed inference");
  std::string profile_checkpoint;
  int64_t frames = 26;
  int64_t height = 64;
  int64_t width = 64;
  ScaleFlags profile_scale;
  profile->add_option("--checkpoint", profile_checkpoint, "Model checkpoint");
  profile->add_option("--frames", frames, "Input length N");
  profile->add_option("--height", height, "Input height");
  profile->add_option("--width", width, "Input width");
  profile_scale.add(profile);
  profile->add_option("--seed", seed, "Random seed");

  CLI11_PARSE(app, argc, argv);

  try {
    const auto cfg = load_config(config_path);
    CLI::App* active = app.get_subcommands().front();
    seed = pick(active, "--seed", seed, cfg, "seed");
    if (app.count("--seed") > 0) seed = app.get_option("--seed")->as<uint64_t>();
    torch::manual_seed(seed);

    if (*synth) {
      synth_opts.frames = pick(synth, "--frames", synth_opts.frames, cfg, "frames");
      synth_opts.height = pick(synth, "--height", synth_opts.height, cfg, "height");
      synth_opts.width = pick(synth, "--width", synth_opts.width, cfg, "width");
      synth_clips = pick(synth, "--clips", synth_clips, cfg, "clips");
      write_synthetic_dataset(synth_out, synth_clips, synth_opts, seed);
      std::cout << "wrote " << synth_clips << " clips to " << synth_out << "\n";
    } else if (*train_cmd) {
      auto tc = TrainConfig::from_json(cfg);
      tc.seed = seed;
      if (train_cmd->count("--iterations")) tc.iterations = iterations;
      if (train_cmd->count("--batch")) tc.batch = batch;
      if (train_cmd->count("--alpha")) tc.alpha = alpha;
      if (train_cmd->count("--lr")) tc.lr_init = lr_init;
      if (train_cmd->count("--mode")) tc.mode = mode == "fix" ? TrainMode::kFix : TrainMode::kContinuous;
      if (tc.mode == TrainMode::kFix) tc.model.scale_conditioning = false;
      if (no_fgl) tc.flow_guided_loss = false;
      if (no_fwg) tc.model.forward_warping = false;
      if (no_dcn) tc.model.deformable_alignment = false;
      const auto result = train(tc, data_root, train_out, [](const StepRecord& r) {
        std::printf("iter %6lld  scale %.1f  loss_exist %.5f  loss_inter %.5f  lr %.3g\n",
                    static_cast<long long>(r.iteration), r.scale.scale_h, r.loss_exist, r.loss_inter, r.lr);
        std::fflush(stdout);
      });
      std::cout << "checkpoint: " << result.checkpoint.string() << "\nloss log: " << result.loss_log.string() << "\n";
    } else if (*infer) {
      const auto scale = infer_scale.resolve(infer, cfg);
      auto net = load_or_init(pick(infer, "--checkpoint", checkpoint, cfg, "checkpoint"), ModelConfig{});
      const auto seq = ingest(input);
      const auto estimator = make_default_flow_estimator();
      fs::create_directories(infer_out);
      const auto stats = stream_inference(seq, scale, net, *estimator, [&](const OutputFrame& f) {
        write_image(fs::path(infer_out) / frame_filename(f.index), f.image);
      });
      std::cout << "wrote " << stats.existing_frames + stats.interpolated_frames << " frames ("
                << stats.existing_frames << " existing, " << stats.interpolated_frames << " interpolated) to "
                << infer_out << "; flow pairs estimated: " << stats.flow_pair_calls << "\n";
    } else if (*eval) {
      const auto report = evaluate(pred_root, gt_root, pick(eval, "--rate", eval_rate, cfg, "rate"));
      if (metrics_out.empty()) {
        for (const auto& line : report.json_lines()) std::cout << line.dump() << "\n";
      } else {
        report.write_jsonl(metrics_out);
        std::cout << "existing psnr " << report.existing.psnr << " ssim " << report.existing.ssim
                  << " | interpolated psnr " << report.interpolated.psnr << " ssim " << report.interpolated.ssim
                  << "\n";
      }
    } else if (*dump) {
      const auto scale = dump_scale.resolve(dump, cfg);
      if (scale.rate < 2) throw std::invalid_argument("pseudo-dump needs --rate >= 2");
      auto net = load_or_init(pick(dump, "--checkpoint", dump_checkpoint, cfg, "checkpoint"), ModelConfig{});
      const auto clip = degrade_clip(ingest(dump_input), scale);
      const auto estimator = make_default_flow_estimator();
      const auto pred = run_inference(clip.lr, scale, net, *estimator);
      const fs::path out(dump_out);
      fs::create_directories(out);
      const auto ts = intermediate_times(scale.rate);
      for (int64_t k = 0; k + 1 < clip.lr.size(); ++k) {
        const auto flows = estimator->estimate_pair(clip.lr.frames[k].unsqueeze(0), clip.lr.frames[k + 1].unsqueeze(0));
        const auto& ref0 = clip.targets[k * scale.rate];
        const auto& ref1 = clip.targets[(k + 1) * scale.rate];
        const int64_t h = ref0.size(1);
        const int64_t w = ref0.size(2);
        const FlowField v01{resize_flow(flows.forward.data, h, w), 0.0, 1.0};
        const FlowField v10{resize_flow(flows.backward.data, h, w), 1.0, 0.0};
        for (size_t j = 0; j < ts.size(); ++j) {
          const int64_t index = k * scale.rate + static_cast<int64_t>(j) + 1;
          const auto label = make_pseudo_label(ref0.unsqueeze(0), ref1.unsqueeze(0), pred.frames[index].unsqueeze(0),
                                               v01, v10, ts[j], patch);
          char name[48];
          std::snprintf(name, sizeof(name), "pseudo_%04lld.png", static_cast<long long>(index));
          write_image(out / name, label.image[0]);
          std::snprintf(name, sizeof(name), "source_%04lld.png", static_cast<long long>(index));
          auto ids = label.grid.source_id[0].to(torch::kFloat32);
          ids = ids.repeat_interleave(patch, 0).repeat_interleave(patch, 1).narrow(0, 0, h).narrow(1, 0, w);
          write_image(out / name, ids.unsqueeze(0).expand({3, h, w}));
          std::snprintf(name, sizeof(name), "pred_%04lld.png", static_cast<long long>(index));
          write_image(out / name, pred.frames[index]);
        }
      }
      std::cout << "wrote pseudo labels to " << dump_out << "\n";
    } else if (*profile) {
      const auto scale = profile_scale.resolve(profile, cfg);
      auto net = load_or_init(pick(profile, "--checkpoint", profile_checkpoint, cfg, "checkpoint"), ModelConfig{});
      const auto estimator = make_default_flow_estimator();
      const auto rec = profile_memory(net, *estimator, pick(profile, "--frames", frames, cfg, "frames"),
                                      pick(profile, "--height", height, cfg, "height"),
                                      pick(profile, "--width", width, cfg, "width"), scale, seed);
      std::cout << rec.to_json().dump() << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
