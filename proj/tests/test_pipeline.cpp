#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "cstvsr/checkpoint.hpp"
#include "cstvsr/degrade.hpp"
#include "cstvsr/evaluation.hpp"
#include "cstvsr/frame_io.hpp"
#include "cstvsr/inference.hpp"
#include "cstvsr/memory_profiler.hpp"
#include "cstvsr/synthetic.hpp"
#include "cstvsr/training.hpp"

using namespace cstvsr;
namespace fs = std::filesystem;

namespace {

// Fresh directory below the system temp dir, removed on destruction.
struct TempDir {
  fs::path path;
  TempDir() {
    static std::mt19937_64 rng(std::random_device{}());
    path = fs::temp_directory_path() / ("cstvsr_test_" + std::to_string(rng()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Rewrites the JSON manifest of a checkpoint archive in place.
void edit_manifest(const fs::path& p, const std::function<void(nlohmann::json&)>& edit) {
  const auto bytes = slurp(p);
  uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 8, 8);
  auto manifest = nlohmann::json::parse(bytes.substr(16, len));
  edit(manifest);
  const auto text = manifest.dump();
  const uint64_t new_len = text.size();
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), 8);
  out.write(reinterpret_cast<const char*>(&new_len), 8);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(bytes.data() + 16 + len, static_cast<std::streamsize>(bytes.size() - 16 - len));
}

FrameSequence random_sequence(int n, int64_t h, int64_t w, uint64_t seed) {
  torch::manual_seed(seed);
  std::vector<torch::Tensor> frames;
  for (int i = 0; i < n; ++i) frames.push_back(torch::rand({3, h, w}));
  return make_sequence(std::move(frames), "random");
}

ModelConfig tiny_model() {
  ModelConfig m;
  m.channels = 8;
  m.extract_blocks = 1;
  m.fusion_blocks = 1;
  return m;
}

TrainConfig tiny_train() {
  TrainConfig c;
  c.model = tiny_model();
  c.batch = 1;
  c.crop = 16;
  c.scale_set = {2.0, 3.0};
  c.input_frames = 2;
  c.iterations = 3;
  return c;
}

}  // namespace

TEST_SUITE("pipeline") {
  TEST_CASE("ingest a folder of frames") {
    TempDir dir;
    auto seq = random_sequence(7, 256, 448, 1);
    write_sequence(dir.path, seq);
    auto back = ingest(dir.path);
    CHECK(back.size() == 7);
    CHECK(back.height() == 256);
    CHECK(back.width() == 448);
    CHECK(back.timestamps.front() == 0.0);
    CHECK(back.timestamps.back() == 1.0);
    CHECK(back.timestamps[3] == doctest::Approx(0.5));
    CHECK((back.frames[2] - seq.frames[2]).abs().max().item<float>() <= 0.5f / 255.0f + 1e-6f);
  }

  TEST_CASE("ingest errors") {
    TempDir dir;
    CHECK_THROWS(ingest(dir.path));
    CHECK_THROWS(ingest(dir.path / "missing"));

    write_image(dir.path / "a.png", torch::rand({3, 8, 8}));
    write_image(dir.path / "b.png", torch::rand({3, 8, 9}));
    try {
      ingest(dir.path);
      FAIL("mixed resolutions accepted");
    } catch (const std::exception& e) {
      CHECK(std::string(e.what()).find("b.png") != std::string::npos);
    }

    TempDir bad;
    write_image(bad.path / "a.png", torch::rand({3, 8, 8}));
    std::ofstream(bad.path / "b.png") << "not an image";
    try {
      ingest(bad.path);
      FAIL("unreadable file accepted");
    } catch (const std::exception& e) {
      CHECK(std::string(e.what()).find("b.png") != std::string::npos);
    }
  }

  TEST_CASE("ingest a raw tensor") {
    TempDir dir;
    auto t = torch::rand({2, 3, 8, 8});
    write_raw_tensor(dir.path / "clip.f32", t);
    auto seq = ingest(dir.path / "clip.f32");
    CHECK(seq.size() == 2);
    CHECK(seq.height() == 8);
    CHECK(torch::equal(seq.stacked(), t));
    auto meta = nlohmann::json::parse(slurp(dir.path / "clip.f32.json"));
    CHECK(meta["n"] == 2);
    CHECK(meta["c"] == 3);
  }

  TEST_CASE("degradation") {
    auto hr = random_sequence(7, 32, 32, 2);
    auto lr = degrade(hr, ScaleSpec{2, 4.0, 4.0});
    CHECK(lr.size() == 4);
    CHECK(lr.height() == 8);
    auto clip = degrade_clip(hr, ScaleSpec{2, 4.0, 4.0});
    CHECK(clip.targets.size() == 7);
    CHECK(std::count(clip.existing.begin(), clip.existing.end(), false) == 3);

    auto same = degrade(hr, ScaleSpec{2, 1.0, 1.0});
    for (int i = 0; i < 4; ++i) CHECK(torch::equal(same.frames[i], hr.frames[2 * i]));

    auto flat = make_sequence({torch::full({3, 30, 30}, 0.37f), torch::full({3, 30, 30}, 0.37f)});
    auto small = degrade(flat, ScaleSpec{1, 2.8, 2.8});
    CHECK(small.height() == 10);
    CHECK((small.frames[0] - 0.37f).abs().max().item<float>() < 1e-6f);

    CHECK_THROWS(degrade(hr, ScaleSpec{2, 0.5, 0.5}));
    CHECK(kept_indices(7, 2) == std::vector<int64_t>{0, 2, 4, 6});
    CHECK(kept_indices(7, 3) == std::vector<int64_t>{0, 3, 6});
  }

  TEST_CASE("bicubic baseline frame count") {
    auto lr = random_sequence(3, 8, 8, 3);
    auto base = bicubic_baseline(lr, ScaleSpec{3, 2.5, 2.0});
    CHECK(base.size() == 7);
    CHECK(base[0].size(1) == 20);
    CHECK(base[0].size(2) == 16);
  }

  TEST_CASE("checkpoint round trip is bit exact") {
    TempDir dir;
    torch::manual_seed(5);
    auto net = CstvsrNet(tiny_model());
    const auto path = dir.path / "m.ckpt";
    save_checkpoint(path, net, 42, {{"note", "x"}});
    auto ck = load_checkpoint(path);
    CHECK(ck.iteration == 42);
    CHECK(ck.extra["note"] == "x");
    CHECK(ck.config.channels == 8);
    auto a = net->named_parameters();
    auto b = ck.net->named_parameters();
    REQUIRE(a.size() == b.size());
    for (const auto& item : a) CHECK(torch::equal(item.value(), b[item.key()]));

    auto manifest = nlohmann::json::parse(slurp(path).substr(16, [&] {
      uint64_t len = 0;
      std::memcpy(&len, slurp(path).data() + 8, 8);
      return len;
    }()));
    std::set<std::string> segments;
    for (const auto& [name, entries] : manifest["segments"].items()) segments.insert(name);
    CHECK(segments.count("propagation"));
    CHECK(segments.count("temporal"));
    CHECK(segments.count("upsampler"));
  }

  TEST_CASE("checkpoint header errors") {
    TempDir dir;
    auto net = CstvsrNet(tiny_model());
    const auto path = dir.path / "m.ckpt";

    save_checkpoint(path, net, 1);
    edit_manifest(path, [](nlohmann::json& m) { m["version"] = 99; });
    CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);

    save_checkpoint(path, net, 1);
    edit_manifest(path, [](nlohmann::json& m) {
      auto& entry = m["segments"]["upsampler"][0];
      auto shape = entry["shape"].get<std::vector<int64_t>>();
      shape[0] += 1;
      entry["shape"] = shape;
    });
    CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);

    std::ofstream(dir.path / "junk.ckpt") << "definitely not a checkpoint";
    CHECK_THROWS_AS(load_checkpoint(dir.path / "junk.ckpt"), std::runtime_error);
  }

  TEST_CASE("inference shape and counters") {
    torch::manual_seed(6);
    auto net = CstvsrNet(tiny_model());
    auto est = make_default_flow_estimator();
    auto seq = random_sequence(5, 32, 32, 7);
    InferenceStats stats;
    auto out = run_inference(seq, ScaleSpec{3, 2.5, 2.5}, net, *est, &stats);
    CHECK(out.size() == 13);
    CHECK(out.height() == 80);
    CHECK(out.width() == 80);
    CHECK(stats.flow_pair_calls == 4);
    CHECK(stats.temporal_calls == 8);
    CHECK(stats.existing_frames == 5);
    CHECK(stats.interpolated_frames == 8);
    CHECK(out.timestamps.back() == doctest::Approx(1.0));
    CHECK(output_frame_count(5, 3) == 13);

    std::vector<OutputFrame> streamed;
    stream_inference(seq, ScaleSpec{2, 2.0, 2.0}, net, *est, [&](const OutputFrame& f) { streamed.push_back(f); });
    REQUIRE(streamed.size() == 9);
    for (size_t i = 0; i < streamed.size(); ++i) {
      CHECK(streamed[i].index == static_cast<int64_t>(i));
      CHECK(streamed[i].existing == (i % 2 == 0));
      CHECK(streamed[i].time == doctest::Approx(i / 2.0));
    }
  }

  TEST_CASE("identity inference") {
    auto net = CstvsrNet(tiny_model());
    auto est = make_default_flow_estimator();
    auto seq = random_sequence(3, 16, 16, 8);
    auto out = run_inference(seq, ScaleSpec{1, 1.0, 1.0}, net, *est);
    REQUIRE(out.size() == 3);
    for (int i = 0; i < 3; ++i) CHECK((out.frames[i] - seq.frames[i]).abs().max().item<float>() < 1e-6f);
  }

  TEST_CASE("inference argument errors") {
    auto net = CstvsrNet(tiny_model());
    auto est = make_default_flow_estimator();
    CHECK_THROWS(run_inference(random_sequence(1, 16, 16, 1), ScaleSpec{2, 2.0, 2.0}, net, *est));
    CHECK_THROWS(run_inference(random_sequence(2, 16, 16, 1), ScaleSpec{2, 9.0, 2.0}, net, *est));
  }

  TEST_CASE("fixed-scale model serves only x4") {
    TrainConfig c;
    c.mode = TrainMode::kFix;
    CHECK_THROWS(c.validate());
    c.model.scale_conditioning = false;
    CHECK_NOTHROW(c.validate());
    CHECK(c.effective_scales() == std::vector<double>{4.0});
    auto parsed = TrainConfig::from_json({{"mode", "fix"}});
    CHECK_FALSE(parsed.model.scale_conditioning);

    auto m = tiny_model();
    m.scale_conditioning = false;
    auto net = CstvsrNet(m);
    CHECK_NOTHROW(net->check_scale(ScaleSpec{2, 4.0, 4.0}));
    CHECK_THROWS(net->check_scale(ScaleSpec{2, 2.8, 2.8}));
    auto est = make_default_flow_estimator();
    CHECK_THROWS(run_inference(random_sequence(2, 16, 16, 1), ScaleSpec{2, 2.8, 2.8}, net, *est));
  }

  TEST_CASE("config json round trip") {
    auto c = tiny_train();
    c.alpha = 0.3;
    c.flow_guided_loss = false;
    auto back = TrainConfig::from_json(c.to_json());
    CHECK(back.to_json() == c.to_json());
    CHECK_THROWS(TrainConfig::from_json({{"mode", "sometimes"}}));
  }

  TEST_CASE("learning rate follows a cosine") {
    auto c = tiny_train();
    c.iterations = 100;
    Trainer tr(c, {make_synthetic_clip({32, 32, 3}, 1).sequence});
    CHECK(tr.learning_rate(0) == doctest::Approx(2e-4));
    CHECK(tr.learning_rate(50) == doctest::Approx((2e-4 + 1e-7) / 2));
    CHECK(tr.learning_rate(100) == doctest::Approx(1e-7));
  }

  TEST_CASE("overfits a single clip in 200 iterations") {
    SyntheticOptions o;
    o.height = 32;
    o.width = 32;
    o.frames = 8;
    TrainConfig c;
    c.mode = TrainMode::kFix;
    c.model.scale_conditioning = false;
    c.batch = 1;
    c.crop = 32;
    c.flip_probability = 0;
    c.iterations = 200;
    c.lr_init = 3e-3;
    Trainer tr(c, {make_synthetic_clip(o, 11).sequence});
    std::vector<double> losses;
    for (int i = 0; i < 200; ++i) losses.push_back(tr.step().loss_total);
    double first = 0;
    double last = 0;
    for (int i = 0; i < 10; ++i) {
      first += losses[i];
      last += losses[190 + i];
    }
    CHECK(last < 0.25 * first);
  }

  TEST_CASE("training is deterministic under a fixed seed") {
    TempDir data;
    TempDir a;
    TempDir b;
    write_synthetic_dataset(data.path, 2, {32, 32, 4}, 3);
    auto c = tiny_train();
    c.seed = 9;
    train(c, data.path, a.path);
    train(c, data.path, b.path);
    const auto log = slurp(a.path / "loss_log.csv");
    CHECK(log.rfind("iteration,loss_exist,loss_inter,lr\n", 0) == 0);
    CHECK(log == slurp(b.path / "loss_log.csv"));
    CHECK(slurp(a.path / "model.ckpt") == slurp(b.path / "model.ckpt"));
  }

  TEST_CASE("divergence aborts with a diagnostic") {
    Trainer tr(tiny_train(), {make_synthetic_clip({32, 32, 3}, 1).sequence});
    {
      torch::NoGradGuard no_grad;
      tr.net()->parameters().front().fill_(std::nanf(""));
    }
    try {
      tr.step();
      FAIL("NaN loss accepted");
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()).find("diverged") != std::string::npos);
    }
  }

  TEST_CASE("flow-guided loss only touches the interpolation term") {
    auto c = tiny_train();
    c.input_frames = 3;
    Trainer tr(c, {make_synthetic_clip({32, 32, 5}, 2).sequence});
    auto batch = tr.sample_batch();
    auto with = tr.compute_losses(batch, true);
    auto without = tr.compute_losses(batch, false);
    CHECK(with.loss_exist.item<double>() == without.loss_exist.item<double>());
    CHECK(with.loss_inter.item<double>() != without.loss_inter.item<double>());
  }

  TEST_CASE("evaluation report") {
    TempDir pred;
    TempDir gt;
    auto seq = random_sequence(5, 24, 24, 10);
    write_sequence(gt.path / "clip_a", seq);
    write_sequence(pred.path / "clip_a", seq);
    auto report = evaluate(pred.path, gt.path, 2);
    CHECK(report.frames.size() == 5);
    CHECK(report.existing.count == 3);
    CHECK(report.interpolated.count == 2);
    CHECK(report.overall.ssim == doctest::Approx(1.0));
    auto lines = report.json_lines();
    REQUIRE(lines.size() == 8);
    for (const char* key : {"sequence", "frame_index", "kind", "psnr", "psnr_y", "ssim"}) CHECK(lines[0].contains(key));
    CHECK(lines[0]["psnr"] == "inf");
    CHECK(lines[1]["kind"] == "interpolated");
    CHECK(lines[5]["aggregate"] == "existing");
    CHECK(lines[6]["aggregate"] == "interpolated");
    CHECK(lines[7]["aggregate"] == "all");

    fs::remove(pred.path / "clip_a" / frame_filename(3));
    try {
      evaluate(pred.path, gt.path, 2);
      FAIL("tree mismatch accepted");
    } catch (const std::exception& e) {
      CHECK(std::string(e.what()).find("frame_0003.png") != std::string::npos);
    }
  }

  TEST_CASE("memory profile is repeatable") {
    torch::manual_seed(11);
    auto net = CstvsrNet(tiny_model());
    auto est = make_default_flow_estimator();
    auto a = profile_memory(net, *est, 3, 16, 16, ScaleSpec{2, 2.0, 2.0});
    auto b = profile_memory(net, *est, 3, 16, 16, ScaleSpec{2, 2.0, 2.0});
    CHECK(a.peak_bytes > 0);
    CHECK(a.peak_bytes == b.peak_bytes);
    CHECK(a.output_frames == 5);
    CHECK(a.to_json().contains("peak_bytes"));
  }

  TEST_CASE("synthetic clips carry their motion") {
    auto clip = make_synthetic_clip({}, 4);
    CHECK(clip.sequence.size() == 7);
    CHECK(clip.flows.size() == 6);
    CHECK(clip.sequence.frames[0].min().item<float>() >= 0.0f);
    CHECK(clip.sequence.frames[0].max().item<float>() <= 1.0f);
    auto again = make_synthetic_clip({}, 4);
    CHECK(torch::equal(clip.sequence.frames[3], again.sequence.frames[3]));
  }
}
