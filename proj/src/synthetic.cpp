#include "cstvsr/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace cstvsr {
namespace fs = std::filesystem;

namespace {

struct Rect {
  double x0, y0, w, h;  // position at frame 0
  double vx, vy;
  std::array<double, 3> color;
  double freq;  // texture frequency in rectangle-local coordinates
  double phase;
};

double overlap(double a0, double a1, double b0, double b1) { return std::max(0.0, std::min(a1, b1) - std::max(a0, b0)); }

}  // namespace

SyntheticClip make_synthetic_clip(const SyntheticOptions& o, uint64_t seed) {
  if (o.height < 8 || o.width < 8 || o.frames < 2) throw std::invalid_argument("synthetic clip too small");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uni = [&](double a, double b) { return a + (b - a) * unit(rng); };

  const double pi = std::numbers::pi;
  const double bg_theta = uni(0.0, pi);
  const double bg_freq = uni(0.02, 0.08);  // cycles per pixel
  const double bg_speed = uni(-o.background_speed, o.background_speed);
  const double bg_vx = bg_speed * std::cos(bg_theta);
  const double bg_vy = bg_speed * std::sin(bg_theta);
  const std::array<double, 3> bg_a{uni(0.2, 0.6), uni(0.2, 0.6), uni(0.2, 0.6)};
  const std::array<double, 3> bg_b{uni(0.1, 0.3), uni(0.1, 0.3), uni(0.1, 0.3)};

  std::vector<Rect> rects;
  for (int r = 0; r < o.rectangles; ++r) {
    Rect rc;
    rc.w = uni(0.2, 0.45) * static_cast<double>(o.width);
    rc.h = uni(0.2, 0.45) * static_cast<double>(o.height);
    rc.x0 = uni(-0.1 * rc.w, static_cast<double>(o.width) - 0.9 * rc.w);
    rc.y0 = uni(-0.1 * rc.h, static_cast<double>(o.height) - 0.9 * rc.h);
    rc.vx = uni(-o.max_speed, o.max_speed);
    rc.vy = uni(-o.max_speed, o.max_speed);
    rc.color = {uni(0.1, 0.9), uni(0.1, 0.9), uni(0.1, 0.9)};
    rc.freq = uni(0.15, 0.5);  // radians per pixel
    rc.phase = uni(0.0, 2 * pi);
    rects.push_back(rc);
  }

  const int64_t h = o.height;
  const int64_t w = o.width;
  SyntheticClip clip;
  std::vector<torch::Tensor> frames;
  for (int f = 0; f < o.frames; ++f) {
    auto img = torch::empty({3, h, w}, torch::kFloat32);
    auto flow = torch::empty({2, h, w}, torch::kFloat32);
    auto ia = img.accessor<float, 3>();
    auto fa = flow.accessor<float, 3>();
    for (int64_t y = 0; y < h; ++y) {
      for (int64_t x = 0; x < w; ++x) {
        // Background grating sampled at the pixel centre, moving rigidly.
        const double bx = x + 0.5 - bg_vx * f;
        const double by = y + 0.5 - bg_vy * f;
        const double s = std::sin(2 * pi * bg_freq * (bx * std::cos(bg_theta) + by * std::sin(bg_theta)));
        const double s2 = std::sin(2 * pi * 0.07 * (bx - by));
        std::array<double, 3> px;
        for (int c = 0; c < 3; ++c) px[c] = bg_a[c] + bg_b[c] * (c == 1 ? s2 : s);
        double u = bg_vx;
        double v = bg_vy;
        for (const auto& rc : rects) {
          const double rx = rc.x0 + rc.vx * f;
          const double ry = rc.y0 + rc.vy * f;
          const double cover = overlap(x, x + 1.0, rx, rx + rc.w) * overlap(y, y + 1.0, ry, ry + rc.h);
          if (cover <= 0.0) continue;
          const double lx = x + 0.5 - rx;
          const double ly = y + 0.5 - ry;
          const double tex = 0.8 + 0.2 * std::sin(rc.freq * lx + rc.phase) * std::cos(rc.freq * 0.7 * ly);
          for (int c = 0; c < 3; ++c) px[c] = (1 - cover) * px[c] + cover * rc.color[c] * tex;
          if (cover >= 0.5) {
            u = rc.vx;
            v = rc.vy;
          }
        }
        for (int c = 0; c < 3; ++c) ia[c][y][x] = static_cast<float>(std::clamp(px[c], 0.0, 1.0));
        fa[0][y][x] = static_cast<float>(u);
        fa[1][y][x] = static_cast<float>(v);
      }
    }
    frames.push_back(img);
    if (f + 1 < o.frames) clip.flows.push_back(flow);
  }
  clip.sequence = make_sequence(std::move(frames), "synthetic:" + std::to_string(seed));
  return clip;
}

void write_synthetic_dataset(const fs::path& root, int clips, const SyntheticOptions& options, uint64_t seed) {
  if (clips < 1) throw std::invalid_argument("make-synth: clip count must be positive");
  for (int i = 0; i < clips; ++i) {
    const auto clip = make_synthetic_clip(options, seed + static_cast<uint64_t>(i));
    char name[32];
    std::snprintf(name, sizeof(name), "clip_%04d", i);
    const auto dir = root / name;
    write_sequence(dir, clip.sequence);
    for (size_t k = 0; k < clip.flows.size(); ++k) {
      std::snprintf(name, sizeof(name), "flow_%04zu.f32", k);
      write_raw_tensor(dir / name, clip.flows[k]);
    }
  }
}

std::vector<fs::path> list_clips(const fs::path& root) {
  if (!fs::is_directory(root)) throw std::runtime_error("dataset root is not a directory: " + root.string());
  std::vector<fs::path> clips;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory() && !list_images(entry.path()).empty()) clips.push_back(entry.path());
  }
  std::sort(clips.begin(), clips.end());
  return clips;
}

}  // namespace cstvsr
