#include <doctest.h>

#include <cmath>

#include "cstvsr/flow_estimation.hpp"
#include "cstvsr/flow_ops.hpp"
#include "support.hpp"

using namespace cstvsr;
using cstvsr::testing::fractional;
using cstvsr::testing::gradcheck;

namespace {

torch::Tensor ramp(int64_t h, int64_t w) {
  return torch::arange(w, torch::kFloat64).view({1, 1, 1, w}).expand({1, 1, h, w}).contiguous();
}

torch::Tensor constant_flow(int64_t h, int64_t w, double u, double v) {
  auto f = torch::empty({1, 2, h, w}, torch::kFloat64);
  f.select(1, 0).fill_(u);
  f.select(1, 1).fill_(v);
  return f;
}

// Smooth texture for motion tests, shifted by dx pixels.
torch::Tensor texture(int64_t h, int64_t w, double dx) {
  auto img = torch::empty({1, 3, h, w}, torch::kFloat32);
  auto a = img.accessor<float, 4>();
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      const double xs = x - dx;
      const double v = 0.5 + 0.2 * std::sin(0.35 * xs + 0.2 * y) + 0.15 * std::cos(0.23 * y - 0.17 * xs);
      for (int c = 0; c < 3; ++c) a[0][c][y][x] = static_cast<float>(v);
    }
  return img;
}

}  // namespace

TEST_SUITE("flow_ops") {
  TEST_CASE("zero flow warp is identity") {
    auto img = torch::rand({2, 3, 9, 7}, torch::kFloat64);
    auto out = backward_warp(img, torch::zeros({2, 2, 9, 7}, torch::kFloat64));
    CHECK(torch::allclose(out, img, 0, 1e-12));
  }

  TEST_CASE("ramp warped by one pixel") {
    auto out = backward_warp(ramp(4, 6), constant_flow(4, 6, 1.0, 0.0));
    auto a = out.accessor<double, 4>();
    for (int64_t x = 0; x < 5; ++x) CHECK(a[0][0][2][x] == doctest::Approx(x + 1.0));
    CHECK(a[0][0][2][5] == doctest::Approx(5.0));
  }

  TEST_CASE("impulse at half-pixel flow splits evenly") {
    auto img = torch::zeros({1, 1, 5, 8}, torch::kFloat64);
    img[0][0][2][3] = 1.0;
    auto out = backward_warp(img, constant_flow(5, 8, 0.5, 0.0));
    auto a = out.accessor<double, 4>();
    CHECK(a[0][0][2][2] == doctest::Approx(0.5));
    CHECK(a[0][0][2][3] == doctest::Approx(0.5));
    CHECK(out.sum().item<double>() == doctest::Approx(1.0));
  }

  TEST_CASE("non-finite flow is rejected") {
    auto flow = torch::zeros({1, 2, 4, 4}, torch::kFloat64);
    flow[0][0][1][1] = std::nan("");
    CHECK_THROWS(backward_warp(torch::rand({1, 1, 4, 4}, torch::kFloat64), flow));
  }

  TEST_CASE("zero flow average splat is identity") {
    auto img = torch::rand({1, 3, 6, 5}, torch::kFloat64);
    auto r = forward_splat(img, torch::zeros({1, 2, 6, 5}, torch::kFloat64), SplatMode::average());
    CHECK(torch::allclose(r.output, img, 0, 1e-12));
    CHECK(r.mask.min().item<double>() == 1.0);
  }

  TEST_CASE("softmax splat of two pixels onto one target") {
    auto feat = torch::tensor({2.0, 5.0, 7.0}, torch::kFloat64).view({1, 1, 1, 3});
    auto flow = torch::zeros({1, 2, 1, 3}, torch::kFloat64);
    flow[0][0][0][0] = 1.0;
    flow[0][0][0][2] = 5.0;
    auto z = torch::tensor({0.3, -1.2, 4.0}, torch::kFloat64).view({1, 1, 1, 3});
    auto r = forward_splat(feat, flow, SplatMode::softmax(z));
    const double e0 = std::exp(0.3);
    const double e1 = std::exp(-1.2);
    auto o = r.output.accessor<double, 4>();
    auto m = r.mask.accessor<double, 4>();
    CHECK(o[0][0][0][1] == doctest::Approx((2.0 * e0 + 5.0 * e1) / (e0 + e1)));
    CHECK(m[0][0][0][1] == 1.0);
    CHECK(m[0][0][0][0] == 0.0);
    CHECK(m[0][0][0][2] == 0.0);
    CHECK(o[0][0][0][0] == 0.0);
    CHECK(o[0][0][0][2] == 0.0);
  }

  TEST_CASE("shift by two leaves two hole columns") {
    auto r = forward_splat(torch::rand({1, 2, 6, 6}, torch::kFloat64), constant_flow(6, 6, 2.0, 0.0),
                           SplatMode::average());
    auto expected = torch::ones({1, 1, 6, 6}, torch::kFloat64);
    expected.narrow(3, 0, 2).zero_();
    CHECK(torch::equal(r.mask, expected));
  }

  TEST_CASE("summation splat conserves in-bounds mass") {
    auto feat = torch::zeros({1, 3, 12, 12}, torch::kFloat64);
    feat.narrow(2, 3, 6).narrow(3, 3, 6).copy_(torch::rand({1, 3, 6, 6}, torch::kFloat64));
    torch::manual_seed(3);
    auto flow = torch::rand({1, 2, 12, 12}, torch::kFloat64) * 3.0 - 1.5;
    auto r = forward_splat(feat, flow, SplatMode::summation());
    CHECK(r.output.sum().item<double>() == doctest::Approx(feat.sum().item<double>()).epsilon(1e-5));
  }

  TEST_CASE("hole mask matches accumulated weight") {
    torch::manual_seed(11);
    auto flow = torch::randn({1, 2, 10, 10}, torch::kFloat64) * 2.5;
    auto weight = forward_splat(torch::ones({1, 1, 10, 10}, torch::kFloat64), flow, SplatMode::summation());
    auto r = forward_splat(torch::rand({1, 2, 10, 10}, torch::kFloat64), flow, SplatMode::average());
    CHECK(torch::equal(r.mask, (weight.output > kHoleEpsilon).to(torch::kFloat64)));
  }

  TEST_CASE("reverse flow of zero motion is zero") {
    auto zero = torch::zeros({1, 2, 8, 8}, torch::kFloat64);
    auto [vt0, vt1] = reverse_flow_to_t({zero, 0, 1}, {zero, 1, 0}, 0.5);
    CHECK(vt0.data.abs().max().item<double>() == 0.0);
    CHECK(vt1.data.abs().max().item<double>() == 0.0);
  }

  TEST_CASE("reverse flow of uniform motion") {
    auto [a0, a1] = reverse_flow_to_t({constant_flow(16, 16, 2, 0), 0, 1}, {constant_flow(16, 16, -2, 0), 1, 0}, 0.5);
    auto in0 = a0.data.narrow(2, 3, 10).narrow(3, 3, 10);
    auto in1 = a1.data.narrow(2, 3, 10).narrow(3, 3, 10);
    CHECK(torch::allclose(in0.select(1, 0), torch::full_like(in0.select(1, 0), -1.0), 0, 1e-9));
    CHECK(torch::allclose(in1.select(1, 0), torch::full_like(in1.select(1, 0), 1.0), 0, 1e-9));
    CHECK(a0.src_time == doctest::Approx(0.5));

    auto [b0, b1] = reverse_flow_to_t({constant_flow(16, 16, 4, 0), 0, 1}, {constant_flow(16, 16, -4, 0), 1, 0}, 0.25);
    auto c0 = b0.data.narrow(2, 4, 8).narrow(3, 4, 8).select(1, 0);
    auto c1 = b1.data.narrow(2, 4, 8).narrow(3, 4, 8).select(1, 0);
    CHECK(torch::allclose(c0, torch::full_like(c0, -1.0), 0, 1e-9));
    CHECK(torch::allclose(c1, torch::full_like(c1, 3.0), 0, 1e-9));
    CHECK(b0.data.select(1, 1).abs().max().item<double>() < 1e-12);
  }

  TEST_CASE("reverse flow rejects t outside the open interval") {
    FlowField z{torch::zeros({1, 2, 4, 4}), 0, 1};
    CHECK_THROWS(reverse_flow_to_t(z, z, 0.0));
    CHECK_THROWS(reverse_flow_to_t(z, z, 1.0));
  }

  TEST_CASE("average pooling of flow") {
    auto flow = torch::zeros({1, 2, 4, 4}, torch::kFloat64);
    flow.select(1, 0).copy_(ramp(4, 4).squeeze(1));
    auto pooled = avg_pool_flow(flow, 4);
    CHECK(pooled.sizes() == torch::IntArrayRef({1, 2, 1, 1}));
    CHECK(pooled[0][0][0][0].item<double>() == doctest::Approx(1.5));

    auto any = torch::rand({1, 2, 6, 5}, torch::kFloat64);
    CHECK(torch::equal(avg_pool_flow(any, 1), any));
    CHECK(avg_pool_flow(any, 4).sizes() == torch::IntArrayRef({1, 2, 2, 2}));
    CHECK_THROWS(avg_pool_flow(any, 0));
    CHECK_THROWS(avg_pool_flow(any, -2));
  }

  TEST_CASE("resize flow rescales displacements") {
    auto r = resize_flow(constant_flow(8, 8, 1.0, -0.5), 16, 24);
    CHECK(r.sizes() == torch::IntArrayRef({1, 2, 16, 24}));
    CHECK(torch::allclose(r.select(1, 0), torch::full({1, 16, 24}, 3.0, torch::kFloat64)));
    CHECK(torch::allclose(r.select(1, 1), torch::full({1, 16, 24}, -1.0, torch::kFloat64)));
  }

  TEST_CASE("identity deformable conv") {
    auto conv = DeformConv2d(3, 3);
    conv->set_identity();
    auto x = torch::rand({1, 3, 7, 9});
    auto out = conv->forward(x, torch::zeros({1, 18, 7, 9}), torch::full({1, 9, 7, 9}, 50.0));
    CHECK(torch::allclose(out, x, 0, 1e-6));
  }

  TEST_CASE("uniform offset shifts the sample") {
    auto conv = DeformConv2d(1, 1);
    conv->set_identity();
    auto x = ramp(6, 8).to(torch::kFloat32);
    auto offsets = torch::zeros({1, 18, 6, 8});
    for (int k = 0; k < 9; ++k) offsets.select(1, 2 * k).fill_(1.0);
    auto out = conv->forward(x, offsets, torch::full({1, 9, 6, 8}, 50.0));
    auto inner = out.narrow(3, 0, 7);
    CHECK(torch::allclose(inner, x.narrow(3, 1, 7), 0, 1e-5));
  }

  TEST_CASE("offsets beyond the bound are clamped") {
    auto feat = torch::rand({1, 2, 8, 8}, torch::kFloat64);
    auto mask = torch::ones({1, 9, 8, 8}, torch::kFloat64);
    const double bound = static_cast<double>(offset_clamp_bound(8, 8));
    CHECK(bound == 2.0);
    auto huge = deformable_columns(feat, torch::full({1, 18, 8, 8}, 1000.0, torch::kFloat64), mask, 3);
    auto at = deformable_columns(feat, torch::full({1, 18, 8, 8}, bound, torch::kFloat64), mask, 3);
    CHECK(torch::equal(huge, at));
  }

  TEST_CASE("gradient of backward warp") {
    auto feat = torch::rand({1, 2, 6, 6}, torch::kFloat64).requires_grad_();
    auto flow = fractional({1, 2, 6, 6}, -2, 2, 5).requires_grad_();
    auto res = gradcheck([](const auto& in) { return backward_warp(in[0], in[1]); }, {feat, flow});
    CHECK(res.relative_error < 1e-4);
  }

  TEST_CASE("gradient of forward splat") {
    auto feat = torch::rand({1, 2, 6, 6}, torch::kFloat64).requires_grad_();
    auto flow = fractional({1, 2, 6, 6}, -2, 2, 9).requires_grad_();
    auto z = torch::randn({1, 1, 6, 6}, torch::kFloat64).requires_grad_();
    SUBCASE("summation") {
      auto res = gradcheck(
          [](const auto& in) { return forward_splat(in[0], in[1], SplatMode::summation()).output; }, {feat, flow});
      CHECK(res.relative_error < 1e-4);
    }
    SUBCASE("average") {
      auto res = gradcheck(
          [](const auto& in) { return forward_splat(in[0], in[1], SplatMode::average()).output; }, {feat, flow});
      CHECK(res.relative_error < 1e-4);
    }
    SUBCASE("softmax") {
      auto res = gradcheck(
          [](const auto& in) { return forward_splat(in[0], in[1], SplatMode::softmax(in[2])).output; },
          {feat, flow, z});
      CHECK(res.relative_error < 1e-4);
    }
  }

  TEST_CASE("gradient of deformable sampling") {
    auto feat = torch::rand({1, 2, 5, 5}, torch::kFloat64).requires_grad_();
    auto offsets = (fractional({1, 18, 5, 5}, -1, 1, 13) * 0.9).requires_grad_();
    auto logits = torch::randn({1, 9, 5, 5}, torch::kFloat64).requires_grad_();
    auto weight = torch::randn({3, 2, 3, 3}, torch::kFloat64).requires_grad_();
    auto bias = torch::randn({3}, torch::kFloat64).requires_grad_();
    auto res = gradcheck([](const auto& in) { return deformable_sample(in[0], in[1], in[2], in[3], in[4], 3); },
                         {feat, offsets, logits, weight, bias});
    CHECK(res.relative_error < 1e-4);
  }
}

TEST_SUITE("flow_estimation") {
  TEST_CASE("identical frames give near-zero flow") {
    auto est = make_default_flow_estimator();
    auto img = texture(48, 48, 0.0);
    auto f = est->estimate(img, img);
    CHECK(f.data.abs().max().item<double>() < 0.5);
  }

  TEST_CASE("translation of three pixels") {
    auto est = make_default_flow_estimator();
    auto f = est->estimate(texture(64, 64, 0.0), texture(64, 64, 3.0));
    auto inner = f.data.narrow(2, 8, 48).narrow(3, 8, 48);
    CHECK(inner.select(1, 0).mean().item<double>() == doctest::Approx(3.0).epsilon(0.25));
    CHECK(std::abs(inner.select(1, 1).mean().item<double>()) < 0.75);
  }

  TEST_CASE("textureless frames give zero flow") {
    auto est = make_default_flow_estimator();
    auto gray = torch::full({1, 3, 32, 32}, 0.5f);
    CHECK(est->estimate(gray, gray).data.abs().max().item<double>() == 0.0);
  }

  TEST_CASE("estimate_pair counts one call") {
    auto est = make_default_flow_estimator();
    auto a = texture(32, 32, 0.0);
    auto b = texture(32, 32, 1.0);
    auto pair = est->estimate_pair(a, b);
    CHECK(est->pair_calls() == 1);
    CHECK(pair.forward.data.select(1, 0).mean().item<double>() > 0.5);
    CHECK(pair.backward.data.select(1, 0).mean().item<double>() < -0.5);
    est->reset_counter();
    CHECK(est->pair_calls() == 0);
  }

  TEST_CASE("estimator is deterministic") {
    auto est = make_default_flow_estimator();
    auto a = texture(32, 32, 0.0);
    auto b = texture(32, 32, 1.5);
    CHECK(torch::equal(est->estimate(a, b).data, est->estimate(a, b).data));
  }

  TEST_CASE("mismatched shapes are rejected") {
    auto est = make_default_flow_estimator();
    CHECK_THROWS(est->estimate(torch::rand({1, 3, 16, 16}), torch::rand({1, 3, 16, 20})));
  }
}
