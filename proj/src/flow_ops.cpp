#include "cstvsr/flow_ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace cstvsr {
namespace {

namespace F = torch::nn::functional;
using torch::autograd::AutogradContext;
using torch::autograd::tensor_list;

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

void check_pair(const torch::Tensor& feat, const torch::Tensor& flow, const std::string& op) {
  require(feat.defined() && feat.dim() == 4, op + ": expected features shaped [B, C, H, W]");
  require(flow.defined() && flow.dim() == 4 && flow.size(1) == 2,
          op + ": expected flow shaped [B, 2, H, W]");
  require(flow.size(0) == feat.size(0) && flow.size(2) == feat.size(2) &&
              flow.size(3) == feat.size(3),
          op + ": flow shape does not match features");
  require(torch::isfinite(flow).all().item<bool>(), op + ": flow contains non-finite values");
}

// Bilinear footprint of a sample position with border replication. When the
// position is clamped onto the border the sample no longer depends on that
// coordinate and the corresponding derivative is zero.
template <typename T>
struct Footprint {
  int64_t x0, x1, y0, y1;
  T fx, fy;
  bool free_x, free_y;
};

template <typename T>
Footprint<T> clamped_footprint(T sx, T sy, int64_t h, int64_t w) {
  const T max_x = static_cast<T>(w - 1);
  const T max_y = static_cast<T>(h - 1);
  Footprint<T> fp;
  fp.free_x = sx >= T(0) && sx <= max_x;
  fp.free_y = sy >= T(0) && sy <= max_y;
  const T cx = std::clamp(sx, T(0), max_x);
  const T cy = std::clamp(sy, T(0), max_y);
  fp.x0 = static_cast<int64_t>(std::floor(cx));
  fp.y0 = static_cast<int64_t>(std::floor(cy));
  fp.x1 = std::min(fp.x0 + 1, w - 1);
  fp.y1 = std::min(fp.y0 + 1, h - 1);
  fp.fx = cx - static_cast<T>(fp.x0);
  fp.fy = cy - static_cast<T>(fp.y0);
  return fp;
}

template <typename T>
T sample(const T* plane, int64_t w, const Footprint<T>& fp) {
  const T f00 = plane[fp.y0 * w + fp.x0];
  const T f01 = plane[fp.y0 * w + fp.x1];
  const T f10 = plane[fp.y1 * w + fp.x0];
  const T f11 = plane[fp.y1 * w + fp.x1];
  return (1 - fp.fy) * ((1 - fp.fx) * f00 + fp.fx * f01) + fp.fy * ((1 - fp.fx) * f10 + fp.fx * f11);
}

// Adds g * (bilinear weights) into grad_plane and returns d(sample)/dx, d(sample)/dy scaled by g.
template <typename T>
std::pair<T, T> sample_backward(const T* plane, T* grad_plane, int64_t w, const Footprint<T>& fp,
                                T g) {
  const T f00 = plane[fp.y0 * w + fp.x0];
  const T f01 = plane[fp.y0 * w + fp.x1];
  const T f10 = plane[fp.y1 * w + fp.x0];
  const T f11 = plane[fp.y1 * w + fp.x1];
  grad_plane[fp.y0 * w + fp.x0] += g * (1 - fp.fx) * (1 - fp.fy);
  grad_plane[fp.y0 * w + fp.x1] += g * fp.fx * (1 - fp.fy);
  grad_plane[fp.y1 * w + fp.x0] += g * (1 - fp.fx) * fp.fy;
  grad_plane[fp.y1 * w + fp.x1] += g * fp.fx * fp.fy;
  T dx = 0;
  T dy = 0;
  if (fp.free_x) dx = g * ((1 - fp.fy) * (f01 - f00) + fp.fy * (f11 - f10));
  if (fp.free_y) dy = g * ((1 - fp.fx) * (f10 - f00) + fp.fx * (f11 - f01));
  return {dx, dy};
}

// ---------------------------------------------------------------------------
// backward warp

template <typename T>
void warp_forward(const T* feat, const T* flow, T* out, int64_t batch, int64_t channels, int64_t h,
                  int64_t w) {
  const int64_t hw = h * w;
  for (int64_t b = 0; b < batch; ++b) {
    const T* u = flow + b * 2 * hw;
    const T* v = u + hw;
    for (int64_t y = 0; y < h; ++y) {
      for (int64_t x = 0; x < w; ++x) {
        const int64_t p = y * w + x;
        const auto fp = clamped_footprint<T>(x + u[p], y + v[p], h, w);
        for (int64_t c = 0; c < channels; ++c) {
          const int64_t plane = (b * channels + c) * hw;
          out[plane + p] = sample(feat + plane, w, fp);
        }
      }
    }
  }
}

template <typename T>
void warp_backward(const T* feat, const T* flow, const T* grad_out, T* grad_feat, T* grad_flow,
                   int64_t batch, int64_t channels, int64_t h, int64_t w) {
  const int64_t hw = h * w;
  for (int64_t b = 0; b < batch; ++b) {
    const T* u = flow + b * 2 * hw;
    const T* v = u + hw;
    T* gu = grad_flow + b * 2 * hw;
    T* gv = gu + hw;
    for (int64_t y = 0; y < h; ++y) {
      for (int64_t x = 0; x < w; ++x) {
        const int64_t p = y * w + x;
        const auto fp = clamped_footprint<T>(x + u[p], y + v[p], h, w);
        T du = 0;
        T dv = 0;
        for (int64_t c = 0; c < channels; ++c) {
          const int64_t plane = (b * channels + c) * hw;
          const auto [dx, dy] =
              sample_backward(feat + plane, grad_feat + plane, w, fp, grad_out[plane + p]);
          du += dx;
          dv += dy;
        }
        gu[p] = du;
        gv[p] = dv;
      }
    }
  }
}

struct BackwardWarpFn : public torch::autograd::Function<BackwardWarpFn> {
  static torch::Tensor forward(AutogradContext* ctx, const torch::Tensor& feat,
                               const torch::Tensor& flow) {
    ctx->save_for_backward({feat, flow});
    auto out = torch::empty_like(feat);
    AT_DISPATCH_FLOATING_TYPES(feat.scalar_type(), "backward_warp", [&] {
      warp_forward<scalar_t>(feat.data_ptr<scalar_t>(), flow.data_ptr<scalar_t>(),
                             out.data_ptr<scalar_t>(), feat.size(0), feat.size(1), feat.size(2),
                             feat.size(3));
    });
    return out;
  }

  static tensor_list backward(AutogradContext* ctx, tensor_list grads) {
    const auto saved = ctx->get_saved_variables();
    const auto& feat = saved[0];
    const auto& flow = saved[1];
    const auto grad_out = grads[0].contiguous();
    auto grad_feat = torch::zeros_like(feat);
    auto grad_flow = torch::zeros_like(flow);
    AT_DISPATCH_FLOATING_TYPES(feat.scalar_type(), "backward_warp_grad", [&] {
      warp_backward<scalar_t>(feat.data_ptr<scalar_t>(), flow.data_ptr<scalar_t>(),
                              grad_out.data_ptr<scalar_t>(), grad_feat.data_ptr<scalar_t>(),
                              grad_flow.data_ptr<scalar_t>(), feat.size(0), feat.size(1),
                              feat.size(2), feat.size(3));
    });
    return {grad_feat, grad_flow};
  }
};

// ---------------------------------------------------------------------------
// forward splatting

// Visits the in-bounds bilinear targets of a splat position. The callback
// receives the target index, its weight and the weight's derivatives with
// respect to the horizontal and vertical position.
template <typename T, typename Visit>
void for_each_target(T px, T py, int64_t h, int64_t w, Visit&& visit) {
  if (!(px > T(-1) && px < static_cast<T>(w) && py > T(-1) && py < static_cast<T>(h))) return;
  const T fx = std::floor(px);
  const T fy = std::floor(py);
  const int64_t x0 = static_cast<int64_t>(fx);
  const int64_t y0 = static_cast<int64_t>(fy);
  const T ax = px - fx;
  const T ay = py - fy;
  const T weight[4] = {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay};
  const T dwdx[4] = {-(1 - ay), 1 - ay, -ay, ay};
  const T dwdy[4] = {-(1 - ax), -ax, 1 - ax, ax};
  for (int k = 0; k < 4; ++k) {
    const int64_t tx = x0 + (k & 1);
    const int64_t ty = y0 + (k >> 1);
    if (tx < 0 || tx >= w || ty < 0 || ty >= h) continue;
    visit(ty * w + tx, weight[k], dwdx[k], dwdy[k]);
  }
}

struct SplatShape {
  int64_t batch, channels, h, w;
};

template <typename T>
void splat_forward(const T* feat, const T* flow, const T* expz, SplatKind kind, SplatShape s,
                   T* out, T* mask, T* denom) {
  const int64_t hw = s.h * s.w;
  std::vector<T> acc(static_cast<size_t>(s.channels * hw));
  std::vector<T> wsum(static_cast<size_t>(hw));
  for (int64_t b = 0; b < s.batch; ++b) {
    std::fill(acc.begin(), acc.end(), T(0));
    std::fill(wsum.begin(), wsum.end(), T(0));
    T* esum = denom + b * hw;
    std::fill(esum, esum + hw, T(0));
    const T* u = flow + b * 2 * hw;
    const T* v = u + hw;
    const T* fb = feat + b * s.channels * hw;
    for (int64_t y = 0; y < s.h; ++y) {
      for (int64_t x = 0; x < s.w; ++x) {
        const int64_t src = y * s.w + x;
        const T e = expz ? expz[b * hw + src] : T(1);
        for_each_target<T>(x + u[src], y + v[src], s.h, s.w, [&](int64_t t, T wt, T, T) {
          wsum[t] += wt;
          esum[t] += wt * e;
          for (int64_t c = 0; c < s.channels; ++c) acc[c * hw + t] += wt * e * fb[c * hw + src];
        });
      }
    }
    T* ob = out + b * s.channels * hw;
    T* mb = mask + b * hw;
    for (int64_t t = 0; t < hw; ++t) {
      const bool covered = wsum[t] > static_cast<T>(kHoleEpsilon) && esum[t] > T(0);
      mb[t] = covered ? T(1) : T(0);
      for (int64_t c = 0; c < s.channels; ++c) {
        T value = 0;
        if (covered) value = kind == SplatKind::kSummation ? acc[c * hw + t] : acc[c * hw + t] / esum[t];
        ob[c * hw + t] = value;
      }
    }
  }
}

template <typename T>
void splat_backward(const T* feat, const T* flow, const T* expz, SplatKind kind, SplatShape s,
                    const T* out, const T* mask, const T* denom, const T* grad_out, T* grad_feat,
                    T* grad_flow, T* grad_z) {
  const int64_t hw = s.h * s.w;
  const bool normalized = kind != SplatKind::kSummation;
  for (int64_t b = 0; b < s.batch; ++b) {
    const T* u = flow + b * 2 * hw;
    const T* v = u + hw;
    T* gu = grad_flow + b * 2 * hw;
    T* gv = gu + hw;
    const T* fb = feat + b * s.channels * hw;
    const T* ob = out + b * s.channels * hw;
    const T* gb = grad_out + b * s.channels * hw;
    T* gfb = grad_feat + b * s.channels * hw;
    const T* mb = mask + b * hw;
    const T* db = denom + b * hw;
    for (int64_t y = 0; y < s.h; ++y) {
      for (int64_t x = 0; x < s.w; ++x) {
        const int64_t src = y * s.w + x;
        const T e = expz ? expz[b * hw + src] : T(1);
        T du = 0;
        T dv = 0;
        T de = 0;
        for_each_target<T>(x + u[src], y + v[src], s.h, s.w, [&](int64_t t, T wt, T dwx, T dwy) {
          if (mb[t] == T(0)) return;
          // dL/dw for this (source, target) pair, and the weight's share of dL/de.
          T dl_dw = 0;
          if (normalized) {
            const T inv = T(1) / db[t];
            T dot = 0;
            for (int64_t c = 0; c < s.channels; ++c) {
              const T g = gb[c * hw + t];
              gfb[c * hw + src] += g * wt * e * inv;
              dot += g * (fb[c * hw + src] - ob[c * hw + t]);
            }
            dl_dw = e * inv * dot;
            de += wt * inv * dot;
          } else {
            for (int64_t c = 0; c < s.channels; ++c) {
              const T g = gb[c * hw + t];
              gfb[c * hw + src] += g * wt;
              dl_dw += g * fb[c * hw + src];
            }
          }
          du += dl_dw * dwx;
          dv += dl_dw * dwy;
        });
        gu[src] = du;
        gv[src] = dv;
        if (grad_z) grad_z[b * hw + src] = de * e;
      }
    }
  }
}

struct ForwardSplatFn : public torch::autograd::Function<ForwardSplatFn> {
  static tensor_list forward(AutogradContext* ctx, const torch::Tensor& feat,
                             const torch::Tensor& flow, const torch::Tensor& z, int64_t kind_id) {
    const auto kind = static_cast<SplatKind>(kind_id);
    const SplatShape shape{feat.size(0), feat.size(1), feat.size(2), feat.size(3)};
    torch::Tensor expz;
    if (kind == SplatKind::kSoftmax) {
      // The per-sample max shift cancels in the normalisation and keeps exp() finite.
      expz = (z - z.amax({1, 2, 3}, true)).exp().contiguous();
    }
    auto out = torch::empty_like(feat);
    auto mask = torch::empty({shape.batch, 1, shape.h, shape.w}, feat.options());
    auto denom = torch::empty({shape.batch, 1, shape.h, shape.w}, feat.options());
    AT_DISPATCH_FLOATING_TYPES(feat.scalar_type(), "forward_splat", [&] {
      splat_forward<scalar_t>(feat.data_ptr<scalar_t>(), flow.data_ptr<scalar_t>(),
                              expz.defined() ? expz.data_ptr<scalar_t>() : nullptr, kind, shape,
                              out.data_ptr<scalar_t>(), mask.data_ptr<scalar_t>(),
                              denom.data_ptr<scalar_t>());
    });
    ctx->save_for_backward({feat, flow, expz, out, mask, denom});
    ctx->saved_data["kind"] = kind_id;
    ctx->mark_non_differentiable({mask});
    return {out, mask};
  }

  static tensor_list backward(AutogradContext* ctx, tensor_list grads) {
    const auto saved = ctx->get_saved_variables();
    const auto& feat = saved[0];
    const auto& flow = saved[1];
    const auto& expz = saved[2];
    const auto& out = saved[3];
    const auto& mask = saved[4];
    const auto& denom = saved[5];
    const auto kind = static_cast<SplatKind>(ctx->saved_data["kind"].toInt());
    const SplatShape shape{feat.size(0), feat.size(1), feat.size(2), feat.size(3)};
    auto grad_out = grads[0].defined() ? grads[0].contiguous() : torch::zeros_like(out);
    auto grad_feat = torch::zeros_like(feat);
    auto grad_flow = torch::zeros_like(flow);
    torch::Tensor grad_z;
    if (kind == SplatKind::kSoftmax) grad_z = torch::zeros_like(expz);
    AT_DISPATCH_FLOATING_TYPES(feat.scalar_type(), "forward_splat_grad", [&] {
      splat_backward<scalar_t>(feat.data_ptr<scalar_t>(), flow.data_ptr<scalar_t>(),
                               expz.defined() ? expz.data_ptr<scalar_t>() : nullptr, kind, shape,
                               out.data_ptr<scalar_t>(), mask.data_ptr<scalar_t>(),
                               denom.data_ptr<scalar_t>(), grad_out.data_ptr<scalar_t>(),
                               grad_feat.data_ptr<scalar_t>(), grad_flow.data_ptr<scalar_t>(),
                               grad_z.defined() ? grad_z.data_ptr<scalar_t>() : nullptr);
    });
    return {grad_feat, grad_flow, grad_z, torch::Tensor()};
  }
};

// ---------------------------------------------------------------------------
// deformable sampling

struct DeformShape {
  int64_t batch, channels, h, w;
  int kernel;
};

template <typename T>
void deform_forward(const T* feat, const T* offsets, const T* mask, DeformShape s, T* cols) {
  const int64_t hw = s.h * s.w;
  const int64_t taps = static_cast<int64_t>(s.kernel) * s.kernel;
  const int64_t radius = s.kernel / 2;
  for (int64_t b = 0; b < s.batch; ++b) {
    const T* fb = feat + b * s.channels * hw;
    T* cb = cols + b * s.channels * taps * hw;
    for (int64_t k = 0; k < taps; ++k) {
      const T* dx = offsets + (b * 2 * taps + 2 * k) * hw;
      const T* dy = dx + hw;
      const T* m = mask + (b * taps + k) * hw;
      const int64_t kx = k % s.kernel - radius;
      const int64_t ky = k / s.kernel - radius;
      for (int64_t y = 0; y < s.h; ++y) {
        for (int64_t x = 0; x < s.w; ++x) {
          const int64_t p = y * s.w + x;
          const auto fp = clamped_footprint<T>(x + kx + dx[p], y + ky + dy[p], s.h, s.w);
          for (int64_t c = 0; c < s.channels; ++c) {
            cb[(c * taps + k) * hw + p] = m[p] * sample(fb + c * hw, s.w, fp);
          }
        }
      }
    }
  }
}

template <typename T>
void deform_backward(const T* feat, const T* offsets, const T* mask, DeformShape s,
                     const T* grad_cols, T* grad_feat, T* grad_offsets, T* grad_mask) {
  const int64_t hw = s.h * s.w;
  const int64_t taps = static_cast<int64_t>(s.kernel) * s.kernel;
  const int64_t radius = s.kernel / 2;
  for (int64_t b = 0; b < s.batch; ++b) {
    const T* fb = feat + b * s.channels * hw;
    T* gfb = grad_feat + b * s.channels * hw;
    const T* gcb = grad_cols + b * s.channels * taps * hw;
    for (int64_t k = 0; k < taps; ++k) {
      const int64_t off = (b * 2 * taps + 2 * k) * hw;
      const T* dx = offsets + off;
      const T* dy = dx + hw;
      T* gdx = grad_offsets + off;
      T* gdy = gdx + hw;
      const T* m = mask + (b * taps + k) * hw;
      T* gm = grad_mask + (b * taps + k) * hw;
      const int64_t kx = k % s.kernel - radius;
      const int64_t ky = k / s.kernel - radius;
      for (int64_t y = 0; y < s.h; ++y) {
        for (int64_t x = 0; x < s.w; ++x) {
          const int64_t p = y * s.w + x;
          const auto fp = clamped_footprint<T>(x + kx + dx[p], y + ky + dy[p], s.h, s.w);
          T acc_m = 0;
          T acc_x = 0;
          T acc_y = 0;
          for (int64_t c = 0; c < s.channels; ++c) {
            const T g = gcb[(c * taps + k) * hw + p];
            acc_m += g * sample(fb + c * hw, s.w, fp);
            const auto [ddx, ddy] = sample_backward(fb + c * hw, gfb + c * hw, s.w, fp, g * m[p]);
            acc_x += ddx;
            acc_y += ddy;
          }
          gm[p] = acc_m;
          gdx[p] = acc_x;
          gdy[p] = acc_y;
        }
      }
    }
  }
}

struct DeformColumnsFn : public torch::autograd::Function<DeformColumnsFn> {
  static torch::Tensor forward(AutogradContext* ctx, const torch::Tensor& feat,
                               const torch::Tensor& offsets, const torch::Tensor& mask,
                               int64_t kernel) {
    const DeformShape shape{feat.size(0), feat.size(1), feat.size(2), feat.size(3),
                            static_cast<int>(kernel)};
    auto cols =
        torch::empty({shape.batch, shape.channels * kernel * kernel, shape.h, shape.w}, feat.options());
    AT_DISPATCH_FLOATING_TYPES(feat.scalar_type(), "deformable_columns", [&] {
      deform_forward<scalar_t>(feat.data_ptr<scalar_t>(), offsets.data_ptr<scalar_t>(),
                               mask.data_ptr<scalar_t>(), shape, cols.data_ptr<scalar_t>());
    });
    ctx->save_for_backward({feat, offsets, mask});
    ctx->saved_data["kernel"] = kernel;
    return cols;
  }

  static tensor_list backward(AutogradContext* ctx, tensor_list grads) {
    const auto saved = ctx->get_saved_variables();
    const auto& feat = saved[0];
    const auto& offsets = saved[1];
    const auto& mask = saved[2];
    const DeformShape shape{feat.size(0), feat.size(1), feat.size(2), feat.size(3),
                            static_cast<int>(ctx->saved_data["kernel"].toInt())};
    const auto grad_cols = grads[0].contiguous();
    auto grad_feat = torch::zeros_like(feat);
    auto grad_offsets = torch::zeros_like(offsets);
    auto grad_mask = torch::zeros_like(mask);
    AT_DISPATCH_FLOATING_TYPES(feat.scalar_type(), "deformable_columns_grad", [&] {
      deform_backward<scalar_t>(feat.data_ptr<scalar_t>(), offsets.data_ptr<scalar_t>(),
                                mask.data_ptr<scalar_t>(), shape, grad_cols.data_ptr<scalar_t>(),
                                grad_feat.data_ptr<scalar_t>(), grad_offsets.data_ptr<scalar_t>(),
                                grad_mask.data_ptr<scalar_t>());
    });
    return {grad_feat, grad_offsets, grad_mask, torch::Tensor()};
  }
};

}  // namespace

torch::Tensor backward_warp(const torch::Tensor& feat, const torch::Tensor& flow) {
  check_pair(feat, flow, "backward_warp");
  return BackwardWarpFn::apply(feat.contiguous(), flow.to(feat.scalar_type()).contiguous());
}

SplatResult forward_splat(const torch::Tensor& feat, const torch::Tensor& flow,
                          const SplatMode& mode) {
  check_pair(feat, flow, "forward_splat");
  require(torch::isfinite(feat).all().item<bool>(), "forward_splat: features contain non-finite values");
  // Non-softmax modes pass an empty placeholder so the autograd node sees a defined input.
  torch::Tensor z = torch::empty({0}, feat.options());
  if (mode.kind == SplatKind::kSoftmax) {
    require(mode.importance.defined() && mode.importance.dim() == 4 &&
                mode.importance.size(0) == feat.size(0) && mode.importance.size(1) == 1 &&
                mode.importance.size(2) == feat.size(2) && mode.importance.size(3) == feat.size(3),
            "forward_splat: softmax importance must be shaped [B, 1, H, W]");
    require(torch::isfinite(mode.importance).all().item<bool>(),
            "forward_splat: softmax importance contains non-finite values");
    z = mode.importance.to(feat.scalar_type()).contiguous();
  }
  auto outputs = ForwardSplatFn::apply(feat.contiguous(), flow.to(feat.scalar_type()).contiguous(),
                                       z, static_cast<int64_t>(mode.kind));
  return {outputs[0], outputs[1]};
}

std::pair<FlowField, FlowField> reverse_flow_to_t(const FlowField& v01, const FlowField& v10,
                                                  double t) {
  require(t > 0.0 && t < 1.0, "reverse_flow_to_t: t must lie in (0, 1), got " + std::to_string(t));
  require(v01.data.defined() && v10.data.defined() && v01.data.sizes() == v10.data.sizes(),
          "reverse_flow_to_t: flows must have the same shape");
  torch::NoGradGuard no_grad;
  const auto& f01 = v01.data;
  const auto& f10 = v10.data;

  auto to_zero = forward_splat(-t * f01, t * f01, SplatMode::average());
  auto vt0 = to_zero.output * to_zero.mask + t * f10 * (1 - to_zero.mask);
  auto to_one = forward_splat(-(1 - t) * f10, (1 - t) * f10, SplatMode::average());
  auto vt1 = to_one.output * to_one.mask + (1 - t) * f01 * (1 - to_one.mask);

  const double t_abs = v01.src_time + t * (v01.dst_time - v01.src_time);
  return {FlowField{vt0, t_abs, v01.src_time}, FlowField{vt1, t_abs, v01.dst_time}};
}

torch::Tensor avg_pool_flow(const torch::Tensor& flow, int patch) {
  require(patch > 0, "avg_pool_flow: patch size must be positive");
  require(flow.dim() == 4 && flow.size(1) == 2, "avg_pool_flow: expected flow shaped [B, 2, H, W]");
  if (patch == 1) return flow;
  const int64_t pad_h = (patch - flow.size(2) % patch) % patch;
  const int64_t pad_w = (patch - flow.size(3) % patch) % patch;
  auto padded = flow;
  if (pad_h > 0 || pad_w > 0) {
    padded = F::pad(flow, F::PadFuncOptions({0, pad_w, 0, pad_h}).mode(torch::kReplicate));
  }
  return F::avg_pool2d(padded, F::AvgPool2dFuncOptions(patch).stride(patch));
}

torch::Tensor resize_flow(const torch::Tensor& flow, int64_t h, int64_t w) {
  require(flow.dim() == 4 && flow.size(1) == 2, "resize_flow: expected flow shaped [B, 2, H, W]");
  if (flow.size(2) == h && flow.size(3) == w) return flow;
  auto resized = F::interpolate(flow, F::InterpolateFuncOptions()
                                          .size(std::vector<int64_t>{h, w})
                                          .mode(torch::kBilinear)
                                          .align_corners(false));
  const double sx = static_cast<double>(w) / static_cast<double>(flow.size(3));
  const double sy = static_cast<double>(h) / static_cast<double>(flow.size(2));
  auto scale = torch::tensor({sx, sy}, resized.options()).view({1, 2, 1, 1});
  return resized * scale;
}

int64_t offset_clamp_bound(int64_t h, int64_t w) { return (std::max(h, w) + 3) / 4; }

torch::Tensor deformable_columns(const torch::Tensor& feat, const torch::Tensor& offsets,
                                 const torch::Tensor& mask, int kernel) {
  require(kernel > 0 && kernel % 2 == 1, "deformable_columns: kernel size must be odd");
  require(feat.dim() == 4, "deformable_columns: expected features shaped [B, C, H, W]");
  const int64_t taps = static_cast<int64_t>(kernel) * kernel;
  require(offsets.dim() == 4 && offsets.size(0) == feat.size(0) && offsets.size(1) == 2 * taps &&
              offsets.size(2) == feat.size(2) && offsets.size(3) == feat.size(3),
          "deformable_columns: offsets must be shaped [B, 2*K*K, H, W]");
  require(mask.dim() == 4 && mask.size(0) == feat.size(0) && mask.size(1) == taps &&
              mask.size(2) == feat.size(2) && mask.size(3) == feat.size(3),
          "deformable_columns: mask must be shaped [B, K*K, H, W]");
  const double bound = static_cast<double>(offset_clamp_bound(feat.size(2), feat.size(3)));
  auto clamped = offsets.to(feat.scalar_type()).clamp(-bound, bound).contiguous();
  return DeformColumnsFn::apply(feat.contiguous(), clamped, mask.to(feat.scalar_type()).contiguous(),
                                kernel);
}

torch::Tensor deformable_sample(const torch::Tensor& feat, const torch::Tensor& offsets,
                                const torch::Tensor& mask_logits, const torch::Tensor& weight,
                                const torch::Tensor& bias, int kernel) {
  require(weight.dim() == 4 && weight.size(1) == feat.size(1) && weight.size(2) == kernel &&
              weight.size(3) == kernel,
          "deformable_sample: weight must be shaped [C_out, C, K, K]");
  const auto cols = deformable_columns(feat, offsets, torch::sigmoid(mask_logits), kernel);
  const int64_t batch = feat.size(0);
  const int64_t h = feat.size(2);
  const int64_t w = feat.size(3);
  auto out = weight.reshape({weight.size(0), -1}).matmul(cols.reshape({batch, cols.size(1), h * w}));
  if (bias.defined()) out = out + bias.view({1, -1, 1});
  return out.view({batch, weight.size(0), h, w});
}

DeformConv2dImpl::DeformConv2dImpl(int64_t in_channels, int64_t out_channels, int kernel)
    : kernel_(kernel) {
  require(kernel % 2 == 1, "DeformConv2d: kernel size must be odd");
  weight = register_parameter("weight", torch::empty({out_channels, in_channels, kernel, kernel}));
  bias = register_parameter("bias", torch::empty({out_channels}));
  torch::NoGradGuard no_grad;
  torch::nn::init::kaiming_uniform_(weight, std::sqrt(5.0));
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_channels * kernel * kernel));
  bias.uniform_(-bound, bound);
}

torch::Tensor DeformConv2dImpl::forward(const torch::Tensor& feat, const torch::Tensor& offsets,
                                        const torch::Tensor& mask_logits) {
  return deformable_sample(feat, offsets, mask_logits, weight, bias, kernel_);
}

void DeformConv2dImpl::set_identity() {
  torch::NoGradGuard no_grad;
  require(weight.size(0) == weight.size(1), "DeformConv2d: identity needs equal channel counts");
  weight.zero_();
  bias.zero_();
  for (int64_t c = 0; c < weight.size(0); ++c) weight[c][c][kernel_ / 2][kernel_ / 2] = 1.0;
}

}  // namespace cstvsr
