#include "arnas/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace arnas {

Var Tape::leaf(Tensor value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad, nullptr});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(fn));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn fn) {
  bool needs = false;
  for (Var v : inputs) {
    if (v.valid() && nodes_.at(v.id).requires_grad) needs = true;
  }
  nodes_.push_back(Node{std::move(value), Tensor{}, needs,
                        needs ? std::move(fn) : BackwardFn{}});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Tensor Tape::grad(Var v) const {
  const Node& node = nodes_.at(v.id);
  if (node.grad.empty()) return Tensor(node.value.shape());
  return node.grad;
}

Tensor& Tape::grad_buffer(Var v) {
  Node& node = nodes_.at(v.id);
  if (node.grad.empty()) node.grad = Tensor(node.value.shape());
  return node.grad;
}

void Tape::backward(Var loss) {
  Node& root = nodes_.at(loss.id);
  if (root.value.size() != 1) {
    throw std::invalid_argument("backward() requires a scalar loss");
  }
  if (!root.requires_grad) return;
  grad_buffer(loss)[0] += 1.0;
  for (int i = loss.id; i >= 0; --i) {
    Node& node = nodes_[static_cast<std::size_t>(i)];
    if (!node.backward || node.grad.empty()) continue;
    node.backward(*this, node.grad);
  }
}

int conv_output_size(int in, int kernel, int stride, int padding, int dilation) {
  return (in + 2 * padding - dilation * (kernel - 1) - 1) / stride + 1;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    z += out[i];
  }
  for (double& v : out) v /= z;
  return out;
}

namespace {

struct ConvGeometry {
  Shape in;
  Shape out;
  int kernel;
  Conv2dParams p;
  int cin_per_group;
  int cout_per_group;
};

inline bool is_pointwise(const ConvGeometry& g) {
  return g.kernel == 1 && g.p.stride == 1 && g.p.padding == 0 && g.p.groups == 1;
}

// Copies one input plane into a zero-bordered buffer so kernel taps never
// need bounds checks.
void pad_plane(const double* src, int h, int w, int pad, int ph, int pw, std::vector<double>& dst) {
  dst.assign(static_cast<std::size_t>(ph) * pw, 0.0);
  for (int r = 0; r < h; ++r)
    std::copy_n(src + static_cast<std::size_t>(r) * w, w,
                dst.data() + static_cast<std::size_t>(r + pad) * pw + pad);
}

void conv_forward(const ConvGeometry& g, const double* x, const double* w,
                  double* y, OpCounter& counter) {
  const int k = g.kernel;
  const std::size_t in_plane = g.in.plane();
  const std::size_t out_plane = g.out.plane();
  if (is_pointwise(g)) {
    for (int n = 0; n < g.in.n; ++n)
      for (int oc = 0; oc < g.out.c; ++oc) {
        double* yp = y + (static_cast<std::size_t>(n) * g.out.c + oc) * out_plane;
        for (int ic = 0; ic < g.in.c; ++ic) {
          const double wv = w[static_cast<std::size_t>(oc) * g.in.c + ic];
          const double* xp = x + (static_cast<std::size_t>(n) * g.in.c + ic) * in_plane;
          for (std::size_t i = 0; i < out_plane; ++i) yp[i] += wv * xp[i];
        }
      }
    counter.macs += static_cast<std::uint64_t>(g.in.n) * g.out.c * g.in.c * out_plane;
    return;
  }
  const int pad = g.p.padding;
  const int ph = g.in.h + 2 * pad;
  const int pw = g.in.w + 2 * pad;
  const int s = g.p.stride;
  const int d = g.p.dilation;
  const int oh_n = g.out.h;
  const int ow_n = g.out.w;
  std::vector<double> plane;
  for (int n = 0; n < g.in.n; ++n) {
    for (int ic = 0; ic < g.in.c; ++ic) {
      pad_plane(x + (static_cast<std::size_t>(n) * g.in.c + ic) * in_plane, g.in.h, g.in.w, pad,
                ph, pw, plane);
      const int grp = ic / g.cin_per_group;
      const int icg = ic - grp * g.cin_per_group;
      for (int ocg = 0; ocg < g.cout_per_group; ++ocg) {
        const int oc = grp * g.cout_per_group + ocg;
        double* yp = y + (static_cast<std::size_t>(n) * g.out.c + oc) * out_plane;
        const double* wp = w + (static_cast<std::size_t>(oc) * g.cin_per_group + icg) * k * k;
        for (int kh = 0; kh < k; ++kh) {
          for (int kw = 0; kw < k; ++kw) {
            const double wv = wp[kh * k + kw];
            const double* base = plane.data() + static_cast<std::size_t>(kh * d) * pw + kw * d;
            for (int oh = 0; oh < oh_n; ++oh) {
              double* yr = yp + static_cast<std::size_t>(oh) * ow_n;
              const double* pr = base + static_cast<std::size_t>(oh) * s * pw;
              if (s == 1) {
                for (int ow = 0; ow < ow_n; ++ow) yr[ow] += wv * pr[ow];
              } else {
                for (int ow = 0; ow < ow_n; ++ow) yr[ow] += wv * pr[ow * s];
              }
            }
          }
        }
        counter.macs += out_plane * static_cast<std::uint64_t>(k * k);
      }
    }
  }
}

void conv_backward(const ConvGeometry& g, const double* x, const double* w,
                   const double* gy, double* gx, double* gw) {
  const int k = g.kernel;
  const std::size_t in_plane = g.in.plane();
  const std::size_t out_plane = g.out.plane();
  if (is_pointwise(g)) {
    for (int n = 0; n < g.in.n; ++n)
      for (int oc = 0; oc < g.out.c; ++oc) {
        const double* gyp = gy + (static_cast<std::size_t>(n) * g.out.c + oc) * out_plane;
        for (int ic = 0; ic < g.in.c; ++ic) {
          const std::size_t widx = static_cast<std::size_t>(oc) * g.in.c + ic;
          const std::size_t xoff = (static_cast<std::size_t>(n) * g.in.c + ic) * in_plane;
          if (gw != nullptr) {
            const double* xp = x + xoff;
            double acc = 0.0;
            for (std::size_t i = 0; i < out_plane; ++i) acc += gyp[i] * xp[i];
            gw[widx] += acc;
          }
          if (gx != nullptr) {
            const double wv = w[widx];
            double* gxp = gx + xoff;
            for (std::size_t i = 0; i < out_plane; ++i) gxp[i] += wv * gyp[i];
          }
        }
      }
    return;
  }
  const int pad = g.p.padding;
  const int ph = g.in.h + 2 * pad;
  const int pw = g.in.w + 2 * pad;
  const int s = g.p.stride;
  const int d = g.p.dilation;
  const int oh_n = g.out.h;
  const int ow_n = g.out.w;
  std::vector<double> plane;
  std::vector<double> gplane;
  for (int n = 0; n < g.in.n; ++n) {
    for (int ic = 0; ic < g.in.c; ++ic) {
      const std::size_t xoff = (static_cast<std::size_t>(n) * g.in.c + ic) * in_plane;
      if (gw != nullptr) pad_plane(x + xoff, g.in.h, g.in.w, pad, ph, pw, plane);
      if (gx != nullptr) gplane.assign(static_cast<std::size_t>(ph) * pw, 0.0);
      const int grp = ic / g.cin_per_group;
      const int icg = ic - grp * g.cin_per_group;
      for (int ocg = 0; ocg < g.cout_per_group; ++ocg) {
        const int oc = grp * g.cout_per_group + ocg;
        const double* gyp = gy + (static_cast<std::size_t>(n) * g.out.c + oc) * out_plane;
        const std::size_t woff = (static_cast<std::size_t>(oc) * g.cin_per_group + icg) * k * k;
        for (int kh = 0; kh < k; ++kh) {
          for (int kw = 0; kw < k; ++kw) {
            const std::size_t base = static_cast<std::size_t>(kh * d) * pw + kw * d;
            if (gw != nullptr) {
              double acc = 0.0;
              for (int oh = 0; oh < oh_n; ++oh) {
                const double* gyr = gyp + static_cast<std::size_t>(oh) * ow_n;
                const double* pr = plane.data() + base + static_cast<std::size_t>(oh) * s * pw;
                for (int ow = 0; ow < ow_n; ++ow) acc += gyr[ow] * pr[ow * s];
              }
              gw[woff + kh * k + kw] += acc;
            }
            if (gx != nullptr) {
              const double wv = w[woff + kh * k + kw];
              for (int oh = 0; oh < oh_n; ++oh) {
                const double* gyr = gyp + static_cast<std::size_t>(oh) * ow_n;
                double* gr = gplane.data() + base + static_cast<std::size_t>(oh) * s * pw;
                if (s == 1) {
                  for (int ow = 0; ow < ow_n; ++ow) gr[ow] += wv * gyr[ow];
                } else {
                  for (int ow = 0; ow < ow_n; ++ow) gr[ow * s] += wv * gyr[ow];
                }
              }
            }
          }
        }
      }
      if (gx != nullptr) {
        double* gxp = gx + xoff;
        for (int r = 0; r < g.in.h; ++r) {
          const double* src = gplane.data() + static_cast<std::size_t>(r + pad) * pw + pad;
          double* dst = gxp + static_cast<std::size_t>(r) * g.in.w;
          for (int c = 0; c < g.in.w; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

}  // namespace

namespace ops {

Var conv2d(Tape& t, Var x, Var weight, const Conv2dParams& p) {
  const Shape xs = t.value(x).shape();
  const Shape ws = t.value(weight).shape();
  require(ws.h == ws.w, "conv2d: square kernels only");
  require(p.groups >= 1 && xs.c % p.groups == 0 && ws.n % p.groups == 0,
          "conv2d: channels not divisible by groups");
  require(ws.c * p.groups == xs.c,
          "conv2d: input channels " + std::to_string(xs.c) +
              " do not match weight " + ws.str());
  ConvGeometry g;
  g.in = xs;
  g.kernel = ws.h;
  g.p = p;
  g.cin_per_group = ws.c;
  g.cout_per_group = ws.n / p.groups;
  g.out = Shape{xs.n, ws.n, conv_output_size(xs.h, g.kernel, p.stride, p.padding, p.dilation),
                conv_output_size(xs.w, g.kernel, p.stride, p.padding, p.dilation)};
  require(g.out.h > 0 && g.out.w > 0, "conv2d: empty output for input " + xs.str());
  Tensor y(g.out);
  conv_forward(g, t.value(x).raw(), t.value(weight).raw(), y.raw(), t.counter());
  return t.record(std::move(y), {x, weight}, [x, weight, g](Tape& tp, const Tensor& gy) {
    double* gx = tp.requires_grad(x) ? tp.grad_buffer(x).raw() : nullptr;
    double* gw = tp.requires_grad(weight) ? tp.grad_buffer(weight).raw() : nullptr;
    conv_backward(g, tp.value(x).raw(), tp.value(weight).raw(), gy.raw(), gx, gw);
  });
}

Var add_channel_bias(Tape& t, Var x, Var bias) {
  const Shape xs = t.value(x).shape();
  require(t.value(bias).size() == static_cast<std::size_t>(xs.c), "bias size mismatch");
  Tensor y = t.value(x);
  const std::size_t plane = xs.plane();
  const double* b = t.value(bias).raw();
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c) {
      double* p = y.raw() + (static_cast<std::size_t>(n) * xs.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) p[i] += b[c];
    }
  return t.record(std::move(y), {x, bias}, [x, bias, xs](Tape& tp, const Tensor& gy) {
    if (tp.requires_grad(x)) tp.grad_buffer(x).axpy(1.0, gy);
    if (tp.requires_grad(bias)) {
      double* gb = tp.grad_buffer(bias).raw();
      const std::size_t plane = xs.plane();
      for (int n = 0; n < xs.n; ++n)
        for (int c = 0; c < xs.c; ++c) {
          const double* p = gy.raw() + (static_cast<std::size_t>(n) * xs.c + c) * plane;
          double acc = 0.0;
          for (std::size_t i = 0; i < plane; ++i) acc += p[i];
          gb[c] += acc;
        }
    }
  });
}

Var relu(Tape& t, Var x) {
  Tensor y = t.value(x);
  for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
  return t.record(std::move(y), {x}, [x](Tape& tp, const Tensor& gy) {
    const Tensor& xv = tp.value(x);
    double* gx = tp.grad_buffer(x).raw();
    for (std::size_t i = 0; i < xv.size(); ++i)
      if (xv[i] > 0.0) gx[i] += gy[i];
  });
}

Var batch_norm(Tape& t, Var x, NormMode mode, BatchNormBuffers buffers,
               std::optional<Var> gamma, std::optional<Var> beta) {
  const Shape s = t.value(x).shape();
  require(buffers.running_mean != nullptr && buffers.running_var != nullptr,
          "batch_norm: missing running buffers");
  require(buffers.running_mean->size() == static_cast<std::size_t>(s.c),
          "batch_norm: running buffer size mismatch");
  const std::size_t plane = s.plane();
  const double count = static_cast<double>(s.n) * static_cast<double>(plane);
  std::vector<double> mean(s.c, 0.0);
  std::vector<double> inv_std(s.c, 0.0);
  const Tensor& xv = t.value(x);
  if (mode == NormMode::kBatch) {
    for (int c = 0; c < s.c; ++c) {
      double acc = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const double* p = xv.raw() + (static_cast<std::size_t>(n) * s.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) acc += p[i];
      }
      mean[c] = acc / count;
      double var = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const double* p = xv.raw() + (static_cast<std::size_t>(n) * s.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) var += (p[i] - mean[c]) * (p[i] - mean[c]);
      }
      var /= count;
      inv_std[c] = 1.0 / std::sqrt(var + buffers.eps);
      if (buffers.update_running) {
        const double unbiased = count > 1 ? var * count / (count - 1.0) : var;
        double& rm = (*buffers.running_mean)[c];
        double& rv = (*buffers.running_var)[c];
        rm = (1.0 - buffers.momentum) * rm + buffers.momentum * mean[c];
        rv = (1.0 - buffers.momentum) * rv + buffers.momentum * unbiased;
      }
    }
  } else {
    for (int c = 0; c < s.c; ++c) {
      mean[c] = (*buffers.running_mean)[c];
      inv_std[c] = 1.0 / std::sqrt((*buffers.running_var)[c] + buffers.eps);
    }
  }
  std::vector<double> gam(s.c, 1.0);
  std::vector<double> bet(s.c, 0.0);
  if (gamma) std::copy_n(t.value(*gamma).raw(), s.c, gam.begin());
  if (beta) std::copy_n(t.value(*beta).raw(), s.c, bet.begin());

  Tensor xhat(s);
  Tensor y(s);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const std::size_t off = (static_cast<std::size_t>(n) * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double h = (xv[off + i] - mean[c]) * inv_std[c];
        xhat[off + i] = h;
        y[off + i] = gam[c] * h + bet[c];
      }
    }
  t.counter().norm_ops += 2 * s.numel();

  const Var gvar = gamma.value_or(Var{});
  const Var bvar = beta.value_or(Var{});
  std::vector<Var> inputs{x};
  if (gamma) inputs.push_back(*gamma);
  if (beta) inputs.push_back(*beta);
  return t.record(
      std::move(y), std::span<const Var>(inputs),
      [x, gvar, bvar, mode, s, inv_std, gam, xhat = std::move(xhat), count](
          Tape& tp, const Tensor& gy) {
        const std::size_t plane = s.plane();
        if (gvar.valid() && tp.requires_grad(gvar)) {
          double* gg = tp.grad_buffer(gvar).raw();
          for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c) {
              const std::size_t off = (static_cast<std::size_t>(n) * s.c + c) * plane;
              double acc = 0.0;
              for (std::size_t i = 0; i < plane; ++i) acc += gy[off + i] * xhat[off + i];
              gg[c] += acc;
            }
        }
        if (bvar.valid() && tp.requires_grad(bvar)) {
          double* gb = tp.grad_buffer(bvar).raw();
          for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c) {
              const std::size_t off = (static_cast<std::size_t>(n) * s.c + c) * plane;
              double acc = 0.0;
              for (std::size_t i = 0; i < plane; ++i) acc += gy[off + i];
              gb[c] += acc;
            }
        }
        if (!tp.requires_grad(x)) return;
        double* gx = tp.grad_buffer(x).raw();
        for (int c = 0; c < s.c; ++c) {
          double sum_g = 0.0;
          double sum_gh = 0.0;
          if (mode == NormMode::kBatch) {
            for (int n = 0; n < s.n; ++n) {
              const std::size_t off = (static_cast<std::size_t>(n) * s.c + c) * plane;
              for (std::size_t i = 0; i < plane; ++i) {
                sum_g += gy[off + i];
                sum_gh += gy[off + i] * xhat[off + i];
              }
            }
          }
          const double scale = gam[c] * inv_std[c];
          for (int n = 0; n < s.n; ++n) {
            const std::size_t off = (static_cast<std::size_t>(n) * s.c + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              if (mode == NormMode::kBatch) {
                gx[off + i] += scale * (gy[off + i] - sum_g / count -
                                        xhat[off + i] * sum_gh / count);
              } else {
                gx[off + i] += scale * gy[off + i];
              }
            }
          }
        }
      });
}

namespace {

Shape pool_shape(const Shape& s, int kernel, int stride, int padding) {
  return Shape{s.n, s.c, conv_output_size(s.h, kernel, stride, padding, 1),
               conv_output_size(s.w, kernel, stride, padding, 1)};
}

}  // namespace

Var max_pool(Tape& t, Var x, int kernel, int stride, int padding) {
  const Tensor& xv = t.value(x);
  const Shape s = xv.shape();
  const Shape os = pool_shape(s, kernel, stride, padding);
  Tensor y(os);
  std::vector<std::size_t> arg(os.numel());
  std::size_t o = 0;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * s.plane();
      for (int oh = 0; oh < os.h; ++oh)
        for (int ow = 0; ow < os.w; ++ow, ++o) {
          double best = -std::numeric_limits<double>::infinity();
          std::size_t best_i = 0;
          for (int kh = 0; kh < kernel; ++kh) {
            const int ih = oh * stride - padding + kh;
            for (int kw = 0; kw < kernel; ++kw) {
              const int iw = ow * stride - padding + kw;
              if (ih < 0 || ih >= s.h || iw < 0 || iw >= s.w) continue;
              const std::size_t idx = base + static_cast<std::size_t>(ih) * s.w + iw;
              if (xv[idx] > best) {
                best = xv[idx];
                best_i = idx;
              }
            }
          }
          y[o] = best;
          arg[o] = best_i;
        }
    }
  t.counter().pool_ops += os.numel() * static_cast<std::uint64_t>(kernel * kernel);
  return t.record(std::move(y), {x}, [x, arg = std::move(arg)](Tape& tp, const Tensor& gy) {
    double* gx = tp.grad_buffer(x).raw();
    for (std::size_t i = 0; i < arg.size(); ++i) gx[arg[i]] += gy[i];
  });
}

Var avg_pool(Tape& t, Var x, int kernel, int stride, int padding) {
  const Tensor& xv = t.value(x);
  const Shape s = xv.shape();
  const Shape os = pool_shape(s, kernel, stride, padding);
  Tensor y(os);
  std::size_t o = 0;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * s.plane();
      for (int oh = 0; oh < os.h; ++oh)
        for (int ow = 0; ow < os.w; ++ow, ++o) {
          double acc = 0.0;
          int cnt = 0;
          for (int kh = 0; kh < kernel; ++kh) {
            const int ih = oh * stride - padding + kh;
            for (int kw = 0; kw < kernel; ++kw) {
              const int iw = ow * stride - padding + kw;
              if (ih < 0 || ih >= s.h || iw < 0 || iw >= s.w) continue;
              acc += xv[base + static_cast<std::size_t>(ih) * s.w + iw];
              ++cnt;
            }
          }
          y[o] = acc / cnt;
        }
    }
  t.counter().pool_ops += os.numel() * static_cast<std::uint64_t>(kernel * kernel);
  return t.record(std::move(y), {x}, [x, s, os, kernel, stride, padding](Tape& tp, const Tensor& gy) {
    double* gx = tp.grad_buffer(x).raw();
    std::size_t o = 0;
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c) {
        const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * s.plane();
        for (int oh = 0; oh < os.h; ++oh)
          for (int ow = 0; ow < os.w; ++ow, ++o) {
            const int h0 = std::max(0, oh * stride - padding);
            const int h1 = std::min(s.h, oh * stride - padding + kernel);
            const int w0 = std::max(0, ow * stride - padding);
            const int w1 = std::min(s.w, ow * stride - padding + kernel);
            const double g = gy[o] / ((h1 - h0) * (w1 - w0));
            for (int ih = h0; ih < h1; ++ih)
              for (int iw = w0; iw < w1; ++iw) gx[base + static_cast<std::size_t>(ih) * s.w + iw] += g;
          }
      }
  });
}

Var global_avg_pool(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  const Shape s = xv.shape();
  const std::size_t plane = s.plane();
  Tensor y(Shape{s.n, s.c, 1, 1});
  for (std::size_t i = 0; i < y.size(); ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < plane; ++j) acc += xv[i * plane + j];
    y[i] = acc / static_cast<double>(plane);
  }
  t.counter().pool_ops += s.numel();
  return t.record(std::move(y), {x}, [x, plane](Tape& tp, const Tensor& gy) {
    double* gx = tp.grad_buffer(x).raw();
    for (std::size_t i = 0; i < gy.size(); ++i) {
      const double g = gy[i] / static_cast<double>(plane);
      for (std::size_t j = 0; j < plane; ++j) gx[i * plane + j] += g;
    }
  });
}

Var linear(Tape& t, Var x, Var weight, Var bias) {
  const Shape xs = t.value(x).shape();
  const Shape ws = t.value(weight).shape();
  const int in = xs.c * xs.h * xs.w;
  require(ws.c * ws.h * ws.w == in, "linear: input features " + std::to_string(in) +
                                        " do not match weight " + ws.str());
  require(t.value(bias).size() == static_cast<std::size_t>(ws.n), "linear: bias size mismatch");
  const int out = ws.n;
  Tensor y(Shape{xs.n, out, 1, 1});
  const double* xp = t.value(x).raw();
  const double* wp = t.value(weight).raw();
  const double* bp = t.value(bias).raw();
  for (int n = 0; n < xs.n; ++n)
    for (int o = 0; o < out; ++o) {
      double acc = bp[o];
      for (int i = 0; i < in; ++i) acc += wp[static_cast<std::size_t>(o) * in + i] * xp[static_cast<std::size_t>(n) * in + i];
      y[static_cast<std::size_t>(n) * out + o] = acc;
    }
  t.counter().macs += static_cast<std::uint64_t>(xs.n) * out * in;
  return t.record(std::move(y), {x, weight, bias}, [x, weight, bias, xs, in, out](Tape& tp, const Tensor& gy) {
    const double* xp = tp.value(x).raw();
    const double* wp = tp.value(weight).raw();
    if (tp.requires_grad(x)) {
      double* gx = tp.grad_buffer(x).raw();
      for (int n = 0; n < xs.n; ++n)
        for (int o = 0; o < out; ++o) {
          const double g = gy[static_cast<std::size_t>(n) * out + o];
          for (int i = 0; i < in; ++i) gx[static_cast<std::size_t>(n) * in + i] += g * wp[static_cast<std::size_t>(o) * in + i];
        }
    }
    if (tp.requires_grad(weight)) {
      double* gw = tp.grad_buffer(weight).raw();
      for (int n = 0; n < xs.n; ++n)
        for (int o = 0; o < out; ++o) {
          const double g = gy[static_cast<std::size_t>(n) * out + o];
          for (int i = 0; i < in; ++i) gw[static_cast<std::size_t>(o) * in + i] += g * xp[static_cast<std::size_t>(n) * in + i];
        }
    }
    if (tp.requires_grad(bias)) {
      double* gb = tp.grad_buffer(bias).raw();
      for (int n = 0; n < xs.n; ++n)
        for (int o = 0; o < out; ++o) gb[o] += gy[static_cast<std::size_t>(n) * out + o];
    }
  });
}

Var sum(Tape& t, std::span<const Var> xs) {
  require(!xs.empty(), "sum of no tensors");
  Tensor y = t.value(xs.front());
  for (std::size_t i = 1; i < xs.size(); ++i) y.axpy(1.0, t.value(xs[i]));
  std::vector<Var> inputs(xs.begin(), xs.end());
  return t.record(std::move(y), std::span<const Var>(inputs), [inputs](Tape& tp, const Tensor& gy) {
    for (Var v : inputs)
      if (tp.requires_grad(v)) tp.grad_buffer(v).axpy(1.0, gy);
  });
}

Var concat_channels(Tape& t, std::span<const Var> xs) {
  require(!xs.empty(), "concat of no tensors");
  Shape s = t.value(xs.front()).shape();
  int total = 0;
  std::vector<int> channels;
  for (Var v : xs) {
    const Shape vs = t.value(v).shape();
    require(vs.n == s.n && vs.h == s.h && vs.w == s.w, "concat_channels: shape mismatch");
    channels.push_back(vs.c);
    total += vs.c;
  }
  Shape os{s.n, total, s.h, s.w};
  Tensor y(os);
  const std::size_t plane = s.plane();
  int c0 = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const Tensor& v = t.value(xs[k]);
    for (int n = 0; n < s.n; ++n)
      std::copy_n(v.raw() + static_cast<std::size_t>(n) * channels[k] * plane,
                  channels[k] * plane,
                  y.raw() + (static_cast<std::size_t>(n) * total + c0) * plane);
    c0 += channels[k];
  }
  std::vector<Var> inputs(xs.begin(), xs.end());
  return t.record(std::move(y), std::span<const Var>(inputs),
                  [inputs, channels, total, s](Tape& tp, const Tensor& gy) {
                    const std::size_t plane = s.plane();
                    int c0 = 0;
                    for (std::size_t k = 0; k < inputs.size(); ++k) {
                      if (tp.requires_grad(inputs[k])) {
                        double* gx = tp.grad_buffer(inputs[k]).raw();
                        for (int n = 0; n < s.n; ++n) {
                          const double* src = gy.raw() + (static_cast<std::size_t>(n) * total + c0) * plane;
                          double* dst = gx + static_cast<std::size_t>(n) * channels[k] * plane;
                          for (std::size_t i = 0; i < channels[k] * plane; ++i) dst[i] += src[i];
                        }
                      }
                      c0 += channels[k];
                    }
                  });
}

Var crop_leading(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  const Shape s = xv.shape();
  require(s.h > 1 && s.w > 1, "crop_leading: input too small");
  Shape os{s.n, s.c, s.h - 1, s.w - 1};
  Tensor y(os);
  for (int nc = 0; nc < s.n * s.c; ++nc)
    for (int h = 0; h < os.h; ++h)
      for (int w = 0; w < os.w; ++w)
        y[(static_cast<std::size_t>(nc) * os.h + h) * os.w + w] =
            xv[(static_cast<std::size_t>(nc) * s.h + h + 1) * s.w + w + 1];
  return t.record(std::move(y), {x}, [x, s, os](Tape& tp, const Tensor& gy) {
    double* gx = tp.grad_buffer(x).raw();
    for (int nc = 0; nc < s.n * s.c; ++nc)
      for (int h = 0; h < os.h; ++h)
        for (int w = 0; w < os.w; ++w)
          gx[(static_cast<std::size_t>(nc) * s.h + h + 1) * s.w + w + 1] +=
              gy[(static_cast<std::size_t>(nc) * os.h + h) * os.w + w];
  });
}

Var zeros(Tape& t, Shape shape) { return t.leaf(Tensor(shape), false); }

Var normalize_channels(Tape& t, Var x, std::span<const double> shift,
                       std::span<const double> scale) {
  const Shape s = t.value(x).shape();
  require(shift.size() == static_cast<std::size_t>(s.c) && scale.size() == shift.size(),
          "normalize_channels: constant count mismatch");
  Tensor y = t.value(x);
  std::vector<double> inv(s.c);
  for (int c = 0; c < s.c; ++c) inv[c] = 1.0 / scale[c];
  const std::size_t plane = s.plane();
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      double* p = y.raw() + (static_cast<std::size_t>(n) * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) p[i] = (p[i] - shift[c]) * inv[c];
    }
  return t.record(std::move(y), {x}, [x, s, inv](Tape& tp, const Tensor& gy) {
    double* gx = tp.grad_buffer(x).raw();
    const std::size_t plane = s.plane();
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c) {
        const std::size_t off = (static_cast<std::size_t>(n) * s.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) gx[off + i] += inv[c] * gy[off + i];
      }
  });
}

Var mixed_sum(Tape& t, Var alpha, int row, std::span<const std::optional<Var>> candidates,
              Shape out_shape) {
  const Tensor& av = t.value(alpha);
  const int k = av.shape().c;
  require(static_cast<int>(candidates.size()) == k, "mixed_sum: candidate count mismatch");
  require(row >= 0 && row < av.shape().n, "mixed_sum: row out of range");
  const std::vector<double> w =
      softmax(std::span<const double>(av.raw() + static_cast<std::size_t>(row) * k, k));
  Tensor y(out_shape);
  std::vector<Var> inputs{alpha};
  for (int o = 0; o < k; ++o) {
    if (!candidates[o]) continue;
    const Tensor& c = t.value(*candidates[o]);
    require(c.shape() == out_shape, "mixed_sum: candidate shape " + c.shape().str() +
                                        " != " + out_shape.str());
    y.axpy(w[o], c);
    inputs.push_back(*candidates[o]);
  }
  std::vector<std::optional<Var>> cands(candidates.begin(), candidates.end());
  return t.record(std::move(y), std::span<const Var>(inputs),
                  [alpha, row, k, w, cands](Tape& tp, const Tensor& gy) {
                    std::vector<double> dw(k, 0.0);
                    for (int o = 0; o < k; ++o) {
                      if (!cands[o]) continue;
                      if (tp.requires_grad(alpha)) dw[o] = dot(gy.data(), tp.value(*cands[o]).data());
                      if (tp.requires_grad(*cands[o])) tp.grad_buffer(*cands[o]).axpy(w[o], gy);
                    }
                    if (tp.requires_grad(alpha)) {
                      double mean = 0.0;
                      for (int o = 0; o < k; ++o) mean += w[o] * dw[o];
                      double* ga = tp.grad_buffer(alpha).raw() + static_cast<std::size_t>(row) * k;
                      for (int o = 0; o < k; ++o) ga[o] += w[o] * (dw[o] - mean);
                    }
                  });
}

Var cross_entropy(Tape& t, Var logits, std::span<const int> labels, double scale) {
  const Tensor& lv = t.value(logits);
  const Shape s = lv.shape();
  const int k = s.c * s.h * s.w;
  require(static_cast<int>(labels.size()) == s.n,
          "cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
              std::to_string(s.n));
  for (int y : labels) {
    if (y < 0 || y >= k) {
      throw std::out_of_range("label " + std::to_string(y) + " outside [0, " +
                              std::to_string(k) + ")");
    }
  }
  Tensor probs(s);
  double total = 0.0;
  for (int n = 0; n < s.n; ++n) {
    std::span<const double> row(lv.raw() + static_cast<std::size_t>(n) * k, k);
    const double m = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (int j = 0; j < k; ++j) z += std::exp(row[j] - m);
    const double log_z = m + std::log(z);
    total += log_z - row[labels[n]];
    for (int j = 0; j < k; ++j) probs[static_cast<std::size_t>(n) * k + j] = std::exp(row[j] - log_z);
  }
  const double mean = s.n > 0 ? total / s.n : 0.0;
  Tensor out(Shape{1, 1, 1, 1}, scale * mean);
  std::vector<int> ys(labels.begin(), labels.end());
  return t.record(std::move(out), {logits},
                  [logits, probs = std::move(probs), ys, k, scale](Tape& tp, const Tensor& gy) {
                    double* gl = tp.grad_buffer(logits).raw();
                    const int n_batch = static_cast<int>(ys.size());
                    const double f = gy[0] * scale / n_batch;
                    for (int n = 0; n < n_batch; ++n)
                      for (int j = 0; j < k; ++j) {
                        const std::size_t i = static_cast<std::size_t>(n) * k + j;
                        gl[i] += f * (probs[i] - (j == ys[n] ? 1.0 : 0.0));
                      }
                  });
}

}  // namespace ops
}  // namespace arnas
