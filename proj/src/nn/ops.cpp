#include "mio/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace mio::nn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

[[noreturn]] void shape_error(std::string_view op, const std::string& detail) {
  throw std::invalid_argument(std::string(op) + ": " + detail);
}

// How `b` broadcasts against `a`.
enum class Broadcast { kSame, kChannel, kSampleChannel };

Broadcast broadcast_kind(std::string_view op, const Shape& a, const Shape& b) {
  if (a == b) return Broadcast::kSame;
  if (b.h == 1 && b.w == 1 && b.c == a.c) {
    if (b.n == 1) return Broadcast::kChannel;
    if (b.n == a.n) return Broadcast::kSampleChannel;
  }
  shape_error(op, "cannot broadcast " + b.str() + " against " + a.str());
}

// Index into a broadcast operand for element (n, c).
inline std::size_t bidx(Broadcast k, int n, int c, int channels) {
  return k == Broadcast::kChannel ? static_cast<std::size_t>(c)
                                  : static_cast<std::size_t>(n) * channels + c;
}

// Source column for each output column of one kernel tap, edge-clamped.
inline void tap_columns(int kx, int stride, int pad, int w, int wo, int* ix) {
  for (int ox = 0; ox < wo; ++ox) ix[ox] = std::clamp(ox * stride + kx - pad, 0, w - 1);
}

// Column buffer for one sample: rows (ci, ky, kx), columns (oy, ox).
template <typename T>
void im2col(const T* x, int cin, int h, int w, int k, int stride, int ho, int wo, T* col) {
  const int pad = k / 2;
  std::vector<int> ix(static_cast<std::size_t>(k) * wo);
  for (int kx = 0; kx < k; ++kx) tap_columns(kx, stride, pad, w, wo, &ix[kx * wo]);
  for (int ci = 0; ci < cin; ++ci) {
    const T* plane = x + static_cast<std::size_t>(ci) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* dst = col + (static_cast<std::size_t>(ci) * k * k + ky * k + kx) * ho * wo;
        const int* ixr = &ix[kx * wo];
        const int shift = kx - pad;
        for (int oy = 0; oy < ho; ++oy) {
          const T* src = plane + static_cast<std::size_t>(std::clamp(oy * stride + ky - pad, 0, h - 1)) * w;
          T* d = dst + static_cast<std::size_t>(oy) * wo;
          if (stride == 1) {
            // Interior columns are a straight copy; only the ends are clamped.
            const int lo = std::max(0, -shift), hi = std::min(wo, w - shift);
            for (int ox = 0; ox < lo; ++ox) d[ox] = src[0];
            std::copy(src + lo + shift, src + hi + shift, d + lo);
            for (int ox = hi; ox < wo; ++ox) d[ox] = src[w - 1];
          } else {
            for (int ox = 0; ox < wo; ++ox) d[ox] = src[ixr[ox]];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, int cin, int h, int w, int k, int stride, int ho, int wo, T* dx) {
  const int pad = k / 2;
  std::vector<int> ix(static_cast<std::size_t>(k) * wo);
  for (int kx = 0; kx < k; ++kx) tap_columns(kx, stride, pad, w, wo, &ix[kx * wo]);
  for (int ci = 0; ci < cin; ++ci) {
    T* plane = dx + static_cast<std::size_t>(ci) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* src = col + (static_cast<std::size_t>(ci) * k * k + ky * k + kx) * ho * wo;
        const int* ixr = &ix[kx * wo];
        const int shift = kx - pad;
        for (int oy = 0; oy < ho; ++oy) {
          T* d = plane + static_cast<std::size_t>(std::clamp(oy * stride + ky - pad, 0, h - 1)) * w;
          const T* s = src + static_cast<std::size_t>(oy) * wo;
          if (stride == 1) {
            const int lo = std::max(0, -shift), hi = std::min(wo, w - shift);
            for (int ox = 0; ox < lo; ++ox) d[0] += s[ox];
            T* dd = d + shift;
            for (int ox = lo; ox < hi; ++ox) dd[ox] += s[ox];
            for (int ox = hi; ox < wo; ++ox) d[w - 1] += s[ox];
          } else {
            for (int ox = 0; ox < wo; ++ox) d[ixr[ox]] += s[ox];
          }
        }
      }
    }
  }
}

// Fixed-order sum. Eigen reductions peel an address-dependent prologue, which
// would make results depend on where the allocator put the buffer.
template <typename T>
T fixed_sum(const T* p, std::size_t n, std::size_t stride = 1) {
  T lane[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (int l = 0; l < 8; ++l) lane[l] += p[(i + l) * stride];
  T total = 0;
  for (; i < n; ++i) total += p[i * stride];
  for (int l = 0; l < 8; ++l) total += lane[l];
  return total;
}

// Per-thread scratch that only grows. Column buffers for one sample are
// small enough to stay in cache, so backward recomputes them instead of
// keeping a batch-sized copy alive.
template <typename T>
T* scratch(int slot, std::size_t size) {
  thread_local std::vector<T> bufs[6];
  std::vector<T>& b = bufs[slot];
  if (b.size() < size) b.resize(size);
  return b.data();
}

// Stride-1 path: replicate-pad each sample once and treat every kernel tap
// as a GEMM over the flattened padded rows. Output rows then carry k-1
// junk columns which are dropped (forward) or zeroed (backward).
template <typename T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

template <typename T>
void replicate_pad(const T* x, int c, int h, int w, int pad, T* xp) {
  const int hp = h + 2 * pad, wp = w + 2 * pad;
  for (int ch = 0; ch < c; ++ch) {
    const T* src = x + static_cast<std::size_t>(ch) * h * w;
    T* dst = xp + static_cast<std::size_t>(ch) * hp * wp;
    for (int py = 0; py < hp; ++py) {
      const T* row = src + static_cast<std::size_t>(std::clamp(py - pad, 0, h - 1)) * w;
      T* d = dst + static_cast<std::size_t>(py) * wp;
      for (int px = 0; px < pad; ++px) d[px] = row[0];
      std::copy(row, row + w, d + pad);
      for (int px = pad + w; px < wp; ++px) d[px] = row[w - 1];
    }
  }
}

// Adjoint of replicate_pad: accumulates padded gradients into dx.
template <typename T>
void replicate_pad_adjoint(const T* gp, int c, int h, int w, int pad, T* dx) {
  const int hp = h + 2 * pad, wp = w + 2 * pad;
  for (int ch = 0; ch < c; ++ch) {
    const T* src = gp + static_cast<std::size_t>(ch) * hp * wp;
    T* dst = dx + static_cast<std::size_t>(ch) * h * w;
    for (int py = 0; py < hp; ++py) {
      T* row = dst + static_cast<std::size_t>(std::clamp(py - pad, 0, h - 1)) * w;
      const T* s = src + static_cast<std::size_t>(py) * wp;
      for (int px = 0; px < pad; ++px) row[0] += s[px];
      for (int xx = 0; xx < w; ++xx) row[xx] += s[pad + xx];
      for (int px = pad + w; px < wp; ++px) row[w - 1] += s[px];
    }
  }
}

// (Cout, Cin, k, k) -> k*k contiguous (Cout, Cin) tap matrices.
template <typename T>
void split_taps(const T* w, int cout, int cin, int k, T* taps) {
  const int kk = k * k;
  for (int co = 0; co < cout; ++co)
    for (int ci = 0; ci < cin; ++ci)
      for (int t = 0; t < kk; ++t)
        taps[(static_cast<std::size_t>(t) * cout + co) * cin + ci] = w[(static_cast<std::size_t>(co) * cin + ci) * kk + t];
}

}  // namespace

namespace {

template <std::floating_point T>
Var<T> conv2d_shift(Graph<T>& g, Var<T> x, Var<T> weight, Var<T> bias) {
  const Shape xs = g.shape(x), ws = g.shape(weight);
  const int n = xs.n, cin = xs.c, h = xs.h, w = xs.w, k = ws.h, cout = ws.n;
  const int pad = k / 2, hp = h + 2 * pad, wp = w + 2 * pad, len = h * wp;
  const std::size_t plane = static_cast<std::size_t>(hp) * wp;
  // k-1 spare elements: the last tap's slice runs past the final padded row.
  const std::size_t xp_size = cin * plane + k;

  T* taps = scratch<T>(0, static_cast<std::size_t>(k) * k * cout * cin);
  split_taps(g.value(weight).data(), cout, cin, k, taps);
  T* xp = scratch<T>(1, xp_size);
  T* oe = scratch<T>(2, static_cast<std::size_t>(cout) * len);
  std::fill(xp + cin * plane, xp + xp_size, T(0));
  Tensor<T> out(Shape{n, cout, h, w});
  for (int i = 0; i < n; ++i) {
    replicate_pad(g.value(x).data() + static_cast<std::size_t>(i) * cin * h * w, cin, h, w, pad, xp);
    MapMat<T> o(oe, cout, len);
    for (int t = 0; t < k * k; ++t) {
      const ConstMapMat<T> wt(taps + static_cast<std::size_t>(t) * cout * cin, cout, cin);
      const ConstStridedMap<T> xt(xp + (t / k) * wp + t % k, cin, len, Eigen::OuterStride<>(plane));
      if (t == 0) {
        o.noalias() = wt * xt;
      } else {
        o.noalias() += wt * xt;
      }
    }
    T* dst = out.data() + static_cast<std::size_t>(i) * cout * h * w;
    const T* b = bias.valid() ? g.value(bias).data() : nullptr;
    for (int c = 0; c < cout; ++c) {
      const T bc = b ? b[c] : T(0);
      for (int y = 0; y < h; ++y) {
        const T* srow = oe + static_cast<std::size_t>(c) * len + static_cast<std::size_t>(y) * wp;
        T* drow = dst + (static_cast<std::size_t>(c) * h + y) * w;
        for (int xx = 0; xx < w; ++xx) drow[xx] = srow[xx] + bc;
      }
    }
  }

  return g.record("conv2d", std::move(out), {x, weight, bias}, [=](Graph<T>& gr, int self) {
    const Tensor<T>& gout = gr.grad(self);
    const bool need_x = gr.requires_grad(x);
    const bool need_w = gr.requires_grad(weight);
    const bool need_b = bias.valid() && gr.requires_grad(bias);
    const std::size_t ntap = static_cast<std::size_t>(cout) * cin;
    T* taps = scratch<T>(0, ntap * k * k);
    if (need_x) split_taps(gr.value(weight).data(), cout, cin, k, taps);
    T* gtaps = scratch<T>(3, ntap * k * k);
    std::fill(gtaps, gtaps + ntap * k * k, T(0));
    T* xp = scratch<T>(1, xp_size);
    std::fill(xp + cin * plane, xp + xp_size, T(0));
    T* ge = scratch<T>(2, static_cast<std::size_t>(cout) * len);
    T* gp = scratch<T>(4, xp_size);
    for (int i = 0; i < n; ++i) {
      const T* g0 = gout.data() + static_cast<std::size_t>(i) * cout * h * w;
      for (int c = 0; c < cout; ++c) {
        for (int y = 0; y < h; ++y) {
          T* erow = ge + static_cast<std::size_t>(c) * len + static_cast<std::size_t>(y) * wp;
          const T* grow = g0 + (static_cast<std::size_t>(c) * h + y) * w;
          std::copy(grow, grow + w, erow);
          std::fill(erow + w, erow + wp, T(0));
        }
      }
      const ConstMapMat<T> gem(ge, cout, len);
      if (need_b) {
        T* gb = gr.grad(bias).data();
        for (int c = 0; c < cout; ++c) gb[c] += fixed_sum(ge + static_cast<std::size_t>(c) * len, static_cast<std::size_t>(len));
      }
      if (need_w) {
        replicate_pad(gr.value(x).data() + static_cast<std::size_t>(i) * cin * h * w, cin, h, w, pad,
                      xp);
        for (int t = 0; t < k * k; ++t) {
          const ConstStridedMap<T> xt(xp + (t / k) * wp + t % k, cin, len, Eigen::OuterStride<>(plane));
          MapMat<T>(gtaps + t * ntap, cout, cin).noalias() += gem * xt.transpose();
        }
      }
      if (need_x) {
        std::fill(gp, gp + xp_size, T(0));
        for (int t = 0; t < k * k; ++t) {
          StridedMap<T> gt(gp + (t / k) * wp + t % k, cin, len, Eigen::OuterStride<>(plane));
          gt.noalias() += ConstMapMat<T>(taps + t * ntap, cout, cin).transpose() * gem;
        }
        replicate_pad_adjoint(gp, cin, h, w, pad,
                              gr.grad(x).data() + static_cast<std::size_t>(i) * cin * h * w);
      }
    }
    if (need_w) {
      T* gw = gr.grad(weight).data();
      const int kk = k * k;
      for (int co = 0; co < cout; ++co)
        for (int ci = 0; ci < cin; ++ci)
          for (int t = 0; t < kk; ++t)
            gw[(static_cast<std::size_t>(co) * cin + ci) * kk + t] += gtaps[(static_cast<std::size_t>(t) * cout + co) * cin + ci];
    }
  });
}

}  // namespace

template <std::floating_point T>
Var<T> conv2d(Graph<T>& g, Var<T> x, Var<T> weight, Var<T> bias, int stride) {
  const Shape xs = g.shape(x), ws = g.shape(weight);
  if (stride != 1 && stride != 2) shape_error("conv2d", "stride must be 1 or 2");
  if (ws.h != ws.w || ws.h % 2 == 0) shape_error("conv2d", "kernel must be square with odd side");
  if (ws.c != xs.c) {
    shape_error("conv2d", "input has " + std::to_string(xs.c) + " channels, weight expects " +
                              std::to_string(ws.c));
  }
  if (bias.valid() && g.shape(bias) != Shape{1, ws.n, 1, 1}) {
    shape_error("conv2d", "bias shape " + g.shape(bias).str() + " does not match " +
                              std::to_string(ws.n) + " output channels");
  }
  const int n = xs.n, cin = xs.c, h = xs.h, w = xs.w, k = ws.h, cout = ws.n;
  const int ho = (h - 1) / stride + 1, wo = (w - 1) / stride + 1;
  const int kk = cin * k * k, hw = ho * wo;

  if (stride == 1) return conv2d_shift(g, x, weight, bias);
  Tensor<T> out(Shape{n, cout, ho, wo});
  ConstMapMat<T> wmat(g.value(weight).data(), cout, kk);
  T* col = scratch<T>(0, static_cast<std::size_t>(kk) * hw);
  for (int i = 0; i < n; ++i) {
    im2col(g.value(x).data() + static_cast<std::size_t>(i) * cin * h * w, cin, h, w, k, stride, ho,
           wo, col);
    MapMat<T> o(out.data() + static_cast<std::size_t>(i) * cout * hw, cout, hw);
    o.noalias() = wmat * ConstMapMat<T>(col, kk, hw);
    if (bias.valid()) {
      const T* b = g.value(bias).data();
      for (int c = 0; c < cout; ++c) o.row(c).array() += b[c];
    }
  }

  return g.record("conv2d", std::move(out), {x, weight, bias}, [=](Graph<T>& gr, int self) {
    const Tensor<T>& gout = gr.grad(self);
    const bool need_x = gr.requires_grad(x);
    const bool need_w = gr.requires_grad(weight);
    const bool need_b = bias.valid() && gr.requires_grad(bias);
    T* col = need_w ? scratch<T>(0, static_cast<std::size_t>(kk) * hw) : nullptr;
    T* dcol = need_x ? scratch<T>(1, static_cast<std::size_t>(kk) * hw) : nullptr;
    for (int i = 0; i < n; ++i) {
      ConstMapMat<T> go(gout.data() + static_cast<std::size_t>(i) * cout * hw, cout, hw);
      if (need_w) {
        im2col(gr.value(x).data() + static_cast<std::size_t>(i) * cin * h * w, cin, h, w, k, stride,
               ho, wo, col);
        MapMat<T> gw(gr.grad(weight).data(), cout, kk);
        gw.noalias() += go * ConstMapMat<T>(col, kk, hw).transpose();
      }
      if (need_b) {
        T* gb = gr.grad(bias).data();
        for (int c = 0; c < cout; ++c) gb[c] += fixed_sum(go.data() + static_cast<std::size_t>(c) * hw, static_cast<std::size_t>(hw));
      }
      if (need_x) {
        MapMat<T> dc(dcol, kk, hw);
        dc.noalias() = ConstMapMat<T>(gr.value(weight).data(), cout, kk).transpose() * go;
        col2im_add(dcol, cin, h, w, k, stride, ho, wo,
                   gr.grad(x).data() + static_cast<std::size_t>(i) * cin * h * w);
      }
    }
  });
}

template <std::floating_point T>
Var<T> leaky_relu(Graph<T>& g, Var<T> x, T slope) {
  Tensor<T> out = g.value(x);
  for (T& v : out.values()) v = v > T(0) ? v : slope * v;
  return g.record("leaky_relu", std::move(out), {x}, [=](Graph<T>& gr, int self) {
    const Tensor<T>& go = gr.grad(self);
    const Tensor<T>& in = gr.value(x);
    Tensor<T>& gx = gr.grad(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += in[i] > T(0) ? go[i] : slope * go[i];
  });
}

template <std::floating_point T>
Var<T> relu(Graph<T>& g, Var<T> x) {
  Tensor<T> out = g.value(x);
  for (T& v : out.values()) v = std::max(v, T(0));
  return g.record("relu", std::move(out), {x}, [=](Graph<T>& gr, int self) {
    const Tensor<T>& go = gr.grad(self);
    const Tensor<T>& in = gr.value(x);
    Tensor<T>& gx = gr.grad(x);
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (in[i] > T(0)) gx[i] += go[i];
    }
  });
}

template <std::floating_point T>
Var<T> dense(Graph<T>& g, Var<T> x, Var<T> weight, Var<T> bias) {
  const Shape xs = g.shape(x), ws = g.shape(weight);
  if (xs.h != 1 || xs.w != 1 || ws.h != 1 || ws.w != 1 || ws.c != xs.c) {
    shape_error("dense", "input " + xs.str() + " incompatible with weight " + ws.str());
  }
  if (bias.valid() && g.shape(bias) != Shape{1, ws.n, 1, 1}) {
    shape_error("dense", "bias shape " + g.shape(bias).str() + " does not match weight " + ws.str());
  }
  const int n = xs.n, kin = xs.c, m = ws.n;
  Tensor<T> out(Shape{n, m, 1, 1});
  MapMat<T> o(out.data(), n, m);
  o.noalias() = ConstMapMat<T>(g.value(x).data(), n, kin) *
                ConstMapMat<T>(g.value(weight).data(), m, kin).transpose();
  if (bias.valid()) {
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < m; ++j) o(i, j) += g.value(bias)[j];
    }
  }
  return g.record("dense", std::move(out), {x, weight, bias}, [=](Graph<T>& gr, int self) {
    ConstMapMat<T> go(gr.grad(self).data(), n, m);
    if (gr.requires_grad(weight)) {
      MapMat<T>(gr.grad(weight).data(), m, kin).noalias() +=
          go.transpose() * ConstMapMat<T>(gr.value(x).data(), n, kin);
    }
    if (bias.valid() && gr.requires_grad(bias)) {
      T* gb = gr.grad(bias).data();
      for (int j = 0; j < m; ++j) gb[j] += fixed_sum(go.data() + j, static_cast<std::size_t>(n), static_cast<std::size_t>(m));
    }
    if (gr.requires_grad(x)) {
      MapMat<T>(gr.grad(x).data(), n, kin).noalias() +=
          go * ConstMapMat<T>(gr.value(weight).data(), m, kin);
    }
  });
}

template <std::floating_point T>
Var<T> global_avg_pool(Graph<T>& g, Var<T> x) {
  const Shape s = g.shape(x);
  const std::size_t plane = s.plane();
  Tensor<T> out(Shape{s.n, s.c, 1, 1});
  const T* in = g.value(x).data();
  for (std::size_t nc = 0; nc < static_cast<std::size_t>(s.n) * s.c; ++nc) {
    T acc = T(0);
    for (std::size_t i = 0; i < plane; ++i) acc += in[nc * plane + i];
    out[nc] = acc / static_cast<T>(plane);
  }
  return g.record("global_avg_pool", std::move(out), {x}, [=](Graph<T>& gr, int self) {
    const Tensor<T>& go = gr.grad(self);
    T* gx = gr.grad(x).data();
    for (std::size_t nc = 0; nc < static_cast<std::size_t>(s.n) * s.c; ++nc) {
      const T v = go[nc] / static_cast<T>(plane);
      for (std::size_t i = 0; i < plane; ++i) gx[nc * plane + i] += v;
    }
  });
}

template <std::floating_point T>
Var<T> add(Graph<T>& g, Var<T> a, Var<T> b) {
  const Shape as = g.shape(a);
  const Broadcast kind = broadcast_kind("add", as, g.shape(b));
  Tensor<T> out = g.value(a);
  const Tensor<T>& bv = g.value(b);
  const std::size_t plane = as.plane();
  if (kind == Broadcast::kSame) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  } else {
    for (int n = 0; n < as.n; ++n)
      for (int c = 0; c < as.c; ++c) {
        const T v = bv[bidx(kind, n, c, as.c)];
        T* p = out.data() + (static_cast<std::size_t>(n) * as.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) p[i] += v;
      }
  }
  return g.record("add", std::move(out), {a, b}, [=](Graph<T>& gr, int self) {
    const Tensor<T>& go = gr.grad(self);
    if (gr.requires_grad(a)) {
      Tensor<T>& ga = gr.grad(a);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i];
    }
    if (gr.requires_grad(b)) {
      Tensor<T>& gb = gr.grad(b);
      if (kind == Broadcast::kSame) {
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go[i];
      } else {
        for (int n = 0; n < as.n; ++n)
          for (int c = 0; c < as.c; ++c) {
            const T* p = go.data() + (static_cast<std::size_t>(n) * as.c + c) * plane;
            T acc = T(0);
            for (std::size_t i = 0; i < plane; ++i) acc += p[i];
            gb[bidx(kind, n, c, as.c)] += acc;
          }
      }
    }
  });
}

template <std::floating_point T>
Var<T> mul(Graph<T>& g, Var<T> a, Var<T> b) {
  const Shape as = g.shape(a);
  const Broadcast kind = broadcast_kind("mul", as, g.shape(b));
  Tensor<T> out = g.value(a);
  const Tensor<T>& bv = g.value(b);
  const std::size_t plane = as.plane();
  if (kind == Broadcast::kSame) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  } else {
    for (int n = 0; n < as.n; ++n)
      for (int c = 0; c < as.c; ++c) {
        const T v = bv[bidx(kind, n, c, as.c)];
        T* p = out.data() + (static_cast<std::size_t>(n) * as.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) p[i] *= v;
      }
  }
  return g.record("mul", std::move(out), {a, b}, [=](Graph<T>& gr, int self) {
    const Tensor<T>& go = gr.grad(self);
    const Tensor<T>& av = gr.value(a);
    const Tensor<T>& bvv = gr.value(b);
    if (gr.requires_grad(a)) {
      Tensor<T>& ga = gr.grad(a);
      if (kind == Broadcast::kSame) {
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * bvv[i];
      } else {
        for (int n = 0; n < as.n; ++n)
          for (int c = 0; c < as.c; ++c) {
            const T v = bvv[bidx(kind, n, c, as.c)];
            const std::size_t off = (static_cast<std::size_t>(n) * as.c + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) ga[off + i] += go[off + i] * v;
          }
      }
    }
    if (gr.requires_grad(b)) {
      Tensor<T>& gb = gr.grad(b);
      if (kind == Broadcast::kSame) {
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go[i] * av[i];
      } else {
        for (int n = 0; n < as.n; ++n)
          for (int c = 0; c < as.c; ++c) {
            const std::size_t off = (static_cast<std::size_t>(n) * as.c + c) * plane;
            T acc = T(0);
            for (std::size_t i = 0; i < plane; ++i) acc += go[off + i] * av[off + i];
            gb[bidx(kind, n, c, as.c)] += acc;
          }
      }
    }
  });
}

template <std::floating_point T>
Var<T> channel_affine(Graph<T>& g, Var<T> f, Var<T> s, Var<T> b) {
  const Shape fs = g.shape(f);
  const Broadcast ks = broadcast_kind("channel_affine", fs, g.shape(s));
  const Broadcast kb = broadcast_kind("channel_affine", fs, g.shape(b));
  if (ks == Broadcast::kSame || kb == Broadcast::kSame) {
    if (!(fs.h == 1 && fs.w == 1)) {
      shape_error("channel_affine", "scale/bias must be per-channel vectors, got " +
                                        g.shape(s).str() + " and " + g.shape(b).str());
    }
  }
  const std::size_t plane = fs.plane();
  Tensor<T> out(fs);
  const Tensor<T>& fv = g.value(f);
  const Tensor<T>& sv = g.value(s);
  const Tensor<T>& bv = g.value(b);
  for (int n = 0; n < fs.n; ++n)
    for (int c = 0; c < fs.c; ++c) {
      const T sc = sv[bidx(ks == Broadcast::kSame ? Broadcast::kSampleChannel : ks, n, c, fs.c)];
      const T bc = bv[bidx(kb == Broadcast::kSame ? Broadcast::kSampleChannel : kb, n, c, fs.c)];
      const std::size_t off = (static_cast<std::size_t>(n) * fs.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) out[off + i] = fv[off + i] * sc + bc;
    }
  return g.record("channel_affine", std::move(out), {f, s, b}, [=](Graph<T>& gr, int self) {
    const Tensor<T>& go = gr.grad(self);
    const Tensor<T>& fval = gr.value(f);
    const Tensor<T>& sval = gr.value(s);
    const bool nf = gr.requires_grad(f), ns = gr.requires_grad(s), nb = gr.requires_grad(b);
    const Broadcast eks = ks == Broadcast::kSame ? Broadcast::kSampleChannel : ks;
    const Broadcast ekb = kb == Broadcast::kSame ? Broadcast::kSampleChannel : kb;
    for (int n = 0; n < fs.n; ++n)
      for (int c = 0; c < fs.c; ++c) {
        const std::size_t off = (static_cast<std::size_t>(n) * fs.c + c) * plane;
        const std::size_t si = bidx(eks, n, c, fs.c);
        T sum_fg = T(0), sum_g = T(0);
        for (std::size_t i = 0; i < plane; ++i) {
          sum_fg += fval[off + i] * go[off + i];
          sum_g += go[off + i];
        }
        if (nf) {
          Tensor<T>& gf = gr.grad(f);
          const T sc = sval[si];
          for (std::size_t i = 0; i < plane; ++i) gf[off + i] += sc * go[off + i];
        }
        if (ns) gr.grad(s)[si] += sum_fg;
        if (nb) gr.grad(b)[bidx(ekb, n, c, fs.c)] += sum_g;
      }
  });
}

template <std::floating_point T>
Var<T> mean(Graph<T>& g, Var<T> x) {
  const Tensor<T>& in = g.value(x);
  T acc = T(0);
  for (T v : in.values()) acc += v;
  const std::size_t count = in.size();
  Tensor<T> out(Shape{}, acc / static_cast<T>(count));
  return g.record("mean", std::move(out), {x}, [=](Graph<T>& gr, int self) {
    const T v = gr.grad(self)[0] / static_cast<T>(count);
    for (T& gv : gr.grad(x).values()) gv += v;
  });
}

template <std::floating_point T>
Var<T> l1_loss(Graph<T>& g, Var<T> pred, Var<T> target) {
  if (g.shape(pred) != g.shape(target)) {
    shape_error("l1_loss", "prediction " + g.shape(pred).str() + " vs target " +
                               g.shape(target).str());
  }
  const Tensor<T>& p = g.value(pred);
  const Tensor<T>& t = g.value(target);
  T acc = T(0);
  for (std::size_t i = 0; i < p.size(); ++i) acc += std::abs(p[i] - t[i]);
  const std::size_t count = p.size();
  Tensor<T> out(Shape{}, acc / static_cast<T>(count));
  return g.record("l1_loss", std::move(out), {pred, target}, [=](Graph<T>& gr, int self) {
    const T scale = gr.grad(self)[0] / static_cast<T>(count);
    const Tensor<T>& pv = gr.value(pred);
    const Tensor<T>& tv = gr.value(target);
    const bool np = gr.requires_grad(pred), nt = gr.requires_grad(target);
    for (std::size_t i = 0; i < count; ++i) {
      const T d = pv[i] - tv[i];
      const T sgn = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
      if (np) gr.grad(pred)[i] += scale * sgn;
      if (nt) gr.grad(target)[i] -= scale * sgn;
    }
  });
}

template <std::floating_point T>
Var<T> softmax_cross_entropy(Graph<T>& g, Var<T> logits, std::span<const int> labels) {
  const Shape s = g.shape(logits);
  if (s.h != 1 || s.w != 1) shape_error("softmax_cross_entropy", "logits must be (N, K, 1, 1)");
  if (static_cast<int>(labels.size()) != s.n) {
    shape_error("softmax_cross_entropy", "expected " + std::to_string(s.n) + " labels, got " +
                                             std::to_string(labels.size()));
  }
  const int n = s.n, k = s.c;
  for (int label : labels) {
    if (label < 0 || label >= k) {
      throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(label) +
                                  " outside [0, " + std::to_string(k) + ")");
    }
  }
  auto probs = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n) * k);
  std::vector<int> lab(labels.begin(), labels.end());
  const T* z = g.value(logits).data();
  T loss = T(0);
  for (int i = 0; i < n; ++i) {
    const T* zi = z + static_cast<std::size_t>(i) * k;
    const T mx = *std::max_element(zi, zi + k);
    T denom = T(0);
    for (int j = 0; j < k; ++j) denom += std::exp(zi[j] - mx);
    const T log_denom = std::log(denom);
    for (int j = 0; j < k; ++j) (*probs)[static_cast<std::size_t>(i) * k + j] = std::exp(zi[j] - mx - log_denom);
    loss += -(zi[lab[i]] - mx - log_denom);
  }
  Tensor<T> out(Shape{}, loss / static_cast<T>(n));
  return g.record("softmax_cross_entropy", std::move(out), {logits},
                  [=](Graph<T>& gr, int self) {
                    const T scale = gr.grad(self)[0] / static_cast<T>(n);
                    Tensor<T>& gz = gr.grad(logits);
                    for (int i = 0; i < n; ++i)
                      for (int j = 0; j < k; ++j) {
                        const std::size_t idx = static_cast<std::size_t>(i) * k + j;
                        gz[idx] += scale * ((*probs)[idx] - (j == lab[i] ? T(1) : T(0)));
                      }
                  });
}

template <std::floating_point T>
Var<T> gather(Graph<T>& g, Var<T> table, std::span<const int> indices) {
  const Shape ts = g.shape(table);
  if (indices.empty()) shape_error("gather", "no indices");
  std::vector<int> idx(indices.begin(), indices.end());
  for (int i : idx) {
    if (i < 0 || i >= ts.n) shape_error("gather", "index " + std::to_string(i) + " out of range");
  }
  const std::size_t row = static_cast<std::size_t>(ts.c) * ts.h * ts.w;
  Tensor<T> out(Shape{static_cast<int>(idx.size()), ts.c, ts.h, ts.w});
  for (std::size_t n = 0; n < idx.size(); ++n) {
    const T* src = g.value(table).data() + idx[n] * row;
    std::copy(src, src + row, out.data() + n * row);
  }
  return g.record("gather", std::move(out), {table}, [=](Graph<T>& gr, int self) {
    const Tensor<T>& go = gr.grad(self);
    Tensor<T>& gt = gr.grad(table);
    for (std::size_t n = 0; n < idx.size(); ++n)
      for (std::size_t i = 0; i < row; ++i) gt[idx[n] * row + i] += go[n * row + i];
  });
}

#define MIO_INSTANTIATE_OPS(T)                                                              \
  template Var<T> conv2d<T>(Graph<T>&, Var<T>, Var<T>, Var<T>, int);                        \
  template Var<T> leaky_relu<T>(Graph<T>&, Var<T>, T);                                      \
  template Var<T> relu<T>(Graph<T>&, Var<T>);                                               \
  template Var<T> dense<T>(Graph<T>&, Var<T>, Var<T>, Var<T>);                              \
  template Var<T> global_avg_pool<T>(Graph<T>&, Var<T>);                                    \
  template Var<T> add<T>(Graph<T>&, Var<T>, Var<T>);                                        \
  template Var<T> mul<T>(Graph<T>&, Var<T>, Var<T>);                                        \
  template Var<T> channel_affine<T>(Graph<T>&, Var<T>, Var<T>, Var<T>);                     \
  template Var<T> mean<T>(Graph<T>&, Var<T>);                                               \
  template Var<T> l1_loss<T>(Graph<T>&, Var<T>, Var<T>);                                    \
  template Var<T> softmax_cross_entropy<T>(Graph<T>&, Var<T>, std::span<const int>);        \
  template Var<T> gather<T>(Graph<T>&, Var<T>, std::span<const int>);

MIO_INSTANTIATE_OPS(float)
MIO_INSTANTIATE_OPS(double)

}  // namespace mio::nn
