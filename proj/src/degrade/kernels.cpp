#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "mio/degrade.hpp"

namespace mio::degrade {

Kernel gaussian_kernel(int size, double sigma) {
  if (size % 2 == 0 || size < 3 || size > 31) {
    throw std::invalid_argument("gaussian_kernel: size must be odd in [3, 31], got " +
                                std::to_string(size));
  }
  if (!(sigma > 0.0)) {
    throw std::invalid_argument("gaussian_kernel: sigma must be positive");
  }
  Kernel k{size, std::vector<double>(static_cast<std::size_t>(size) * size)};
  const int half = size / 2;
  const double denom = 2.0 * sigma * sigma;
  // Subtract the peak exponent (0) implicitly; for tiny sigma all off-center
  // terms underflow to 0 and the center stays 1.
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      const double u = r - half, v = c - half;
      k.weights[static_cast<std::size_t>(r) * size + c] = std::exp(-(u * u + v * v) / denom);
    }
  }
  double sum = 0.0;
  for (double w : k.weights) sum += w;
  for (double& w : k.weights) w /= sum;
  return k;
}

ImageBuffer apply_blur(const ImageBuffer& y, const Kernel& kernel) {
  if (kernel.size < 1 || kernel.size % 2 == 0 ||
      kernel.weights.size() != static_cast<std::size_t>(kernel.size) * kernel.size) {
    throw std::invalid_argument("apply_blur: kernel must be square with odd side");
  }
  const int h = y.height(), w = y.width(), half = kernel.size / 2;
  ImageBuffer x(h, w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double acc[3] = {0.0, 0.0, 0.0};
      for (int i = 0; i < kernel.size; ++i) {
        const int rr = std::clamp(r + i - half, 0, h - 1);
        for (int j = 0; j < kernel.size; ++j) {
          const int cc = std::clamp(c + j - half, 0, w - 1);
          const double k = kernel.at(i, j);
          for (int ch = 0; ch < 3; ++ch) acc[ch] += k * y.at(rr, cc, ch);
        }
      }
      for (int ch = 0; ch < 3; ++ch) x.at(r, c, ch) = acc[ch];
    }
  }
  x.clip();
  return x;
}

double cubic_weight(double x, double a) {
  const double ax = std::abs(x);
  if (ax <= 1.0) return ((a + 2.0) * ax - (a + 3.0)) * ax * ax + 1.0;
  if (ax < 2.0) return ((a * ax - 5.0 * a) * ax + 8.0 * a) * ax - 4.0 * a;
  return 0.0;
}

namespace {

// Contribution table for one axis: for each output index, the source indices
// (already clamped) and their normalized weights.
struct AxisWeights {
  int taps = 0;
  std::vector<int> index;
  std::vector<double> weight;
};

AxisWeights axis_weights(int in_size, int out_size) {
  const double scale = static_cast<double>(out_size) / in_size;
  const bool shrink = scale < 1.0;
  const double kernel_width = shrink ? 4.0 / scale : 4.0;
  AxisWeights aw;
  aw.taps = static_cast<int>(std::ceil(kernel_width)) + 2;
  aw.index.resize(static_cast<std::size_t>(out_size) * aw.taps);
  aw.weight.resize(aw.index.size());
  for (int i = 0; i < out_size; ++i) {
    const double u = (i + 0.5) / scale - 0.5;
    const int left = static_cast<int>(std::floor(u - kernel_width / 2.0));
    double sum = 0.0;
    for (int t = 0; t < aw.taps; ++t) {
      const int src = left + t;
      const double d = u - src;
      const double wgt = shrink ? scale * cubic_weight(scale * d) : cubic_weight(d);
      aw.index[static_cast<std::size_t>(i) * aw.taps + t] = std::clamp(src, 0, in_size - 1);
      aw.weight[static_cast<std::size_t>(i) * aw.taps + t] = wgt;
      sum += wgt;
    }
    for (int t = 0; t < aw.taps; ++t) aw.weight[static_cast<std::size_t>(i) * aw.taps + t] /= sum;
  }
  return aw;
}

}  // namespace

ImageBuffer bicubic_resize(const ImageBuffer& y, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) {
    throw std::invalid_argument("bicubic_resize: target size must be positive");
  }
  if (out_h == y.height() && out_w == y.width()) {
    ImageBuffer copy = y;
    copy.clip();
    return copy;
  }
  const AxisWeights rows = axis_weights(y.height(), out_h);
  const AxisWeights cols = axis_weights(y.width(), out_w);

  // Horizontal pass: y.height() x out_w.
  ImageBuffer tmp(y.height(), out_w);
  for (int r = 0; r < y.height(); ++r) {
    for (int c = 0; c < out_w; ++c) {
      double acc[3] = {0.0, 0.0, 0.0};
      for (int t = 0; t < cols.taps; ++t) {
        const std::size_t k = static_cast<std::size_t>(c) * cols.taps + t;
        const double wgt = cols.weight[k];
        if (wgt == 0.0) continue;
        for (int ch = 0; ch < 3; ++ch) acc[ch] += wgt * y.at(r, cols.index[k], ch);
      }
      for (int ch = 0; ch < 3; ++ch) tmp.at(r, c, ch) = acc[ch];
    }
  }
  ImageBuffer x(out_h, out_w);
  for (int r = 0; r < out_h; ++r) {
    for (int c = 0; c < out_w; ++c) {
      double acc[3] = {0.0, 0.0, 0.0};
      for (int t = 0; t < rows.taps; ++t) {
        const std::size_t k = static_cast<std::size_t>(r) * rows.taps + t;
        const double wgt = rows.weight[k];
        if (wgt == 0.0) continue;
        for (int ch = 0; ch < 3; ++ch) acc[ch] += wgt * tmp.at(rows.index[k], c, ch);
      }
      for (int ch = 0; ch < 3; ++ch) x.at(r, c, ch) = acc[ch];
    }
  }
  x.clip();
  return x;
}

ImageBuffer apply_sr(const ImageBuffer& y, int scale) {
  if (scale < 1) throw std::invalid_argument("apply_sr: scale must be >= 1");
  if (y.height() < scale || y.width() < scale) {
    throw std::invalid_argument("apply_sr: image " + std::to_string(y.height()) + "x" +
                                std::to_string(y.width()) + " smaller than scale " +
                                std::to_string(scale));
  }
  if (scale == 1) {
    ImageBuffer copy = y;
    copy.clip();
    return copy;
  }
  const ImageBuffer small = bicubic_resize(y, y.height() / scale, y.width() / scale);
  return bicubic_resize(small, y.height(), y.width());
}

}  // namespace mio::degrade
