#include "mio/image.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace mio {

ImageBuffer::ImageBuffer(int height, int width, double fill)
    : height_(height), width_(width) {
  if (height < 1 || width < 1) {
    throw std::invalid_argument("image dimensions must be positive, got " +
                                std::to_string(height) + "x" + std::to_string(width));
  }
  data_.assign(static_cast<std::size_t>(height) * width * kChannels, fill);
}

void ImageBuffer::clip() {
  for (double& v : data_) {
    v = std::isnan(v) ? 0.0 : std::clamp(v, 0.0, 1.0);
  }
}

ImageBuffer ImageBuffer::crop(int top, int left, int h, int w) const {
  if (top < 0 || left < 0 || h < 1 || w < 1 || top + h > height_ || left + w > width_) {
    throw std::out_of_range("crop window outside image");
  }
  ImageBuffer out(h, w);
  for (int r = 0; r < h; ++r) {
    const double* src = &data_[index(top + r, left, 0)];
    std::copy(src, src + static_cast<std::size_t>(w) * kChannels, &out.at(r, 0, 0));
  }
  return out;
}

}  // namespace mio
