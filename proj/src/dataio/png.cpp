#include <png.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include "mio/dataio.hpp"

namespace mio::dataio {

namespace {

std::uint8_t quantize(double v) {
  if (!(v > 0.0)) return 0;
  if (v >= 1.0) return 255;
  return static_cast<std::uint8_t>(std::floor(v * 255.0 + 0.5));
}

std::string lower_ext(const fs::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e;
}

}  // namespace

ImageBuffer load_png(const fs::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw std::runtime_error("cannot read PNG " + path.string() + ": " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw std::runtime_error("cannot decode PNG " + path.string() + ": " + msg);
  }
  if (img.width == 0 || img.height == 0) throw std::runtime_error("empty PNG " + path.string());
  ImageBuffer out(static_cast<int>(img.height), static_cast<int>(img.width));
  auto vals = out.values();
  for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = buf[i] / 255.0;
  return out;
}

void save_png(const ImageBuffer& image, const fs::path& path) {
  if (image.empty()) throw std::invalid_argument("save_png: empty image");
  std::vector<png_byte> buf(image.size());
  auto vals = image.values();
  for (std::size_t i = 0; i < vals.size(); ++i) buf[i] = quantize(vals[i]);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width());
  img.height = static_cast<png_uint_32>(image.height());
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr)) {
    throw std::runtime_error("cannot write PNG " + path.string() + ": " + img.message);
  }
}

ImageBuffer load_image(const fs::path& path) {
  const std::string ext = lower_ext(path);
  if (ext == ".jpg" || ext == ".jpeg") {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
      return degrade::jpeg_decode(bytes);
    } catch (const std::exception& e) {
      throw std::runtime_error("cannot decode JPEG " + path.string() + ": " + e.what());
    }
  }
  return load_png(path);
}

namespace {

struct Rgb {
  double r, g, b;
};

Rgb random_color(RngStream& rng) { return {rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)}; }

// Signed distance-like coverage with a one-pixel soft edge.
double coverage(double inside_distance) { return std::clamp(inside_distance + 0.5, 0.0, 1.0); }

}  // namespace

ImageBuffer synth_gt(int height, int width, RngStream& rng) {
  ImageBuffer im(height, width);
  const double scale = std::max(height, width);

  // Background: a linear gradient between two colors plus low-frequency waves.
  const Rgb c0 = random_color(rng), c1 = random_color(rng);
  const double angle = rng.uniform(0, 2 * M_PI);
  const double ga = std::cos(angle), gb = std::sin(angle);
  struct Wave {
    double fx, fy, phase, amp;
  };
  Wave waves[3];
  for (Wave& w : waves) {
    w = {rng.uniform(-3, 3) * 2 * M_PI / scale, rng.uniform(-3, 3) * 2 * M_PI / scale, rng.uniform(0, 2 * M_PI),
         rng.uniform(0.02, 0.08)};
  }
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const double t = std::clamp(0.5 + ((c - width / 2.0) * ga + (r - height / 2.0) * gb) / scale, 0.0, 1.0);
      double wv = 0;
      for (const Wave& w : waves) wv += w.amp * std::sin(w.fx * c + w.fy * r + w.phase);
      im.at(r, c, 0) = c0.r + (c1.r - c0.r) * t + wv;
      im.at(r, c, 1) = c0.g + (c1.g - c0.g) * t + wv;
      im.at(r, c, 2) = c0.b + (c1.b - c0.b) * t + wv;
    }
  }

  // Shapes: ellipses and rotated rectangles.
  const int shapes = static_cast<int>(rng.uniform_int(6, 14));
  for (int s = 0; s < shapes; ++s) {
    const bool ellipse = rng.uniform() < 0.5;
    const double cy = rng.uniform(0, height), cx = rng.uniform(0, width);
    const double ry = rng.uniform(0.05, 0.3) * scale, rx = rng.uniform(0.05, 0.3) * scale;
    const double rot = rng.uniform(0, M_PI), cr = std::cos(rot), sr = std::sin(rot);
    const Rgb fill = random_color(rng), fill2 = random_color(rng);
    const int style = static_cast<int>(rng.uniform_int(0, 2));  // flat, graded, striped
    const double period = rng.uniform(2.5, 7.0);
    const double alpha = rng.uniform(0.6, 1.0);
    for (int r = 0; r < height; ++r) {
      for (int c = 0; c < width; ++c) {
        const double dy = r - cy, dx = c - cx;
        const double u = dx * cr + dy * sr, v = -dx * sr + dy * cr;
        double inside;
        if (ellipse) {
          const double q = std::sqrt((u * u) / (rx * rx) + (v * v) / (ry * ry));
          inside = (1.0 - q) * std::min(rx, ry);
        } else {
          inside = std::min(rx - std::abs(u), ry - std::abs(v));
        }
        const double a = alpha * coverage(inside);
        if (a <= 0) continue;
        double t = 0;
        if (style == 1) t = std::clamp(0.5 + u / (2 * rx), 0.0, 1.0);
        if (style == 2) t = 0.5 + 0.5 * std::sin(2 * M_PI * v / period);
        const double col[3] = {fill.r + (fill2.r - fill.r) * t, fill.g + (fill2.g - fill.g) * t,
                               fill.b + (fill2.b - fill.b) * t};
        for (int ch = 0; ch < 3; ++ch) im.at(r, c, ch) = (1 - a) * im.at(r, c, ch) + a * col[ch];
      }
    }
  }

  // Fine grain so that noise and blur remove real detail.
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const double grain = 0.015 * rng.normal();
      for (int ch = 0; ch < 3; ++ch) im.at(r, c, ch) += grain;
    }
  }
  im.clip();
  return im;
}

std::vector<fs::path> make_gt_set(const fs::path& out_dir, int count, int height, int width,
                                  std::uint64_t seed) {
  if (count < 1) throw std::invalid_argument("make_gt_set: count must be >= 1");
  if (height < 8 || width < 8) throw std::invalid_argument("make_gt_set: images must be at least 8x8");
  fs::create_directories(out_dir);
  std::vector<fs::path> paths;
  for (int i = 0; i < count; ++i) {
    RngStream rng(seed, hash_combine(0x67745f736574ULL, static_cast<std::uint64_t>(i)));
    char name[32];
    std::snprintf(name, sizeof name, "gt_%04d.png", i);
    const fs::path p = out_dir / name;
    save_png(synth_gt(height, width, rng), p);
    paths.push_back(p);
  }
  return paths;
}

}  // namespace mio::dataio
