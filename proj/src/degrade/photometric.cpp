#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>

#include <jpeglib.h>

#include "mio/degrade.hpp"

namespace mio::degrade {

ImageBuffer add_noise(const ImageBuffer& y, double sigma255, RngStream& rng) {
  if (!(sigma255 >= 0.0)) throw std::invalid_argument("add_noise: sigma must be >= 0");
  ImageBuffer x = y;
  if (sigma255 == 0.0) {
    x.clip();
    return x;
  }
  const double sigma = sigma255 / 255.0;
  for (double& v : x.values()) v += sigma * rng.normal();
  x.clip();
  return x;
}

namespace {

unsigned char quantize(double v) {
  const double q = std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
  return static_cast<unsigned char>(q);
}

// libjpeg reports fatal errors through error_exit, which must not return.
[[noreturn]] void throw_jpeg_error(j_common_ptr cinfo) {
  char msg[JMSG_LENGTH_MAX];
  (*cinfo->err->format_message)(cinfo, msg);
  throw std::runtime_error(std::string("jpeg: ") + msg);
}

}  // namespace

std::vector<unsigned char> jpeg_encode(const ImageBuffer& y, int quality) {
  if (quality < 1 || quality > 100) {
    throw std::invalid_argument("jpeg: quality must be in [1, 100], got " +
                                std::to_string(quality));
  }
  jpeg_compress_struct cinfo{};
  jpeg_error_mgr jerr{};
  cinfo.err = jpeg_std_error(&jerr);
  jerr.error_exit = throw_jpeg_error;
  unsigned char* buffer = nullptr;
  unsigned long size = 0;
  std::vector<unsigned char> row(static_cast<std::size_t>(y.width()) * 3);
  try {
    jpeg_create_compress(&cinfo);
    jpeg_mem_dest(&cinfo, &buffer, &size);
    cinfo.image_width = static_cast<JDIMENSION>(y.width());
    cinfo.image_height = static_cast<JDIMENSION>(y.height());
    cinfo.input_components = 3;
    cinfo.in_color_space = JCS_RGB;
    jpeg_set_defaults(&cinfo);
    jpeg_set_quality(&cinfo, quality, TRUE);
    cinfo.dct_method = JDCT_ISLOW;
    // 4:2:0: luma 2x2, chroma 1x1.
    cinfo.comp_info[0].h_samp_factor = 2;
    cinfo.comp_info[0].v_samp_factor = 2;
    cinfo.comp_info[1].h_samp_factor = cinfo.comp_info[1].v_samp_factor = 1;
    cinfo.comp_info[2].h_samp_factor = cinfo.comp_info[2].v_samp_factor = 1;
    jpeg_start_compress(&cinfo, TRUE);
    while (cinfo.next_scanline < cinfo.image_height) {
      const int r = static_cast<int>(cinfo.next_scanline);
      for (int c = 0; c < y.width(); ++c) {
        for (int ch = 0; ch < 3; ++ch) row[static_cast<std::size_t>(c) * 3 + ch] = quantize(y.at(r, c, ch));
      }
      JSAMPROW ptr = row.data();
      jpeg_write_scanlines(&cinfo, &ptr, 1);
    }
    jpeg_finish_compress(&cinfo);
  } catch (...) {
    jpeg_destroy_compress(&cinfo);
    std::free(buffer);
    throw;
  }
  std::vector<unsigned char> out(buffer, buffer + size);
  jpeg_destroy_compress(&cinfo);
  std::free(buffer);
  return out;
}

ImageBuffer jpeg_decode(std::span<const unsigned char> bytes) {
  jpeg_decompress_struct cinfo{};
  jpeg_error_mgr jerr{};
  cinfo.err = jpeg_std_error(&jerr);
  jerr.error_exit = throw_jpeg_error;
  ImageBuffer out;
  try {
    jpeg_create_decompress(&cinfo);
    jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    cinfo.dct_method = JDCT_ISLOW;
    cinfo.do_fancy_upsampling = TRUE;
    jpeg_start_decompress(&cinfo);
    out = ImageBuffer(static_cast<int>(cinfo.output_height), static_cast<int>(cinfo.output_width));
    std::vector<unsigned char> row(static_cast<std::size_t>(cinfo.output_width) * 3);
    while (cinfo.output_scanline < cinfo.output_height) {
      const int r = static_cast<int>(cinfo.output_scanline);
      JSAMPROW ptr = row.data();
      jpeg_read_scanlines(&cinfo, &ptr, 1);
      for (int c = 0; c < out.width(); ++c) {
        for (int ch = 0; ch < 3; ++ch) out.at(r, c, ch) = row[static_cast<std::size_t>(c) * 3 + ch] / 255.0;
      }
    }
    jpeg_finish_decompress(&cinfo);
  } catch (...) {
    jpeg_destroy_decompress(&cinfo);
    throw;
  }
  jpeg_destroy_decompress(&cinfo);
  return out;
}

ImageBuffer jpeg_roundtrip(const ImageBuffer& y, int quality) {
  const auto bytes = jpeg_encode(y, quality);
  return jpeg_decode(bytes);
}

RainConfig RainConfig::from_config(const Config& cfg) {
  RainConfig rc;
  rc.density_per_strength = cfg.get_or("rain.density_per_strength", rc.density_per_strength);
  rc.length_per_strength = cfg.get_or("rain.length_per_strength", rc.length_per_strength);
  rc.max_angle_deg = cfg.get_or("rain.max_angle_deg", rc.max_angle_deg);
  rc.brightness_lo = cfg.get_or("rain.brightness_lo", rc.brightness_lo);
  rc.brightness_hi = cfg.get_or("rain.brightness_hi", rc.brightness_hi);
  rc.soften_sigma = cfg.get_or("rain.soften_sigma", rc.soften_sigma);
  return rc;
}

StreakMap rain_streaks(int height, int width, double strength, RngStream& rng,
                       const RainConfig& cfg) {
  if (!(strength >= 0.0)) throw std::invalid_argument("rain: strength must be >= 0");
  StreakMap out{ScalarMap(height, width, 0.0), 0};
  if (strength == 0.0) return out;

  const double density = std::min(1.0, strength * cfg.density_per_strength);
  const int length = std::max(1, static_cast<int>(std::lround(strength * cfg.length_per_strength)));
  // One fall direction per image, as a single motion-blurred rain layer would have.
  const double angle = rng.uniform(-cfg.max_angle_deg, cfg.max_angle_deg) * M_PI / 180.0;
  const double dr = std::cos(angle), dc = std::sin(angle);

  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      if (rng.uniform() >= density) continue;
      ++out.streaks;
      const double brightness = rng.uniform(cfg.brightness_lo, cfg.brightness_hi);
      for (int t = 0; t < length; ++t) {
        const int rr = static_cast<int>(std::lround(r + t * dr));
        const int cc = static_cast<int>(std::lround(c + t * dc));
        if (rr < 0 || rr >= height || cc < 0 || cc >= width) break;
        double& v = out.map.at(rr, cc);
        v = std::max(v, brightness);
      }
    }
  }

  if (cfg.soften_sigma > 0.0) {
    const Kernel k = gaussian_kernel(3, cfg.soften_sigma);
    ScalarMap soft(height, width, 0.0);
    for (int r = 0; r < height; ++r) {
      for (int c = 0; c < width; ++c) {
        double acc = 0.0;
        for (int i = 0; i < 3; ++i) {
          const int rr = std::clamp(r + i - 1, 0, height - 1);
          for (int j = 0; j < 3; ++j) {
            acc += k.at(i, j) * out.map.at(rr, std::clamp(c + j - 1, 0, width - 1));
          }
        }
        soft.at(r, c) = acc;
      }
    }
    out.map = std::move(soft);
  }
  return out;
}

ImageBuffer add_rain(const ImageBuffer& y, double strength, RngStream& rng,
                     const RainConfig& cfg) {
  const StreakMap streaks = rain_streaks(y.height(), y.width(), strength, rng, cfg);
  ImageBuffer x = y;
  for (int r = 0; r < y.height(); ++r) {
    for (int c = 0; c < y.width(); ++c) {
      const double s = streaks.map.at(r, c);
      for (int ch = 0; ch < 3; ++ch) x.at(r, c, ch) += s;
    }
  }
  x.clip();
  return x;
}

DepthKind parse_depth_kind(std::string_view name) {
  if (name == "smooth-random") return DepthKind::kSmoothRandom;
  if (name == "vertical-ramp") return DepthKind::kVerticalRamp;
  throw std::invalid_argument("unknown depth kind '" + std::string(name) +
                              "'; expected smooth-random|vertical-ramp");
}

std::string_view depth_kind_name(DepthKind kind) {
  return kind == DepthKind::kSmoothRandom ? "smooth-random" : "vertical-ramp";
}

ScalarMap synth_depth(int height, int width, RngStream& rng, DepthKind kind) {
  if (height < 1 || width < 1) throw std::invalid_argument("synth_depth: empty size");
  ScalarMap d(height, width);
  if (kind == DepthKind::kVerticalRamp) {
    for (int r = 0; r < height; ++r) {
      const double v = height > 1 ? static_cast<double>(r) / (height - 1) : 0.0;
      for (int c = 0; c < width; ++c) d.at(r, c) = v;
    }
    return d;
  }
  constexpr int kGrid = 4;
  double grid[kGrid][kGrid];
  for (auto& row : grid)
    for (double& g : row) g = rng.uniform();
  for (int r = 0; r < height; ++r) {
    const double gy = height > 1 ? static_cast<double>(r) * (kGrid - 1) / (height - 1) : 0.0;
    const int y0 = std::min(static_cast<int>(gy), kGrid - 2);
    const double fy = gy - y0;
    for (int c = 0; c < width; ++c) {
      const double gx = width > 1 ? static_cast<double>(c) * (kGrid - 1) / (width - 1) : 0.0;
      const int x0 = std::min(static_cast<int>(gx), kGrid - 2);
      const double fx = gx - x0;
      d.at(r, c) = (1 - fy) * ((1 - fx) * grid[y0][x0] + fx * grid[y0][x0 + 1]) +
                   fy * ((1 - fx) * grid[y0 + 1][x0] + fx * grid[y0 + 1][x0 + 1]);
    }
  }
  const auto [lo, hi] = std::minmax_element(d.values.begin(), d.values.end());
  const double mn = *lo, range = *hi - *lo;
  for (double& v : d.values) v = range > 0.0 ? (v - mn) / range : 0.0;
  return d;
}

ImageBuffer apply_haze(const ImageBuffer& y, double atmospheric_light, double beta,
                       const ScalarMap& depth) {
  if (depth.height != y.height() || depth.width != y.width()) {
    throw std::invalid_argument("apply_haze: depth map size does not match image");
  }
  if (!(atmospheric_light >= 0.0 && atmospheric_light <= 1.0)) {
    throw std::invalid_argument("apply_haze: atmospheric light must be in [0, 1]");
  }
  if (!(beta >= 0.0)) throw std::invalid_argument("apply_haze: beta must be >= 0");
  ImageBuffer x(y.height(), y.width());
  for (int r = 0; r < y.height(); ++r) {
    for (int c = 0; c < y.width(); ++c) {
      const double t = std::exp(-beta * depth.at(r, c));
      for (int ch = 0; ch < 3; ++ch) {
        x.at(r, c, ch) = y.at(r, c, ch) * t + atmospheric_light * (1.0 - t);
      }
    }
  }
  x.clip();
  return x;
}

ImageBuffer apply_lowlight(const ImageBuffer& y, double gamma) {
  if (!(gamma >= 1.0)) throw std::invalid_argument("apply_lowlight: gamma must be >= 1");
  ImageBuffer x = y;
  x.clip();
  if (gamma == 1.0) return x;
  for (double& v : x.values()) v = std::pow(v, gamma);
  return x;
}

}  // namespace mio::degrade
