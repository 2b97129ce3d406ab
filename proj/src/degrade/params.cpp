#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>

#include "mio/degrade.hpp"

namespace mio::degrade {

namespace {

void check_interval(const Interval& iv, const char* name) {
  if (!(iv.lo <= iv.hi) || !std::isfinite(iv.lo) || !std::isfinite(iv.hi)) {
    throw std::invalid_argument(std::string("parameter range '") + name +
                                "' is inverted or not finite");
  }
}

Interval parse_interval(const std::string& text, const std::string& key) {
  Interval iv;
  const auto comma = text.find(',');
  try {
    if (comma == std::string::npos) {
      iv.lo = iv.hi = std::stod(text);
    } else {
      iv.lo = std::stod(text.substr(0, comma));
      iv.hi = std::stod(text.substr(comma + 1));
    }
  } catch (const std::exception&) {
    throw std::invalid_argument("config key '" + key + "': expected 'lo,hi', got '" + text + "'");
  }
  return iv;
}

std::string format_interval(const Interval& iv) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g,%.17g", iv.lo, iv.hi);
  return buf;
}

template <typename Fn>
void for_each_interval(GroupRanges& g, Fn&& fn) {
  fn("blur_size", g.blur_size);
  fn("blur_sigma", g.blur_sigma);
  fn("noise_sigma", g.noise_sigma);
  fn("jpeg_quality", g.jpeg_quality);
  fn("rain_strength", g.rain_strength);
  fn("haze_a", g.haze_a);
  fn("haze_beta", g.haze_beta);
  fn("ll_gamma", g.ll_gamma);
}

std::string section_for(Group g) {
  return g == Group::kInDis ? "ranges_in_dis" : "ranges_out_dis";
}

// Smallest odd integer >= v, largest odd integer <= v.
int odd_ceil(double v) {
  int i = static_cast<int>(std::ceil(v));
  return i % 2 == 0 ? i + 1 : i;
}
int odd_floor(double v) {
  int i = static_cast<int>(std::floor(v));
  return i % 2 == 0 ? i - 1 : i;
}

}  // namespace

void ParamRanges::validate() const {
  for (Group grp : {Group::kInDis, Group::kOutDis}) {
    GroupRanges g = for_group(grp);
    if (g.sr_scale < 1) throw std::invalid_argument("sr_scale must be >= 1");
    for_each_interval(g, [](const char* name, const Interval& iv) { check_interval(iv, name); });
    if (odd_ceil(g.blur_size.lo) > odd_floor(g.blur_size.hi) || g.blur_size.lo < 3 ||
        g.blur_size.hi > 31) {
      throw std::invalid_argument("blur_size range must contain an odd size within [3, 31]");
    }
    if (g.blur_sigma.lo <= 0) throw std::invalid_argument("blur_sigma must be positive");
    if (g.jpeg_quality.lo < 1 || g.jpeg_quality.hi > 100) {
      throw std::invalid_argument("jpeg_quality range must lie in [1, 100]");
    }
    if (g.haze_a.lo < 0 || g.haze_a.hi > 1) throw std::invalid_argument("haze_a must lie in [0, 1]");
    if (g.ll_gamma.lo < 1) throw std::invalid_argument("ll_gamma must be >= 1");
    if (g.noise_sigma.lo < 0 || g.rain_strength.lo < 0 || g.haze_beta.lo < 0) {
      throw std::invalid_argument("noise_sigma, rain_strength and haze_beta must be >= 0");
    }
  }
}

ParamRanges ParamRanges::from_config(const Config& cfg) {
  ParamRanges r;
  for (Group grp : {Group::kInDis, Group::kOutDis}) {
    GroupRanges& g = r.for_group(grp);
    const std::string sec = section_for(grp);
    g.sr_scale = cfg.get_or(sec + ".sr_scale", g.sr_scale);
    for_each_interval(g, [&](const char* name, Interval& iv) {
      const std::string key = sec + "." + name;
      if (auto v = cfg.get(key)) iv = parse_interval(*v, key);
    });
  }
  r.validate();
  return r;
}

void ParamRanges::write_config(Config& cfg) const {
  for (Group grp : {Group::kInDis, Group::kOutDis}) {
    GroupRanges g = for_group(grp);
    const std::string sec = section_for(grp);
    cfg.set(sec + ".sr_scale", g.sr_scale);
    for_each_interval(g, [&](const char* name, const Interval& iv) {
      cfg.set(sec + "." + name, format_interval(iv));
    });
  }
}

DegradeParams sample_params(TaskId task, Group group, const ParamRanges& ranges,
                            RngStream& rng) {
  const GroupRanges& g = ranges.for_group(group);
  DegradeParams p;
  p.task = task;
  switch (task) {
    case TaskId::kSuperResolution:
      p.sr_scale = g.sr_scale;
      break;
    case TaskId::kBlur: {
      const int lo = odd_ceil(g.blur_size.lo), hi = odd_floor(g.blur_size.hi);
      p.blur_size = lo + 2 * static_cast<int>(rng.uniform_int(0, (hi - lo) / 2));
      p.blur_sigma = rng.uniform(g.blur_sigma.lo, g.blur_sigma.hi);
      break;
    }
    case TaskId::kNoise:
      p.noise_sigma = rng.uniform(g.noise_sigma.lo, g.noise_sigma.hi);
      break;
    case TaskId::kJpeg:
      p.jpeg_quality = static_cast<int>(rng.uniform_int(static_cast<int>(std::ceil(g.jpeg_quality.lo)),
                                                        static_cast<int>(std::floor(g.jpeg_quality.hi))));
      break;
    case TaskId::kRain:
      p.rain_strength = rng.uniform(g.rain_strength.lo, g.rain_strength.hi);
      break;
    case TaskId::kHaze:
      p.haze_a = rng.uniform(g.haze_a.lo, g.haze_a.hi);
      p.haze_beta = rng.uniform(g.haze_beta.lo, g.haze_beta.hi);
      break;
    case TaskId::kLowLight:
      p.ll_gamma = rng.uniform(g.ll_gamma.lo, g.ll_gamma.hi);
      break;
  }
  return p;
}

ImageBuffer apply_params(const ImageBuffer& y, const DegradeParams& p, RngStream& rng,
                         const DegradeOptions& options) {
  switch (p.task) {
    case TaskId::kSuperResolution:
      return apply_sr(y, p.sr_scale);
    case TaskId::kBlur:
      return apply_blur(y, gaussian_kernel(p.blur_size, p.blur_sigma));
    case TaskId::kNoise:
      return add_noise(y, p.noise_sigma, rng);
    case TaskId::kJpeg:
      return jpeg_roundtrip(y, p.jpeg_quality);
    case TaskId::kRain:
      return add_rain(y, p.rain_strength, rng, options.rain);
    case TaskId::kHaze: {
      const ScalarMap depth = synth_depth(y.height(), y.width(), rng, options.depth);
      return apply_haze(y, p.haze_a, p.haze_beta, depth);
    }
    case TaskId::kLowLight:
      return apply_lowlight(y, p.ll_gamma);
  }
  throw std::invalid_argument("apply_params: unknown task");
}

Degraded degrade(const ImageBuffer& y, TaskId task, Group group, const ParamRanges& ranges,
                 RngStream& rng, const DegradeOptions& options) {
  if (y.height() < 8 || y.width() < 8) {
    throw std::invalid_argument("degrade: images must be at least 8x8");
  }
  Degraded out;
  out.params = sample_params(task, group, ranges, rng);
  out.image = apply_params(y, out.params, rng, options);
  return out;
}

std::uint64_t degrade_stream_id(std::string_view image_id, TaskId task, Group group) {
  std::uint64_t h = hash_bytes(image_id);
  h = hash_combine(h, static_cast<std::uint64_t>(task_index(task)));
  return hash_combine(h, static_cast<std::uint64_t>(group));
}

}  // namespace mio::degrade
