#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "mio/config.hpp"
#include "mio/image.hpp"
#include "mio/rng.hpp"
#include "mio/task.hpp"

// Synthetic degradations for the seven restoration tasks. Every operation is
// a pure function of its inputs (and of the RngStream it is handed), and every
// output is clipped into [0, 1].
namespace mio::degrade {

// Square convolution kernel, row-major.
struct Kernel {
  int size = 0;
  std::vector<double> weights;

  double at(int r, int c) const { return weights[static_cast<std::size_t>(r) * size + c]; }
};

// Isotropic Gaussian, normalized to unit sum. size must be odd in [3, 31].
Kernel gaussian_kernel(int size, double sigma);

// Per-channel 2-D convolution with edge-replicate padding.
ImageBuffer apply_blur(const ImageBuffer& y, const Kernel& kernel);

// Cubic-convolution kernel with parameter a.
double cubic_weight(double x, double a = -0.5);

// Separable bicubic resampling (a = -0.5, half-pixel centers, edge clamp).
// When shrinking, the kernel is widened by the inverse scale (antialiasing),
// as MATLAB's imresize does.
ImageBuffer bicubic_resize(const ImageBuffer& y, int out_h, int out_w);

// Bicubic down by `scale`, then back up to the original size.
ImageBuffer apply_sr(const ImageBuffer& y, int scale);

// Additive white Gaussian noise; sigma on the 0-255 scale.
ImageBuffer add_noise(const ImageBuffer& y, double sigma255, RngStream& rng);

// Baseline JPEG (8-bit, 4:2:0 chroma, integer DCT).
std::vector<unsigned char> jpeg_encode(const ImageBuffer& y, int quality);
ImageBuffer jpeg_decode(std::span<const unsigned char> bytes);
ImageBuffer jpeg_roundtrip(const ImageBuffer& y, int quality);

// Constants of the parametric rain-streak recipe.
struct RainConfig {
  double density_per_strength = 1.0 / 2000.0;  // seed probability per pixel per unit strength
  double length_per_strength = 1.0 / 5.0;      // streak length in px per unit strength
  double max_angle_deg = 30.0;                 // streak angle drawn from [-max, +max] off vertical
  double brightness_lo = 0.5;
  double brightness_hi = 1.0;
  double soften_sigma = 0.5;  // 3x3 Gaussian applied to the streak map

  static RainConfig from_config(const Config& cfg);
};

struct StreakMap {
  ScalarMap map;  // >= 0 everywhere
  int streaks = 0;
};

StreakMap rain_streaks(int height, int width, double strength, RngStream& rng,
                       const RainConfig& cfg = {});
ImageBuffer add_rain(const ImageBuffer& y, double strength, RngStream& rng,
                     const RainConfig& cfg = {});

enum class DepthKind { kSmoothRandom, kVerticalRamp };
DepthKind parse_depth_kind(std::string_view name);
std::string_view depth_kind_name(DepthKind kind);

ScalarMap synth_depth(int height, int width, RngStream& rng, DepthKind kind);

// Atmospheric scattering model: x = y t + A (1 - t), t = exp(-beta d).
ImageBuffer apply_haze(const ImageBuffer& y, double atmospheric_light, double beta,
                       const ScalarMap& depth);

// x = y^gamma.
ImageBuffer apply_lowlight(const ImageBuffer& y, double gamma);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  bool contains(double v) const { return v >= lo && v <= hi; }
};

// Parameter ranges for one test group.
struct GroupRanges {
  int sr_scale = 4;
  Interval blur_size{7, 23};
  Interval blur_sigma{1, 3};
  Interval noise_sigma{15, 50};
  Interval jpeg_quality{30, 70};
  Interval rain_strength{50, 100};
  Interval haze_a{0.8, 1.0};
  Interval haze_beta{0.5, 2.5};
  Interval ll_gamma{1, 3};
};

struct ParamRanges {
  GroupRanges in_dis;
  GroupRanges out_dis{8,          {7, 23},     {3, 5},     {50, 70}, {10, 30},
                      {100, 150}, {0.8, 1.0}, {2.5, 3.0}, {3, 4}};

  const GroupRanges& for_group(Group g) const { return g == Group::kInDis ? in_dis : out_dis; }
  GroupRanges& for_group(Group g) { return g == Group::kInDis ? in_dis : out_dis; }

  // Throws std::invalid_argument when an interval is inverted or empty.
  void validate() const;

  // Reads [ranges_in_dis] / [ranges_out_dis] sections; missing keys keep
  // their defaults. Interval values are written "lo,hi" or a single value.
  static ParamRanges from_config(const Config& cfg);
  void write_config(Config& cfg) const;
};

// Only the fields matching `task` are meaningful.
struct DegradeParams {
  TaskId task = TaskId::kSuperResolution;
  int sr_scale = 1;
  int blur_size = 0;
  double blur_sigma = 0.0;
  double noise_sigma = 0.0;
  int jpeg_quality = 100;
  double rain_strength = 0.0;
  double haze_a = 1.0;
  double haze_beta = 0.0;
  double ll_gamma = 1.0;

  friend bool operator==(const DegradeParams&, const DegradeParams&) = default;
};

DegradeParams sample_params(TaskId task, Group group, const ParamRanges& ranges,
                            RngStream& rng);

struct DegradeOptions {
  RainConfig rain;
  DepthKind depth = DepthKind::kSmoothRandom;
};

// Applies fixed parameters. Randomness (noise, streaks, depth) is drawn from rng.
ImageBuffer apply_params(const ImageBuffer& y, const DegradeParams& params, RngStream& rng,
                         const DegradeOptions& options = {});

struct Degraded {
  ImageBuffer image;
  DegradeParams params;
};

// Samples parameters for (task, group) and applies them; output has the
// same dimensions as y for every task.
Degraded degrade(const ImageBuffer& y, TaskId task, Group group, const ParamRanges& ranges,
                 RngStream& rng, const DegradeOptions& options = {});

// Stream id for one (image, task, group) triple.
std::uint64_t degrade_stream_id(std::string_view image_id, TaskId task, Group group);

}  // namespace mio::degrade
