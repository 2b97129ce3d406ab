#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mio/nn/tensor.hpp"

namespace mio::nn {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam. Moment buffers are created on the first step and are
// matched to parameters by position.
template <std::floating_point T>
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  void step(std::span<Parameter<T>* const> params, double lr);

  std::int64_t steps() const { return steps_; }
  const AdamConfig& config() const { return config_; }
  void reset();

  const std::vector<Tensor<T>>& first_moments() const { return m_; }
  const std::vector<Tensor<T>>& second_moments() const { return v_; }
  // Restores state from a checkpoint; shapes are checked on the next step().
  void restore(std::int64_t steps, std::vector<Tensor<T>> m, std::vector<Tensor<T>> v);

 private:
  AdamConfig config_;
  std::int64_t steps_ = 0;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
};

// Cosine annealing from eta_max to eta_min over `period` iterations.
struct CosineSchedule {
  double eta_max = 2e-4;
  double eta_min = 1e-7;
  std::int64_t period = 500;
  bool restart = true;
};

// With restarts, iteration 0 sits at eta_max, every multiple of the period
// sits exactly at eta_min and the next iteration starts a fresh cosine, i.e.
// the phase is ((iter - 1) mod period) + 1 for iter >= 1. Without restarts
// the rate stays at eta_min once iter >= period.
double lr_at(const CosineSchedule& schedule, std::int64_t iter);

}  // namespace mio::nn
