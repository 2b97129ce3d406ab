#include "mio/nn/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace mio::nn {

template <std::floating_point T>
void Adam<T>::step(std::span<Parameter<T>* const> params, double lr) {
  if (m_.empty()) {
    for (const Parameter<T>* p : params) {
      m_.emplace_back(p->value.shape());
      v_.emplace_back(p->value.shape());
    }
  }
  if (m_.size() != params.size()) {
    throw std::invalid_argument("Adam::step: parameter count changed between steps");
  }
  ++steps_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter<T>& p = *params[k];
    Tensor<T>& m = m_[k];
    Tensor<T>& v = v_[k];
    if (m.shape() != p.value.shape() || p.grad.shape() != p.value.shape()) {
      throw std::invalid_argument("Adam::step: shape mismatch for parameter " + p.name);
    }
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double gi = p.grad[i];
      const double mi = b1 * m[i] + (1.0 - b1) * gi;
      const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double mhat = mi / c1;
      const double vhat = vi / c2;
      p.value[i] = static_cast<T>(p.value[i] - lr * mhat / (std::sqrt(vhat) + config_.eps));
    }
  }
}

template <std::floating_point T>
void Adam<T>::reset() {
  steps_ = 0;
  m_.clear();
  v_.clear();
}

template <std::floating_point T>
void Adam<T>::restore(std::int64_t steps, std::vector<Tensor<T>> m, std::vector<Tensor<T>> v) {
  if (m.size() != v.size()) throw std::invalid_argument("Adam::restore: moment count mismatch");
  steps_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

template class Adam<float>;
template class Adam<double>;

double lr_at(const CosineSchedule& s, std::int64_t iter) {
  if (iter < 0) throw std::invalid_argument("lr_at: negative iteration");
  if (s.period < 1) throw std::invalid_argument("lr_at: period must be >= 1");
  std::int64_t phase;
  if (s.restart) {
    phase = iter == 0 ? 0 : (iter - 1) % s.period + 1;
  } else {
    phase = std::min(iter, s.period);
  }
  if (phase == s.period) return s.eta_min;
  if (phase == 0) return s.eta_max;
  const double frac = static_cast<double>(phase) / static_cast<double>(s.period);
  return s.eta_min + 0.5 * (s.eta_max - s.eta_min) * (1.0 + std::cos(std::numbers::pi * frac));
}

}  // namespace mio::nn
