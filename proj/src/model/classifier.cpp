#include <cmath>
#include <stdexcept>
#include <string>

#include "mio/model.hpp"
#include "mio/rng.hpp"

namespace mio::model {

nlohmann::json ClassifierConfig::to_json() const { return {{"width", width}}; }

ClassifierConfig ClassifierConfig::from_json(const nlohmann::json& j) {
  ClassifierConfig c;
  c.width = j.at("width").get<int>();
  if (c.width < 1) throw std::invalid_argument("classifier: width must be >= 1");
  return c;
}

TaskId argmax_task(std::span<const double> logits) {
  if (logits.size() != static_cast<std::size_t>(kNumTasks)) {
    throw std::invalid_argument("argmax_task: expected 7 logits, got " + std::to_string(logits.size()));
  }
  int best = 0;
  for (int i = 1; i < kNumTasks; ++i) {
    if (logits[i] > logits[best]) best = i;  // strict: ties keep the lower index
  }
  return task_from_index(best);
}

template <std::floating_point T>
Classifier<T>::Classifier(const ClassifierConfig& config, std::uint64_t seed) : config_(config) {
  if (config.width < 1) throw std::invalid_argument("classifier: width must be >= 1");
  RngStream rng(seed, hash_bytes("classifier"));
  const int w = config.width;
  const int widths[4] = {3, w, 2 * w, 2 * w};
  auto uniform_param = [&](const std::string& name, Shape s) {
    const double fan_in = static_cast<double>(s.c) * s.h * s.w;
    const double bound = std::sqrt(6.0 / ((1.0 + 0.04) * fan_in));
    Tensor<T> t(s);
    for (T& v : t.values()) v = static_cast<T>(rng.uniform(-bound, bound));
    return Parameter<T>(name, std::move(t));
  };
  for (int l = 0; l < 3; ++l) {
    conv_w_[l] = uniform_param("cls." + std::to_string(l) + ".w", Shape{widths[l + 1], widths[l], 3, 3});
    conv_b_[l] = Parameter<T>("cls." + std::to_string(l) + ".b", Tensor<T>(Shape{1, widths[l + 1], 1, 1}));
  }
  dense_w_ = uniform_param("cls.fc.w", Shape{kNumTasks, widths[3], 1, 1});
  dense_b_ = Parameter<T>("cls.fc.b", Tensor<T>(Shape{1, kNumTasks, 1, 1}));
}

template <std::floating_point T>
typename Classifier<T>::V Classifier<T>::logits(G& g, V x, Binding binding) {
  if (!initialized()) throw std::logic_error("classifier is not initialized");
  if (g.shape(x).c != 3) throw std::invalid_argument("classifier: input must have 3 channels");
  auto bind = [&](Parameter<T>& p) { return binding == Binding::kTrain ? g.parameter(p) : g.constant(p.value); };
  V h = x;
  for (int l = 0; l < 3; ++l) h = nn::leaky_relu(g, nn::conv2d(g, h, bind(conv_w_[l]), bind(conv_b_[l]), 2), T(0.2));
  return nn::dense(g, nn::global_avg_pool(g, h), bind(dense_w_), bind(dense_b_));
}

template <std::floating_point T>
std::pair<TaskId, std::vector<double>> Classifier<T>::classify(const ImageBuffer& image) {
  if (!initialized()) throw std::logic_error("classifier is not initialized");
  if (!trained_) throw std::logic_error("classifier has not been trained");
  G g;
  const V out = logits(g, g.constant(to_tensor<T>(image)), Binding::kInfer);
  const auto& v = g.value(out);
  std::vector<double> l(v.values().begin(), v.values().end());
  return {argmax_task(l), l};
}

template <std::floating_point T>
std::vector<TaskId> Classifier<T>::classify_batch(const Tensor<T>& x) {
  if (!initialized()) throw std::logic_error("classifier is not initialized");
  if (!trained_) throw std::logic_error("classifier has not been trained");
  G g;
  const V out = logits(g, g.constant(x), Binding::kInfer);
  const auto& v = g.value(out);
  std::vector<TaskId> result;
  for (int n = 0; n < x.shape().n; ++n) {
    std::vector<double> l(v.values().begin() + n * kNumTasks, v.values().begin() + (n + 1) * kNumTasks);
    result.push_back(argmax_task(l));
  }
  return result;
}

template <std::floating_point T>
std::vector<Parameter<T>*> Classifier<T>::parameters() {
  std::vector<Parameter<T>*> out;
  for (int l = 0; l < 3; ++l) {
    out.push_back(&conv_w_[l]);
    out.push_back(&conv_b_[l]);
  }
  out.push_back(&dense_w_);
  out.push_back(&dense_b_);
  return out;
}

template <std::floating_point T>
std::vector<const Parameter<T>*> Classifier<T>::parameters() const {
  auto ps = const_cast<Classifier*>(this)->parameters();
  return {ps.begin(), ps.end()};
}

template class Classifier<float>;
template class Classifier<double>;

}  // namespace mio::model
