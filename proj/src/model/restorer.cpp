#include <cmath>
#include <stdexcept>
#include <string>

#include "mio/model.hpp"
#include "mio/rng.hpp"

namespace mio::model {

namespace {

constexpr double kSlope = 0.2;

// Kaiming-uniform for a layer followed by leaky ReLU, scaled by `gain`.
template <std::floating_point T>
Parameter<T> conv_param(const std::string& name, Shape s, RngStream& rng, double gain = 1.0) {
  const double fan_in = static_cast<double>(s.c) * s.h * s.w;
  const double bound = gain * std::sqrt(6.0 / ((1.0 + kSlope * kSlope) * fan_in));
  Tensor<T> t(s);
  for (T& v : t.values()) v = static_cast<T>(rng.uniform(-bound, bound));
  return Parameter<T>(name, std::move(t));
}

template <std::floating_point T>
Parameter<T> const_param(const std::string& name, Shape s, double value) {
  return Parameter<T>(name, Tensor<T>(s, static_cast<T>(value)));
}

std::uint64_t stream_of(std::string_view what) { return hash_bytes(what); }

template <std::floating_point T, std::floating_point U>
Parameter<U> cast_param(const Parameter<T>& p) {
  if (p.value.empty()) return Parameter<U>();
  return Parameter<U>(p.name, p.value.template cast<U>());
}

}  // namespace

PromptMode parse_prompt_mode(std::string_view name) {
  if (name == "none") return PromptMode::kNone;
  if (name == "explicit" || name == "ep") return PromptMode::kExplicit;
  if (name == "adaptive" || name == "ap") return PromptMode::kAdaptive;
  throw std::invalid_argument("unknown prompt mode '" + std::string(name) + "'; expected none|explicit|adaptive");
}

std::string_view prompt_mode_name(PromptMode mode) {
  switch (mode) {
    case PromptMode::kNone: return "none";
    case PromptMode::kExplicit: return "explicit";
    case PromptMode::kAdaptive: return "adaptive";
  }
  return "none";
}

void BackboneConfig::validate() const {
  if (channels < 1 || modules < 1 || prompt_dim < 1) {
    throw std::invalid_argument("backbone: channels, modules and prompt_dim must be >= 1");
  }
  if (patch < 1) throw std::invalid_argument("backbone: patch must be >= 1");
}

nlohmann::json BackboneConfig::to_json() const {
  return {{"channels", channels},   {"modules", modules},       {"patch", patch},
          {"prompt", prompt_mode_name(prompt)}, {"prompt_dim", prompt_dim}, {"learnable_prompts", learnable_prompts}};
}

BackboneConfig BackboneConfig::from_json(const nlohmann::json& j) {
  BackboneConfig c;
  c.channels = j.at("channels").get<int>();
  c.modules = j.at("modules").get<int>();
  c.patch = j.at("patch").get<int>();
  c.prompt = parse_prompt_mode(j.at("prompt").get<std::string>());
  c.prompt_dim = j.at("prompt_dim").get<int>();
  c.learnable_prompts = j.value("learnable_prompts", false);
  c.validate();
  return c;
}

std::int64_t prompt_parameter_count(const BackboneConfig& c) {
  const std::int64_t C = c.channels, D = c.prompt_dim, M = c.modules;
  // Extractor widths 3 -> C -> D -> D, 3x3 kernels with bias.
  const std::int64_t ext = (C * 3 * 9 + C) + (D * C * 9 + D) + (D * D * 9 + D);
  return ext + M * (2 * C * D + 2 * C);
}

Tensor<double> make_explicit_prompt(TaskId task, int patch) {
  if (patch < 1) throw std::invalid_argument("make_explicit_prompt: patch must be >= 1");
  const int idx = task_index(task);
  Tensor<double> p(Shape{1, 3, patch, patch});
  const double v = (idx + 1) / 7.0;
  for (int r = 0; r < patch; ++r)
    for (int c = 0; c < patch; ++c) p.at(0, idx % 3, r, c) = v;
  return p;
}

template <std::floating_point T>
Tensor<T> interpolate_prompts(const Tensor<T>& a, const Tensor<T>& b, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("interpolate_prompts: alpha must lie in [0, 1]");
  if (a.shape() != b.shape()) throw std::invalid_argument("interpolate_prompts: prompt shapes differ");
  Tensor<T> out(a.shape());
  const T wa = static_cast<T>(1.0 - alpha), wb = static_cast<T>(alpha);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = wa * a[i] + wb * b[i];
  return out;
}

template <std::floating_point T>
Restorer<T>::Restorer(const BackboneConfig& config, std::uint64_t seed) : config_(config) {
  config.validate();
  const int C = config.channels, D = config.prompt_dim;
  RngStream rb(seed, stream_of("backbone"));
  head_w_ = conv_param<T>("head.w", Shape{C, 3, 3, 3}, rb);
  head_b_ = const_param<T>("head.b", Shape{1, C, 1, 1}, 0.0);
  for (int m = 0; m < config.modules; ++m) {
    body_w_.push_back(conv_param<T>("body." + std::to_string(m) + ".w", Shape{C, C, 3, 3}, rb));
    body_b_.push_back(const_param<T>("body." + std::to_string(m) + ".b", Shape{1, C, 1, 1}, 0.0));
  }
  // Small tail so the untrained network starts close to the identity.
  tail_w_ = conv_param<T>("tail.w", Shape{3, C, 3, 3}, rb, 0.1);
  tail_b_ = const_param<T>("tail.b", Shape{1, 3, 1, 1}, 0.0);

  if (config.prompt == PromptMode::kNone) return;
  RngStream rp(seed, stream_of("prompt"));
  const int widths[4] = {3, C, D, D};
  for (int l = 0; l < 3; ++l) {
    ext_w_[l] = conv_param<T>("ext." + std::to_string(l) + ".w", Shape{widths[l + 1], widths[l], 3, 3}, rp);
    ext_b_[l] = const_param<T>("ext." + std::to_string(l) + ".b", Shape{1, widths[l + 1], 1, 1}, 0.0);
  }
  for (int m = 0; m < config.modules; ++m) {
    const std::string p = "inject." + std::to_string(m);
    // s = 1, b = 0 regardless of the features: injection starts as identity.
    fc_s_w_.push_back(const_param<T>(p + ".s.w", Shape{C, D, 1, 1}, 0.0));
    fc_s_b_.push_back(const_param<T>(p + ".s.b", Shape{1, C, 1, 1}, 1.0));
    fc_b_w_.push_back(const_param<T>(p + ".b.w", Shape{C, D, 1, 1}, 0.0));
    fc_b_b_.push_back(const_param<T>(p + ".b.b", Shape{1, C, 1, 1}, 0.0));
  }
  if (config.prompt == PromptMode::kExplicit && config.learnable_prompts) {
    Tensor<T> table(Shape{kNumTasks, 3, config.patch, config.patch});
    for (TaskId t : kAllTasks) {
      const auto p = make_explicit_prompt(t, config.patch);
      std::copy(p.values().begin(), p.values().end(),
                table.values().begin() + static_cast<std::ptrdiff_t>(task_index(t) * p.size()));
    }
    prompt_table_ = Parameter<T>("prompt.table", std::move(table));
  }
}

template <std::floating_point T>
typename Restorer<T>::V Restorer<T>::bind(G& g, Parameter<T>& p, Binding binding) {
  return binding == Binding::kTrain ? g.parameter(p) : g.constant(p.value);
}

template <std::floating_point T>
typename Restorer<T>::V Restorer<T>::body(G& g, V x, const std::vector<std::pair<V, V>>* mod, Binding binding) {
  V h = nn::leaky_relu(g, nn::conv2d(g, x, bind(g, head_w_, binding), bind(g, head_b_, binding)), T(kSlope));
  for (int m = 0; m < config_.modules; ++m) {
    h = nn::leaky_relu(g, nn::conv2d(g, h, bind(g, body_w_[m], binding), bind(g, body_b_[m], binding)), T(kSlope));
    if (mod) h = nn::channel_affine(g, h, (*mod)[m].first, (*mod)[m].second);
  }
  V out = nn::conv2d(g, h, bind(g, tail_w_, binding), bind(g, tail_b_, binding));
  return nn::add(g, out, x);
}

template <std::floating_point T>
typename Restorer<T>::V Restorer<T>::prompt_features(G& g, V prompt, Binding binding) {
  if (config_.prompt == PromptMode::kNone) throw std::logic_error("prompt_features: model has no prompt path");
  if (g.shape(prompt).c != 3) throw std::invalid_argument("prompt_features: prompt must have 3 channels");
  V h = prompt;
  for (int l = 0; l < 3; ++l) {
    h = nn::leaky_relu(g, nn::conv2d(g, h, bind(g, ext_w_[l], binding), bind(g, ext_b_[l], binding), 2), T(kSlope));
  }
  return nn::global_avg_pool(g, h);
}

template <std::floating_point T>
std::vector<std::pair<typename Restorer<T>::V, typename Restorer<T>::V>> Restorer<T>::modulation(G& g, V prompt,
                                                                                                 Binding binding) {
  const V f = prompt_features(g, prompt, binding);
  std::vector<std::pair<V, V>> out;
  for (int m = 0; m < config_.modules; ++m) {
    const V s = nn::dense(g, f, bind(g, fc_s_w_[m], binding), bind(g, fc_s_b_[m], binding));
    const V b = nn::dense(g, f, bind(g, fc_b_w_[m], binding), bind(g, fc_b_b_[m], binding));
    out.emplace_back(s, b);
  }
  return out;
}

template <std::floating_point T>
typename Restorer<T>::V Restorer<T>::prompt_batch(G& g, std::span<const int> tasks, int n, Binding binding) {
  if (static_cast<int>(tasks.size()) != n) {
    throw std::invalid_argument("forward: explicit prompting needs one task per sample (got " +
                                std::to_string(tasks.size()) + " for batch " + std::to_string(n) + ")");
  }
  for (int t : tasks) {
    if (t < 0 || t >= kNumTasks) throw std::invalid_argument("forward: task index out of range");
  }
  if (config_.learnable_prompts) return nn::gather(g, bind(g, prompt_table_, binding), tasks);
  const int P = config_.patch;
  Tensor<T> batch(Shape{n, 3, P, P});
  const std::size_t per = static_cast<std::size_t>(3) * P * P;
  for (int i = 0; i < n; ++i) {
    const auto p = make_explicit_prompt(task_from_index(tasks[i]), P);
    for (std::size_t k = 0; k < per; ++k) batch[i * per + k] = static_cast<T>(p[k]);
  }
  return g.constant(std::move(batch));
}

template <std::floating_point T>
typename Restorer<T>::V Restorer<T>::forward(G& g, V x, std::span<const int> tasks, Binding binding) {
  if (g.shape(x).c != 3) throw std::invalid_argument("forward: input must have 3 channels");
  switch (config_.prompt) {
    case PromptMode::kNone: return body(g, x, nullptr, binding);
    case PromptMode::kExplicit: {
      const V p = prompt_batch(g, tasks, g.shape(x).n, binding);
      const auto mod = modulation(g, p, binding);
      return body(g, x, &mod, binding);
    }
    case PromptMode::kAdaptive: {
      // The degraded input is its own prompt; task labels are never read.
      const auto mod = modulation(g, x, binding);
      return body(g, x, &mod, binding);
    }
  }
  throw std::logic_error("forward: bad prompt mode");
}

template <std::floating_point T>
typename Restorer<T>::V Restorer<T>::forward_with_prompt(G& g, V x, V prompt, Binding binding) {
  if (config_.prompt == PromptMode::kNone) throw std::logic_error("forward_with_prompt: model has no prompt path");
  const int pn = g.shape(prompt).n;
  if (pn != 1 && pn != g.shape(x).n) throw std::invalid_argument("forward_with_prompt: prompt batch mismatch");
  const auto mod = modulation(g, prompt, binding);
  return body(g, x, &mod, binding);
}

template <std::floating_point T>
Tensor<T> Restorer<T>::prompt_image(TaskId task) const {
  const int P = config_.patch;
  if (config_.learnable_prompts && !prompt_table_.value.empty()) {
    const std::size_t per = static_cast<std::size_t>(3) * P * P;
    Tensor<T> out(Shape{1, 3, P, P});
    std::copy(prompt_table_.value.values().begin() + static_cast<std::ptrdiff_t>(task_index(task) * per),
              prompt_table_.value.values().begin() + static_cast<std::ptrdiff_t>((task_index(task) + 1) * per),
              out.values().begin());
    return out;
  }
  return make_explicit_prompt(task, P).template cast<T>();
}

template <std::floating_point T>
std::vector<Parameter<T>*> Restorer<T>::parameters() {
  std::vector<Parameter<T>*> out{&head_w_, &head_b_};
  for (int m = 0; m < config_.modules; ++m) {
    out.push_back(&body_w_[m]);
    out.push_back(&body_b_[m]);
  }
  out.push_back(&tail_w_);
  out.push_back(&tail_b_);
  if (config_.prompt != PromptMode::kNone) {
    for (int l = 0; l < 3; ++l) {
      out.push_back(&ext_w_[l]);
      out.push_back(&ext_b_[l]);
    }
    for (int m = 0; m < config_.modules; ++m) {
      out.push_back(&fc_s_w_[m]);
      out.push_back(&fc_s_b_[m]);
      out.push_back(&fc_b_w_[m]);
      out.push_back(&fc_b_b_[m]);
    }
    if (!prompt_table_.value.empty()) out.push_back(&prompt_table_);
  }
  return out;
}

template <std::floating_point T>
std::vector<const Parameter<T>*> Restorer<T>::parameters() const {
  auto ps = const_cast<Restorer*>(this)->parameters();
  return {ps.begin(), ps.end()};
}

template <std::floating_point T>
std::int64_t Restorer<T>::prompt_parameter_count() const {
  std::int64_t n = 0;
  for (const Parameter<T>* p : parameters()) {
    if (p->name.rfind("ext.", 0) == 0 || p->name.rfind("inject.", 0) == 0) n += static_cast<std::int64_t>(p->value.size());
  }
  return n;
}

template <std::floating_point T>
template <std::floating_point U>
Restorer<U> Restorer<T>::cast() const {
  Restorer<U> r;
  r.config_ = config_;
  r.head_w_ = cast_param<T, U>(head_w_);
  r.head_b_ = cast_param<T, U>(head_b_);
  r.tail_w_ = cast_param<T, U>(tail_w_);
  r.tail_b_ = cast_param<T, U>(tail_b_);
  for (const auto& p : body_w_) r.body_w_.push_back(cast_param<T, U>(p));
  for (const auto& p : body_b_) r.body_b_.push_back(cast_param<T, U>(p));
  for (int l = 0; l < 3; ++l) {
    r.ext_w_[l] = cast_param<T, U>(ext_w_[l]);
    r.ext_b_[l] = cast_param<T, U>(ext_b_[l]);
  }
  for (const auto& p : fc_s_w_) r.fc_s_w_.push_back(cast_param<T, U>(p));
  for (const auto& p : fc_s_b_) r.fc_s_b_.push_back(cast_param<T, U>(p));
  for (const auto& p : fc_b_w_) r.fc_b_w_.push_back(cast_param<T, U>(p));
  for (const auto& p : fc_b_b_) r.fc_b_b_.push_back(cast_param<T, U>(p));
  r.prompt_table_ = cast_param<T, U>(prompt_table_);
  return r;
}

template <std::floating_point T>
Tensor<T> to_tensor(const ImageBuffer& image) {
  const int h = image.height(), w = image.width();
  Tensor<T> t(Shape{1, 3, h, w});
  for (int ch = 0; ch < 3; ++ch)
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) t.at(0, ch, r, c) = static_cast<T>(image.at(r, c, ch));
  return t;
}

template <std::floating_point T>
ImageBuffer to_image(const Tensor<T>& t, int n) {
  if (t.shape().c != 3) throw std::invalid_argument("to_image: tensor must have 3 channels");
  ImageBuffer im(t.shape().h, t.shape().w);
  for (int ch = 0; ch < 3; ++ch)
    for (int r = 0; r < t.shape().h; ++r)
      for (int c = 0; c < t.shape().w; ++c) im.at(r, c, ch) = static_cast<double>(t.at(n, ch, r, c));
  return im;
}

template class Restorer<float>;
template class Restorer<double>;
template Restorer<double> Restorer<float>::cast<double>() const;
template Restorer<float> Restorer<double>::cast<float>() const;
template Restorer<float> Restorer<float>::cast<float>() const;
template Restorer<double> Restorer<double>::cast<double>() const;
template Tensor<float> interpolate_prompts(const Tensor<float>&, const Tensor<float>&, double);
template Tensor<double> interpolate_prompts(const Tensor<double>&, const Tensor<double>&, double);
template Tensor<float> to_tensor<float>(const ImageBuffer&);
template Tensor<double> to_tensor<double>(const ImageBuffer&);
template ImageBuffer to_image(const Tensor<float>&, int);
template ImageBuffer to_image(const Tensor<double>&, int);

}  // namespace mio::model
