#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "mio/image.hpp"
#include "mio/nn/ops.hpp"
#include "mio/task.hpp"

namespace mio::model {

using nn::Parameter;
using nn::Shape;
using nn::Tensor;

enum class PromptMode { kNone, kExplicit, kAdaptive };
PromptMode parse_prompt_mode(std::string_view name);
std::string_view prompt_mode_name(PromptMode mode);

struct BackboneConfig {
  int channels = 16;    // C
  int modules = 4;      // M body blocks (conv + leaky ReLU)
  int patch = 32;       // explicit prompt size
  PromptMode prompt = PromptMode::kNone;
  int prompt_dim = 32;  // D
  bool learnable_prompts = false;

  void validate() const;
  nlohmann::json to_json() const;
  static BackboneConfig from_json(const nlohmann::json& j);
};

// Parameters of the prompt machinery for a config: extractor plus one
// (s, b) head pair per module. Learnable prompt images are not included.
std::int64_t prompt_parameter_count(const BackboneConfig& config);

// Fixed prompt image for a task: (index + 1) / 7 on channel index mod 3.
Tensor<double> make_explicit_prompt(TaskId task, int patch);

// (1 - alpha) * a + alpha * b; alpha must lie in [0, 1].
template <std::floating_point T>
Tensor<T> interpolate_prompts(const Tensor<T>& a, const Tensor<T>& b, double alpha);

// How forward() binds parameters: as trainable leaves, or as constants for
// inference (no backward closures are recorded).
enum class Binding { kTrain, kInfer };

template <std::floating_point T>
class Restorer {
 public:
  using G = nn::Graph<T>;
  using V = typename G::Var;

  Restorer() = default;
  // Backbone and prompt parameters are drawn from separate streams, so models
  // that differ only in prompt mode share identical backbone weights.
  Restorer(const BackboneConfig& config, std::uint64_t seed);

  const BackboneConfig& config() const { return config_; }

  // x: (N, 3, H, W). Explicit mode needs one task index per sample.
  V forward(G& g, V x, std::span<const int> tasks = {}, Binding binding = Binding::kTrain);
  // Explicit-style forward with caller-provided prompt images, (N or 1, 3, h, w).
  V forward_with_prompt(G& g, V x, V prompt, Binding binding = Binding::kTrain);
  // Shared extractor features for a prompt batch: (N, D, 1, 1).
  V prompt_features(G& g, V prompt, Binding binding = Binding::kTrain);
  // Per-module (s, b) for a prompt batch.
  std::vector<std::pair<V, V>> modulation(G& g, V prompt, Binding binding = Binding::kTrain);

  // Current prompt image for a task (learned table row when learnable).
  Tensor<T> prompt_image(TaskId task) const;

  std::vector<Parameter<T>*> parameters();
  std::vector<const Parameter<T>*> parameters() const;
  std::int64_t prompt_parameter_count() const;

  // Conversions for checkpointing and for double-precision checks.
  template <std::floating_point U>
  Restorer<U> cast() const;

 private:
  template <std::floating_point U>
  friend class Restorer;

  V bind(G& g, Parameter<T>& p, Binding binding);
  V body(G& g, V x, const std::vector<std::pair<V, V>>* mod, Binding binding);
  V prompt_batch(G& g, std::span<const int> tasks, int n, Binding binding);

  BackboneConfig config_;
  Parameter<T> head_w_, head_b_, tail_w_, tail_b_;
  std::vector<Parameter<T>> body_w_, body_b_;
  // Prompt extractor: three stride-2 convs.
  Parameter<T> ext_w_[3], ext_b_[3];
  std::vector<Parameter<T>> fc_s_w_, fc_s_b_, fc_b_w_, fc_b_b_;
  Parameter<T> prompt_table_;  // (7, 3, patch, patch) when learnable
};

struct ClassifierConfig {
  int width = 16;  // first conv width; later layers use 2x
  nlohmann::json to_json() const;
  static ClassifierConfig from_json(const nlohmann::json& j);
};

// Degradation classifier: three stride-2 convs, global pooling, dense to 7 logits.
template <std::floating_point T>
class Classifier {
 public:
  using G = nn::Graph<T>;
  using V = typename G::Var;

  Classifier() = default;
  Classifier(const ClassifierConfig& config, std::uint64_t seed);

  bool initialized() const { return !dense_w_.value.empty(); }
  bool trained() const { return trained_; }
  void set_trained(bool t) { trained_ = t; }
  const ClassifierConfig& config() const { return config_; }

  V logits(G& g, V x, Binding binding = Binding::kTrain);
  // Argmax task and the logits for one image; throws std::logic_error when
  // the classifier is not initialized or not trained.
  std::pair<TaskId, std::vector<double>> classify(const ImageBuffer& image);
  std::vector<TaskId> classify_batch(const Tensor<T>& x);

  std::vector<Parameter<T>*> parameters();
  std::vector<const Parameter<T>*> parameters() const;

 private:
  ClassifierConfig config_;
  Parameter<T> conv_w_[3], conv_b_[3];
  Parameter<T> dense_w_, dense_b_;
  bool trained_ = false;
};

// Argmax with ties going to the lowest task index.
TaskId argmax_task(std::span<const double> logits);

// Image (H x W x 3) to a (1, 3, H, W) tensor and back.
template <std::floating_point T>
Tensor<T> to_tensor(const ImageBuffer& image);
template <std::floating_point T>
ImageBuffer to_image(const Tensor<T>& t, int n = 0);

// Checkpoint container: magic "MIO1", u32 version, u32 header length, JSON
// header (meta object plus tensor directory), then float32 little-endian
// payloads in directory order. Writes go through a temporary file and rename.
struct NamedTensor {
  std::string name;
  Tensor<float> value;
};

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedTensor> tensors;

  const Tensor<float>& get(const std::string& name) const;
  bool has(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Model <-> checkpoint helpers (parameters stored under their names).
Checkpoint restorer_checkpoint(const Restorer<float>& model);
Restorer<float> restorer_from_checkpoint(const Checkpoint& ckpt);
Checkpoint classifier_checkpoint(const Classifier<float>& model);
Classifier<float> classifier_from_checkpoint(const Checkpoint& ckpt);

}  // namespace mio::model
