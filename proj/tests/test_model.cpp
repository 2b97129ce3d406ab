#include <cmath>
#include <fstream>
#include <random>

#include "doctest.h"
#include "mio/model.hpp"
#include "mio/nn/optim.hpp"
#include "support/gradcheck.hpp"
#include "support/tempdir.hpp"

using namespace mio;
using namespace mio::model;
using mio::testing::TempDir;

namespace {

BackboneConfig small_config(PromptMode mode) {
  BackboneConfig c;
  c.channels = 4;
  c.modules = 2;
  c.prompt_dim = 5;
  c.patch = 8;
  c.prompt = mode;
  return c;
}

// Randomize the injection heads so s and b actually depend on the prompt.
template <std::floating_point T>
void perturb_heads(Restorer<T>& m, std::uint64_t seed, double scale = 0.3) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto* p : m.parameters()) {
    if (p->name.rfind("inject.", 0) != 0) continue;
    for (T& v : p->value.values()) v += static_cast<T>(u(rng));
  }
}

template <std::floating_point T>
Tensor<T> random_image(nn::Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor<T> t(s);
  for (T& v : t.values()) v = static_cast<T>(u(rng));
  return t;
}

template <std::floating_point T>
Tensor<T> run(Restorer<T>& m, const Tensor<T>& x, std::vector<int> tasks) {
  nn::Graph<T> g;
  return g.value(m.forward(g, g.constant(x), tasks, Binding::kInfer));
}

template <std::floating_point T>
Tensor<T> run_prompt(Restorer<T>& m, const Tensor<T>& x, const Tensor<T>& p) {
  nn::Graph<T> g;
  return g.value(m.forward_with_prompt(g, g.constant(x), g.constant(p), Binding::kInfer));
}

double mean_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s / a.size();
}

}  // namespace

TEST_CASE("explicit prompts") {
  const auto s = make_explicit_prompt(TaskId::kSuperResolution, 8);
  CHECK(s.shape() == nn::Shape{1, 3, 8, 8});
  CHECK(s.at(0, 0, 3, 5) == doctest::Approx(1.0 / 7));
  CHECK(s.at(0, 1, 3, 5) == 0.0);
  CHECK(make_explicit_prompt(TaskId::kHaze, 8) == make_explicit_prompt(TaskId::kHaze, 8));
  for (TaskId a : kAllTasks)
    for (TaskId b : kAllTasks)
      if (a != b) CHECK(mean_abs_diff(make_explicit_prompt(a, 8), make_explicit_prompt(b, 8)) > 0.1);
}

TEST_CASE("injection is the identity at initialization") {
  const auto x = random_image<double>({2, 3, 12, 10}, 1);
  Restorer<double> none(small_config(PromptMode::kNone), 42);
  Restorer<double> ep(small_config(PromptMode::kExplicit), 42);
  Restorer<double> ap(small_config(PromptMode::kAdaptive), 42);
  const auto y = run(none, x, {});
  CHECK(y.shape() == x.shape());
  CHECK(run(ep, x, {0, 5}) == y);
  CHECK(run(ap, x, {}) == y);

  nn::Graph<double> g;
  const auto mod = ep.modulation(g, g.constant(make_explicit_prompt(TaskId::kRain, 8)));
  REQUIRE(mod.size() == 2);
  for (const auto& [sv, bv] : mod) {
    for (double v : g.value(sv).values()) CHECK(v == 1.0);
    for (double v : g.value(bv).values()) CHECK(v == 0.0);
  }
}

TEST_CASE("different prompts give different features") {
  Restorer<double> ep(small_config(PromptMode::kExplicit), 3);
  nn::Graph<double> g;
  const auto fa = g.value(ep.prompt_features(g, g.constant(make_explicit_prompt(TaskId::kNoise, 8))));
  const auto fb = g.value(ep.prompt_features(g, g.constant(make_explicit_prompt(TaskId::kLowLight, 8))));
  CHECK(fa.shape() == nn::Shape{1, 5, 1, 1});
  CHECK(fa != fb);
  CHECK_THROWS_AS(ep.prompt_features(g, g.constant(Tensor<double>({1, 2, 8, 8}))), std::invalid_argument);
}

TEST_CASE("explicit mode needs a task per sample") {
  Restorer<float> ep(small_config(PromptMode::kExplicit), 1);
  const auto x = random_image<float>({2, 3, 8, 8}, 2);
  CHECK_THROWS_AS(run(ep, x, {}), std::invalid_argument);
  CHECK_THROWS_AS(run(ep, x, {1}), std::invalid_argument);
  CHECK_THROWS_AS(run(ep, x, {1, 9}), std::invalid_argument);
}

TEST_CASE("adaptive mode never reads task labels") {
  Restorer<double> ap(small_config(PromptMode::kAdaptive), 5);
  perturb_heads(ap, 6);
  const auto x = random_image<double>({2, 3, 8, 8}, 7);
  const auto y = run(ap, x, {});
  CHECK(run(ap, x, {0, 1}) == y);
  CHECK(run(ap, x, {6, 6, 6, 6, 6}) == y);
  // The graph holds no prompt-table lookup.
  nn::Graph<double> g;
  ap.forward(g, g.constant(x));
  bool has_gather = false;
  for (int i = 0; i < static_cast<int>(g.size()); ++i) has_gather |= g.op({i}) == "gather";
  CHECK_FALSE(has_gather);
}

TEST_CASE("assembled model gradients match finite differences") {
  for (PromptMode mode : {PromptMode::kNone, PromptMode::kExplicit, PromptMode::kAdaptive}) {
    CAPTURE(prompt_mode_name(mode));
    Restorer<double> m(small_config(mode), 11);
    perturb_heads(m, 12);
    const auto x = random_image<double>({2, 3, 8, 8}, 13);
    const auto probe = random_image<double>({2, 3, 8, 8}, 14);
    const std::vector<int> tasks = {2, 4};
    auto loss = [&](bool train) {
      nn::Graph<double> g;
      auto y = m.forward(g, g.constant(x), tasks, train ? Binding::kTrain : Binding::kInfer);
      auto l = nn::mean(g, nn::mul(g, y, g.constant(probe)));
      if (train) g.backward(l);
      return g.value(l)[0];
    };
    for (auto* p : m.parameters()) p->zero_grad();
    loss(true);
    for (auto* p : m.parameters()) {
      CAPTURE(p->name);
      const auto num = mio::testing::numeric_grad(p->value.values(), [&] { return loss(false); }, 1e-5);
      CHECK(mio::testing::rel_error(p->grad.values(), num) < 1e-6);
    }
  }
}

TEST_CASE("prompt parameter count") {
  // Frozen for the default config: extractor 448 + 4640 + 9248, heads 4 * (2*16*32 + 2*16).
  CHECK(prompt_parameter_count(BackboneConfig{}) == 18560);
  for (PromptMode mode : {PromptMode::kExplicit, PromptMode::kAdaptive}) {
    BackboneConfig c = small_config(mode);
    Restorer<float> m(c, 0);
    CHECK(m.prompt_parameter_count() == prompt_parameter_count(c));
  }
  Restorer<float> none(small_config(PromptMode::kNone), 0);
  CHECK(none.prompt_parameter_count() == 0);
  CHECK(none.parameters().size() == 2 + 2 * 2 + 2);
}

TEST_CASE("backbone weights do not depend on prompt mode") {
  Restorer<float> a(small_config(PromptMode::kNone), 9), b(small_config(PromptMode::kAdaptive), 9);
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    CHECK(a.parameters()[i]->value == b.parameters()[i]->value);
  }
  Restorer<float> c(small_config(PromptMode::kNone), 10);
  CHECK(a.parameters()[0]->value != c.parameters()[0]->value);
}

TEST_CASE("prompt interpolation endpoints") {
  Restorer<double> ep(small_config(PromptMode::kExplicit), 21);
  perturb_heads(ep, 22);
  const auto x = random_image<double>({1, 3, 10, 10}, 23);
  const auto pa = ep.prompt_image(TaskId::kBlur), pb = ep.prompt_image(TaskId::kHaze);
  CHECK(run_prompt(ep, x, interpolate_prompts(pa, pb, 0.0)) == run(ep, x, {1}));
  CHECK(run_prompt(ep, x, interpolate_prompts(pa, pb, 1.0)) == run(ep, x, {5}));
  CHECK(run(ep, x, {1}) != run(ep, x, {5}));
  const auto mid = interpolate_prompts(pa, pb, 0.5);
  for (std::size_t i = 0; i < mid.size(); ++i) CHECK(mid[i] == doctest::Approx((pa[i] + pb[i]) / 2));
  CHECK_THROWS_AS(interpolate_prompts(pa, pb, -0.1), std::invalid_argument);
  CHECK_THROWS_AS(interpolate_prompts(pa, pb, 1.5), std::invalid_argument);
}

TEST_CASE("learnable prompt table") {
  BackboneConfig c = small_config(PromptMode::kExplicit);
  c.learnable_prompts = true;
  Restorer<double> m(c, 4);
  CHECK(m.prompt_image(TaskId::kJpeg) == make_explicit_prompt(TaskId::kJpeg, 8));
  Restorer<double> fixed(small_config(PromptMode::kExplicit), 4);
  const auto x = random_image<double>({2, 3, 8, 8}, 5);
  CHECK(run(m, x, {3, 6}) == run(fixed, x, {3, 6}));
}

TEST_CASE("one optimizer step lowers the L1 loss") {
  for (PromptMode mode : {PromptMode::kNone, PromptMode::kExplicit, PromptMode::kAdaptive}) {
    Restorer<float> m(small_config(mode), 31);
    const auto y = random_image<float>({1, 3, 16, 16}, 32);
    auto x = y;
    std::mt19937_64 rng(33);
    std::normal_distribution<float> n(0.0f, 0.1f);
    for (float& v : x.values()) v += n(rng);
    auto step_loss = [&](bool train) {
      nn::Graph<float> g;
      auto l = nn::l1_loss(g, m.forward(g, g.constant(x), std::vector<int>{2}), g.constant(y));
      if (train) g.backward(l);
      return g.value(l)[0];
    };
    for (auto* p : m.parameters()) p->zero_grad();
    const float before = step_loss(true);
    nn::Adam<float> adam;
    auto params = m.parameters();
    adam.step(params, 1e-4);
    CHECK(step_loss(false) < before);
  }
}

TEST_CASE("checkpoint round-trip") {
  TempDir dir("ckpt");
  BackboneConfig c = small_config(PromptMode::kExplicit);
  Restorer<float> m(c, 51);
  perturb_heads(m, 52);
  save_checkpoint(dir / "m.ckpt", restorer_checkpoint(m));
  auto back = restorer_from_checkpoint(load_checkpoint(dir / "m.ckpt"));
  CHECK(back.config().to_json() == c.to_json());
  const auto x = random_image<float>({1, 3, 9, 11}, 53);
  CHECK(run(back, x, {4}) == run(m, x, {4}));

  // Byte layout: magic, version 1, header length.
  std::ifstream in(dir / "m.ckpt", std::ios::binary);
  std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  CHECK(bytes.substr(0, 4) == "MIO1");
  CHECK(bytes[4] == 1);

  std::ofstream(dir / "t.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() - 3);
  CHECK_THROWS_AS(load_checkpoint(dir / "t.ckpt"), std::runtime_error);
  std::ofstream(dir / "h.ckpt", std::ios::binary) << bytes.substr(0, 20);
  CHECK_THROWS_AS(load_checkpoint(dir / "h.ckpt"), std::runtime_error);
  std::ofstream(dir / "bad.ckpt", std::ios::binary) << "XXXX" << bytes.substr(4);
  CHECK_THROWS_AS(load_checkpoint(dir / "bad.ckpt"), std::runtime_error);
  CHECK_THROWS_AS(classifier_from_checkpoint(load_checkpoint(dir / "m.ckpt")), std::runtime_error);

  Classifier<float> cls(ClassifierConfig{}, 3);
  cls.set_trained(true);
  save_checkpoint(dir / "c.ckpt", classifier_checkpoint(cls));
  auto cback = classifier_from_checkpoint(load_checkpoint(dir / "c.ckpt"));
  CHECK(cback.trained());
  ImageBuffer im(20, 20, 0.3);
  CHECK(cback.classify(im).second == cls.classify(im).second);
}

TEST_CASE("classifier selection rule") {
  std::vector<double> onehot(7, 0.0);
  onehot[5] = 1.0;
  CHECK(argmax_task(onehot) == TaskId::kHaze);
  CHECK(argmax_task(std::vector<double>(7, 0.25)) == TaskId::kSuperResolution);
  std::vector<double> tie = {0, 3, 1, 3, 0, 0, 0};
  CHECK(argmax_task(tie) == TaskId::kBlur);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-5, 5), pos(0.01, 100);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> l(7);
    for (double& v : l) v = u(rng);
    auto scaled = l;
    const double k = pos(rng);
    for (double& v : scaled) v *= k;
    CHECK(argmax_task(l) == argmax_task(scaled));
  }
  CHECK_THROWS_AS(argmax_task(std::vector<double>(6, 0.0)), std::invalid_argument);

  Classifier<float> none;
  CHECK_THROWS_AS(none.classify(ImageBuffer(8, 8)), std::logic_error);
  Classifier<float> fresh(ClassifierConfig{}, 1);
  CHECK_THROWS_AS(fresh.classify(ImageBuffer(8, 8)), std::logic_error);
  fresh.set_trained(true);
  const auto [task, logits] = fresh.classify(ImageBuffer(8, 8, 0.5));
  CHECK(logits.size() == 7);
  CHECK(task == argmax_task(logits));
}
