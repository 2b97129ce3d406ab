#include <cmath>
#include <stdexcept>

#include "mio/rng.hpp"
#include "mio/train.hpp"

namespace mio::train {

nlohmann::json ClassifierPlan::to_json() const {
  return {{"steps", steps}, {"batch", batch},     {"patch", patch},
          {"eta_max", eta_max}, {"eta_min", eta_min}, {"crop_align", crop_align}, {"seed", seed}, {"classifier", config.to_json()}};
}

nlohmann::json ClassifierReport::to_json() const {
  return {{"samples", samples}, {"correct", correct}, {"accuracy", accuracy()}, {"confusion", confusion}};
}

model::Classifier<float> train_classifier(const dataio::Dataset& data, const ClassifierPlan& plan,
                                          const std::function<void(int, double)>& on_step) {
  if (plan.steps < 1 || plan.batch < 1) throw std::invalid_argument("train_classifier: steps and batch must be >= 1");
  const auto tasks = data.tasks();
  if (tasks.size() < 2) throw std::invalid_argument("train_classifier: dataset needs at least two tasks");
  tune_allocator();

  model::Classifier<float> cls(plan.config, plan.seed);
  nn::Adam<float> adam;
  auto params = cls.parameters();
  const nn::CosineSchedule schedule{plan.eta_max, plan.eta_min, plan.steps, false};
  for (int step = 0; step < plan.steps; ++step) {
    RngStream rng(plan.seed, hash_combine(hash_bytes("classifier-batch"), static_cast<std::uint64_t>(step)));
    const auto batch = dataio::sample_batch(data, tasks, plan.batch, plan.patch, rng, plan.crop_align);
    for (auto* p : params) p->zero_grad();
    nn::Graph<float> g;
    const auto l = nn::softmax_cross_entropy(g, cls.logits(g, g.constant(batch.lq)), batch.labels);
    const double loss = g.value(l)[0];
    if (!std::isfinite(loss)) throw std::runtime_error("classifier training diverged at step " + std::to_string(step));
    g.backward(l);
    adam.step(params, nn::lr_at(schedule, step));
    if (on_step) on_step(step + 1, loss);
  }
  cls.set_trained(true);
  return cls;
}

ClassifierReport evaluate_classifier(model::Classifier<float>& classifier, const dataio::Dataset& data) {
  if (!classifier.initialized()) throw std::logic_error("evaluate_classifier: classifier is not initialized");
  ClassifierReport r;
  r.confusion.assign(kNumTasks, std::vector<int>(kNumTasks, 0));
  for (const auto& item : data.items()) {
    // Logits are read directly so an untrained network can be scored too.
    nn::Graph<float> g;
    const auto out = classifier.logits(g, g.constant(model::to_tensor<float>(item.lq)), model::Binding::kInfer);
    const auto& v = g.value(out);
    const std::vector<double> logits(v.values().begin(), v.values().end());
    const TaskId pred = model::argmax_task(logits);
    ++r.confusion[task_index(item.task)][task_index(pred)];
    ++r.samples;
    if (pred == item.task) ++r.correct;
  }
  return r;
}

}  // namespace mio::train
