#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>

#include <spdlog/spdlog.h>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "mio/rng.hpp"
#include "mio/train.hpp"

namespace mio::train {

namespace {

template <std::floating_point T>
using G = nn::Graph<T>;

nlohmann::json log_line(const LossRecord& r, const std::vector<TaskId>& active) {
  return {{"iteration", r.iteration}, {"period", r.period}, {"active", r.active},
          {"tasks", task_letters(active)}, {"loss", r.loss}, {"lr", r.lr}};
}

model::Checkpoint training_checkpoint(const model::Restorer<float>& m, const nn::Adam<float>& adam,
                                      const TrainPlan& plan, int period, std::int64_t iteration) {
  auto ck = model::restorer_checkpoint(m);
  const auto params = m.parameters();
  const auto& ms = adam.first_moments();
  const auto& vs = adam.second_moments();
  for (std::size_t i = 0; i < ms.size(); ++i) {
    ck.tensors.push_back({"adam.m." + params[i]->name, ms[i]});
    ck.tensors.push_back({"adam.v." + params[i]->name, vs[i]});
  }
  ck.meta["train"] = {{"plan", plan.to_json()},
                      {"period", period},
                      {"iteration", iteration},
                      {"adam_steps", adam.steps()}};
  return ck;
}

}  // namespace

Strategy parse_strategy(std::string_view name) {
  if (name == "mixed" || name == "M" || name == "m") return Strategy::kMixed;
  if (name == "sequential" || name == "S" || name == "s") return Strategy::kSequential;
  throw std::invalid_argument("unknown strategy '" + std::string(name) + "'; expected mixed|sequential");
}

std::string_view strategy_name(Strategy s) { return s == Strategy::kMixed ? "mixed" : "sequential"; }

std::vector<TaskId> parse_sequence(std::string_view letters, const std::vector<TaskId>& universe) {
  const auto seq = parse_task_letters(letters);
  const std::set<TaskId> want(universe.begin(), universe.end());
  const std::set<TaskId> got(seq.begin(), seq.end());
  if (got.size() != seq.size() || got != want) {
    throw std::invalid_argument("sequence '" + std::string(letters) + "' must name each of " + task_letters(universe) +
                                " exactly once");
  }
  return seq;
}

SequenceAdvice validate_sequence(const std::vector<TaskId>& sequence) {
  if (sequence.empty()) throw std::invalid_argument("task sequence is empty");
  if (std::set<TaskId>(sequence.begin(), sequence.end()).size() != sequence.size()) {
    throw std::invalid_argument("task sequence '" + task_letters(sequence) + "' repeats a task");
  }
  SequenceAdvice a;
  for (std::size_t i = 0; i < sequence.size(); ++i) {
    const bool lum = task_category(sequence[i]) == TaskCategory::kLuminanceAdjustment;
    a.category_order.push_back(lum ? 'L' : 'D');
    if (lum && i < 2) a.warning = true;
  }
  if (a.warning) {
    a.message = "sequence " + task_letters(sequence) +
                " learns a luminance-adjustment task (H or L) in the first two periods; "
                "detail-enhancement tasks first usually works better";
  }
  return a;
}

void TrainPlan::validate() const {
  if (periods < 1 || iters_per_period < 1) throw std::invalid_argument("train: periods and iterations must be >= 1");
  if (batch < 1 || patch < 8) throw std::invalid_argument("train: batch must be >= 1 and patch >= 8");
  if (sequence.empty()) throw std::invalid_argument("train: empty task sequence");
  validate_sequence(sequence);
  if (strategy == Strategy::kSequential && periods < static_cast<int>(sequence.size())) {
    throw std::invalid_argument("train: sequential learning over " + std::to_string(sequence.size()) +
                                " tasks needs at least that many periods (got " + std::to_string(periods) + ")");
  }
  if (!(eta_max > 0.0) || !(eta_min >= 0.0) || eta_min > eta_max) {
    throw std::invalid_argument("train: need 0 <= eta_min <= eta_max, eta_max > 0");
  }
  backbone.validate();
}

nlohmann::json TrainPlan::to_json() const {
  return {{"strategy", strategy_name(strategy)},
          {"sequence", task_letters(sequence)},
          {"periods", periods},
          {"iters_per_period", iters_per_period},
          {"batch", batch},
          {"patch", patch},
          {"eta_max", eta_max},
          {"eta_min", eta_min},
          {"reset_adam_each_period", reset_adam_each_period},
          {"seed", seed},
          {"backbone", backbone.to_json()}};
}

TrainPlan TrainPlan::from_json(const nlohmann::json& j) {
  TrainPlan p;
  p.strategy = parse_strategy(j.at("strategy").get<std::string>());
  p.sequence = parse_task_letters(j.at("sequence").get<std::string>());
  p.periods = j.at("periods").get<int>();
  p.iters_per_period = j.at("iters_per_period").get<int>();
  p.batch = j.at("batch").get<int>();
  p.patch = j.at("patch").get<int>();
  p.eta_max = j.at("eta_max").get<double>();
  p.eta_min = j.at("eta_min").get<double>();
  p.reset_adam_each_period = j.value("reset_adam_each_period", false);
  p.seed = j.at("seed").get<std::uint64_t>();
  p.backbone = model::BackboneConfig::from_json(j.at("backbone"));
  return p;
}

std::vector<TaskId> tasks_for_period(const TrainPlan& plan, int k) {
  if (k < 1 || k > plan.periods) {
    throw std::out_of_range("tasks_for_period: period " + std::to_string(k) + " outside 1.." +
                            std::to_string(plan.periods));
  }
  if (plan.strategy == Strategy::kMixed) return plan.sequence;
  const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(k), plan.sequence.size());
  return {plan.sequence.begin(), plan.sequence.begin() + static_cast<std::ptrdiff_t>(n)};
}

fs::path period_checkpoint_path(const fs::path& out_dir, int period) {
  char name[32];
  std::snprintf(name, sizeof name, "period_%02d.ckpt", period);
  return out_dir / "ckpt" / name;
}

fs::path final_checkpoint_path(const fs::path& out_dir) { return out_dir / "model.ckpt"; }

dataio::PatchBatch batch_for_step(const TrainPlan& plan, const dataio::Dataset& data,
                                  const std::vector<TaskId>& active, std::int64_t iteration) {
  RngStream rng(plan.seed, hash_combine(hash_bytes("train-batch"), static_cast<std::uint64_t>(iteration)));
  return dataio::sample_batch(data, active, plan.batch, plan.patch, rng);
}

void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
}

RunState run_training(const TrainPlan& plan, const dataio::Dataset& data, const TrainOptions& options) {
  plan.validate();
  if (options.out_dir.empty()) throw std::invalid_argument("run_training: out_dir is required");
  for (TaskId t : plan.sequence) {
    if (data.items_for(t).empty()) {
      throw std::invalid_argument(std::string("run_training: dataset has no samples for task ") + task_letter(t));
    }
  }
  tune_allocator();
  fs::create_directories(options.out_dir / "ckpt");

  model::Restorer<float> net(plan.backbone, plan.seed);
  nn::Adam<float> adam;
  RunState state;

  const fs::path log_path = options.out_dir / "train_log.jsonl";
  std::vector<std::string> kept_log;
  if (!options.resume_from.empty()) {
    const auto ck = model::load_checkpoint(options.resume_from);
    if (!ck.meta.contains("train")) throw std::runtime_error("resume: checkpoint carries no training state");
    const auto& tr = ck.meta.at("train");
    if (tr.at("plan") != plan.to_json()) {
      throw std::invalid_argument("resume: checkpoint was written by a different plan: " + tr.at("plan").dump());
    }
    net = model::restorer_from_checkpoint(ck);
    state.period = tr.at("period").get<int>();
    state.iteration = tr.at("iteration").get<std::int64_t>();
    const auto steps = tr.at("adam_steps").get<std::int64_t>();
    if (steps > 0) {
      std::vector<nn::Tensor<float>> m, v;
      for (const auto* p : net.parameters()) {
        m.push_back(ck.get("adam.m." + p->name));
        v.push_back(ck.get("adam.v." + p->name));
      }
      adam.restore(steps, std::move(m), std::move(v));
    }
    // Keep the log prefix written before the checkpoint.
    std::ifstream in(log_path);
    for (std::string line; std::getline(in, line);) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      if (j.at("iteration").get<std::int64_t>() > state.iteration) break;
      kept_log.push_back(line);
      state.history.push_back({j.at("iteration").get<std::int64_t>(), j.at("period").get<int>(),
                               j.at("active").get<int>(), j.at("loss").get<double>(), j.at("lr").get<double>()});
    }
    spdlog::info("resuming at period {} (step {})", state.period + 1, state.iteration);
  }

  std::ofstream log(log_path, std::ios::trunc);
  for (const auto& line : kept_log) log << line << '\n';

  auto params = net.parameters();
  const auto schedule = plan.schedule();
  const int last = options.stop_after_period > 0 ? std::min(options.stop_after_period, plan.periods) : plan.periods;

  for (int k = state.period + 1; k <= last; ++k) {
    const auto active = tasks_for_period(plan, k);
    if (plan.reset_adam_each_period && k > 1) adam.reset();
    double period_loss = 0.0;
    for (int j = 0; j < plan.iters_per_period; ++j) {
      const std::int64_t it = state.iteration + 1;
      const auto batch = batch_for_step(plan, data, active, it);
      for (auto* p : params) p->zero_grad();
      double loss = std::nan("");
      try {
        G<float> g;
        const auto x = g.constant(batch.lq);
        const auto y = net.forward(g, x, batch.labels);
        const auto l = nn::l1_loss(g, y, g.constant(batch.gt));
        loss = g.value(l)[0];
        if (std::isfinite(loss)) g.backward(l);
      } catch (const std::runtime_error& e) {
        spdlog::error("step {}: {}", it, e.what());
        loss = std::nan("");
      }
      if (!std::isfinite(loss)) {
        const fs::path diag = options.out_dir / "ckpt" / "diverged.ckpt";
        model::save_checkpoint(diag, training_checkpoint(net, adam, plan, k - 1, state.iteration));
        throw std::runtime_error("training diverged at step " + std::to_string(it) + " (period " + std::to_string(k) +
                                 "); diagnostic checkpoint at " + diag.string());
      }
      const double lr = nn::lr_at(schedule, j);
      adam.step(params, lr);
      state.iteration = it;
      const LossRecord rec{it, k, static_cast<int>(active.size()), loss, lr};
      state.history.push_back(rec);
      log << log_line(rec, active).dump() << '\n';
      period_loss += loss;
      if (options.on_step) options.on_step(rec, batch);
    }
    log.flush();
    state.period = k;
    const fs::path ck = period_checkpoint_path(options.out_dir, k);
    model::save_checkpoint(ck, training_checkpoint(net, adam, plan, k, state.iteration));
    state.checkpoints.push_back(ck);
    spdlog::info("period {}/{} tasks {} mean loss {:.5f}", k, plan.periods, task_letters(active),
                 period_loss / plan.iters_per_period);
  }
  if (state.period == plan.periods) {
    state.final_checkpoint = final_checkpoint_path(options.out_dir);
    model::save_checkpoint(state.final_checkpoint, model::restorer_checkpoint(net));
  }
  return state;
}

}  // namespace mio::train
