#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "mio/dataio.hpp"
#include "mio/model.hpp"
#include "mio/nn/optim.hpp"

namespace mio::train {

namespace fs = std::filesystem;

enum class Strategy { kMixed, kSequential };
Strategy parse_strategy(std::string_view name);
std::string_view strategy_name(Strategy s);

// Parses a task order such as "SBNJRHL" or "N,L". The letters must be a
// permutation of `universe` (all seven tasks by default).
std::vector<TaskId> parse_sequence(std::string_view letters,
                                   const std::vector<TaskId>& universe = {kAllTasks.begin(), kAllTasks.end()});

struct SequenceAdvice {
  bool warning = false;
  std::string category_order;  // one letter per position: D (detail) or L (luminance)
  std::string message;
};

// Warns when a luminance task sits in the first two positions. Throws
// std::invalid_argument if `sequence` repeats a task.
SequenceAdvice validate_sequence(const std::vector<TaskId>& sequence);

struct TrainPlan {
  Strategy strategy = Strategy::kSequential;
  std::vector<TaskId> sequence{kAllTasks.begin(), kAllTasks.end()};
  int periods = 10;
  int iters_per_period = 500;
  int batch = 8;
  int patch = 32;
  double eta_max = 2e-4;
  double eta_min = 1e-7;
  bool reset_adam_each_period = false;
  std::uint64_t seed = 0;
  model::BackboneConfig backbone;

  std::int64_t total_iterations() const { return static_cast<std::int64_t>(periods) * iters_per_period; }
  nn::CosineSchedule schedule() const { return {eta_max, eta_min, iters_per_period, true}; }
  void validate() const;
  nlohmann::json to_json() const;
  static TrainPlan from_json(const nlohmann::json& j);
};

// Active tasks in period k (1-based).
std::vector<TaskId> tasks_for_period(const TrainPlan& plan, int k);

struct LossRecord {
  std::int64_t iteration = 0;  // 1-based optimizer step
  int period = 0;
  int active = 0;
  double loss = 0.0;
  double lr = 0.0;
};

struct TrainOptions {
  fs::path out_dir;              // checkpoints under out_dir/ckpt, log at out_dir/train_log.jsonl
  fs::path resume_from;          // period checkpoint to continue from (optional)
  int stop_after_period = 0;     // stop early once this period is done (0 = run all)
  // Called after every step; handy for progress output and tests.
  std::function<void(const LossRecord&, const dataio::PatchBatch&)> on_step;
};

struct RunState {
  int period = 0;                // last completed period
  std::int64_t iteration = 0;    // optimizer steps taken
  std::vector<LossRecord> history;
  std::vector<fs::path> checkpoints;
  fs::path final_checkpoint;
};

// Mixed or sequential training of a restorer on `data`. Every period ends
// with a checkpoint holding parameters, Adam state and progress; resuming
// from it reproduces the uninterrupted run bit for bit. A non-finite loss
// writes out_dir/ckpt/diverged.ckpt and throws std::runtime_error.
RunState run_training(const TrainPlan& plan, const dataio::Dataset& data, const TrainOptions& options);

// Paths used by run_training.
fs::path period_checkpoint_path(const fs::path& out_dir, int period);
fs::path final_checkpoint_path(const fs::path& out_dir);

// Batch for global step `iteration` (1-based): a pure function of seed and step.
dataio::PatchBatch batch_for_step(const TrainPlan& plan, const dataio::Dataset& data,
                                  const std::vector<TaskId>& active, std::int64_t iteration);

struct ClassifierPlan {
  int steps = 5000;
  int batch = 32;
  int patch = 32;
  double eta_max = 3e-3;
  double eta_min = 1e-6;
  // Crop corners on this lattice keep the 8x8 JPEG blocks and the x4
  // resampling grid in phase with the network's total stride of 8.
  int crop_align = 8;
  std::uint64_t seed = 0;
  model::ClassifierConfig config{32};
  nlohmann::json to_json() const;
};

struct ClassifierReport {
  std::int64_t samples = 0;
  std::int64_t correct = 0;
  double accuracy() const { return samples ? static_cast<double>(correct) / samples : 0.0; }
  std::vector<std::vector<int>> confusion;  // [true][predicted], 7 x 7
  nlohmann::json to_json() const;
};

// Cross-entropy training over (LQ patch, task) pairs with mixed sampling.
model::Classifier<float> train_classifier(const dataio::Dataset& data, const ClassifierPlan& plan,
                                          const std::function<void(int, double)>& on_step = {});

// Accuracy over every LQ image of `data` (full images).
ClassifierReport evaluate_classifier(model::Classifier<float>& classifier, const dataio::Dataset& data);

// Large allocation thresholds for the training loops; keeps the per-step
// temporaries off mmap so they are recycled instead of refaulted.
void tune_allocator();

}  // namespace mio::train
