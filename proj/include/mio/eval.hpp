#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mio/dataio.hpp"
#include "mio/model.hpp"

namespace mio::eval {

namespace fs = std::filesystem;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// 10 log10(1 / MSE) over all RGB values, no border crop. Identical images
// give +inf. Throws std::invalid_argument on a shape mismatch.
double psnr(const ImageBuffer& a, const ImageBuffer& b);

// Numbers for reports: +inf becomes the string "inf".
nlohmann::json number_json(double v);

// How explicit-prompt models pick their prompt at test time.
enum class PromptSelect { kClassifier, kLabel };

struct EvalOptions {
  PromptSelect select = PromptSelect::kClassifier;
  model::Classifier<float>* classifier = nullptr;  // required for kClassifier with explicit prompts
  int tile = 0;      // 0: the model's patch size
  int overlap = 8;
  int jobs = 1;
};

// Full-image restoration, tiled with linearly blended overlaps when the
// image exceeds the tile size; output clipped to [0, 1]. `task` is only read
// by explicit-prompt models.
ImageBuffer restore_image(model::Restorer<float>& net, const ImageBuffer& lq, TaskId task, int tile, int overlap = 8);

struct ReportRow {
  std::string tag;
  std::vector<TaskId> tasks;      // evaluated columns, canonical order
  std::vector<double> task_psnr;  // mean PSNR per column
  std::vector<int> samples;       // images per column
  double avg = 0.0;               // mean of the task columns
  std::optional<double> ipv;      // avg - baseline avg; empty on the baseline row
  bool baseline = false;

  nlohmann::json to_json() const;
  static ReportRow from_json(const nlohmann::json& j);
};

ReportRow eval_model(model::Restorer<float>& net, const dataio::Dataset& group, const std::string& tag,
                     const EvalOptions& options = {});

struct ReportTable {
  std::string group;
  std::string baseline;
  std::vector<ReportRow> rows;

  nlohmann::json to_json() const;
  std::string markdown() const;
};

// Fills in the improvement column against the row tagged `baseline_tag`.
// Throws std::invalid_argument for an unknown tag or mismatched columns.
ReportTable improvement_table(std::vector<ReportRow> rows, const std::string& baseline_tag,
                              const std::string& group = "");

// "+0.29", "-0.10", "0.00".
std::string format_delta(double delta);

// [tr(B)/(k-1)] / [tr(W)/(N-k)]. W = 0 with B > 0 gives +inf, all points
// equal gives 0. Needs at least two labels and two samples per label.
double calinski_harabasz(const std::vector<std::vector<double>>& features, const std::vector<int>& labels);

// Scores of the top two principal components after centering. Each column
// is flipped so its largest-magnitude entry is positive; a component with no
// variance is all zeros. Needs N >= 3.
std::vector<std::array<double, 2>> project_2d(const std::vector<std::vector<double>>& features);

struct ClusterReport {
  std::string mode;
  int n_per_task = 0;
  std::vector<int> labels;
  std::vector<std::vector<double>> features;
  std::vector<std::array<double, 2>> coords;
  double chi = 0.0;
  double chi_permuted = 0.0;  // mean over label permutations
  int permutations = 0;

  nlohmann::json to_json() const;
};

// Pooled extractor features for n_per_task patch crops of every task in
// `group`; explicit models see the fixed task prompt, adaptive models the crop.
ClusterReport prompt_cluster_report(model::Restorer<float>& net, const dataio::Dataset& group, int n_per_task,
                                    std::uint64_t seed, int permutations = 20);

// Scatter plot of the 2-D coordinates, one colour per task.
ImageBuffer render_scatter(const std::vector<std::array<double, 2>>& coords, const std::vector<int>& labels,
                           int size = 512);

// Restorations for each alpha in ascending order, blending the prompts of
// task_a and task_b.
struct InterpolationSweep {
  std::vector<double> alphas;
  std::vector<ImageBuffer> outputs;
};
InterpolationSweep interpolation_sweep(model::Restorer<float>& net, const ImageBuffer& input, TaskId task_a,
                                       TaskId task_b, std::vector<double> alphas);

// Side-by-side panels separated by `gap` white pixels.
ImageBuffer contact_sheet(const std::vector<ImageBuffer>& panels, int gap = 4);

}  // namespace mio::eval
