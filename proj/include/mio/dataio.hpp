#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mio/degrade.hpp"
#include "mio/image.hpp"
#include "mio/nn/tensor.hpp"
#include "mio/rng.hpp"
#include "mio/task.hpp"

namespace mio::dataio {

namespace fs = std::filesystem;

// 8-bit RGB PNG. Loaded values are byte / 255; saving clamps to [0, 1] and
// quantizes with round-half-up. Failures throw std::runtime_error naming the path.
ImageBuffer load_png(const fs::path& path);
void save_png(const ImageBuffer& image, const fs::path& path);

// PNG or baseline JPEG, chosen by extension.
ImageBuffer load_image(const fs::path& path);

// Procedural ground-truth image: smooth shaded background, overlapping
// anti-aliased shapes with flat, graded or striped fills, and some fine texture.
ImageBuffer synth_gt(int height, int width, RngStream& rng);

// Writes `count` images gt_0000.png ... into out_dir and returns their paths.
std::vector<fs::path> make_gt_set(const fs::path& out_dir, int count, int height, int width,
                                  std::uint64_t seed);

struct SampleRecord {
  std::string gt_path;  // relative to the manifest directory when possible
  std::string lq_path;  // relative to the manifest directory
  TaskId task = TaskId::kSuperResolution;
  Group group = Group::kInDis;
  degrade::DegradeParams params;
  std::uint64_t seed = 0;
};

struct DatasetManifest {
  static constexpr int kVersion = 1;
  int version = kVersion;
  Group group = Group::kInDis;
  std::vector<TaskId> tasks;
  std::uint64_t seed = 0;
  std::string gt_dir;
  degrade::ParamRanges ranges;
  degrade::DegradeOptions options;
  std::vector<SampleRecord> records;
  fs::path base_dir;  // directory the relative paths resolve against (not serialized)

  fs::path resolve(const std::string& p) const;
};

struct BuildOptions {
  fs::path gt_dir;
  std::vector<TaskId> tasks{kAllTasks.begin(), kAllTasks.end()};
  Group group = Group::kInDis;
  degrade::ParamRanges ranges;
  degrade::DegradeOptions options;
  std::uint64_t seed = 0;
  fs::path out_dir;
  int jobs = 1;
};

// Seed of one record: a hash of (global seed, GT file name, task, group).
std::uint64_t record_seed(std::uint64_t seed, const std::string& gt_name, TaskId task, Group group);

// Degrades every GT for every task into out_dir/<group>/<task>/<name>.png and
// writes out_dir/manifest.jsonl. Unreadable images are skipped with a warning;
// no usable image at all is an error.
DatasetManifest build_dataset(const BuildOptions& options);

void write_manifest(const DatasetManifest& manifest, const fs::path& path);
DatasetManifest read_manifest(const fs::path& path);

// Manifest images decoded into memory.
class Dataset {
 public:
  struct Item {
    std::size_t record = 0;
    int gt = 0;  // index into gt_images()
    TaskId task = TaskId::kSuperResolution;
    ImageBuffer lq;
  };

  static Dataset load(const DatasetManifest& manifest);

  const DatasetManifest& manifest() const { return manifest_; }
  const std::vector<Item>& items() const { return items_; }
  const ImageBuffer& gt(const Item& item) const { return gts_[item.gt]; }
  const std::vector<ImageBuffer>& gt_images() const { return gts_; }
  // Item indices for one task (empty if absent).
  const std::vector<std::size_t>& items_for(TaskId task) const { return by_task_[task_index(task)]; }
  std::vector<TaskId> tasks() const;

 private:
  DatasetManifest manifest_;
  std::vector<ImageBuffer> gts_;
  std::vector<Item> items_;
  std::vector<std::size_t> by_task_[kNumTasks];
};

struct PatchOrigin {
  std::size_t item = 0;
  int top = 0;
  int left = 0;
};

struct PatchBatch {
  nn::Tensor<float> lq;  // (B, 3, patch, patch)
  nn::Tensor<float> gt;
  std::vector<int> labels;  // task indices
  std::vector<PatchOrigin> origins;
};

// Task uniform over `active`, then a uniform item of that task, then a
// uniform crop position shared by LQ and GT. Crop corners are multiples of
// `align`; with align = 1 every position is possible.
PatchBatch sample_batch(const Dataset& data, const std::vector<TaskId>& active, int batch_size,
                        int patch, RngStream& rng, int align = 1);

// Copies a window of an image into sample `n` of a (B, 3, P, P) tensor.
void copy_patch(const ImageBuffer& image, int top, int left, int patch, nn::Tensor<float>& dst,
                int n);

}  // namespace mio::dataio
