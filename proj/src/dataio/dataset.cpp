#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <fstream>
#include <map>
#include <optional>
#include <stdexcept>
#include <thread>

#include "json.hpp"
#include "mio/dataio.hpp"

namespace mio::dataio {

using nlohmann::json;

namespace {

constexpr const char* kManifestKind = "mio-manifest";

json interval_json(const degrade::Interval& iv) { return json::array({iv.lo, iv.hi}); }

degrade::Interval interval_from(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

json group_ranges_json(const degrade::GroupRanges& g) {
  return {{"sr_scale", g.sr_scale},
          {"blur_size", interval_json(g.blur_size)},
          {"blur_sigma", interval_json(g.blur_sigma)},
          {"noise_sigma", interval_json(g.noise_sigma)},
          {"jpeg_quality", interval_json(g.jpeg_quality)},
          {"rain_strength", interval_json(g.rain_strength)},
          {"haze_a", interval_json(g.haze_a)},
          {"haze_beta", interval_json(g.haze_beta)},
          {"ll_gamma", interval_json(g.ll_gamma)}};
}

degrade::GroupRanges group_ranges_from(const json& j) {
  degrade::GroupRanges g;
  g.sr_scale = j.at("sr_scale").get<int>();
  g.blur_size = interval_from(j.at("blur_size"));
  g.blur_sigma = interval_from(j.at("blur_sigma"));
  g.noise_sigma = interval_from(j.at("noise_sigma"));
  g.jpeg_quality = interval_from(j.at("jpeg_quality"));
  g.rain_strength = interval_from(j.at("rain_strength"));
  g.haze_a = interval_from(j.at("haze_a"));
  g.haze_beta = interval_from(j.at("haze_beta"));
  g.ll_gamma = interval_from(j.at("ll_gamma"));
  return g;
}

json params_json(const degrade::DegradeParams& p) {
  return {{"sr_scale", p.sr_scale},       {"blur_size", p.blur_size},       {"blur_sigma", p.blur_sigma},
          {"noise_sigma", p.noise_sigma}, {"jpeg_quality", p.jpeg_quality}, {"rain_strength", p.rain_strength},
          {"haze_a", p.haze_a},           {"haze_beta", p.haze_beta},       {"ll_gamma", p.ll_gamma}};
}

degrade::DegradeParams params_from(const json& j, TaskId task) {
  degrade::DegradeParams p;
  p.task = task;
  p.sr_scale = j.at("sr_scale").get<int>();
  p.blur_size = j.at("blur_size").get<int>();
  p.blur_sigma = j.at("blur_sigma").get<double>();
  p.noise_sigma = j.at("noise_sigma").get<double>();
  p.jpeg_quality = j.at("jpeg_quality").get<int>();
  p.rain_strength = j.at("rain_strength").get<double>();
  p.haze_a = j.at("haze_a").get<double>();
  p.haze_beta = j.at("haze_beta").get<double>();
  p.ll_gamma = j.at("ll_gamma").get<double>();
  return p;
}

TaskId task_from_json(const json& j) {
  const std::string s = j.get<std::string>();
  const auto t = s.size() == 1 ? task_from_letter(s[0]) : std::nullopt;
  if (!t) throw std::runtime_error("manifest: bad task '" + s + "'");
  return *t;
}

// Path as stored in the manifest: relative to base when it lives below it.
std::string portable_path(const fs::path& p, const fs::path& base) {
  const fs::path abs = fs::absolute(p).lexically_normal();
  const fs::path rel = abs.lexically_relative(fs::absolute(base).lexically_normal());
  if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
  return abs.generic_string();
}

bool is_image_file(const fs::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e == ".png" || e == ".jpg" || e == ".jpeg";
}

}  // namespace

fs::path DatasetManifest::resolve(const std::string& p) const {
  const fs::path path(p);
  return path.is_absolute() ? path : base_dir / path;
}

std::uint64_t record_seed(std::uint64_t seed, const std::string& gt_name, TaskId task, Group group) {
  return hash_combine(seed, degrade::degrade_stream_id(gt_name, task, group));
}

DatasetManifest build_dataset(const BuildOptions& opt) {
  if (opt.tasks.empty()) throw std::invalid_argument("build_dataset: no tasks requested");
  if (!fs::is_directory(opt.gt_dir)) {
    throw std::runtime_error("build_dataset: GT directory " + opt.gt_dir.string() + " does not exist");
  }
  opt.ranges.validate();

  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(opt.gt_dir)) {
    if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  // Decode every GT once; unusable ones are dropped here.
  std::vector<std::pair<fs::path, ImageBuffer>> gts;
  for (const fs::path& f : files) {
    try {
      ImageBuffer im = load_image(f);
      if (im.height() < 8 || im.width() < 8) {
        spdlog::warn("skipping {}: {}x{} is smaller than 8x8", f.string(), im.height(), im.width());
        continue;
      }
      gts.emplace_back(f, std::move(im));
    } catch (const std::exception& e) {
      spdlog::warn("skipping unreadable image {}: {}", f.string(), e.what());
    }
  }
  if (gts.empty()) throw std::runtime_error("build_dataset: no decodable images in " + opt.gt_dir.string());

  DatasetManifest m;
  m.group = opt.group;
  m.tasks = opt.tasks;
  m.seed = opt.seed;
  m.ranges = opt.ranges;
  m.options = opt.options;
  m.base_dir = opt.out_dir;
  fs::create_directories(opt.out_dir);
  m.gt_dir = portable_path(opt.gt_dir, opt.out_dir);

  const std::size_t total = gts.size() * opt.tasks.size();
  m.records.resize(total);
  std::vector<std::string> errors(total);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < total; i = next++) {
      const auto& [path, gt] = gts[i / opt.tasks.size()];
      const TaskId task = opt.tasks[i % opt.tasks.size()];
      const std::string name = path.filename().string();
      SampleRecord& rec = m.records[i];
      rec.task = task;
      rec.group = opt.group;
      rec.seed = record_seed(opt.seed, name, task, opt.group);
      try {
        RngStream rng(rec.seed, 0);
        const degrade::Degraded d = degrade::degrade(gt, task, opt.group, opt.ranges, rng, opt.options);
        rec.params = d.params;
        const fs::path lq = opt.out_dir / std::string(group_name(opt.group)) / std::string(1, task_letter(task)) /
                            (path.stem().string() + ".png");
        save_png(d.image, lq);
        rec.lq_path = portable_path(lq, opt.out_dir);
        rec.gt_path = portable_path(path, opt.out_dir);
      } catch (const std::exception& e) {
        errors[i] = name + " / " + std::string(task_label(task)) + ": " + e.what();
      }
    }
  };
  const int jobs = std::max(1, opt.jobs);
  std::vector<std::thread> pool;
  for (int j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const std::string& e : errors) {
    if (!e.empty()) throw std::runtime_error("build_dataset: " + e);
  }

  write_manifest(m, opt.out_dir / "manifest.jsonl");
  spdlog::info("built {} records ({} GTs x {} tasks, {}) in {}", total, gts.size(), opt.tasks.size(),
               group_name(opt.group), opt.out_dir.string());
  return m;
}

void write_manifest(const DatasetManifest& m, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write manifest " + path.string());
    json head = {{"kind", kManifestKind},
                 {"version", m.version},
                 {"group", group_name(m.group)},
                 {"tasks", task_letters(m.tasks)},
                 {"seed", m.seed},
                 {"gt_dir", m.gt_dir},
                 {"records", m.records.size()},
                 {"ranges", {{"in_dis", group_ranges_json(m.ranges.in_dis)}, {"out_dis", group_ranges_json(m.ranges.out_dis)}}},
                 {"depth", degrade::depth_kind_name(m.options.depth)},
                 {"rain",
                  {{"density_per_strength", m.options.rain.density_per_strength},
                   {"length_per_strength", m.options.rain.length_per_strength},
                   {"max_angle_deg", m.options.rain.max_angle_deg},
                   {"brightness_lo", m.options.rain.brightness_lo},
                   {"brightness_hi", m.options.rain.brightness_hi},
                   {"soften_sigma", m.options.rain.soften_sigma}}}};
    out << head.dump() << '\n';
    for (const SampleRecord& r : m.records) {
      json j = {{"gt_path", r.gt_path},
                {"lq_path", r.lq_path},
                {"task", std::string(1, task_letter(r.task))},
                {"group", group_name(r.group)},
                {"seed", r.seed},
                {"params", params_json(r.params)}};
      out << j.dump() << '\n';
    }
    if (!out) throw std::runtime_error("error writing manifest " + path.string());
  }
  fs::rename(tmp, path);
}

DatasetManifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());
  DatasetManifest m;
  m.base_dir = path.parent_path();
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      if (!header) {
        if (j.value("kind", "") != kManifestKind) throw std::runtime_error("not a dataset manifest");
        m.version = j.at("version").get<int>();
        if (m.version != DatasetManifest::kVersion) {
          throw std::runtime_error("unsupported manifest version " + std::to_string(m.version));
        }
        m.group = parse_group(j.at("group").get<std::string>());
        m.tasks = parse_task_letters(j.at("tasks").get<std::string>());
        m.seed = j.at("seed").get<std::uint64_t>();
        m.gt_dir = j.at("gt_dir").get<std::string>();
        m.ranges.in_dis = group_ranges_from(j.at("ranges").at("in_dis"));
        m.ranges.out_dis = group_ranges_from(j.at("ranges").at("out_dis"));
        m.options.depth = degrade::parse_depth_kind(j.at("depth").get<std::string>());
        const json& rain = j.at("rain");
        m.options.rain.density_per_strength = rain.at("density_per_strength").get<double>();
        m.options.rain.length_per_strength = rain.at("length_per_strength").get<double>();
        m.options.rain.max_angle_deg = rain.at("max_angle_deg").get<double>();
        m.options.rain.brightness_lo = rain.at("brightness_lo").get<double>();
        m.options.rain.brightness_hi = rain.at("brightness_hi").get<double>();
        m.options.rain.soften_sigma = rain.at("soften_sigma").get<double>();
        header = true;
        continue;
      }
      SampleRecord r;
      r.gt_path = j.at("gt_path").get<std::string>();
      r.lq_path = j.at("lq_path").get<std::string>();
      r.task = task_from_json(j.at("task"));
      r.group = parse_group(j.at("group").get<std::string>());
      r.seed = j.at("seed").get<std::uint64_t>();
      r.params = params_from(j.at("params"), r.task);
      m.records.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!header) throw std::runtime_error("manifest " + path.string() + " is empty");
  return m;
}

Dataset Dataset::load(const DatasetManifest& manifest) {
  Dataset d;
  d.manifest_ = manifest;
  std::map<std::string, int> gt_index;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const SampleRecord& r = manifest.records[i];
    auto it = gt_index.find(r.gt_path);
    if (it == gt_index.end()) {
      it = gt_index.emplace(r.gt_path, static_cast<int>(d.gts_.size())).first;
      d.gts_.push_back(load_image(manifest.resolve(r.gt_path)));
    }
    Item item;
    item.record = i;
    item.gt = it->second;
    item.task = r.task;
    item.lq = load_png(manifest.resolve(r.lq_path));
    if (!item.lq.same_shape(d.gts_[item.gt])) {
      throw std::runtime_error("record " + r.lq_path + ": LQ and GT sizes differ");
    }
    d.by_task_[task_index(r.task)].push_back(d.items_.size());
    d.items_.push_back(std::move(item));
  }
  return d;
}

std::vector<TaskId> Dataset::tasks() const {
  std::vector<TaskId> out;
  for (TaskId t : kAllTasks) {
    if (!by_task_[task_index(t)].empty()) out.push_back(t);
  }
  return out;
}

void copy_patch(const ImageBuffer& image, int top, int left, int patch, nn::Tensor<float>& dst, int n) {
  for (int ch = 0; ch < 3; ++ch)
    for (int r = 0; r < patch; ++r)
      for (int c = 0; c < patch; ++c) dst.at(n, ch, r, c) = static_cast<float>(image.at(top + r, left + c, ch));
}

PatchBatch sample_batch(const Dataset& data, const std::vector<TaskId>& active, int batch_size, int patch,
                        RngStream& rng, int align) {
  if (active.empty()) throw std::invalid_argument("sample_batch: empty active task set");
  if (batch_size < 1 || patch < 1 || align < 1) {
    throw std::invalid_argument("sample_batch: batch, patch and align must be >= 1");
  }
  for (TaskId t : active) {
    if (data.items_for(t).empty()) {
      throw std::invalid_argument("sample_batch: dataset has no record for task " + std::string(task_label(t)));
    }
  }
  PatchBatch b;
  b.lq = nn::Tensor<float>(nn::Shape{batch_size, 3, patch, patch});
  b.gt = nn::Tensor<float>(nn::Shape{batch_size, 3, patch, patch});
  for (int n = 0; n < batch_size; ++n) {
    const TaskId task = active[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(active.size()) - 1))];
    const auto& pool = data.items_for(task);
    const std::size_t idx = pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1))];
    const Dataset::Item& item = data.items()[idx];
    if (item.lq.height() < patch || item.lq.width() < patch) {
      throw std::invalid_argument("sample_batch: image smaller than patch size " + std::to_string(patch));
    }
    const int top = align * static_cast<int>(rng.uniform_int(0, (item.lq.height() - patch) / align));
    const int left = align * static_cast<int>(rng.uniform_int(0, (item.lq.width() - patch) / align));
    copy_patch(item.lq, top, left, patch, b.lq, n);
    copy_patch(data.gt(item), top, left, patch, b.gt, n);
    b.labels.push_back(task_index(task));
    b.origins.push_back({idx, top, left});
  }
  return b;
}

}  // namespace mio::dataio
