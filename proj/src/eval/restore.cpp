#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <thread>

#include "mio/eval.hpp"
#include "mio/rng.hpp"

namespace mio::eval {

namespace {

using G = nn::Graph<float>;
using V = G::Var;
using Forward = std::function<V(G&, V)>;

std::vector<int> tile_starts(int len, int tile, int overlap) {
  if (len <= tile) return {0};
  const int step = std::max(1, tile - overlap);
  std::vector<int> s;
  for (int p = 0; p + tile < len; p += step) s.push_back(p);
  s.push_back(len - tile);
  return s;
}

// Linear ramp over the overlap, flat in the middle.
std::vector<double> ramp(int tile, int overlap) {
  std::vector<double> w(tile);
  for (int i = 0; i < tile; ++i) {
    w[i] = std::min({i + 1, tile - i, overlap + 1}) / static_cast<double>(overlap + 1);
  }
  return w;
}

ImageBuffer run_tiled(const ImageBuffer& lq, int tile, int overlap, const Forward& fwd) {
  if (tile < 1 || overlap < 0) throw std::invalid_argument("tiling: tile must be >= 1 and overlap >= 0");
  const int H = lq.height(), W = lq.width();
  const int th = std::min(tile, H), tw = std::min(tile, W);
  const int ov = std::min({overlap, th - 1, tw - 1});
  const auto rows = tile_starts(H, th, ov), cols = tile_starts(W, tw, ov);
  const auto wr = ramp(th, ov), wc = ramp(tw, ov);

  std::vector<std::pair<int, int>> origins;
  for (int r : rows)
    for (int c : cols) origins.emplace_back(r, c);

  if (origins.size() == 1) {
    G g;
    ImageBuffer out = model::to_image(g.value(fwd(g, g.constant(model::to_tensor<float>(lq)))));
    out.clip();
    return out;
  }

  ImageBuffer acc(H, W), out(H, W);
  std::vector<double> wsum(static_cast<std::size_t>(H) * W, 0.0);
  constexpr int kChunk = 32;
  for (std::size_t first = 0; first < origins.size(); first += kChunk) {
    const int n = static_cast<int>(std::min<std::size_t>(kChunk, origins.size() - first));
    nn::Tensor<float> x(nn::Shape{n, 3, th, tw});
    for (int i = 0; i < n; ++i) {
      const auto [r0, c0] = origins[first + i];
      for (int ch = 0; ch < 3; ++ch)
        for (int r = 0; r < th; ++r)
          for (int c = 0; c < tw; ++c) x.at(i, ch, r, c) = static_cast<float>(lq.at(r0 + r, c0 + c, ch));
    }
    G g;
    const auto& y = g.value(fwd(g, g.constant(std::move(x))));
    for (int i = 0; i < n; ++i) {
      const auto [r0, c0] = origins[first + i];
      for (int r = 0; r < th; ++r)
        for (int c = 0; c < tw; ++c) {
          const double w = wr[r] * wc[c];
          wsum[static_cast<std::size_t>(r0 + r) * W + c0 + c] += w;
          for (int ch = 0; ch < 3; ++ch) acc.at(r0 + r, c0 + c, ch) += w * y.at(i, ch, r, c);
        }
    }
  }
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c)
      for (int ch = 0; ch < 3; ++ch) out.at(r, c, ch) = acc.at(r, c, ch) / wsum[static_cast<std::size_t>(r) * W + c];
  out.clip();
  return out;
}

ImageBuffer restore_with_prompt(model::Restorer<float>& net, const ImageBuffer& lq, const nn::Tensor<float>& prompt,
                                int tile, int overlap) {
  return run_tiled(lq, tile, overlap, [&](G& g, V x) {
    return net.forward_with_prompt(g, x, g.constant(prompt), model::Binding::kInfer);
  });
}

template <typename Fn>
void parallel_for(std::size_t count, int jobs, Fn&& fn) {
  jobs = std::max(1, std::min<int>(jobs, static_cast<int>(count)));
  if (jobs == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  std::vector<std::thread> pool;
  for (int t = 0; t < jobs; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i; !failed && (i = next++) < count;) {
        try {
          fn(i);
        } catch (...) {
          if (!failed.exchange(true)) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace

ImageBuffer restore_image(model::Restorer<float>& net, const ImageBuffer& lq, TaskId task, int tile, int overlap) {
  if (tile <= 0) tile = net.config().patch;
  switch (net.config().prompt) {
    case model::PromptMode::kExplicit:
      // Same path as a prompt sweep, so alpha endpoints match exactly.
      return restore_with_prompt(net, lq, net.prompt_image(task), tile, overlap);
    case model::PromptMode::kNone:
    case model::PromptMode::kAdaptive:
      break;
  }
  return run_tiled(lq, tile, overlap, [&](G& g, V x) { return net.forward(g, x, {}, model::Binding::kInfer); });
}

ReportRow eval_model(model::Restorer<float>& net, const dataio::Dataset& group, const std::string& tag,
                     const EvalOptions& options) {
  const bool explicit_mode = net.config().prompt == model::PromptMode::kExplicit;
  if (explicit_mode && options.select == PromptSelect::kClassifier) {
    if (options.classifier == nullptr) {
      throw std::invalid_argument("eval: explicit-prompt model '" + tag +
                                  "' needs a trained classifier (or manual task labels)");
    }
    if (!options.classifier->trained()) throw std::logic_error("eval: classifier has not been trained");
  }
  const auto& items = group.items();
  std::vector<double> scores(items.size());
  parallel_for(items.size(), options.jobs, [&](std::size_t i) {
    const auto& item = items[i];
    TaskId task = item.task;
    if (explicit_mode && options.select == PromptSelect::kClassifier) task = options.classifier->classify(item.lq).first;
    scores[i] = psnr(restore_image(net, item.lq, task, options.tile, options.overlap), group.gt(item));
  });

  ReportRow row;
  row.tag = tag;
  row.tasks = group.tasks();
  double total = 0.0;
  for (TaskId t : row.tasks) {
    double sum = 0.0;
    const auto& idx = group.items_for(t);
    for (std::size_t i : idx) sum += scores[i];
    row.task_psnr.push_back(sum / static_cast<double>(idx.size()));
    row.samples.push_back(static_cast<int>(idx.size()));
    total += row.task_psnr.back();
  }
  row.avg = row.tasks.empty() ? 0.0 : total / static_cast<double>(row.tasks.size());
  return row;
}

nlohmann::json ClusterReport::to_json() const {
  nlohmann::json pts = nlohmann::json::array();
  for (std::size_t i = 0; i < coords.size(); ++i) {
    pts.push_back({{"task", std::string(1, task_letter(task_from_index(labels[i])))}, {"x", coords[i][0]},
                   {"y", coords[i][1]}});
  }
  return {{"mode", mode},
          {"n_per_task", n_per_task},
          {"points", coords.size()},
          {"chi", number_json(chi)},
          {"chi_permuted", number_json(chi_permuted)},
          {"permutations", permutations},
          {"coordinates", pts}};
}

ClusterReport prompt_cluster_report(model::Restorer<float>& net, const dataio::Dataset& group, int n_per_task,
                                    std::uint64_t seed, int permutations) {
  const auto mode = net.config().prompt;
  if (mode == model::PromptMode::kNone) {
    throw std::invalid_argument("prompt analysis needs a model trained with explicit or adaptive prompts");
  }
  if (n_per_task < 2) throw std::invalid_argument("prompt analysis: n_per_task must be >= 2");
  const int P = net.config().patch;
  ClusterReport rep;
  rep.mode = std::string(model::prompt_mode_name(mode));
  rep.n_per_task = n_per_task;
  for (TaskId t : group.tasks()) {
    const auto& idx = group.items_for(t);
    G g;
    nn::Tensor<float> feats;
    if (mode == model::PromptMode::kExplicit) {
      feats = g.value(net.prompt_features(g, g.constant(net.prompt_image(t)), model::Binding::kInfer));
    } else {
      RngStream rng(seed, hash_combine(hash_bytes("cluster-crops"), static_cast<std::uint64_t>(task_index(t))));
      nn::Tensor<float> crops(nn::Shape{n_per_task, 3, P, P});
      for (int i = 0; i < n_per_task; ++i) {
        const auto& item = group.items()[idx[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(idx.size()) - 1))]];
        if (item.lq.height() < P || item.lq.width() < P) {
          throw std::invalid_argument("prompt analysis: images must be at least " + std::to_string(P) + " px");
        }
        const int top = static_cast<int>(rng.uniform_int(0, item.lq.height() - P));
        const int left = static_cast<int>(rng.uniform_int(0, item.lq.width() - P));
        dataio::copy_patch(item.lq, top, left, P, crops, i);
      }
      feats = g.value(net.prompt_features(g, g.constant(std::move(crops)), model::Binding::kInfer));
    }
    const int D = feats.shape().c;
    for (int i = 0; i < n_per_task; ++i) {
      const int row = feats.shape().n == 1 ? 0 : i;  // explicit: one prompt, replicated
      std::vector<double> f(static_cast<std::size_t>(D));
      for (int c = 0; c < D; ++c) f[c] = feats.at(row, c, 0, 0);
      rep.features.push_back(std::move(f));
      rep.labels.push_back(task_index(t));
    }
  }
  rep.chi = calinski_harabasz(rep.features, rep.labels);
  rep.coords = project_2d(rep.features);
  rep.permutations = permutations;
  if (permutations > 0) {
    RngStream rng(seed, hash_bytes("cluster-permutation"));
    double sum = 0.0;
    auto shuffled = rep.labels;
    for (int p = 0; p < permutations; ++p) {
      for (std::size_t i = shuffled.size() - 1; i > 0; --i) {
        std::swap(shuffled[i], shuffled[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)))]);
      }
      sum += calinski_harabasz(rep.features, shuffled);
    }
    rep.chi_permuted = sum / permutations;
  }
  return rep;
}

ImageBuffer render_scatter(const std::vector<std::array<double, 2>>& coords, const std::vector<int>& labels,
                           int size) {
  static constexpr double kPalette[7][3] = {{0.12, 0.47, 0.71}, {1.00, 0.50, 0.05}, {0.17, 0.63, 0.17},
                                            {0.84, 0.15, 0.16}, {0.58, 0.40, 0.74}, {0.55, 0.34, 0.29},
                                            {0.89, 0.47, 0.76}};
  ImageBuffer im(size, size, 1.0);
  if (coords.empty()) return im;
  double lo[2] = {coords[0][0], coords[0][1]}, hi[2] = {lo[0], lo[1]};
  for (const auto& c : coords)
    for (int a = 0; a < 2; ++a) {
      lo[a] = std::min(lo[a], c[a]);
      hi[a] = std::max(hi[a], c[a]);
    }
  const double margin = 16, span = size - 2 * margin;
  for (std::size_t i = 0; i < coords.size(); ++i) {
    const double u = hi[0] > lo[0] ? (coords[i][0] - lo[0]) / (hi[0] - lo[0]) : 0.5;
    const double v = hi[1] > lo[1] ? (coords[i][1] - lo[1]) / (hi[1] - lo[1]) : 0.5;
    const int cx = static_cast<int>(std::lround(margin + u * span));
    const int cy = static_cast<int>(std::lround(margin + (1.0 - v) * span));
    const auto& col = kPalette[((labels[i] % 7) + 7) % 7];
    for (int dy = -3; dy <= 3; ++dy)
      for (int dx = -3; dx <= 3; ++dx) {
        if (dx * dx + dy * dy > 9) continue;
        const int r = cy + dy, c = cx + dx;
        if (r < 0 || r >= size || c < 0 || c >= size) continue;
        for (int ch = 0; ch < 3; ++ch) im.at(r, c, ch) = col[ch];
      }
  }
  return im;
}

InterpolationSweep interpolation_sweep(model::Restorer<float>& net, const ImageBuffer& input, TaskId task_a,
                                       TaskId task_b, std::vector<double> alphas) {
  if (net.config().prompt != model::PromptMode::kExplicit) {
    throw std::invalid_argument("prompt interpolation needs an explicit-prompt model");
  }
  if (alphas.empty()) throw std::invalid_argument("prompt interpolation: no alpha values");
  std::sort(alphas.begin(), alphas.end());
  const auto pa = net.prompt_image(task_a), pb = net.prompt_image(task_b);
  InterpolationSweep s;
  for (double a : alphas) {
    const auto prompt = model::interpolate_prompts(pa, pb, a);
    s.alphas.push_back(a);
    s.outputs.push_back(restore_with_prompt(net, input, prompt, net.config().patch, 8));
  }
  return s;
}

ImageBuffer contact_sheet(const std::vector<ImageBuffer>& panels, int gap) {
  if (panels.empty()) throw std::invalid_argument("contact_sheet: no panels");
  int width = 0;
  const int height = panels.front().height();
  for (const auto& p : panels) {
    if (p.height() != height) throw std::invalid_argument("contact_sheet: panels must share a height");
    width += p.width();
  }
  width += gap * static_cast<int>(panels.size() - 1);
  ImageBuffer sheet(height, width, 1.0);
  int x0 = 0;
  for (const auto& p : panels) {
    for (int r = 0; r < height; ++r)
      for (int c = 0; c < p.width(); ++c)
        for (int ch = 0; ch < 3; ++ch) sheet.at(r, x0 + c, ch) = p.at(r, c, ch);
    x0 += p.width() + gap;
  }
  return sheet;
}

}  // namespace mio::eval
