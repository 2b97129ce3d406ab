// Acceptance checks. Usage: acceptance [--workdir DIR] [--tolerate N] [N ...]
// Prints one PASS/FAIL line per requested criterion (all when none given).
// A criterion named by --tolerate still prints FAIL when it fails but does not
// change the exit status; this is reserved for documented limitations.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "mio/dataio.hpp"
#include "mio/degrade.hpp"
#include "mio/eval.hpp"
#include "mio/model.hpp"
#include "mio/nn/ops.hpp"
#include "mio/nn/optim.hpp"
#include "mio/train.hpp"
#include "support/gradcheck.hpp"

namespace fs = std::filesystem;
using namespace mio;
using mio::testing::numeric_grad;
using mio::testing::random_away_from_zero;
using mio::testing::random_tensor;
using mio::testing::rel_error;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

fs::path g_work;

fs::path fresh_dir(const std::string& name) {
  const fs::path p = g_work / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

dataio::Dataset make_set(const fs::path& root, int count, int size, std::uint64_t seed, std::vector<TaskId> tasks,
                         const degrade::ParamRanges& ranges = {}) {
  dataio::make_gt_set(root / "gt", count, size, size, seed);
  dataio::BuildOptions o;
  o.gt_dir = root / "gt";
  o.out_dir = root / "data";
  o.tasks = std::move(tasks);
  o.ranges = ranges;
  o.seed = seed;
  return dataio::Dataset::load(dataio::build_dataset(o));
}

// ---- 1 --------------------------------------------------------------------

Outcome degradation_analytics() {
  std::vector<std::string> bad;
  auto check = [&](bool ok, const std::string& what) {
    if (!ok) bad.push_back(what);
  };
  ImageBuffer half(4, 4, 0.5);
  ScalarMap depth_ln2(4, 4, std::numbers::ln2);
  const auto hazed = degrade::apply_haze(half, 0.9, 1.0, depth_ln2);
  double worst = 0;
  for (double v : hazed.values()) worst = std::max(worst, std::abs(v - 0.7));
  check(worst <= 1e-9, "haze closed form");

  RngStream gt_rng(5, 1);
  const ImageBuffer y = dataio::synth_gt(48, 48, gt_rng);
  auto max_diff = [](const ImageBuffer& a, const ImageBuffer& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
    return a.same_shape(b) ? m : 1.0;
  };
  RngStream r1(6, 1), r2(6, 2);
  RngStream depth_rng(6, 3);
  const auto depth = degrade::synth_depth(48, 48, depth_rng, degrade::DepthKind::kSmoothRandom);
  check(max_diff(degrade::apply_lowlight(y, 1.0), y) <= 1e-9, "gamma=1");
  check(max_diff(degrade::add_noise(y, 0.0, r1), y) <= 1e-9, "sigma=0");
  check(max_diff(degrade::add_rain(y, 0.0, r2), y) <= 1e-9, "strength=0");
  check(max_diff(degrade::apply_haze(y, 0.9, 0.0, depth), y) <= 1e-9, "beta=0");
  check(max_diff(degrade::apply_sr(y, 1), y) <= 1e-9, "scale=1");

  double worst_sum = 0;
  for (int size = 3; size <= 25; size += 2)
    for (double sigma : {0.3, 1.0, 2.2, 3.0, 5.0}) {
      double s = 0;
      for (double w : degrade::gaussian_kernel(size, sigma).weights) s += w;
      worst_sum = std::max(worst_sum, std::abs(s - 1.0));
    }
  check(worst_sum <= 1e-12, "kernel sum");

  double worst_std = 0;
  for (double sigma : {15.0, 25.0, 50.0}) {
    ImageBuffer flat(256, 256, 0.5);
    RngStream rng(7, static_cast<std::uint64_t>(sigma));
    const auto noisy = degrade::add_noise(flat, sigma, rng);
    double m = 0, m2 = 0;
    for (double v : noisy.values()) m += v - 0.5;
    m /= noisy.size();
    for (double v : noisy.values()) m2 += (v - 0.5 - m) * (v - 0.5 - m);
    const double sd = std::sqrt(m2 / (noisy.size() - 1));
    worst_std = std::max(worst_std, std::abs(sd / (sigma / 255.0) - 1.0));
  }
  check(worst_std <= 0.02, "noise std");

  std::string d = fmt("haze err %.1e, kernel sum err %.1e, noise std err %.2f%%", worst, worst_sum, 100 * worst_std);
  for (const auto& b : bad) d += "; failed: " + b;
  return {bad.empty(), d};
}

// ---- 2 --------------------------------------------------------------------

using G = nn::Graph<double>;
using V = G::Var;
using Builder = std::function<V(G&, const std::vector<V>&)>;

constexpr double kFdStep = 1e-4;
constexpr double kFdTol = 1e-4;

double check_op(std::vector<nn::Tensor<double>> inputs, const Builder& build, std::mt19937_64& rng) {
  nn::Tensor<double> probe;
  auto eval = [&](std::vector<nn::Tensor<double>>* grads) {
    G g;
    std::vector<V> vars;
    for (auto& t : inputs) vars.push_back(g.input(t, true));
    V out = build(g, vars);
    if (probe.empty()) probe = random_tensor(g.shape(out), rng);
    V loss = nn::mean(g, nn::mul(g, out, g.constant(probe)));
    if (grads) {
      g.backward(loss);
      for (std::size_t i = 0; i < vars.size(); ++i) grads->push_back(g.grad(vars[i]));
    }
    return g.value(loss)[0];
  };
  std::vector<nn::Tensor<double>> analytic;
  eval(&analytic);
  double worst = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto num = numeric_grad(inputs[i].values(), [&] { return eval(nullptr); }, kFdStep);
    worst = std::max(worst, rel_error(analytic[i].values(), num));
  }
  return worst;
}

Outcome gradient_correctness() {
  constexpr int kSeeds = 20;
  std::map<std::string, double> worst;
  auto note = [&](const std::string& op, double e) { worst[op] = std::max(worst[op], e); };
  long fd_total = 0, fd_skipped = 0;
  for (int seed = 0; seed < kSeeds; ++seed) {
    std::mt19937_64 rng(9000 + seed);
    const int n = 1 + seed % 3, c = 2 + seed % 3, h = 3 + seed % 4, w = 4 + seed % 3;
    const nn::Shape s{n, c, h, w};
    for (int k : {1, 3})
      for (int stride : {1, 2}) {
        note("conv2d", check_op({random_tensor(s, rng), random_tensor({3, c, k, k}, rng), random_tensor({1, 3, 1, 1}, rng)},
                                [stride](G& g, const auto& v) { return nn::conv2d(g, v[0], v[1], v[2], stride); }, rng));
      }
    note("leaky_relu", check_op({random_away_from_zero(s, rng)},
                                [](G& g, const auto& v) { return nn::leaky_relu(g, v[0], 0.2); }, rng));
    note("relu", check_op({random_away_from_zero(s, rng)}, [](G& g, const auto& v) { return nn::relu(g, v[0]); }, rng));
    note("dense", check_op({random_tensor({n, 5, 1, 1}, rng), random_tensor({4, 5, 1, 1}, rng),
                            random_tensor({1, 4, 1, 1}, rng)},
                           [](G& g, const auto& v) { return nn::dense(g, v[0], v[1], v[2]); }, rng));
    note("global_avg_pool",
         check_op({random_tensor(s, rng)}, [](G& g, const auto& v) { return nn::global_avg_pool(g, v[0]); }, rng));
    for (nn::Shape bs : {s, nn::Shape{1, c, 1, 1}, nn::Shape{n, c, 1, 1}}) {
      note("add", check_op({random_tensor(s, rng), random_tensor(bs, rng)},
                           [](G& g, const auto& v) { return nn::add(g, v[0], v[1]); }, rng));
      note("mul", check_op({random_tensor(s, rng), random_tensor(bs, rng)},
                           [](G& g, const auto& v) { return nn::mul(g, v[0], v[1]); }, rng));
    }
    for (nn::Shape ps : {nn::Shape{1, c, 1, 1}, nn::Shape{n, c, 1, 1}}) {
      note("channel_affine", check_op({random_tensor(s, rng), random_tensor(ps, rng), random_tensor(ps, rng)},
                                      [](G& g, const auto& v) { return nn::channel_affine(g, v[0], v[1], v[2]); }, rng));
    }
    note("mean", check_op({random_tensor(s, rng)}, [](G& g, const auto& v) { return nn::mean(g, v[0]); }, rng));
    {
      auto target = random_tensor(s, rng);
      auto pred = target;
      const auto off = random_away_from_zero(s, rng);
      for (std::size_t i = 0; i < pred.size(); ++i) pred[i] += off[i];
      // Only the prediction is perturbed; the target enters as a constant.
      note("l1_loss", check_op({pred}, [&target](G& g, const auto& v) {
             return nn::l1_loss(g, v[0], g.constant(target));
           }, rng));
    }
    {
      std::uniform_int_distribution<int> pick(0, 6);
      std::vector<int> labels;
      for (int i = 0; i < n + 2; ++i) labels.push_back(pick(rng));
      note("softmax_cross_entropy", check_op({random_tensor({n + 2, 7, 1, 1}, rng, -3, 3)}, [&labels](G& g, const auto& v) {
             return nn::softmax_cross_entropy(g, v[0], labels);
           }, rng));
    }
    {
      std::vector<int> idx{seed % 4, 1, seed % 4};
      note("gather", check_op({random_tensor({4, c, h, w}, rng)},
                              [&idx](G& g, const auto& v) { return nn::gather(g, v[0], idx); }, rng));
    }
    for (auto mode : {model::PromptMode::kNone, model::PromptMode::kExplicit, model::PromptMode::kAdaptive}) {
      model::BackboneConfig cfg;
      cfg.channels = 3 + seed % 2;
      cfg.modules = 2;
      cfg.prompt_dim = 4;
      cfg.patch = 8;
      cfg.prompt = mode;
      cfg.learnable_prompts = mode == model::PromptMode::kExplicit && seed % 2 == 1;
      model::Restorer<double> net(cfg, 100 + seed);
      // Move the injection heads off their identity start so every path carries gradient.
      std::uniform_real_distribution<double> u(-0.3, 0.3);
      for (auto* p : net.parameters())
        if (p->name.rfind("inject.", 0) == 0)
          for (double& v : p->value.values()) v += u(rng);
      const auto x = random_tensor({2, 3, 8, 8}, rng, 0.0, 1.0);
      const auto probe = random_tensor({2, 3, 8, 8}, rng);
      const std::vector<int> tasks{seed % 7, (seed + 3) % 7};
      // Sign pattern of every activation input; a central difference whose two
      // probes disagree with it straddles a kink and says nothing about the gradient.
      std::vector<bool> signs;
      auto loss = [&](bool backward, std::vector<bool>* pattern) {
        G g;
        auto y = net.forward(g, g.constant(x), tasks, backward ? model::Binding::kTrain : model::Binding::kInfer);
        auto l = nn::mean(g, nn::mul(g, y, g.constant(probe)));
        if (backward) g.backward(l);
        if (pattern) {
          pattern->clear();
          for (int id = 0; id < static_cast<int>(g.size()); ++id)
            if (g.op(V{id}) == "leaky_relu")
              for (double v : g.value(V{id}).values()) pattern->push_back(v > 0);
        }
        return g.value(l)[0];
      };
      for (auto* p : net.parameters()) p->zero_grad();
      loss(true, &signs);
      const std::string tag = "model/" + std::string(model::prompt_mode_name(mode));
      std::vector<bool> up_signs, down_signs;
      for (auto* p : net.parameters()) {
        std::vector<double> analytic, numeric;
        auto vals = p->value.values();
        for (std::size_t i = 0; i < vals.size(); ++i) {
          const double saved = vals[i];
          vals[i] = saved + kFdStep;
          const double up = loss(false, &up_signs);
          vals[i] = saved - kFdStep;
          const double down = loss(false, &down_signs);
          vals[i] = saved;
          ++fd_total;
          if (up_signs != signs || down_signs != signs) {
            ++fd_skipped;
            continue;
          }
          analytic.push_back(p->grad.values()[i]);
          numeric.push_back((up - down) / (2 * kFdStep));
        }
        note(tag, rel_error(analytic, numeric));
      }
    }
  }
  double overall = 0;
  std::string name;
  for (const auto& [op, e] : worst)
    if (e >= overall) overall = e, name = op;
  const double skipped = fd_total ? double(fd_skipped) / fd_total : 0.0;
  return {overall < kFdTol && skipped < 0.02,
          fmt("%zu checks over %d seeds, worst rel err %.2e (%s); %ld of %ld model coordinates straddle a kink at "
              "h=1e-4 and are excluded",
              worst.size(), kSeeds, overall, name.c_str(), fd_skipped, fd_total)};
}

// ---- 3 --------------------------------------------------------------------

Outcome schedule_fidelity() {
  bool ok = true;
  train::TrainPlan p;  // sequential, SBNJRHL, 10 periods
  for (int k = 1; k <= p.periods; ++k) {
    const auto t = train::tasks_for_period(p, k);
    const std::size_t want = std::min<std::size_t>(k, 7);
    ok &= t.size() == want && std::equal(t.begin(), t.end(), p.sequence.begin());
  }
  p.strategy = train::Strategy::kMixed;
  for (int k = 1; k <= p.periods; ++k) ok &= train::tasks_for_period(p, k).size() == 7;
  const auto s = p.schedule();
  const double lr0 = nn::lr_at(s, 0), lr_end = nn::lr_at(s, s.period);
  ok &= lr0 == 2e-4 && lr_end == 1e-7;
  return {ok, fmt("periods 1..10 active sizes 1,2,..,7,7,7,7; lr(0)=%g lr(T_p)=%g", lr0, lr_end)};
}

// ---- 4 --------------------------------------------------------------------

struct PipelineBytes {
  std::map<std::string, std::string> files;
};

PipelineBytes run_pipeline(bool split) {
  const fs::path root = fresh_dir("pipeline");
  const auto data = make_set(root / "train", 10, 48, 41, {kAllTasks.begin(), kAllTasks.end()});
  const auto test = make_set(root / "test", 4, 48, 42, {kAllTasks.begin(), kAllTasks.end()});
  train::TrainPlan plan;
  plan.periods = 10;
  plan.iters_per_period = 5;
  plan.batch = 4;
  plan.seed = 43;
  plan.backbone.channels = 8;
  plan.backbone.modules = 2;
  plan.backbone.prompt = model::PromptMode::kExplicit;
  train::TrainOptions o;
  o.out_dir = root / "run";
  if (split) {
    o.stop_after_period = 4;
    train::run_training(plan, data, o);
    o.stop_after_period = 0;
    o.resume_from = train::period_checkpoint_path(o.out_dir, 4);
  }
  const auto st = train::run_training(plan, data, o);
  auto net = model::restorer_from_checkpoint(model::load_checkpoint(st.final_checkpoint));
  eval::EvalOptions eo;
  eo.select = eval::PromptSelect::kLabel;
  const auto row = eval::eval_model(net, test, "mini-S+EP", eo);
  std::ofstream(root / "report.json") << eval::improvement_table({row}, "mini-S+EP", "in_dis").to_json().dump(2);

  PipelineBytes b;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    b.files[fs::relative(e.path(), root).string()] = slurp(e.path());
  }
  return b;
}

Outcome determinism() {
  const auto a = run_pipeline(false);
  const auto b = run_pipeline(false);
  const auto c = run_pipeline(true);
  int diffs = 0;
  std::string first;
  auto compare = [&](const PipelineBytes& x, const PipelineBytes& y, const char* label) {
    for (const auto& [name, bytes] : x.files) {
      auto it = y.files.find(name);
      if (it == y.files.end() || it->second != bytes) {
        ++diffs;
        if (first.empty()) first = std::string(label) + ":" + name;
      }
    }
    for (const auto& [name, bytes] : y.files)
      if (!x.files.count(name)) ++diffs;
  };
  compare(a, b, "rerun");
  compare(a, c, "resume");
  const bool has_all = a.files.count("run/model.ckpt") && a.files.count("report.json") &&
                       a.files.count("train/data/manifest.jsonl") && a.files.count("run/train_log.jsonl");
  fs::remove_all(g_work / "pipeline");
  return {diffs == 0 && has_all, fmt("%zu files compared across rerun and resume split, %d differ%s%s", a.files.size(),
                                     diffs, first.empty() ? "" : ", first ", first.c_str())};
}

// ---- 5 --------------------------------------------------------------------

Outcome classifier_accuracy() {
  const fs::path root = fresh_dir("classifier");
  const std::vector<TaskId> all{kAllTasks.begin(), kAllTasks.end()};
  const auto train_set = make_set(root / "train", 200, 64, 51, all);
  const auto test_set = make_set(root / "test", 50, 64, 52, all);
  train::ClassifierPlan plan;  // defaults: width 32, batch 32, 5000 steps
  plan.seed = 53;
  auto cls = train::train_classifier(train_set, plan);
  const auto r = train::evaluate_classifier(cls, test_set);
  std::string per_task;
  for (int t = 0; t < kNumTasks; ++t) {
    int row = 0;
    for (int v : r.confusion[t]) row += v;
    per_task += fmt(" %c %.2f", task_letter(kAllTasks[t]), row ? double(r.confusion[t][t]) / row : 0.0);
  }
  fs::remove_all(root);
  return {r.accuracy() >= 0.95, fmt("held-out accuracy %.4f (%lld/%lld, 200 GT/task, %d steps);%s", r.accuracy(),
                                    (long long)r.correct, (long long)r.samples, plan.steps, per_task.c_str())};
}

// ---- 6, 7 -----------------------------------------------------------------

struct ConflictResults {
  // [seed][variant]: M, M+EP, S, S+EP
  std::vector<std::array<double, 4>> avg;
};

const ConflictResults& conflict_runs() {
  static std::optional<ConflictResults> cache;
  if (cache) return *cache;
  const fs::path root = fresh_dir("conflict");
  degrade::ParamRanges r;
  r.in_dis.noise_sigma = {25, 25};
  r.in_dis.ll_gamma = {2.5, 2.5};
  const std::vector<TaskId> tasks{TaskId::kNoise, TaskId::kLowLight};
  const auto train_set = make_set(root / "train", 200, 64, 61, tasks, r);
  const auto test_set = make_set(root / "test", 50, 64, 62, tasks, r);
  ConflictResults out;
  for (std::uint64_t seed : {1, 2, 3}) {
    std::array<double, 4> row{};
    int i = 0;
    for (auto strategy : {train::Strategy::kMixed, train::Strategy::kSequential})
      for (auto prompt : {model::PromptMode::kNone, model::PromptMode::kExplicit}) {
        train::TrainPlan plan;
        plan.strategy = strategy;
        plan.sequence = train::parse_sequence("N,L", tasks);
        plan.periods = 10;
        plan.iters_per_period = 500;
        plan.seed = seed;
        plan.backbone.prompt = prompt;
        train::TrainOptions o;
        o.out_dir = root / fmt("run%d_%llu", i, (unsigned long long)seed);
        const auto t0 = std::chrono::steady_clock::now();
        const auto st = train::run_training(plan, train_set, o);
        auto net = model::restorer_from_checkpoint(model::load_checkpoint(st.final_checkpoint));
        eval::EvalOptions eo;
        eo.select = eval::PromptSelect::kLabel;
        eo.tile = 64;
        row[i] = eval::eval_model(net, test_set, "run", eo).avg;
        std::fprintf(stderr, "  seed %llu %s%s: %.3f dB (%.0f s)\n", (unsigned long long)seed,
                     strategy == train::Strategy::kMixed ? "mini-M" : "mini-S",
                     prompt == model::PromptMode::kExplicit ? "+EP" : "", row[i],
                     std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
        fs::remove_all(o.out_dir);
        ++i;
      }
    out.avg.push_back(row);
  }
  fs::remove_all(root);
  cache = out;
  return *cache;
}

std::array<double, 4> seed_mean(const ConflictResults& r) {
  std::array<double, 4> m{};
  for (const auto& row : r.avg)
    for (int i = 0; i < 4; ++i) m[i] += row[i] / r.avg.size();
  return m;
}

Outcome prompt_benefit() {
  const auto m = seed_mean(conflict_runs());
  const double gain = m[1] - m[0];
  return {gain >= 0.3, fmt("mini-M %.3f dB, mini-M+EP %.3f dB, gain %+.3f dB (need >= +0.30, 3 seeds)", m[0], m[1], gain)};
}

Outcome sequential_benefit() {
  const auto& r = conflict_runs();
  const auto m = seed_mean(r);
  const double plain = m[2] - m[0], prompted = m[3] - m[1];
  std::string per_seed;
  for (const auto& row : r.avg) per_seed += fmt(" %+.2f/%+.2f", row[2] - row[0], row[3] - row[1]);
  return {plain >= -0.1 && prompted >= 0.0,
          fmt("S-M %+.3f dB (need >= -0.10), S+EP - M+EP %+.3f dB (need >= 0); per seed:%s", plain, prompted,
              per_seed.c_str())};
}

// ---- 8 --------------------------------------------------------------------

Outcome clustering() {
  const fs::path root = fresh_dir("cluster");
  const std::vector<TaskId> all{kAllTasks.begin(), kAllTasks.end()};
  const auto train_set = make_set(root / "train", 40, 64, 81, all);
  const auto test_set = make_set(root / "test", 20, 64, 82, all);
  std::map<model::PromptMode, eval::ClusterReport> rep;
  for (auto mode : {model::PromptMode::kExplicit, model::PromptMode::kAdaptive}) {
    train::TrainPlan plan;
    plan.strategy = train::Strategy::kMixed;
    plan.periods = 4;
    plan.iters_per_period = 300;
    plan.seed = 83;
    plan.backbone.prompt = mode;
    train::TrainOptions o;
    o.out_dir = root / std::string(model::prompt_mode_name(mode));
    const auto st = train::run_training(plan, train_set, o);
    auto net = model::restorer_from_checkpoint(model::load_checkpoint(st.final_checkpoint));
    rep[mode] = eval::prompt_cluster_report(net, test_set, 100, 84);
  }
  fs::remove_all(root);
  const auto& ep = rep[model::PromptMode::kExplicit];
  const auto& ap = rep[model::PromptMode::kAdaptive];
  const bool ok = ep.chi >= 10.0 * ep.chi_permuted && ep.chi > ap.chi && ep.coords.size() == 700 &&
                  ap.coords.size() == 700 && ep.features.size() == 700;
  auto num = [](double v) { return std::isinf(v) ? std::string("inf") : fmt("%.3g", v); };
  return {ok, "EP CHI " + num(ep.chi) + " vs permuted " + num(ep.chi_permuted) + ", AP CHI " + num(ap.chi) +
                  " vs permuted " + num(ap.chi_permuted) + fmt(", %zu/%zu points", ep.coords.size(), ap.coords.size())};
}

// ---- 9 --------------------------------------------------------------------

double mean_abs(const ImageBuffer& a, const ImageBuffer& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a.values()[i] - b.values()[i]);
  return s / a.size();
}

Outcome interpolation_endpoints() {
  const fs::path root = fresh_dir("interp");
  const std::vector<TaskId> all{kAllTasks.begin(), kAllTasks.end()};
  const auto data = make_set(root, 12, 48, 91, all);
  train::TrainPlan plan;
  plan.strategy = train::Strategy::kMixed;
  plan.periods = 1;
  plan.iters_per_period = 300;
  plan.seed = 92;
  plan.backbone.channels = 8;
  plan.backbone.modules = 2;
  plan.backbone.prompt = model::PromptMode::kExplicit;
  train::TrainOptions o;
  o.out_dir = root / "run";
  auto net = model::restorer_from_checkpoint(model::load_checkpoint(train::run_training(plan, data, o).final_checkpoint));
  fs::remove_all(root);

  const auto& input = data.items()[data.items_for(TaskId::kRain).front()].lq;
  const TaskId a = TaskId::kLowLight, b = TaskId::kRain;
  const std::vector<double> alphas{1.0, 0.0, 0.5, 0.25, 0.75};
  const auto sweep = eval::interpolation_sweep(net, input, a, b, alphas);
  // Single-prompt runs at the default tiling, which the sweep also uses.
  const auto only_a = eval::restore_image(net, input, a, 0);
  const auto only_b = eval::restore_image(net, input, b, 0);
  bool ok = std::is_sorted(sweep.alphas.begin(), sweep.alphas.end()) && sweep.outputs.size() == alphas.size();
  const bool ends = sweep.outputs.front() == only_a && sweep.outputs.back() == only_b;
  // Moving along the sweep, outputs drift away from the first prompt and toward the second.
  bool monotone = true;
  for (std::size_t i = 1; i < sweep.outputs.size(); ++i) {
    monotone &= mean_abs(sweep.outputs[i], only_a) > mean_abs(sweep.outputs[i - 1], only_a);
    monotone &= mean_abs(sweep.outputs[i], only_b) < mean_abs(sweep.outputs[i - 1], only_b);
  }
  const auto sheet = eval::contact_sheet(sweep.outputs);
  const int n = static_cast<int>(sweep.outputs.size());
  bool sheet_ok = sheet.height() == input.height() && sheet.width() == n * input.width() + (n - 1) * 4;
  for (int i = 0; i < n; ++i)
    sheet_ok &= sheet.crop(0, i * (input.width() + 4), input.height(), input.width()) == sweep.outputs[i];
  ok &= ends && monotone && sheet_ok;
  return {ok, fmt("endpoints bit-identical: %s, monotone drift over %d alphas: %s, contact sheet %dx%d: %s",
                  ends ? "yes" : "no", n, monotone ? "yes" : "no", sheet.width(), sheet.height(),
                  sheet_ok ? "ok" : "bad")};
}

// ---- 10 -------------------------------------------------------------------

// Direct form: tr(W) and tr(T) from pairwise squared distances, tr(B) = tr(T) - tr(W).
double chi_oracle(const std::vector<std::vector<double>>& x, const std::vector<int>& labels) {
  auto d2 = [&](std::size_t i, std::size_t j) {
    double s = 0;
    for (std::size_t k = 0; k < x[i].size(); ++k) s += (x[i][k] - x[j][k]) * (x[i][k] - x[j][k]);
    return s;
  };
  const std::size_t n = x.size();
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < n; ++i) groups[labels[i]].push_back(i);
  double total = 0, within = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) total += d2(i, j);
  total /= 2.0 * n;
  for (const auto& [l, idx] : groups) {
    double s = 0;
    for (auto i : idx)
      for (auto j : idx) s += d2(i, j);
    within += s / (2.0 * idx.size());
  }
  const double k = groups.size();
  return ((total - within) / (k - 1)) / (within / (n - k));
}

Outcome chi_oracle_match() {
  std::mt19937_64 rng(101);
  double worst = 0;
  for (int trial = 0; trial < 50; ++trial) {
    std::uniform_int_distribution<int> kk(2, 7), per(2, 12), dim(1, 10);
    const int k = kk(rng), d = dim(rng);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<std::vector<double>> x;
    std::vector<int> labels;
    for (int c = 0; c < k; ++c) {
      std::vector<double> centre(d);
      for (double& v : centre) v = 3.0 * nd(rng);
      const int m = per(rng);
      for (int i = 0; i < m; ++i) {
        std::vector<double> p(d);
        for (int j = 0; j < d; ++j) p[j] = centre[j] + nd(rng);
        x.push_back(p);
        labels.push_back(c * 3 + 1);
      }
    }
    std::vector<std::size_t> order(x.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<double>> xs;
    std::vector<int> ls;
    for (auto i : order) xs.push_back(x[i]), ls.push_back(labels[i]);
    const double got = eval::calinski_harabasz(xs, ls), want = chi_oracle(xs, ls);
    worst = std::max(worst, std::abs(got - want) / std::max(1.0, std::abs(want)));
  }
  return {worst <= 1e-9, fmt("50 random labelled sets, worst relative deviation %.2e", worst)};
}

struct Criterion {
  const char* name;
  Outcome (*run)();
};

const std::map<int, Criterion> kCriteria = {
    {1, {"degradation analytics", degradation_analytics}},
    {2, {"gradient correctness", gradient_correctness}},
    {3, {"schedule fidelity", schedule_fidelity}},
    {4, {"determinism", determinism}},
    {5, {"classifier accuracy", classifier_accuracy}},
    {6, {"prompt benefit on the N+L conflict set", prompt_benefit}},
    {7, {"sequential benefit on the N+L conflict set", sequential_benefit}},
    {8, {"prompt clustering diagnostics", clustering}},
    {9, {"interpolation endpoints", interpolation_endpoints}},
    {10, {"CHI against a direct oracle", chi_oracle_match}},
};

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> wanted;
  std::set<int> tolerated;
  g_work = fs::temp_directory_path() / ("mio_acceptance_" + std::to_string(::getpid()));
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--workdir" && i + 1 < argc) {
      g_work = argv[++i];
    } else if (a == "--tolerate" && i + 1 < argc) {
      tolerated.insert(std::atoi(argv[++i]));
    } else {
      try {
        wanted.push_back(std::stoi(a));
      } catch (const std::exception&) {
        std::fprintf(stderr, "usage: acceptance [--workdir DIR] [--tolerate N] [N ...]\n");
        return 1;
      }
      if (!kCriteria.count(wanted.back())) {
        std::fprintf(stderr, "unknown criterion %s\n", a.c_str());
        return 1;
      }
    }
  }
  if (wanted.empty())
    for (const auto& [n, c] : kCriteria) wanted.push_back(n);
  fs::create_directories(g_work);
  train::tune_allocator();

  int failed = 0;
  for (int n : wanted) {
    const auto& c = kCriteria.at(n);
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s criterion %d (%s): %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", n, c.name, o.detail.c_str(), sec);
    std::fflush(stdout);
    if (!o.pass && tolerated.count(n)) {
      std::printf("     criterion %d failure tolerated: known limitation at this scale, see README\n", n);
    } else {
      failed += !o.pass;
    }
  }
  fs::remove_all(g_work);
  return failed == 0 ? 0 : 1;
}
