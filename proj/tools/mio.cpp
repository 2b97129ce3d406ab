// Command-line front end: dataset synthesis, training, evaluation and
// prompt analysis. Exit codes: 0 success, 1 usage error, 2 runtime failure.
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "mio/config.hpp"
#include "mio/dataio.hpp"
#include "mio/eval.hpp"
#include "mio/rng.hpp"
#include "mio/train.hpp"

namespace fs = std::filesystem;
using namespace mio;

namespace {

struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct Globals {
  std::string workdir = ".";
  std::string config_file;
  std::uint64_t seed = 0;
  int jobs = 1;
  std::string log_level = "info";
  Config cfg;

  fs::path path(const std::string& p) const {
    if (p.empty()) return {};
    const fs::path q(p);
    return q.is_absolute() ? q : fs::path(workdir) / q;
  }
};

// Flag beats config file beats default; the winner is written back so the
// saved config is fully resolved.
template <typename T>
void resolve(Config& cfg, const std::string& key, const CLI::Option* opt, T& value) {
  if ((opt == nullptr || opt->count() == 0) && cfg.has(key)) value = cfg.get_or<T>(key, value);
  if constexpr (std::is_same_v<T, bool>) {
    cfg.set(key, std::string(value ? "true" : "false"));
  } else {
    cfg.set(key, value);
  }
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + p.string());
}

std::vector<TaskId> task_list(const std::string& letters) {
  try {
    return parse_task_letters(letters);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

std::string run_tag(const std::string& backbone, train::Strategy s, model::PromptMode p) {
  std::string tag = backbone + (s == train::Strategy::kMixed ? "-M" : "-S");
  if (p == model::PromptMode::kExplicit) tag += "+EP";
  if (p == model::PromptMode::kAdaptive) tag += "+AP";
  return tag;
}

double primary_param(const degrade::DegradeParams& p) {
  switch (p.task) {
    case TaskId::kSuperResolution: return p.sr_scale;
    case TaskId::kBlur: return p.blur_sigma;
    case TaskId::kNoise: return p.noise_sigma;
    case TaskId::kJpeg: return p.jpeg_quality;
    case TaskId::kRain: return p.rain_strength;
    case TaskId::kHaze: return p.haze_beta;
    case TaskId::kLowLight: return p.ll_gamma;
  }
  return 0.0;
}

std::string_view primary_param_name(TaskId t) {
  static constexpr std::string_view kNames[] = {"scale", "sigma", "sigma255", "quality", "strength", "beta", "gamma"};
  return kNames[task_index(t)];
}

void print_histograms(const dataio::DatasetManifest& m) {
  for (TaskId t : m.tasks) {
    std::vector<double> v;
    for (const auto& r : m.records)
      if (r.task == t) v.push_back(primary_param(r.params));
    if (v.empty()) continue;
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    constexpr int kBins = 5;
    int bins[kBins] = {};
    for (double x : v) {
      const int b = *hi > *lo ? std::min(kBins - 1, static_cast<int>((x - *lo) / (*hi - *lo) * kBins)) : 0;
      ++bins[b];
    }
    std::cout << "  " << task_letter(t) << " " << primary_param_name(t) << " [" << *lo << ", " << *hi << "]:";
    for (int b : bins) std::cout << ' ' << b;
    std::cout << '\n';
  }
}

model::Restorer<float> load_restorer(const fs::path& p) {
  return model::restorer_from_checkpoint(model::load_checkpoint(p));
}

// Tag of a trained model: the run's resolved config if present, else the directory name.
std::string model_tag(const fs::path& ckpt) {
  const fs::path cfg = ckpt.parent_path() / "run_config.ini";
  if (fs::exists(cfg)) {
    if (auto t = Config::load(cfg).get("run.tag")) return *t;
  }
  return ckpt.parent_path().filename().string();
}

// ---- subcommands -----------------------------------------------------------

struct MakeGt {
  std::string out = "gt";
  int count = 200, height = 64, width = 64;
  CLI::Option *o_count{}, *o_h{}, *o_w{};
  void add(CLI::App& app) {
    auto* c = app.add_subcommand("make-gt", "write procedural ground-truth images");
    c->add_option("--out", out, "output directory")->capture_default_str();
    o_count = c->add_option("--count", count, "number of images")->capture_default_str();
    o_h = c->add_option("--height", height)->capture_default_str();
    o_w = c->add_option("--width", width)->capture_default_str();
  }
  int run(Globals& g) {
    resolve(g.cfg, "gt.count", o_count, count);
    resolve(g.cfg, "gt.height", o_h, height);
    resolve(g.cfg, "gt.width", o_w, width);
    const auto paths = dataio::make_gt_set(g.path(out), count, height, width, g.seed);
    g.cfg.save(g.path(out) / "run_config.ini");
    std::cout << "wrote " << paths.size() << " images to " << g.path(out).string() << '\n';
    return 0;
  }
};

struct Synth {
  std::string gt = "gt", out = "data", group = "in", tasks = "SBNJRHL";
  void add(CLI::App& app) {
    auto* c = app.add_subcommand("synth", "degrade ground truth into a task dataset");
    c->add_option("--gt", gt, "ground-truth directory")->capture_default_str();
    c->add_option("--out", out, "dataset directory")->capture_default_str();
    c->add_option("--group", group, "in | out")->capture_default_str();
    c->add_option("--tasks", tasks, "task letters from SBNJRHL")->capture_default_str();
  }
  int run(Globals& g) {
    dataio::BuildOptions o;
    o.gt_dir = g.path(gt);
    o.out_dir = g.path(out);
    o.tasks = task_list(tasks);
    try {
      o.group = parse_group(group);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    o.ranges = degrade::ParamRanges::from_config(g.cfg);
    o.options.rain = degrade::RainConfig::from_config(g.cfg);
    o.seed = g.seed;
    o.jobs = g.jobs;
    o.ranges.write_config(g.cfg);
    g.cfg.set("synth.gt", o.gt_dir.string());
    g.cfg.set("synth.group", std::string(group_name(o.group)));
    g.cfg.set("synth.tasks", task_letters(o.tasks));
    g.cfg.set("synth.seed", g.seed);
    const auto m = dataio::build_dataset(o);
    g.cfg.save(o.out_dir / "run_config.ini");
    const fs::path manifest = o.out_dir / "manifest.jsonl";
    std::cout << manifest.string() << ": " << m.records.size() << " records, manifest hash " << std::hex
              << hash_bytes(read_file(manifest)) << std::dec << '\n';
    print_histograms(m);
    return 0;
  }
};

struct Train {
  std::string data = "data/manifest.jsonl", out, strategy = "sequential", prompt = "none", sequence, backbone = "mini",
              resume;
  int periods = 10, iters = 500, batch = 8, patch = 32, channels = 16, modules = 4, prompt_dim = 32, stop_after = 0,
      log_every = 0;
  double lr_max = 2e-4, lr_min = 1e-7;
  bool reset_adam = false, learnable = false;
  std::map<std::string, CLI::Option*> opts;
  void add(CLI::App& app) {
    auto* c = app.add_subcommand("train", "train a restoration model");
    c->add_option("--data", data, "training manifest")->capture_default_str();
    c->add_option("--out", out, "run directory (default runs/<tag>-seed<seed>)");
    opts["strategy"] = c->add_option("--strategy", strategy, "mixed | sequential")->capture_default_str();
    opts["prompt"] = c->add_option("--prompt", prompt, "none | explicit | adaptive")->capture_default_str();
    opts["sequence"] = c->add_option("--sequence", sequence, "task order, e.g. SBNJRHL (default: dataset order)");
    opts["periods"] = c->add_option("--periods", periods)->capture_default_str();
    opts["iters_per_period"] = c->add_option("--iters", iters, "iterations per period")->capture_default_str();
    opts["batch"] = c->add_option("--batch", batch)->capture_default_str();
    opts["patch"] = c->add_option("--patch", patch)->capture_default_str();
    opts["channels"] = c->add_option("--channels", channels)->capture_default_str();
    opts["modules"] = c->add_option("--modules", modules)->capture_default_str();
    opts["prompt_dim"] = c->add_option("--prompt-dim", prompt_dim)->capture_default_str();
    opts["lr_max"] = c->add_option("--lr-max", lr_max)->capture_default_str();
    opts["lr_min"] = c->add_option("--lr-min", lr_min)->capture_default_str();
    opts["reset_adam"] = c->add_flag("--reset-adam", reset_adam, "fresh Adam moments every period");
    opts["learnable_prompts"] = c->add_flag("--learnable-prompts", learnable, "learn the explicit prompt images");
    opts["backbone"] = c->add_option("--backbone", backbone, "name used in the run tag")->capture_default_str();
    c->add_option("--resume", resume, "period checkpoint to continue from");
    c->add_option("--stop-after-period", stop_after, "stop once this period is done");
    c->add_option("--log-every", log_every, "print the loss every N steps (0: per period only)");
  }
  int run(Globals& g) {
    auto r = [&](const char* key, auto& v) { resolve(g.cfg, std::string("train.") + key, opts.at(key), v); };
    r("strategy", strategy);
    r("prompt", prompt);
    r("sequence", sequence);
    r("periods", periods);
    r("iters_per_period", iters);
    r("batch", batch);
    r("patch", patch);
    r("channels", channels);
    r("modules", modules);
    r("prompt_dim", prompt_dim);
    r("lr_max", lr_max);
    r("lr_min", lr_min);
    r("reset_adam", reset_adam);
    r("learnable_prompts", learnable);
    r("backbone", backbone);

    const auto data_set = dataio::Dataset::load(dataio::read_manifest(g.path(data)));
    train::TrainPlan plan;
    try {
      plan.strategy = train::parse_strategy(strategy);
      plan.backbone.prompt = model::parse_prompt_mode(prompt);
      plan.sequence = sequence.empty() ? data_set.tasks() : train::parse_sequence(sequence, data_set.tasks());
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    plan.periods = periods;
    plan.iters_per_period = iters;
    plan.batch = batch;
    plan.patch = patch;
    plan.eta_max = lr_max;
    plan.eta_min = lr_min;
    plan.reset_adam_each_period = reset_adam;
    plan.seed = g.seed;
    plan.backbone.channels = channels;
    plan.backbone.modules = modules;
    plan.backbone.prompt_dim = prompt_dim;
    plan.backbone.patch = patch;
    plan.backbone.learnable_prompts = learnable;
    try {
      plan.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    const auto advice = train::validate_sequence(plan.sequence);
    if (plan.strategy == train::Strategy::kSequential && advice.warning) {
      std::cout << "warning: " << advice.message << '\n';
    }
    const std::string tag = run_tag(backbone, plan.strategy, plan.backbone.prompt);
    const fs::path dir = out.empty() ? g.path("runs") / (tag + "-seed" + std::to_string(g.seed)) : g.path(out);
    g.cfg.set("train.sequence", task_letters(plan.sequence));
    g.cfg.set("train.data", g.path(data).string());
    g.cfg.set("run.tag", tag);
    g.cfg.set("run.seed", g.seed);
    fs::create_directories(dir);
    g.cfg.save(dir / "run_config.ini");

    train::TrainOptions o;
    o.out_dir = dir;
    o.resume_from = g.path(resume);
    o.stop_after_period = stop_after;
    if (log_every > 0) {
      o.on_step = [&](const train::LossRecord& rec, const dataio::PatchBatch&) {
        if (rec.iteration % log_every == 0) {
          spdlog::info("step {} period {} loss {:.5f} lr {:.3g}", rec.iteration, rec.period, rec.loss, rec.lr);
        }
      };
    }
    std::cout << "training " << tag << " (" << task_letters(plan.sequence) << ", seed " << g.seed << ") in "
              << dir.string() << '\n';
    const auto st = train::run_training(plan, data_set, o);
    std::cout << tag << ": " << st.iteration << " steps, "
              << (st.final_checkpoint.empty() ? st.checkpoints.back() : st.final_checkpoint).string() << '\n';
    return 0;
  }
};

struct Eval {
  std::string data = "test/manifest.jsonl", baseline, classifier, out = "reports", name = "report";
  std::vector<std::string> models;
  bool labels = false;
  int tile = 0, overlap = 8;
  void add(CLI::App& app) {
    auto* c = app.add_subcommand("eval", "PSNR table for one or more models");
    c->add_option("--data", data, "test manifest")->capture_default_str();
    c->add_option("--model", models, "checkpoint, optionally TAG=PATH (repeatable)")->required();
    c->add_option("--baseline", baseline, "tag of the baseline row");
    c->add_option("--classifier", classifier, "classifier checkpoint for explicit-prompt models");
    c->add_flag("--labels", labels, "use the true task labels instead of a classifier");
    c->add_option("--tile", tile, "tile size (0: model patch size)");
    c->add_option("--overlap", overlap)->capture_default_str();
    c->add_option("--out", out, "report directory")->capture_default_str();
    c->add_option("--name", name, "report file stem")->capture_default_str();
  }
  int run(Globals& g) {
    const auto group = dataio::Dataset::load(dataio::read_manifest(g.path(data)));
    std::optional<model::Classifier<float>> cls;
    if (!classifier.empty()) cls = model::classifier_from_checkpoint(model::load_checkpoint(g.path(classifier)));
    eval::EvalOptions o;
    o.select = labels ? eval::PromptSelect::kLabel : eval::PromptSelect::kClassifier;
    o.classifier = cls ? &*cls : nullptr;
    o.tile = tile;
    o.overlap = overlap;
    o.jobs = g.jobs;
    std::vector<eval::ReportRow> rows;
    for (const auto& spec : models) {
      const auto eq = spec.find('=');
      const fs::path p = g.path(eq == std::string::npos ? spec : spec.substr(eq + 1));
      const std::string tag = eq == std::string::npos ? model_tag(p) : spec.substr(0, eq);
      auto net = load_restorer(p);
      if (net.config().prompt == model::PromptMode::kExplicit && !labels && !cls) {
        throw UsageError("model '" + tag + "' uses explicit prompts: pass --classifier or --labels");
      }
      rows.push_back(eval::eval_model(net, group, tag, o));
      spdlog::info("{}: avg {:.3f} dB", tag, rows.back().avg);
    }
    const std::string gname(group_name(group.manifest().group));
    eval::ReportTable table;
    if (baseline.empty()) {
      table.group = gname;
      table.rows = rows;
    } else {
      try {
        table = eval::improvement_table(rows, baseline, gname);
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
    }
    g.cfg.set("eval.data", g.path(data).string());
    g.cfg.set("eval.baseline", baseline);
    g.cfg.set("eval.prompt_select", std::string(labels ? "labels" : "classifier"));
    g.cfg.set("eval.tile", tile);
    g.cfg.set("eval.overlap", overlap);
    const fs::path dir = g.path(out);
    write_text(dir / (name + ".json"), table.to_json().dump(2) + "\n");
    write_text(dir / (name + ".md"), table.markdown());
    g.cfg.save(dir / (name + "_config.ini"));
    std::cout << table.markdown();
    return 0;
  }
};

struct ClassifierCmd {
  std::string data = "data/manifest.jsonl", out = "classifier.ckpt", model_path, test;
  int steps = 5000, batch = 32, patch = 32, width = 32, align = 8;
  double lr = 3e-3;
  CLI::App *train_cmd{}, *eval_cmd{};
  CLI::Option *o_steps{}, *o_batch{}, *o_patch{}, *o_width{}, *o_lr{}, *o_align{};
  void add(CLI::App& app) {
    auto* c = app.add_subcommand("classifier", "degradation classifier");
    c->require_subcommand(1);
    train_cmd = c->add_subcommand("train", "train on a dataset");
    train_cmd->add_option("--data", data, "training manifest")->capture_default_str();
    train_cmd->add_option("--test", test, "held-out manifest to score after training");
    train_cmd->add_option("--out", out, "checkpoint path")->capture_default_str();
    o_steps = train_cmd->add_option("--steps", steps)->capture_default_str();
    o_batch = train_cmd->add_option("--batch", batch)->capture_default_str();
    o_patch = train_cmd->add_option("--patch", patch)->capture_default_str();
    o_width = train_cmd->add_option("--width", width)->capture_default_str();
    o_lr = train_cmd->add_option("--lr", lr)->capture_default_str();
    o_align = train_cmd->add_option("--crop-align", align, "crop corners on this pixel lattice")->capture_default_str();
    eval_cmd = c->add_subcommand("eval", "accuracy on a dataset");
    eval_cmd->add_option("--data", data, "manifest")->capture_default_str();
    eval_cmd->add_option("--model", model_path, "checkpoint (omit to score an untrained network)");
    eval_cmd->add_option("--width", width, "width of the untrained network")->capture_default_str();
  }
  void report(const train::ClassifierReport& r, const std::string& label) {
    std::cout << label << " accuracy " << r.accuracy() << " (" << r.correct << "/" << r.samples << ")\n";
  }
  int run(Globals& g) {
    if (*train_cmd) {
      resolve(g.cfg, "classifier.steps", o_steps, steps);
      resolve(g.cfg, "classifier.batch", o_batch, batch);
      resolve(g.cfg, "classifier.patch", o_patch, patch);
      resolve(g.cfg, "classifier.width", o_width, width);
      resolve(g.cfg, "classifier.lr", o_lr, lr);
      resolve(g.cfg, "classifier.crop_align", o_align, align);
      g.cfg.set("classifier.seed", g.seed);
      const auto d = dataio::Dataset::load(dataio::read_manifest(g.path(data)));
      train::ClassifierPlan plan;
      plan.steps = steps;
      plan.batch = batch;
      plan.patch = patch;
      plan.eta_max = lr;
      plan.crop_align = align;
      plan.seed = g.seed;
      plan.config.width = width;
      auto cls = train::train_classifier(d, plan, [&](int step, double loss) {
        if (step % 500 == 0) spdlog::info("classifier step {} loss {:.4f}", step, loss);
      });
      const fs::path p = g.path(out);
      model::save_checkpoint(p, model::classifier_checkpoint(cls));
      g.cfg.save(p.string() + ".ini");
      std::cout << "saved " << p.string() << '\n';
      report(train::evaluate_classifier(cls, d), "train");
      if (!test.empty()) {
        const auto r = train::evaluate_classifier(cls, dataio::Dataset::load(dataio::read_manifest(g.path(test))));
        report(r, "held-out");
        write_text(p.string() + ".eval.json", r.to_json().dump(2) + "\n");
      }
      return 0;
    }
    const auto d = dataio::Dataset::load(dataio::read_manifest(g.path(data)));
    model::Classifier<float> cls = model_path.empty()
                                       ? model::Classifier<float>(model::ClassifierConfig{width}, g.seed)
                                       : model::classifier_from_checkpoint(model::load_checkpoint(g.path(model_path)));
    if (!cls.trained()) std::cout << "note: classifier is untrained; expect chance-level accuracy\n";
    const auto r = train::evaluate_classifier(cls, d);
    report(r, "eval");
    std::cout << r.to_json().dump() << '\n';
    return 0;
  }
};

struct PromptAnalyze {
  std::string model_path, data = "test/manifest.jsonl", out = "analysis";
  int n_per_task = 100, permutations = 20;
  void add(CLI::App& app) {
    auto* c = app.add_subcommand("prompt-analyze", "cluster quality of prompt features");
    c->add_option("--model", model_path, "checkpoint")->required();
    c->add_option("--data", data, "manifest")->capture_default_str();
    c->add_option("--n-per-task", n_per_task)->capture_default_str();
    c->add_option("--permutations", permutations)->capture_default_str();
    c->add_option("--out", out, "output directory")->capture_default_str();
  }
  int run(Globals& g) {
    auto net = load_restorer(g.path(model_path));
    const auto d = dataio::Dataset::load(dataio::read_manifest(g.path(data)));
    eval::ClusterReport rep;
    try {
      rep = eval::prompt_cluster_report(net, d, n_per_task, g.seed, permutations);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    const fs::path dir = g.path(out);
    write_text(dir / "clusters.json", rep.to_json().dump(2) + "\n");
    dataio::save_png(eval::render_scatter(rep.coords, rep.labels), dir / "scatter.png");
    g.cfg.set("analyze.model", g.path(model_path).string());
    g.cfg.set("analyze.n_per_task", n_per_task);
    g.cfg.save(dir / "run_config.ini");
    std::cout << rep.mode << ": " << rep.coords.size() << " points, CHI " << eval::number_json(rep.chi).dump()
              << ", permuted-label CHI " << eval::number_json(rep.chi_permuted).dump() << '\n';
    return 0;
  }
};

struct PromptInterp {
  std::string model_path, input, out = "interp", task_a = "L", task_b = "R", alphas = "0,0.25,0.5,0.75,1";
  void add(CLI::App& app) {
    auto* c = app.add_subcommand("prompt-interp", "restore with blended task prompts");
    c->add_option("--model", model_path, "explicit-prompt checkpoint")->required();
    c->add_option("--input", input, "image to restore")->required();
    c->add_option("--task-a", task_a)->capture_default_str();
    c->add_option("--task-b", task_b)->capture_default_str();
    c->add_option("--alphas", alphas, "comma-separated values in [0, 1]")->capture_default_str();
    c->add_option("--out", out, "output directory")->capture_default_str();
  }
  int run(Globals& g) {
    auto net = load_restorer(g.path(model_path));
    const auto ta = task_list(task_a), tb = task_list(task_b);
    if (ta.size() != 1 || tb.size() != 1) throw UsageError("--task-a and --task-b take one letter each");
    std::vector<double> as;
    std::stringstream ss(alphas);
    for (std::string tok; std::getline(ss, tok, ',');) {
      try {
        as.push_back(std::stod(tok));
      } catch (const std::exception&) {
        throw UsageError("bad alpha '" + tok + "'");
      }
      if (!(as.back() >= 0.0 && as.back() <= 1.0)) throw UsageError("alpha " + tok + " outside [0, 1]");
    }
    eval::InterpolationSweep sweep;
    try {
      sweep = eval::interpolation_sweep(net, dataio::load_image(g.path(input)), ta[0], tb[0], as);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    const fs::path dir = g.path(out);
    fs::create_directories(dir);
    for (std::size_t i = 0; i < sweep.alphas.size(); ++i) {
      char name[48];
      std::snprintf(name, sizeof name, "alpha_%.3f.png", sweep.alphas[i]);
      dataio::save_png(sweep.outputs[i], dir / name);
    }
    dataio::save_png(eval::contact_sheet(sweep.outputs), dir / "contact_sheet.png");
    g.cfg.set("interp.model", g.path(model_path).string());
    g.cfg.set("interp.tasks", task_a + task_b);
    g.cfg.set("interp.alphas", alphas);
    g.cfg.save(dir / "run_config.ini");
    std::cout << sweep.outputs.size() << " images and contact_sheet.png in " << dir.string() << '\n';
    return 0;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multiple-in-one image restoration toolkit"};
  app.require_subcommand(1);
  Globals g;
  if (const char* env = std::getenv("MIO_SEED")) {
    try {
      g.seed = std::stoull(env);
    } catch (const std::exception&) {
      std::cerr << "error: MIO_SEED must be an unsigned integer\n";
      return 1;
    }
  }
  app.add_option("--workdir", g.workdir, "base for relative paths")->capture_default_str();
  app.add_option("--config", g.config_file, "INI config; flags override its values");
  app.add_option("--seed", g.seed, "global seed (default $MIO_SEED or 0)");
  app.add_option("--jobs", g.jobs, "worker threads for synthesis and evaluation")->capture_default_str();
  app.add_option("--log-level", g.log_level, "trace|debug|info|warn|error")->capture_default_str();

  MakeGt make_gt;
  Synth synth;
  Train train_cmd;
  Eval eval_cmd;
  ClassifierCmd cls;
  PromptAnalyze analyze;
  PromptInterp interp;
  make_gt.add(app);
  synth.add(app);
  train_cmd.add(app);
  eval_cmd.add(app);
  cls.add(app);
  analyze.add(app);
  interp.add(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    spdlog::set_level(spdlog::level::from_str(g.log_level));
    if (!g.config_file.empty()) {
      if (!fs::exists(g.path(g.config_file))) throw UsageError("config file " + g.config_file + " not found");
      g.cfg = Config::load(g.path(g.config_file));
    }
    g.cfg.set("run.seed", g.seed);
    g.cfg.set("run.workdir", fs::absolute(g.workdir).string());
    train::tune_allocator();
    const auto* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    if (name == "make-gt") return make_gt.run(g);
    if (name == "synth") return synth.run(g);
    if (name == "train") return train_cmd.run(g);
    if (name == "eval") return eval_cmd.run(g);
    if (name == "classifier") return cls.run(g);
    if (name == "prompt-analyze") return analyze.run(g);
    if (name == "prompt-interp") return interp.run(g);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
