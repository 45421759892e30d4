#pragma once

// Subcommands of the `darc` tool: synth | train | eval | gradcheck.
//
// Exit codes: 0 success, 2 usage/config, 3 data format, 4 numeric failure
// (gradcheck), 5 undefined metric, 1 anything else.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "darc/darc.hpp"
#include "json.hpp"

namespace darc::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kDataFormat = 3,
  kNumericFailure = 4,
  kUndefinedMetric = 5,
};

class UsageError : public Error {
 public:
  using Error::Error;
};

namespace fs = std::filesystem;

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatErrorKind::kIo, "cannot write " + path.string());
  out << text;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatErrorKind::kIo, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void ensure_dir(const std::string& dir) {
  if (dir.empty()) throw UsageError("--out is required");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw FormatError(FormatErrorKind::kIo, "cannot create " + dir + ": " + ec.message());
}

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

// ---------------------------------------------------------------- synth

struct SynthOptions {
  std::string task = "hate";
  std::uint32_t samples = 1000;
  double separation = 4.0;
  std::uint64_t seed = 0;
  std::uint32_t d_img = 768;
  std::uint32_t d_txt = 768;
  std::uint32_t tokens = 1;
  std::vector<double> priors;
  std::string out;
};

inline int run_synth(const SynthOptions& o, Streams io) {
  if (o.samples == 0) throw UsageError("--samples must be at least 1");
  ensure_dir(o.out);
  SynthParams p;
  p.n_samples = o.samples;
  p.task_name = o.task;
  p.class_priors = o.priors;
  p.img_dim = o.d_img;
  p.txt_dim = o.d_txt;
  p.tokens = o.tokens;
  p.separation = o.separation;
  p.seed = o.seed;
  const EmbeddingBundle b = synth_generate(p);
  const fs::path bundle_path = fs::path(o.out) / "bundle.deb";
  write_bundle(b, bundle_path.string());

  const TaskSpec& spec = find_task_spec(o.task);
  nlohmann::json m;
  m["generator"] = "class-conditional gaussian";
  m["task"] = spec.name;
  m["class_names"] = spec.class_names;
  m["priors"] = o.priors.empty() ? spec.priors() : o.priors;
  m["samples"] = o.samples;
  m["separation"] = o.separation;
  m["seed"] = o.seed;
  m["d_img"] = o.d_img;
  m["d_txt"] = o.d_txt;
  m["tokens"] = o.tokens;
  m["bundle"] = "bundle.deb";
  m["created_utc"] = utc_timestamp();
  write_text(fs::path(o.out) / "synth_manifest.json", m.dump(2) + "\n");
  io.out << "wrote " << bundle_path.string() << " (" << b.n_samples << " samples, task " << spec.name << ")\n";
  return kOk;
}

// ---------------------------------------------------------------- train

inline ModelConfig resolve_model_config(const RunConfig& rc, const EmbeddingBundle& b, std::size_t task) {
  ModelConfig mc = rc.model_config(b.img_dim, b.txt_dim, b.tasks[task].n_classes);
  if (!mc.use_lp && (mc.d_in_img != mc.d_map || mc.d_in_txt != mc.d_map)) {
    throw UsageError("--no-lp uses the embeddings unprojected, so --d-map must equal the embedding dims (image " +
                     std::to_string(mc.d_in_img) + ", text " + std::to_string(mc.d_in_txt) + "), got --d-map " +
                     std::to_string(mc.d_map));
  }
  mc.validate();
  return mc;
}

inline SplitPlan make_split(const RunConfig& rc, const EmbeddingBundle& b, std::size_t task) {
  if (!(rc.val_fraction > 0.0 && rc.val_fraction < 1.0)) throw UsageError("--val-fraction must be in (0, 1)");
  const std::vector<double> fractions{1.0 - rc.val_fraction, rc.val_fraction};
  return stratified_split(b, task, fractions, rc.split_seed);
}

inline int run_train(const RunConfig& rc, Streams io) {
  if (rc.data.empty()) throw UsageError("--data is required");
  ensure_dir(rc.out);
  const fs::path out(rc.out);
  write_text(out / "config.txt", format_run_config(rc));

  const EmbeddingBundle b = read_bundle(rc.data);
  const std::size_t task = b.task_index(rc.task);
  const ModelConfig mc = resolve_model_config(rc, b, task);
  const SplitPlan split = make_split(rc, b, task);
  std::optional<Tensor> prototypes;
  if (!rc.prototypes.empty() && mc.use_sai) prototypes = load_prototypes(rc.prototypes);
  TrainConfig tc = rc.train_config(task);
  tc.validate();

  std::ofstream log(out / "metrics.jsonl", std::ios::trunc);
  if (!log) throw FormatError(FormatErrorKind::kIo, "cannot write metrics log");
  auto factory = [&](std::uint64_t seed) {
    DarcModel m = DarcModel::create(mc, seed);
    init_prototypes(m, prototypes, seed);
    return m;
  };
  const RepeatSummary summary = repeat_runs(
      tc.n_repeats, tc.seed, factory, b, split, tc, [&](std::uint32_t run, const EpochRecord& e) {
        log << epoch_log_line(run, tc.seed + run, e) << "\n";
        io.out << "run " << run << " epoch " << e.epoch << " loss " << e.train_loss << " val_auroc " << e.val.auroc
               << "\n";
      });
  log.close();

  for (std::size_t r = 0; r < summary.runs.size(); ++r) {
    const std::string name = r == 0 ? "checkpoint.dck" : "checkpoint_run" + std::to_string(r) + ".dck";
    save_checkpoint(summary.runs[r].best, (out / name).string());
  }

  nlohmann::json report;
  report["task"] = b.tasks[task].name;
  report["parameters"] = summary.runs.front().best.parameter_count();
  report["best_epoch"] = summary.runs.front().best_epoch;
  report["validation"] = report_to_json(summary.runs.front().best_report());
  nlohmann::json runs = nlohmann::json::array();
  for (std::size_t r = 0; r < summary.runs.size(); ++r) {
    runs.push_back({{"seed", summary.seeds[r]},
                    {"best_epoch", summary.runs[r].best_epoch},
                    {"validation", report_to_json(summary.runs[r].best_report())}});
  }
  report["runs"] = runs;
  auto stat = [](const MetricSummary& s) { return nlohmann::json{{"mean", s.mean}, {"std", s.std}}; };
  report["summary"] = {{"accuracy", stat(summary.accuracy)},
                       {"macro_f1", stat(summary.macro_f1)},
                       {"auroc", stat(summary.auroc)}};
  write_text(out / "report.json", report.dump(2) + "\n");
  write_text(out / "manifest.json",
             nlohmann::json{{"command", "train"}, {"created_utc", utc_timestamp()}}.dump(2) + "\n");

  io.out << "best epoch " << summary.runs.front().best_epoch << ", mean val AUROC " << summary.auroc.mean << " (std "
         << summary.auroc.std << ") over " << summary.runs.size() << " run(s)\n";
  return kOk;
}

// ---------------------------------------------------------------- eval

struct EvalOptions {
  std::string checkpoint;
  std::string config;
  std::optional<std::string> data, task;
  std::optional<std::uint64_t> split_seed;
  std::optional<double> val_fraction;
  std::string split = "val";
  std::string out;
  std::string roc;
  std::optional<int> roc_class;
};

inline int run_eval(const EvalOptions& o, Streams io) {
  RunConfig rc;
  if (!o.config.empty()) rc = parse_run_config(read_text(o.config));
  if (o.data) rc.data = *o.data;
  if (o.task) rc.task = *o.task;
  if (o.split_seed) rc.split_seed = *o.split_seed;
  if (o.val_fraction) rc.val_fraction = *o.val_fraction;
  if (rc.data.empty()) throw UsageError("--data is required (directly or via --config)");
  std::string ckpt = o.checkpoint;
  if (ckpt.empty() && !rc.out.empty()) ckpt = (fs::path(rc.out) / "checkpoint.dck").string();
  if (ckpt.empty()) throw UsageError("--checkpoint is required");

  const DarcModel model = load_checkpoint(ckpt);
  const EmbeddingBundle b = read_bundle(rc.data);
  const std::size_t task = b.task_index(rc.task);
  check_compatible(model, b, task);
  const int k = static_cast<int>(model.config.n_classes);
  if (!o.roc.empty() && k != 2 && !o.roc_class) {
    throw UsageError("--roc needs a binary task; task " + b.tasks[task].name + " has " + std::to_string(k) +
                     " classes, use --roc-class <c> to export the one-vs-rest curve of class c");
  }
  if (o.roc_class && (*o.roc_class < 0 || *o.roc_class >= k)) throw UsageError("--roc-class out of range");

  std::vector<std::size_t> indices;
  if (o.split == "all") {
    for (std::size_t i = 0; i < b.n_samples; ++i)
      if (b.label(i, task) != kMissingLabel) indices.push_back(i);
  } else if (o.split == "val" || o.split == "train") {
    const SplitPlan plan = make_split(rc, b, task);
    indices = o.split == "val" ? plan.val : plan.train;
  } else {
    throw UsageError("--split must be val, train or all");
  }

  const auto probs = predict_probabilities(model, b, indices, task);
  std::vector<int> labels;
  for (auto i : indices) labels.push_back(b.label(i, task));
  const metrics::EvalReport report = metrics::make_report(probs, labels, k);

  nlohmann::json j = report_to_json(report);
  j["task"] = b.tasks[task].name;
  j["split"] = o.split;
  const std::string text = j.dump(2) + "\n";
  if (!o.out.empty()) {
    ensure_dir(o.out);
    write_text(fs::path(o.out) / "eval_report.json", text);
  }
  io.out << text;

  if (!o.roc.empty()) {
    const int c = o.roc_class.value_or(1);
    std::vector<double> s;
    std::vector<int> y;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      s.push_back(probs[i * k + c]);
      y.push_back(labels[i] == c ? 1 : 0);
    }
    write_text(o.roc, roc_to_csv(metrics::roc_points(s, y)));
  }
  return kOk;
}

// ---------------------------------------------------------------- gradcheck

struct GradcheckOptions {
  std::uint32_t d_map = 16;
  std::uint32_t d_in = 0;  // 0: same as d_map
  std::uint32_t heads = 2;
  std::uint32_t blocks = 2;
  std::uint32_t ratio = 4;
  std::uint32_t classes = 3;
  std::uint32_t tokens = 1;
  std::uint32_t batch = 4;
  double sigma = 30.0;
  double step = 1e-5;
  double tolerance = 1e-5;
  std::uint64_t seed = 0;
  bool use_acar = true, use_dfa = true, use_lp = true;
};

inline std::string parameter_group(const std::string& name) {
  std::vector<std::string> parts;
  std::stringstream ss(name);
  for (std::string p; std::getline(ss, p, '.');) parts.push_back(p);
  const std::size_t keep = parts.size() >= 3 && parts[0] == "blocks" ? 3 : 1;
  std::string g;
  for (std::size_t i = 0; i < keep && i < parts.size(); ++i) g += (i ? "." : "") + parts[i];
  return g;
}

inline GradCheckReport model_grad_check(const GradcheckOptions& o) {
  ModelConfig mc;
  mc.d_map = o.d_map;
  mc.d_in_img = mc.d_in_txt = o.d_in ? o.d_in : o.d_map;
  mc.n_heads = o.heads;
  mc.n_blocks = o.blocks;
  mc.bottleneck_ratio = o.ratio;
  mc.n_classes = o.classes;
  mc.sigma_scale = o.sigma;
  mc.use_acar = o.use_acar;
  mc.use_dfa = o.use_dfa;
  mc.use_lp = o.use_lp;
  mc.use_sai = false;
  mc.validate();
  DarcModel model = DarcModel::create(mc, o.seed);

  std::mt19937_64 rng(o.seed + 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor img({o.batch, o.tokens, mc.d_in_img});
  Tensor txt({o.batch, o.tokens, mc.d_in_txt});
  for (double& v : img.values()) v = normal(rng);
  for (double& v : txt.values()) v = normal(rng);
  std::vector<int> labels(o.batch);
  for (auto& y : labels) y = static_cast<int>(rng() % o.classes);

  GradCheckOptions gopts;
  gopts.step = o.step;
  gopts.tolerance = o.tolerance;
  auto loss = [&](Graph& g) {
    return ops::softmax_cross_entropy(g, model_forward(g, model, img, txt).logits, labels);
  };
  return grad_check(loss, model.parameters(), gopts);
}

inline int run_gradcheck(const GradcheckOptions& o, Streams io) {
  const auto t0 = std::chrono::steady_clock::now();
  const GradCheckReport rep = model_grad_check(o);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  std::map<std::string, double> groups;
  std::vector<std::string> order;
  for (const auto& e : rep.entries) {
    const auto g = parameter_group(e.name);
    if (!groups.count(g)) order.push_back(g);
    groups[g] = std::max(groups[g], e.max_rel_error);
  }
  char line[256];
  for (const auto& e : rep.entries) {
    std::snprintf(line, sizeof line, "  %-40s %6zu coords  max rel err %.3e\n", e.name.c_str(), e.coordinates,
                  e.max_rel_error);
    io.out << line;
  }
  io.out << "parameter groups:\n";
  for (const auto& g : order) {
    std::snprintf(line, sizeof line, "  %-30s max rel err %.3e  %s\n", g.c_str(), groups[g],
                  groups[g] <= rep.tolerance ? "ok" : "FAIL");
    io.out << line;
  }
  std::snprintf(line, sizeof line, "gradcheck %s: worst %.3e, tolerance %.1e, %.2f s\n", rep.passed ? "passed" : "FAILED",
                rep.max_rel_error, rep.tolerance, secs);
  io.out << line;
  return rep.passed ? kOk : kNumericFailure;
}

// ---------------------------------------------------------------- dispatch

inline std::string flag_name(const std::string& key) {
  std::string f = key;
  for (auto& c : f)
    if (c == '_') c = '-';
  return "--" + f;
}

// Parses argv (including argv[0]) and runs the selected command.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  Streams io{out, err};
  CLI::App app{"DARC multimodal refinement stack: synthetic data, training, evaluation and gradient checks"};
  app.require_subcommand(1);

  SynthOptions so;
  auto* synth = app.add_subcommand("synth", "Generate a class-conditional synthetic embedding bundle");
  synth->add_option("--task", so.task, "hate | target | stance | humor");
  synth->add_option("--samples", so.samples, "Number of samples");
  synth->add_option("--separation", so.separation, "Scale of the class-mean directions (0 = no signal)");
  synth->add_option("--seed", so.seed, "Generator seed");
  synth->add_option("--d-img", so.d_img, "Image embedding width");
  synth->add_option("--d-txt", so.d_txt, "Text embedding width");
  synth->add_option("--tokens", so.tokens, "Tokens per sample and modality");
  synth->add_option("--priors", so.priors, "Class priors (default: reference label counts)")->delimiter(',');
  synth->add_option("--out", so.out, "Output directory")->required();

  // train: every RunConfig key is a flag; explicit flags override --config.
  std::map<std::string, std::string> train_values;
  std::map<std::string, CLI::Option*> train_opts;
  std::string train_config_path;
  bool no_acar = false, no_dfa = false, no_sai = false, no_lp = false, class_weighting = false;
  auto* train = app.add_subcommand("train", "Train on a bundle and keep the best-validation-AUROC checkpoint");
  train->add_option("--config", train_config_path, "key=value config file; flags take precedence");
  for (const auto& f : run_config_fields()) {
    if (f.is_bool) continue;
    train_opts[f.key] = train->add_option(flag_name(f.key), train_values[f.key], "Overrides config key " + f.key);
  }
  auto* f_acar = train->add_flag("--no-acar", no_acar, "Disable the cross-attention refiners");
  auto* f_dfa = train->add_flag("--no-dfa", no_dfa, "Disable the feature adapters");
  auto* f_sai = train->add_flag("--no-sai", no_sai, "Random classifier init instead of prototypes");
  auto* f_lp = train->add_flag("--no-lp", no_lp, "Use embeddings unprojected (requires d_map == d_in)");
  auto* f_cw = train->add_flag("--class-weighting", class_weighting, "Inverse-frequency class weights");

  EvalOptions eo;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a bundle split");
  eval->add_option("--checkpoint", eo.checkpoint, "DCK1 checkpoint (default: <out of config>/checkpoint.dck)");
  eval->add_option("--config", eo.config, "Training config.txt; supplies data, task and split settings");
  eval->add_option("--data", eo.data, "DEB1 bundle");
  eval->add_option("--task", eo.task, "Task name or index");
  eval->add_option("--split-seed", eo.split_seed, "Split seed");
  eval->add_option("--val-fraction", eo.val_fraction, "Validation fraction");
  eval->add_option("--split", eo.split, "val | train | all");
  eval->add_option("--out", eo.out, "Directory for eval_report.json");
  eval->add_option("--roc", eo.roc, "Write ROC points (threshold,fpr,tpr) to this CSV");
  eval->add_option("--roc-class", eo.roc_class, "Class whose one-vs-rest ROC curve --roc exports");

  GradcheckOptions go;
  bool g_no_acar = false, g_no_dfa = false, g_no_lp = false;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every model gradient");
  gc->add_option("--d-map", go.d_map);
  gc->add_option("--d-in", go.d_in, "Embedding width (default: d-map)");
  gc->add_option("--heads", go.heads);
  gc->add_option("--blocks", go.blocks);
  gc->add_option("--ratio", go.ratio);
  gc->add_option("--classes", go.classes);
  gc->add_option("--tokens", go.tokens);
  gc->add_option("--batch", go.batch);
  gc->add_option("--sigma", go.sigma);
  gc->add_option("--step", go.step, "Central-difference step h");
  gc->add_option("--tolerance", go.tolerance, "Maximum relative error");
  gc->add_option("--seed", go.seed);
  gc->add_flag("--no-acar", g_no_acar);
  gc->add_flag("--no-dfa", g_no_dfa);
  gc->add_flag("--no-lp", g_no_lp);

  std::vector<std::string> rev(args.rbegin(), args.rend());
  if (!rev.empty()) rev.pop_back();
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return kUsage;
  }

  try {
    if (synth->parsed()) return run_synth(so, io);
    if (train->parsed()) {
      RunConfig rc;
      if (!train_config_path.empty()) rc = parse_run_config(read_text(train_config_path));
      for (const auto& [key, opt] : train_opts)
        if (opt->count() > 0) set_config_value(rc, key, train_values[key]);
      if (f_acar->count()) rc.use_acar = !no_acar;
      if (f_dfa->count()) rc.use_dfa = !no_dfa;
      if (f_sai->count()) rc.use_sai = !no_sai;
      if (f_lp->count()) rc.use_lp = !no_lp;
      if (f_cw->count()) rc.class_weighting = class_weighting;
      return run_train(rc, io);
    }
    if (eval->parsed()) return run_eval(eo, io);
    if (gc->parsed()) {
      go.use_acar = !g_no_acar;
      go.use_dfa = !g_no_dfa;
      go.use_lp = !g_no_lp;
      return run_gradcheck(go, io);
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << "\n";
    return kUsage;
  } catch (const FormatError& e) {
    err << "data format error: " << e.what() << "\n";
    return kDataFormat;
  } catch (const DimensionError& e) {
    err << "data format error: " << e.what() << "\n";
    return kDataFormat;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kNumericFailure;
  } catch (const UndefinedMetricError& e) {
    err << "undefined metric: " << e.what() << "\n";
    return kUndefinedMetric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kUsage;
}

}  // namespace darc::cli
