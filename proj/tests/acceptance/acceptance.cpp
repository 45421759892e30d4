// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Tolerances and protocol constants are fixed below.

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

#include <unistd.h>

#include "commands.hpp"
#include "darc/darc.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using darc::DarcModel;
using darc::Graph;
using darc::ModelConfig;
using darc::Tensor;

namespace {

// Gradient check
constexpr double kGradTolerance = 1e-5;
constexpr double kGradStep = 1e-5;
constexpr double kGradSeconds = 60.0;
// Equation oracles
constexpr int kOracleInstances = 100;
constexpr double kOracleTolerance = 1e-10;
// Degeneracy
constexpr double kAblationTolerance = 1e-12;
// Metrics
constexpr int kMetricFixtures = 50;
constexpr std::size_t kMetricMaxN = 200;
constexpr double kTrapezoidTolerance = 1e-12;
constexpr double kF1Tolerance = 1e-12;
// Convergence
constexpr std::uint32_t kConvSamples = 2000;
constexpr double kConvSeparation = 4.0;
constexpr double kConvAuroc = 0.99;
constexpr std::uint32_t kEpochs = 15;
constexpr std::uint32_t kBatch = 32;
constexpr double kConvSeconds = 300.0;
constexpr std::uint32_t kConvEmbed = 768;
constexpr std::uint32_t kConvDMap = 256;
constexpr std::uint32_t kConvHeads = 8;
constexpr double kNullLow = 0.45, kNullHigh = 0.55;
constexpr std::uint32_t kNullHoldout = 4000;
// Ablation
constexpr double kAblationSeparation = 1.5;
constexpr std::uint32_t kAblationSeeds = 3;
constexpr std::uint32_t kAblationDim = 64;
constexpr std::uint32_t kAblationHeads = 4;
// Parameter accounting
constexpr int kAccountingConfigs = 10;

struct Outcome {
  bool pass = false;
  std::string detail;
};

using clk = std::chrono::steady_clock;
double seconds_since(clk::time_point t) { return std::chrono::duration<double>(clk::now() - t).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::vector<double> vals(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

template <class F>
std::vector<double> per_sample(std::size_t batch, F f) {
  std::vector<double> out;
  for (std::size_t s = 0; s < batch; ++s) {
    const oracle::Mat m = f(s);
    out.insert(out.end(), m.v.begin(), m.v.end());
  }
  return out;
}

darc::EmbeddingBundle hate_bundle(std::uint32_t n, double separation, std::uint32_t dim, std::uint64_t seed) {
  darc::SynthParams p;
  p.task_name = "hate";
  p.n_samples = n;
  p.img_dim = p.txt_dim = dim;
  p.separation = separation;
  p.seed = seed;
  return darc::synth_generate(p);
}

darc::SplitPlan split_90_10(const darc::EmbeddingBundle& b, std::uint64_t seed) {
  const double fr[] = {0.9, 0.1};
  return darc::stratified_split(b, 0, fr, seed);
}

darc::TrainConfig protocol(std::uint64_t seed) {
  darc::TrainConfig t;
  t.epochs = kEpochs;
  t.batch_size = kBatch;
  t.learning_rate = 1e-4;
  t.weight_decay = 1e-4;
  t.seed = seed;
  return t;
}

// ------------------------------------------------------------------ criteria

Outcome gradient_correctness() {
  darc::cli::GradcheckOptions o;
  o.d_map = 16;
  o.heads = 2;
  o.blocks = 2;
  o.ratio = 4;
  o.classes = 3;
  o.step = kGradStep;
  o.tolerance = kGradTolerance;
  const auto t0 = clk::now();
  const auto rep = darc::cli::model_grad_check(o);
  const double secs = seconds_since(t0);
  std::ostringstream out, err;
  const int code = darc::cli::run({"darc", "gradcheck", "--d-map", "16", "--heads", "2", "--blocks", "2", "--ratio",
                                   "4", "--classes", "3", "--step", "1e-5", "--tolerance", "1e-5"},
                                  out, err);
  const bool ok = rep.passed && rep.max_rel_error <= kGradTolerance && secs < kGradSeconds && code == 0;
  return {ok, fmt("%zu tensors, worst rel err %.2e <= %.0e, %.2f s < %.0f s, command exit %d", rep.entries.size(),
                  rep.max_rel_error, kGradTolerance, secs, kGradSeconds, code)};
}

Outcome equation_oracles() {
  std::mt19937_64 rng(2024);
  double worst[5] = {0, 0, 0, 0, 0};
  for (int trial = 0; trial < kOracleInstances; ++trial) {
    const std::uint32_t heads = 1 + rng() % 4;
    ModelConfig c;
    c.n_heads = heads;
    c.d_map = heads * (2 + rng() % 4);
    c.bottleneck_ratio = c.d_map % 2 == 0 ? 2 : 1;
    c.d_in_img = 3 + rng() % 6;
    c.d_in_txt = 3 + rng() % 6;
    c.n_blocks = 1 + rng() % 3;
    c.n_classes = 2 + rng() % 3;
    const std::size_t batch = 1 + rng() % 3, tokens = 1 + rng() % 3;
    auto m = DarcModel::create(c, trial);
    oracle::randomize_parameters(m, rng);
    const Tensor xi = oracle::random_tensor(rng, {batch, tokens, c.d_map});
    const Tensor xt = oracle::random_tensor(rng, {batch, tokens, c.d_map});
    Graph g(Graph::Mode::kInference);
    const auto& blk = m.blocks[rng() % c.n_blocks];

    worst[0] = std::max(worst[0], oracle::max_abs_diff(vals(darc::acar_forward(g, *blk.txt_to_img, xt, xi)),
                                                       per_sample(batch, [&](std::size_t s) {
                                                         return oracle::acar(*blk.txt_to_img, oracle::sample_of(xt, s),
                                                                             oracle::sample_of(xi, s));
                                                       })));
    worst[1] = std::max(worst[1], oracle::max_abs_diff(vals(darc::dfa_forward(g, *blk.dfa, xi)),
                                                       per_sample(batch, [&](std::size_t s) {
                                                         return oracle::dfa(*blk.dfa, oracle::sample_of(xi, s));
                                                       })));
    worst[2] = std::max(worst[2], oracle::max_abs_diff(vals(darc::block_forward(g, blk, xi, xt).tap),
                                                       per_sample(batch, [&](std::size_t s) {
                                                         return oracle::block(blk, oracle::sample_of(xi, s),
                                                                              oracle::sample_of(xt, s))
                                                             .tap;
                                                       })));
    std::vector<Tensor> taps;
    const std::size_t n_taps = 1 + rng() % 4;
    for (std::size_t l = 0; l < n_taps; ++l) taps.push_back(oracle::random_tensor(rng, {batch, tokens, c.d_map}));
    std::vector<double> want;
    for (std::size_t s = 0; s < batch; ++s) {
      std::vector<oracle::Mat> per;
      for (const auto& t : taps) per.push_back(oracle::sample_of(t, s));
      const auto f = oracle::aggregate(per);
      want.insert(want.end(), f.begin(), f.end());
    }
    worst[3] = std::max(worst[3], oracle::max_abs_diff(vals(darc::aggregate(g, taps)), want));
    const Tensor feats = oracle::random_tensor(rng, {batch, c.d_map});
    want.clear();
    for (std::size_t s = 0; s < batch; ++s) {
      const std::vector<double> f(feats.values().begin() + s * c.d_map, feats.values().begin() + (s + 1) * c.d_map);
      const auto z = oracle::classify(m.classifier, f, c.sigma_scale);
      want.insert(want.end(), z.begin(), z.end());
    }
    worst[4] = std::max(worst[4], oracle::max_abs_diff(vals(darc::classify(g, m.classifier, feats, c.sigma_scale)), want));
  }
  bool ok = true;
  for (double w : worst) ok = ok && w <= kOracleTolerance;
  return {ok, fmt("%d instances, max abs err acar %.1e dfa %.1e block %.1e aggregate %.1e classify %.1e (tol %.0e)",
                  kOracleInstances, worst[0], worst[1], worst[2], worst[3], worst[4], kOracleTolerance)};
}

Outcome degeneracy() {
  std::mt19937_64 rng(77);
  ModelConfig c;
  c.d_in_img = 7;
  c.d_in_txt = 5;
  c.d_map = 12;
  c.n_heads = 3;
  c.n_blocks = 3;
  c.bottleneck_ratio = 3;
  c.n_classes = 3;
  bool singleton = true, lambda0 = true, gate = true;
  for (int trial = 0; trial < 20; ++trial) {
    auto m = DarcModel::create(c, trial);
    oracle::randomize_parameters(m, rng, 2.0);
    const Tensor fi = oracle::random_tensor(rng, {4, 1, 7}, 5.0);
    const Tensor ft = oracle::random_tensor(rng, {4, 1, 5}, 5.0);
    Graph g(Graph::Mode::kInference);
    const auto res = darc::model_forward(g, m, fi, ft);
    for (const auto& b : res.blocks)
      for (const auto* tr : {&b.attn_img_to_txt, &b.attn_txt_to_img})
        for (const auto& w : tr->weights)
          for (double v : w.values()) singleton = singleton && v == 1.0;

    auto& acar = *m.blocks[trial % 3].img_to_txt;
    for (double& v : acar.lambda.values()) v = 0.0;
    const Tensor q = oracle::random_tensor(rng, {2, 3, 12});
    const Tensor kv = oracle::random_tensor(rng, {2, 2, 12});
    const auto out = darc::acar_forward(g, acar, q, kv);
    const auto removed = darc::ops::layer_norm(g, darc::ops::add(g, q, darc::cross_attention(g, acar, q, kv)),
                                               darc::kLayerNormEps, acar.ln_gamma, acar.ln_beta);
    const auto a = vals(out), b = vals(removed);
    for (std::size_t i = 0; i < a.size(); ++i)
      lambda0 = lambda0 && std::bit_cast<std::uint64_t>(a[i]) == std::bit_cast<std::uint64_t>(b[i]);

    auto& dfa = *m.blocks[trial % 3].dfa;
    for (double& v : dfa.w_g.values()) v = 0.0;
    for (double& v : dfa.b_g.values()) v = 0.0;
    darc::DfaTrace trace;
    darc::dfa_forward(g, dfa, oracle::random_tensor(rng, {5, 2, 12}, 4.0), &trace);
    for (double v : trace.gate.values()) gate = gate && v == 0.5;
  }

  ModelConfig base;
  base.d_in_img = base.d_in_txt = base.d_map = 16;
  base.n_heads = 2;
  base.n_blocks = 2;
  base.bottleneck_ratio = 4;
  base.n_classes = 4;
  base.use_acar = base.use_dfa = base.use_sai = base.use_lp = false;
  auto m = DarcModel::create(base, 5);
  const bool only_wc = m.parameters().size() == 1 && m.parameters()[0].name == "classifier.weight";
  const Tensor fi = oracle::random_tensor(rng, {6, 1, 16});
  const Tensor ft = oracle::random_tensor(rng, {6, 1, 16});
  Graph g(Graph::Mode::kInference);
  const auto logits = darc::model_forward(g, m, fi, ft).logits;
  std::vector<double> want;
  for (std::size_t s = 0; s < 6; ++s) {
    std::vector<double> mean(16);
    for (std::size_t j = 0; j < 16; ++j) mean[j] = 0.5 * (fi.values()[s * 16 + j] + ft.values()[s * 16 + j]);
    const auto z = oracle::classify(m.classifier, mean, base.sigma_scale);
    want.insert(want.end(), z.begin(), z.end());
  }
  const double ablation_err = oracle::max_abs_diff(vals(logits), want);
  const bool ablation = only_wc && ablation_err <= kAblationTolerance;
  return {singleton && lambda0 && gate && ablation,
          fmt("singleton weights exactly 1: %s; lambda=0 bit-identical: %s; zero gate params give 0.5: %s; "
              "full ablation = cosine over averaged features (only W_c: %s, err %.1e <= %.0e)",
              singleton ? "yes" : "no", lambda0 ? "yes" : "no", gate ? "yes" : "no", only_wc ? "yes" : "no",
              ablation_err, kAblationTolerance)};
}

Outcome metric_oracles() {
  std::mt19937_64 rng(99);
  std::normal_distribution<double> normal(0.0, 1.0);
  int exact = 0;
  double worst_trap = 0.0;
  for (int t = 0; t < kMetricFixtures; ++t) {
    const std::size_t n = 2 + rng() % (kMetricMaxN - 1);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = i < 2 ? static_cast<int>(i) : static_cast<int>(rng() % 2);
      s[i] = normal(rng) + 0.5 * y[i];
      if (t % 2 == 0) s[i] = std::round(s[i] * 3.0) / 3.0;
    }
    const double auc = darc::metrics::auroc_binary(s, y);
    exact += auc == oracle::pair_count_auroc(s, y);
    worst_trap = std::max(worst_trap, std::abs(darc::metrics::trapezoid_area(darc::metrics::roc_points(s, y)) - auc));
  }

  struct F1Case {
    std::vector<int> preds, labels;
    int k;
    double expected;
  };
  const std::vector<F1Case> cases{
      {{0, 1, 0, 1}, {0, 1, 0, 1}, 2, 1.0},
      {{0, 0, 0, 0}, {0, 1, 0, 1}, 2, 1.0 / 3.0},
      {{0, 1, 0, 1, 2, 2, 2, 0, 2}, {0, 0, 0, 1, 1, 2, 2, 2, 2}, 3, 23.0 / 36.0},
      {{0, 1, 0, 1}, {0, 1, 0, 1}, 3, 2.0 / 3.0},
  };
  double worst_f1 = 0.0;
  for (const auto& c : cases) worst_f1 = std::max(worst_f1, std::abs(darc::metrics::macro_f1(c.preds, c.labels, c.k) - c.expected));
  const bool ok = exact == kMetricFixtures && worst_trap <= kTrapezoidTolerance && worst_f1 <= kF1Tolerance;
  return {ok, fmt("AUROC == pair counting on %d/%d fixtures (n <= %zu); max |trapezoid - AUROC| %.1e <= %.0e; "
                  "macro-F1 hand fixtures max err %.1e",
                  exact, kMetricFixtures, kMetricMaxN, worst_trap, kTrapezoidTolerance, worst_f1)};
}

ModelConfig convergence_model() {
  ModelConfig c;
  c.d_in_img = c.d_in_txt = kConvEmbed;
  c.d_map = kConvDMap;
  c.n_heads = kConvHeads;
  c.n_blocks = 2;
  c.bottleneck_ratio = 4;
  c.n_classes = 2;
  return c;
}

Outcome convergence() {
  const auto t0 = clk::now();
  const auto b = hate_bundle(kConvSamples, kConvSeparation, kConvEmbed, 41);
  const auto split = split_90_10(b, 41);
  auto m = DarcModel::create(convergence_model(), 41);
  darc::init_prototypes(m, std::nullopt, 41);
  std::uint32_t first_hit = 0;
  const auto r = darc::train(m, b, split, protocol(41), [&](const darc::EpochRecord& e) {
    if (!first_hit && e.val.auroc >= kConvAuroc) first_hit = e.epoch;
  });
  const double secs = seconds_since(t0);
  const double best = r.best_report().auroc;
  const bool ok = best >= kConvAuroc && first_hit >= 1 && secs < kConvSeconds;
  return {ok, fmt("separation %.0f, n %u, d_in %u, d_map %u, H %u: val AUROC %.4f (first >= %.2f at epoch %u of %u), "
                  "%.1f s < %.0f s",
                  kConvSeparation, kConvSamples, kConvEmbed, kConvDMap, kConvHeads, best, kConvAuroc, first_hit, kEpochs,
                  secs, kConvSeconds)};
}

Outcome null_signal() {
  const auto t0 = clk::now();
  const auto b = hate_bundle(kConvSamples, 0.0, kConvEmbed, 43);
  const auto split = split_90_10(b, 43);
  auto m = DarcModel::create(convergence_model(), 43);
  darc::init_prototypes(m, std::nullopt, 43);
  const auto r = darc::train(m, b, split, protocol(43));
  const auto holdout = hate_bundle(kNullHoldout, 0.0, kConvEmbed, 4343);
  std::vector<std::size_t> all(holdout.n_samples);
  std::iota(all.begin(), all.end(), 0);
  const double auc = darc::evaluate(r.best, holdout, all, 0).auroc;
  const bool ok = auc >= kNullLow && auc <= kNullHigh;
  return {ok, fmt("separation 0: held-out AUROC %.4f in [%.2f, %.2f] on a fresh %u-sample draw "
                  "(best-epoch val AUROC %.4f), %.1f s",
                  auc, kNullLow, kNullHigh, kNullHoldout, r.best_report().auroc, seconds_since(t0))};
}

Outcome ablation_order() {
  const auto t0 = clk::now();
  const auto b = hate_bundle(kConvSamples, kAblationSeparation, kAblationDim, 47);
  const auto split = split_90_10(b, 47);
  ModelConfig frozen;
  frozen.d_in_img = frozen.d_in_txt = frozen.d_map = kAblationDim;
  frozen.n_heads = kAblationHeads;
  frozen.n_blocks = 2;
  frozen.bottleneck_ratio = 4;
  frozen.n_classes = 2;
  frozen.use_acar = frozen.use_dfa = frozen.use_sai = frozen.use_lp = false;
  ModelConfig acar = frozen;
  acar.use_acar = true;
  auto run = [&](const ModelConfig& cfg) {
    auto factory = [&](std::uint64_t seed) {
      auto m = DarcModel::create(cfg, seed);
      darc::init_prototypes(m, std::nullopt, seed);
      return m;
    };
    return darc::repeat_runs(kAblationSeeds, 500, factory, b, split, protocol(500));
  };
  const auto base = run(frozen);
  const auto with_acar = run(acar);
  const bool ok = with_acar.auroc.mean >= base.auroc.mean;
  return {ok, fmt("separation %.1f, %u seeds: frozen baseline AUROC %.4f +- %.4f, +ACAR %.4f +- %.4f, %.1f s",
                  kAblationSeparation, kAblationSeeds, base.auroc.mean, base.auroc.std, with_acar.auroc.mean,
                  with_acar.auroc.std, seconds_since(t0))};
}

Outcome determinism_persistence() {
  const fs::path dir = fs::temp_directory_path() / ("darc_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto cli = [](std::vector<std::string> args) {
    args.insert(args.begin(), "darc");
    std::ostringstream out, err;
    return darc::cli::run(args, out, err);
  };
  bool ok = cli({"synth", "--samples", "400", "--separation", "2", "--seed", "5", "--d-img", "24", "--d-txt", "24",
                 "--out", (dir / "data").string()}) == 0;
  const std::string data = (dir / "data" / "bundle.deb").string();
  for (const char* run : {"a", "b"}) {
    ok = ok && cli({"train", "--data", data, "--out", (dir / run).string(), "--d-map", "16", "--heads", "2",
                    "--epochs", "4", "--repeats", "2", "--lr", "0.001", "--seed", "9"}) == 0;
  }
  const auto read = [&](const fs::path& p) { return darc::cli::read_text(p.string()); };
  const bool logs = ok && read(dir / "a" / "metrics.jsonl") == read(dir / "b" / "metrics.jsonl") &&
                    read(dir / "a" / "checkpoint.dck") == read(dir / "b" / "checkpoint.dck");

  const auto bundle = darc::read_bundle(data);
  const auto bundle_bytes = darc::io::read_file(data);
  const bool deb = darc::encode_bundle(bundle) == bundle_bytes && darc::decode_bundle(bundle_bytes) == bundle;

  const auto ck_bytes = darc::io::read_file((dir / "a" / "checkpoint.dck").string());
  const auto model = darc::decode_checkpoint(ck_bytes);
  const bool dck = darc::encode_checkpoint(model) == ck_bytes;

  std::ostringstream out, err;
  const int code = darc::cli::run({"darc", "eval", "--config", (dir / "a" / "config.txt").string()}, out, err);
  const auto train_report = nlohmann::json::parse(read(dir / "a" / "report.json")).at("validation");
  const bool reload = code == 0 && darc::report_from_json(nlohmann::json::parse(out.str())) ==
                                       darc::report_from_json(train_report);
  fs::remove_all(dir);
  return {logs && deb && dck && reload,
          fmt("repeated train: identical metric logs and checkpoints %s; DEB1 byte round-trip %s; DCK1 byte round-trip "
              "%s; reloaded checkpoint reproduces validation report %s",
              logs ? "yes" : "no", deb ? "yes" : "no", dck ? "yes" : "no", reload ? "yes" : "no")};
}

Outcome parameter_accounting() {
  std::mt19937_64 rng(123);
  int matched = 0;
  for (int t = 0; t < kAccountingConfigs; ++t) {
    ModelConfig c;
    c.n_heads = 1 + rng() % 4;
    c.bottleneck_ratio = 1 + rng() % 4;
    c.d_map = c.n_heads * c.bottleneck_ratio * (1 + rng() % 4);
    c.d_in_img = 1 + rng() % 32;
    c.d_in_txt = 1 + rng() % 32;
    c.n_blocks = 1 + rng() % 4;
    c.n_classes = 2 + rng() % 3;
    matched += DarcModel::create(c, t).parameter_count() == oracle::parameter_count(c);
  }

  ModelConfig c;
  c.d_in_img = c.d_in_txt = c.d_map = 24;
  c.n_heads = 3;
  c.n_blocks = 3;
  c.bottleneck_ratio = 4;
  c.n_classes = 3;
  const std::size_t d = 24, dk = 8, h = 3, db = 6, L = 3, k = 3;
  const std::size_t acar_dir = 3 * h * d * dk + d * d + 2 * d * db + 1 + 2 * d;
  const std::size_t dfa = d + 1 + 2 * d * db + 2 * d;
  const std::size_t lp = 2 * (d * d + d);
  const auto count = [](const ModelConfig& cfg) { return DarcModel::create(cfg, 0).parameter_count(); };
  const std::size_t full = count(c);
  auto no_acar = c, no_dfa = c, no_sai = c, no_lp = c, none = c;
  no_acar.use_acar = false;
  no_dfa.use_dfa = false;
  no_sai.use_sai = false;
  no_lp.use_lp = false;
  none.use_acar = none.use_dfa = none.use_sai = none.use_lp = false;
  const bool flags = full == 2 * L * acar_dir + L * dfa + lp + k * d && full - count(no_acar) == 2 * L * acar_dir &&
                     full - count(no_dfa) == L * dfa && full == count(no_sai) && full - count(no_lp) == lp &&
                     count(none) == k * d;
  return {matched == kAccountingConfigs && flags,
          fmt("closed form matches %d/%d random configs; per-flag removal (ACAR %zu, DFA %zu, LP %zu, SAI 0, all-off "
              "leaves %zu) %s",
              matched, kAccountingConfigs, 2 * L * acar_dir, L * dfa, lp, k * d, flags ? "correct" : "WRONG")};
}

// Optional reference measurement at the default model width, enabled by
// DARC_ACCEPTANCE_FULL_WIDTH=1: one protocol epoch, then a linear projection
// of the 15-epoch runtime.
void full_width_reference() {
  const auto b = hate_bundle(kConvSamples, kConvSeparation, kConvEmbed, 41);
  const auto split = split_90_10(b, 41);
  auto c = convergence_model();
  c.d_map = 1024;
  auto m = DarcModel::create(c, 41);
  darc::init_prototypes(m, std::nullopt, 41);
  auto t = protocol(41);
  t.epochs = 1;
  const auto t0 = clk::now();
  const auto r = darc::train(m, b, split, t);
  const double secs = seconds_since(t0);
  std::printf("[INFO] d_map 1024, H %u, %zu parameters: epoch 1 val AUROC %.4f in %.1f s, 15-epoch projection %.0f s\n",
              kConvHeads, m.parameter_count(), r.best_report().auroc, secs, 15 * secs);
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient correctness", gradient_correctness},
      {"equation-level oracles", equation_oracles},
      {"degeneracy suite", degeneracy},
      {"metric oracles", metric_oracles},
      {"end-to-end convergence", convergence},
      {"end-to-end convergence, no-signal control", null_signal},
      {"ablation ordering", ablation_order},
      {"determinism and persistence", determinism_persistence},
      {"parameter accounting", parameter_accounting},
  };
  int failures = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("[%s] %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  if (const char* env = std::getenv("DARC_ACCEPTANCE_FULL_WIDTH"); env && std::string(env) == "1") full_width_reference();
  std::printf("%zu criteria, %d failed\n", criteria.size(), failures);
  return failures == 0 ? 0 : 1;
}
