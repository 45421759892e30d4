#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "darc/data.hpp"
#include "darc/metrics.hpp"
#include "darc/model.hpp"

namespace darc {

struct TrainConfig {
  std::uint32_t epochs = 15;
  std::uint32_t batch_size = 32;
  double learning_rate = 1e-4;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;
  std::uint32_t n_repeats = 3;
  bool class_weighting = false;
  std::size_t task_index = 0;

  void validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train: batch size must be >= 1");
    if (n_repeats < 1) throw ConfigError("train: repeats must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("train: learning rate must be positive");
    if (!(weight_decay >= 0.0)) throw ConfigError("train: weight decay must be >= 0");
  }
};

// Decoupled-weight-decay Adam.
class Adam {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  explicit Adam(std::vector<NamedTensor> params) : params_(std::move(params)) {
    for (const auto& p : params_) {
      m_.emplace_back(p.tensor.numel(), 0.0);
      v_.emplace_back(p.tensor.numel(), 0.0);
    }
  }

  // p <- p - lr*wd*p, then the bias-corrected Adam step from p.grad.
  void step(double lr, double wd) {
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor& p = params_[i].tensor;
      if (p.numel() != m_[i].size()) throw DimensionError("adam: parameter " + params_[i].name + " changed shape");
      auto w = p.values();
      const auto g = p.grad();
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < w.size(); ++j) {
        w[j] -= lr * wd * w[j];
        m[j] = kBeta1 * m[j] + (1.0 - kBeta1) * g[j];
        v[j] = kBeta2 * v[j] + (1.0 - kBeta2) * g[j] * g[j];
        const double mh = m[j] / c1;
        const double vh = v[j] / c2;
        w[j] -= lr * mh / (std::sqrt(vh) + kEps);
      }
    }
  }

  std::uint64_t steps() const { return t_; }
  const std::vector<double>& first_moment(std::size_t i) const { return m_[i]; }
  const std::vector<double>& second_moment(std::size_t i) const { return v_[i]; }

 private:
  std::vector<NamedTensor> params_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t t_ = 0;
};

// Inverse-frequency weights N/(K count_c), rescaled to mean 1 over classes
// that occur. Absent classes get weight 0.
inline std::vector<double> inverse_frequency_weights(std::span<const int> labels, int n_classes) {
  std::vector<double> count(n_classes, 0.0);
  for (int y : labels) count[y] += 1.0;
  std::vector<double> w(n_classes, 0.0);
  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < n_classes; ++c) {
    if (count[c] > 0.0) {
      w[c] = static_cast<double>(labels.size()) / (n_classes * count[c]);
      sum += w[c];
      ++present;
    }
  }
  for (auto& x : w) x *= present / sum;
  return w;
}

struct Batch {
  Tensor image;  // [B x T_i x d_img]
  Tensor text;   // [B x T_t x d_txt]
  std::vector<int> labels;
};

inline Batch make_batch(const EmbeddingBundle& b, std::span<const std::size_t> indices, std::size_t task) {
  const std::size_t n = indices.size();
  Batch batch;
  batch.image = Tensor({n, b.img_tokens, b.img_dim});
  batch.text = Tensor({n, b.txt_tokens, b.txt_dim});
  auto iv = batch.image.values();
  auto tv = batch.text.values();
  const std::size_t is = b.img_stride(), ts = b.txt_stride();
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t i = indices[r];
    for (std::size_t j = 0; j < is; ++j) iv[r * is + j] = b.image[i * is + j];
    for (std::size_t j = 0; j < ts; ++j) tv[r * ts + j] = b.text[i * ts + j];
    batch.labels.push_back(b.label(i, task));
  }
  return batch;
}

inline void check_compatible(const DarcModel& model, const EmbeddingBundle& b, std::size_t task) {
  const auto& c = model.config;
  if (task >= b.tasks.size()) throw ConfigError("task index " + std::to_string(task) + " not in bundle");
  if (c.d_in_img != b.img_dim || c.d_in_txt != b.txt_dim) {
    throw FormatError(FormatErrorKind::kSchemaMismatch,
                      "model expects embedding dims " + std::to_string(c.d_in_img) + "/" + std::to_string(c.d_in_txt) +
                          ", bundle has " + std::to_string(b.img_dim) + "/" + std::to_string(b.txt_dim));
  }
  if (c.n_classes != b.tasks[task].n_classes) {
    throw FormatError(FormatErrorKind::kSchemaMismatch, "model has " + std::to_string(c.n_classes) + " classes, task " +
                                                            b.tasks[task].name + " has " +
                                                            std::to_string(b.tasks[task].n_classes));
  }
  if (b.img_tokens != b.txt_tokens) {
    throw FormatError(FormatErrorKind::kSchemaMismatch, "fusion needs equal image/text token counts, bundle has " +
                                                            std::to_string(b.img_tokens) + "/" +
                                                            std::to_string(b.txt_tokens));
  }
}

inline constexpr std::size_t kEvalBatch = 64;

// Softmax class probabilities, row-major [n x n_classes].
inline std::vector<double> predict_probabilities(const DarcModel& model, const EmbeddingBundle& b,
                                                 std::span<const std::size_t> indices, std::size_t task) {
  check_compatible(model, b, task);
  const std::size_t k = model.config.n_classes;
  std::vector<double> probs;
  probs.reserve(indices.size() * k);
  for (std::size_t start = 0; start < indices.size(); start += kEvalBatch) {
    const auto chunk = indices.subspan(start, std::min(kEvalBatch, indices.size() - start));
    Batch batch = make_batch(b, chunk, task);
    Graph g(Graph::Mode::kInference);
    Tensor p = ops::softmax_rows(g, model_forward(g, model, batch.image, batch.text).logits);
    probs.insert(probs.end(), p.values().begin(), p.values().end());
  }
  return probs;
}

inline metrics::EvalReport evaluate(const DarcModel& model, const EmbeddingBundle& b,
                                    std::span<const std::size_t> indices, std::size_t task, bool with_roc = false) {
  const auto probs = predict_probabilities(model, b, indices, task);
  std::vector<int> labels;
  for (auto i : indices) labels.push_back(b.label(i, task));
  return metrics::make_report(probs, labels, static_cast<int>(model.config.n_classes), with_roc);
}

struct EpochRecord {
  std::uint32_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  metrics::EvalReport val;
};

struct TrainResult {
  std::vector<EpochRecord> epochs;
  std::uint32_t best_epoch = 0;
  DarcModel best;

  const metrics::EvalReport& best_report() const { return epochs.at(best_epoch - 1).val; }
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Mini-batch training over split.train with a seeded reshuffle each epoch.
// After every epoch the model is evaluated on split.val and the checkpoint
// with the highest validation AUROC is kept (earliest epoch on ties).
inline TrainResult train(DarcModel& model, const EmbeddingBundle& b, const SplitPlan& split, const TrainConfig& cfg,
                         const EpochCallback& on_epoch = {}) {
  cfg.validate();
  const std::size_t task = cfg.task_index;
  check_compatible(model, b, task);
  if (split.train.empty() || split.val.empty()) throw ConfigError("train: empty train or validation split");
  const int k = static_cast<int>(model.config.n_classes);
  {
    std::vector<bool> seen(k, false);
    for (auto i : split.val) {
      const auto y = b.label(i, task);
      if (y == kMissingLabel) throw ConfigError("train: validation split contains unlabeled samples");
      seen[y] = true;
    }
    for (int c = 0; c < k; ++c) {
      if (!seen[c]) {
        throw ConfigError("train: class " + std::to_string(c) + " is absent from the validation split, AUROC undefined");
      }
    }
  }
  std::vector<int> train_labels;
  for (auto i : split.train) {
    const auto y = b.label(i, task);
    if (y == kMissingLabel) throw ConfigError("train: training split contains unlabeled samples");
    train_labels.push_back(y);
  }
  const std::vector<double> weights =
      cfg.class_weighting ? inverse_frequency_weights(train_labels, k) : std::vector<double>{};

  for (auto& p : model.parameters()) {
    Tensor t = p.tensor;
    t.set_requires_grad(true);
  }
  model.zero_grad();
  Adam adam(model.parameters());
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32), std::uint32_t{0x53485546}};
  std::mt19937_64 rng(seq);
  std::vector<std::size_t> order = split.train;

  TrainResult result;
  double best_auroc = -1.0;
  for (std::uint32_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const auto chunk = std::span<const std::size_t>(order).subspan(start, std::min<std::size_t>(cfg.batch_size, order.size() - start));
      Batch batch = make_batch(b, chunk, task);
      Graph g;
      Tensor logits = model_forward(g, model, batch.image, batch.text).logits;
      Tensor loss = ops::softmax_cross_entropy(g, logits, batch.labels, weights);
      g.backward(loss);
      adam.step(cfg.learning_rate, cfg.weight_decay);
      model.zero_grad();
      loss_sum += loss.item() * static_cast<double>(chunk.size());
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.val = evaluate(model, b, split.val, task);
    if (rec.val.auroc > best_auroc) {
      best_auroc = rec.val.auroc;
      result.best_epoch = epoch;
      result.best = model.clone();
    }
    if (on_epoch) on_epoch(rec);
    result.epochs.push_back(std::move(rec));
  }
  return result;
}

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single run
};

inline MetricSummary summarize(std::span<const double> xs) {
  MetricSummary s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double shift_mean = 0.0;
    for (double x : xs) shift_mean += x - xs[0];
    shift_mean /= static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - xs[0] - shift_mean) * (x - xs[0] - shift_mean);
    s.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return s;
}

struct RepeatSummary {
  std::vector<std::uint64_t> seeds;
  std::vector<TrainResult> runs;
  MetricSummary accuracy, macro_f1, auroc;
};

using ModelFactory = std::function<DarcModel(std::uint64_t seed)>;

// Trains with seeds base_seed .. base_seed + n - 1 (model init and shuffling
// both follow the run seed; the split is shared) and summarizes the best
// validation report of each run.
inline RepeatSummary repeat_runs(std::uint32_t n, std::uint64_t base_seed, const ModelFactory& make_model,
                                 const EmbeddingBundle& b, const SplitPlan& split, const TrainConfig& cfg,
                                 const std::function<void(std::uint32_t run, const EpochRecord&)>& on_epoch = {}) {
  if (n < 1) throw ConfigError("repeat_runs: need at least one run");
  RepeatSummary out;
  std::vector<double> acc, f1, auc;
  for (std::uint32_t r = 0; r < n; ++r) {
    const std::uint64_t seed = base_seed + r;
    TrainConfig run_cfg = cfg;
    run_cfg.seed = seed;
    DarcModel model = make_model(seed);
    EpochCallback cb;
    if (on_epoch) cb = [&, r](const EpochRecord& e) { on_epoch(r, e); };
    TrainResult res = train(model, b, split, run_cfg, cb);
    const auto& best = res.best_report();
    acc.push_back(best.accuracy);
    f1.push_back(best.macro_f1);
    auc.push_back(best.auroc);
    out.seeds.push_back(seed);
    out.runs.push_back(std::move(res));
  }
  out.accuracy = summarize(acc);
  out.macro_f1 = summarize(f1);
  out.auroc = summarize(auc);
  return out;
}

}  // namespace darc
