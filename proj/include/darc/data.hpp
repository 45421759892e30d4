#pragma once

// Embedding bundles (DEB1), stratified splits and the class-conditional
// synthetic generator.
//
// DEB1 layout (little-endian): "DEB1", u16 version, u32 n_samples,
// u32 img_tokens, u32 img_dim, u32 txt_tokens, u32 txt_dim, u32 n_tasks,
// per task (u16 name length, UTF-8 name, u32 n_classes), then image values
// (f32, n x T_i x d_img), text values (f32, n x T_t x d_txt) and labels
// (i32, n x n_tasks, -1 = missing).

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "darc/serialize.hpp"

namespace darc {

inline constexpr std::string_view kBundleMagic = "DEB1";
inline constexpr std::uint16_t kBundleVersion = 1;
inline constexpr std::int32_t kMissingLabel = -1;

struct TaskSpec {
  std::string name;
  std::vector<std::string> class_names;
  // Reference label counts per class.
  std::vector<std::uint32_t> reference_counts;

  std::uint32_t n_classes() const { return static_cast<std::uint32_t>(class_names.size()); }

  // Class priors as normalized reference counts.
  std::vector<double> priors() const {
    const double total = std::accumulate(reference_counts.begin(), reference_counts.end(), 0.0);
    std::vector<double> p;
    for (auto c : reference_counts) p.push_back(c / total);
    return p;
  }
};

// The four reference tasks.
inline const std::vector<TaskSpec>& reference_tasks() {
  static const std::vector<TaskSpec> tasks{
      {"hate", {"no_hate", "hate"}, {2313, 2243}},
      {"target", {"undirected", "individual", "community", "organization"}, {694, 224, 1047, 268}},
      {"stance", {"neutral", "support", "oppose"}, {1312, 1718, 1526}},
      {"humor", {"no_humor", "humor"}, {1477, 3179}},
  };
  return tasks;
}

inline const TaskSpec& find_task_spec(const std::string& name) {
  std::string lower;
  for (char c : name) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  for (const auto& t : reference_tasks())
    if (t.name == lower) return t;
  throw ConfigError("unknown task \"" + name + "\" (expected hate, target, stance or humor)");
}

struct BundleTask {
  std::string name;
  std::uint32_t n_classes = 0;
  bool operator==(const BundleTask&) const = default;
};

struct EmbeddingBundle {
  std::uint32_t n_samples = 0;
  std::uint32_t img_tokens = 1;
  std::uint32_t img_dim = 0;
  std::uint32_t txt_tokens = 1;
  std::uint32_t txt_dim = 0;
  std::vector<BundleTask> tasks;
  std::vector<float> image;          // n x T_i x d_img
  std::vector<float> text;           // n x T_t x d_txt
  std::vector<std::int32_t> labels;  // n x n_tasks

  std::size_t img_stride() const { return std::size_t{img_tokens} * img_dim; }
  std::size_t txt_stride() const { return std::size_t{txt_tokens} * txt_dim; }

  std::int32_t label(std::size_t sample, std::size_t task) const { return labels[sample * tasks.size() + task]; }

  // Index of the task called `name` (case-insensitive), or a numeric index.
  std::size_t task_index(const std::string& name) const {
    auto lower = [](std::string s) {
      for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      return s;
    };
    for (std::size_t i = 0; i < tasks.size(); ++i)
      if (lower(tasks[i].name) == lower(name)) return i;
    if (!name.empty() && std::all_of(name.begin(), name.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
      const auto i = std::stoul(name);
      if (i < tasks.size()) return i;
    }
    throw ConfigError("bundle has no task \"" + name + "\"");
  }

  bool operator==(const EmbeddingBundle&) const = default;
};

// Checks sizes, finiteness and label ranges.
inline void validate_bundle(const EmbeddingBundle& b) {
  const std::size_t n = b.n_samples;
  if (b.image.size() != n * b.img_stride() || b.text.size() != n * b.txt_stride() ||
      b.labels.size() != n * b.tasks.size()) {
    throw FormatError(FormatErrorKind::kSchemaMismatch, "bundle arrays do not match the declared sizes");
  }
  for (float v : b.image)
    if (!std::isfinite(v)) throw FormatError(FormatErrorKind::kNonFinite, "image embeddings contain NaN/Inf");
  for (float v : b.text)
    if (!std::isfinite(v)) throw FormatError(FormatErrorKind::kNonFinite, "text embeddings contain NaN/Inf");
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t t = 0; t < b.tasks.size(); ++t) {
      const auto y = b.label(i, t);
      if (y != kMissingLabel && (y < 0 || static_cast<std::uint32_t>(y) >= b.tasks[t].n_classes)) {
        throw FormatError(FormatErrorKind::kLabelOutOfRange,
                          "sample " + std::to_string(i) + " task " + b.tasks[t].name + " has label " + std::to_string(y) +
                              " outside [0, " + std::to_string(b.tasks[t].n_classes) + ")");
      }
    }
}

inline std::vector<std::uint8_t> encode_bundle(const EmbeddingBundle& b) {
  validate_bundle(b);
  io::ByteWriter w;
  w.bytes(kBundleMagic);
  w.u16(kBundleVersion);
  w.u32(b.n_samples);
  w.u32(b.img_tokens);
  w.u32(b.img_dim);
  w.u32(b.txt_tokens);
  w.u32(b.txt_dim);
  w.u32(static_cast<std::uint32_t>(b.tasks.size()));
  for (const auto& t : b.tasks) {
    w.str16(t.name);
    w.u32(t.n_classes);
  }
  for (float v : b.image) w.f32(v);
  for (float v : b.text) w.f32(v);
  for (auto y : b.labels) w.i32(y);
  return w.take();
}

inline EmbeddingBundle decode_bundle(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes, "bundle");
  io::expect_magic(r, kBundleMagic, "bundle");
  const auto version = r.u16();
  if (version != kBundleVersion) {
    throw FormatError(FormatErrorKind::kUnsupportedVersion, "bundle version " + std::to_string(version));
  }
  EmbeddingBundle b;
  b.n_samples = r.u32();
  b.img_tokens = r.u32();
  b.img_dim = r.u32();
  b.txt_tokens = r.u32();
  b.txt_dim = r.u32();
  const auto n_tasks = r.u32();
  if (n_tasks > r.remaining()) throw FormatError(FormatErrorKind::kTruncated, "bundle: task table exceeds file size");
  for (std::uint32_t t = 0; t < n_tasks; ++t) {
    BundleTask task;
    task.name = r.str16();
    task.n_classes = r.u32();
    b.tasks.push_back(std::move(task));
  }
  const std::uint64_t n_img = std::uint64_t{b.n_samples} * b.img_tokens * b.img_dim;
  const std::uint64_t n_txt = std::uint64_t{b.n_samples} * b.txt_tokens * b.txt_dim;
  const std::uint64_t n_lab = std::uint64_t{b.n_samples} * n_tasks;
  if ((n_img + n_txt + n_lab) * 4 > r.remaining()) {
    throw FormatError(FormatErrorKind::kTruncated, "bundle: payload needs " + std::to_string((n_img + n_txt + n_lab) * 4) +
                                                       " bytes, " + std::to_string(r.remaining()) + " present");
  }
  b.image.resize(n_img);
  for (auto& v : b.image) v = r.f32();
  b.text.resize(n_txt);
  for (auto& v : b.text) v = r.f32();
  b.labels.resize(n_lab);
  for (auto& y : b.labels) y = r.i32();
  r.expect_end();
  validate_bundle(b);
  return b;
}

inline void write_bundle(const EmbeddingBundle& b, const std::string& path) { io::write_file(path, encode_bundle(b)); }

inline EmbeddingBundle read_bundle(const std::string& path) { return decode_bundle(io::read_file(path)); }

struct SplitPlan {
  std::vector<std::size_t> train, val, test;
  std::uint64_t seed = 0;
  std::string strategy;
};

// Per-class seeded shuffle, then each class is cut by largest-remainder
// rounding of fractions = {train, val[, test]}. Samples with a missing
// label for `task` are excluded.
inline SplitPlan stratified_split(const EmbeddingBundle& b, std::size_t task, std::span<const double> fractions,
                                  std::uint64_t seed) {
  if (task >= b.tasks.size()) throw ConfigError("stratified_split: task index out of range");
  if (fractions.size() < 2 || fractions.size() > 3) throw ConfigError("stratified_split: need 2 or 3 fractions");
  double total = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0)) throw ConfigError("stratified_split: fractions must be non-negative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("stratified_split: fractions must sum to 1");
  const std::size_t n_splits = static_cast<std::size_t>(std::count_if(fractions.begin(), fractions.end(), [](double f) { return f > 0.0; }));

  const std::uint32_t k = b.tasks[task].n_classes;
  std::vector<std::vector<std::size_t>> by_class(k);
  for (std::size_t i = 0; i < b.n_samples; ++i) {
    const auto y = b.label(i, task);
    if (y != kMissingLabel) by_class[static_cast<std::size_t>(y)].push_back(i);
  }
  for (std::uint32_t c = 0; c < k; ++c) {
    if (by_class[c].size() < n_splits) {
      throw ConfigError("stratified_split: class " + std::to_string(c) + " of task " + b.tasks[task].name + " has " +
                        std::to_string(by_class[c].size()) + " samples, fewer than the " + std::to_string(n_splits) +
                        " splits");
    }
  }

  SplitPlan plan;
  plan.seed = seed;
  plan.strategy = "stratified";
  std::vector<std::size_t>* outs[3] = {&plan.train, &plan.val, &plan.test};
  std::mt19937_64 rng(seed);
  for (std::uint32_t c = 0; c < k; ++c) {
    auto& idx = by_class[c];
    std::shuffle(idx.begin(), idx.end(), rng);
    const double n = static_cast<double>(idx.size());
    std::vector<std::size_t> counts(fractions.size());
    std::vector<std::pair<double, std::size_t>> rema;
    std::size_t assigned = 0;
    for (std::size_t s = 0; s < fractions.size(); ++s) {
      const double exact = fractions[s] * n;
      counts[s] = static_cast<std::size_t>(std::floor(exact));
      assigned += counts[s];
      rema.emplace_back(exact - std::floor(exact), s);
    }
    std::stable_sort(rema.begin(), rema.end(), [](auto& a, auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; assigned < idx.size(); ++i, ++assigned) ++counts[rema[i % rema.size()].second];
    std::size_t pos = 0;
    for (std::size_t s = 0; s < fractions.size(); ++s) {
      for (std::size_t j = 0; j < counts[s]; ++j) outs[s]->push_back(idx[pos++]);
    }
  }
  for (auto* o : outs) std::sort(o->begin(), o->end());
  return plan;
}

struct SynthParams {
  std::uint32_t n_samples = 1000;
  std::string task_name = "hate";
  std::vector<double> class_priors;  // empty = task reference priors
  std::uint32_t img_dim = 768;
  std::uint32_t txt_dim = 768;
  std::uint32_t tokens = 1;
  double separation = 4.0;
  std::uint64_t seed = 0;
};

// Label quotas by largest-remainder rounding of n * priors.
inline std::vector<std::uint32_t> class_quotas(std::uint32_t n, std::span<const double> priors) {
  std::vector<std::uint32_t> q(priors.size());
  std::vector<std::pair<double, std::size_t>> rema;
  std::uint32_t assigned = 0;
  for (std::size_t c = 0; c < priors.size(); ++c) {
    const double exact = priors[c] * n;
    q[c] = static_cast<std::uint32_t>(std::floor(exact));
    assigned += q[c];
    rema.emplace_back(exact - std::floor(exact), c);
  }
  std::stable_sort(rema.begin(), rema.end(), [](auto& a, auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++q[rema[i % rema.size()].second];
  return q;
}

// Class c draws image tokens from N(separation * mu_img[c], I) and text
// tokens from N(separation * mu_txt[c], I), where mu are seeded random unit
// directions. Labels follow the priors exactly up to rounding, in shuffled
// order.
inline EmbeddingBundle synth_generate(const SynthParams& p) {
  const TaskSpec& spec = find_task_spec(p.task_name);
  std::vector<double> priors = p.class_priors.empty() ? spec.priors() : p.class_priors;
  if (priors.size() != spec.n_classes()) {
    throw ConfigError("synth: task " + spec.name + " needs " + std::to_string(spec.n_classes()) + " priors");
  }
  double total = 0.0;
  for (double v : priors) {
    if (!(v >= 0.0)) throw ConfigError("synth: priors must be non-negative");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("synth: priors must sum to 1 (got " + std::to_string(total) + ")");
  if (!(p.separation >= 0.0)) throw ConfigError("synth: separation must be >= 0");
  if (p.img_dim == 0 || p.txt_dim == 0 || p.tokens == 0) throw ConfigError("synth: dimensions must be positive");

  std::mt19937_64 rng(p.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto unit = [&](std::uint32_t d) {
    std::vector<double> v(d);
    double ss = 0.0;
    for (auto& x : v) {
      x = normal(rng);
      ss += x * x;
    }
    const double n = std::sqrt(ss);
    for (auto& x : v) x /= n;
    return v;
  };
  const std::uint32_t k = spec.n_classes();
  std::vector<std::vector<double>> mu_img, mu_txt;
  for (std::uint32_t c = 0; c < k; ++c) {
    mu_img.push_back(unit(p.img_dim));
    mu_txt.push_back(unit(p.txt_dim));
  }

  std::vector<std::int32_t> labels;
  const auto quotas = class_quotas(p.n_samples, priors);
  for (std::uint32_t c = 0; c < k; ++c) labels.insert(labels.end(), quotas[c], static_cast<std::int32_t>(c));
  std::shuffle(labels.begin(), labels.end(), rng);

  EmbeddingBundle b;
  b.n_samples = p.n_samples;
  b.img_tokens = b.txt_tokens = p.tokens;
  b.img_dim = p.img_dim;
  b.txt_dim = p.txt_dim;
  b.tasks = {{spec.name, k}};
  b.labels = labels;
  b.image.reserve(std::size_t{p.n_samples} * b.img_stride());
  b.text.reserve(std::size_t{p.n_samples} * b.txt_stride());
  for (std::uint32_t i = 0; i < p.n_samples; ++i) {
    const auto c = static_cast<std::size_t>(labels[i]);
    for (std::uint32_t t = 0; t < p.tokens; ++t)
      for (std::uint32_t j = 0; j < p.img_dim; ++j)
        b.image.push_back(static_cast<float>(p.separation * mu_img[c][j] + normal(rng)));
    for (std::uint32_t t = 0; t < p.tokens; ++t)
      for (std::uint32_t j = 0; j < p.txt_dim; ++j)
        b.text.push_back(static_cast<float>(p.separation * mu_txt[c][j] + normal(rng)));
  }
  return b;
}

}  // namespace darc
