#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "darc/error.hpp"

namespace darc::metrics {

struct ClassStats {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::uint64_t support = 0;
};

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;
};

struct EvalReport {
  std::size_t n = 0;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double auroc = 0.0;
  std::vector<ClassStats> per_class;
  std::vector<std::vector<std::uint64_t>> confusion;  // [true][predicted]
  std::optional<std::vector<RocPoint>> roc;

  bool operator==(const EvalReport& o) const {
    auto same_stats = [](const ClassStats& a, const ClassStats& b) {
      return a.precision == b.precision && a.recall == b.recall && a.f1 == b.f1 && a.support == b.support;
    };
    if (n != o.n || accuracy != o.accuracy || macro_f1 != o.macro_f1 || auroc != o.auroc ||
        confusion != o.confusion || per_class.size() != o.per_class.size())
      return false;
    for (std::size_t i = 0; i < per_class.size(); ++i)
      if (!same_stats(per_class[i], o.per_class[i])) return false;
    return true;
  }
};

inline void require_nonempty(std::size_t n, std::size_t m, const char* what) {
  if (n == 0) throw ContractError(std::string(what) + ": empty input");
  if (n != m) throw DimensionError(std::string(what) + ": predictions and labels differ in length");
}

inline double accuracy(std::span<const int> preds, std::span<const int> labels) {
  require_nonempty(preds.size(), labels.size(), "accuracy");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hit += preds[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(preds.size());
}

inline std::vector<std::vector<std::uint64_t>> confusion_matrix(std::span<const int> preds, std::span<const int> labels,
                                                                 int n_classes) {
  require_nonempty(preds.size(), labels.size(), "confusion_matrix");
  std::vector<std::vector<std::uint64_t>> cm(n_classes, std::vector<std::uint64_t>(n_classes, 0));
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= n_classes || preds[i] < 0 || preds[i] >= n_classes) {
      throw ContractError("confusion_matrix: class index out of range at position " + std::to_string(i));
    }
    ++cm[labels[i]][preds[i]];
  }
  return cm;
}

// Per-class precision/recall/F1; 0 wherever the denominator is 0.
inline std::vector<ClassStats> class_stats(const std::vector<std::vector<std::uint64_t>>& cm) {
  const std::size_t k = cm.size();
  std::vector<ClassStats> out(k);
  for (std::size_t c = 0; c < k; ++c) {
    std::uint64_t tp = cm[c][c], fp = 0, fn = 0;
    for (std::size_t j = 0; j < k; ++j) {
      if (j == c) continue;
      fp += cm[j][c];
      fn += cm[c][j];
    }
    auto& s = out[c];
    s.support = tp + fn;
    s.precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    s.recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  }
  return out;
}

inline double macro_f1(std::span<const int> preds, std::span<const int> labels, int n_classes) {
  const auto stats = class_stats(confusion_matrix(preds, labels, n_classes));
  double acc = 0.0;
  for (const auto& s : stats) acc += s.f1;
  return acc / static_cast<double>(stats.size());
}

// Mann-Whitney estimate with tied scores counted as half:
//   (sum of positive ranks - n1(n1+1)/2) / (n1 n0), average ranks for ties.
inline double auroc_binary(std::span<const double> scores, std::span<const int> labels) {
  require_nonempty(scores.size(), labels.size(), "auroc_binary");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double n_pos = 0.0, n_neg = 0.0, rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    // ranks i+1 .. j, averaged
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t) {
      if (labels[order[t]] == 1) {
        n_pos += 1.0;
        rank_sum += avg_rank;
      } else {
        n_neg += 1.0;
      }
    }
    i = j;
  }
  if (n_pos == 0.0 || n_neg == 0.0) {
    throw UndefinedMetricError("AUROC is undefined: only " + std::string(n_pos == 0.0 ? "negative" : "positive") +
                               " samples present");
  }
  return (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

// Unweighted mean of one-vs-rest AUROCs; probabilities are row-major
// [n x n_classes].
inline double auroc_macro_ovr(std::span<const double> probabilities, std::span<const int> labels, int n_classes) {
  const std::size_t n = labels.size();
  if (probabilities.size() != n * static_cast<std::size_t>(n_classes)) {
    throw DimensionError("auroc_macro_ovr: probability matrix does not match labels");
  }
  std::vector<std::uint64_t> count(n_classes, 0);
  for (int y : labels) {
    if (y < 0 || y >= n_classes) throw ContractError("auroc_macro_ovr: label out of range");
    ++count[y];
  }
  for (int c = 0; c < n_classes; ++c) {
    if (count[c] == 0 || count[c] == n) {
      throw UndefinedMetricError("one-vs-rest AUROC is undefined for class " + std::to_string(c) +
                                 (count[c] == 0 ? ": class absent" : ": no other classes present"));
    }
  }
  double acc = 0.0;
  std::vector<double> s(n);
  std::vector<int> y(n);
  for (int c = 0; c < n_classes; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = probabilities[i * n_classes + c];
      y[i] = labels[i] == c ? 1 : 0;
    }
    acc += auroc_binary(s, y);
  }
  return acc / static_cast<double>(n_classes);
}

// ROC operating points for thresholds taken at each distinct score in
// descending order (predict positive when score >= threshold), starting
// from (0, 0) at +inf.
inline std::vector<RocPoint> roc_points(std::span<const double> scores, std::span<const int> labels) {
  require_nonempty(scores.size(), labels.size(), "roc_points");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double n_pos = 0.0, n_neg = 0.0;
  for (int y : labels) (y == 1 ? n_pos : n_neg) += 1.0;
  if (n_pos == 0.0 || n_neg == 0.0) throw UndefinedMetricError("ROC curve is undefined with a single class");
  std::vector<RocPoint> pts{{0.0, 0.0, std::numeric_limits<double>::infinity()}};
  double tp = 0.0, fp = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    const double thr = scores[order[i]];
    while (i < order.size() && scores[order[i]] == thr) {
      (labels[order[i]] == 1 ? tp : fp) += 1.0;
      ++i;
    }
    pts.push_back({fp / n_neg, tp / n_pos, thr});
  }
  return pts;
}

inline double trapezoid_area(std::span<const RocPoint> pts) {
  double area = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i)
    area += (pts[i].fpr - pts[i - 1].fpr) * (pts[i].tpr + pts[i - 1].tpr) * 0.5;
  return area;
}

// Full report from class probabilities [n x n_classes]. Predictions are the
// argmax (lowest index on ties). Binary tasks score by the class-1
// probability; multiclass tasks use macro one-vs-rest AUROC.
inline EvalReport make_report(std::span<const double> probabilities, std::span<const int> labels, int n_classes,
                              bool with_roc = false) {
  const std::size_t n = labels.size();
  if (n == 0) throw ContractError("make_report: empty evaluation set");
  if (probabilities.size() != n * static_cast<std::size_t>(n_classes)) {
    throw DimensionError("make_report: probability matrix does not match labels");
  }
  std::vector<int> preds(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = probabilities.data() + i * n_classes;
    preds[i] = static_cast<int>(std::max_element(row, row + n_classes) - row);
  }
  EvalReport r;
  r.n = n;
  r.confusion = confusion_matrix(preds, labels, n_classes);
  r.per_class = class_stats(r.confusion);
  r.accuracy = accuracy(preds, labels);
  double f1 = 0.0;
  for (const auto& s : r.per_class) f1 += s.f1;
  r.macro_f1 = f1 / static_cast<double>(n_classes);
  if (n_classes == 2) {
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) s[i] = probabilities[i * 2 + 1];
    r.auroc = auroc_binary(s, labels);
    if (with_roc) r.roc = roc_points(s, labels);
  } else {
    r.auroc = auroc_macro_ovr(probabilities, labels, n_classes);
  }
  return r;
}

}  // namespace darc::metrics
