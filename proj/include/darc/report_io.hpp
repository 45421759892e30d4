#pragma once

// Text encodings of evaluation output: JSON reports, ROC CSV and the
// per-epoch metrics log.

#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "darc/metrics.hpp"
#include "darc/training.hpp"

namespace darc {

inline nlohmann::json report_to_json(const metrics::EvalReport& r) {
  nlohmann::json j;
  j["n"] = r.n;
  j["accuracy"] = r.accuracy;
  j["macro_f1"] = r.macro_f1;
  j["auroc"] = r.auroc;
  j["confusion"] = r.confusion;
  nlohmann::json pc = nlohmann::json::array();
  for (const auto& s : r.per_class) {
    pc.push_back({{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}, {"support", s.support}});
  }
  j["per_class"] = pc;
  return j;
}

inline metrics::EvalReport report_from_json(const nlohmann::json& j) {
  metrics::EvalReport r;
  r.n = j.at("n").get<std::size_t>();
  r.accuracy = j.at("accuracy").get<double>();
  r.macro_f1 = j.at("macro_f1").get<double>();
  r.auroc = j.at("auroc").get<double>();
  r.confusion = j.at("confusion").get<std::vector<std::vector<std::uint64_t>>>();
  for (const auto& c : j.at("per_class")) {
    r.per_class.push_back({c.at("precision").get<double>(), c.at("recall").get<double>(), c.at("f1").get<double>(),
                           c.at("support").get<std::uint64_t>()});
  }
  return r;
}

inline std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string roc_to_csv(const std::vector<metrics::RocPoint>& pts) {
  std::string out = "threshold,fpr,tpr\n";
  for (const auto& p : pts) out += format_real(p.threshold) + "," + format_real(p.fpr) + "," + format_real(p.tpr) + "\n";
  return out;
}

inline std::vector<metrics::RocPoint> roc_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  if (line != "threshold,fpr,tpr") throw FormatError(FormatErrorKind::kSchemaMismatch, "ROC CSV header mismatch");
  std::vector<metrics::RocPoint> pts;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string a, b, c;
    if (!std::getline(row, a, ',') || !std::getline(row, b, ',') || !std::getline(row, c)) {
      throw FormatError(FormatErrorKind::kSchemaMismatch, "ROC CSV row malformed: " + line);
    }
    pts.push_back({std::stod(b), std::stod(c), std::stod(a)});
  }
  return pts;
}

inline std::string epoch_log_line(std::uint32_t run, std::uint64_t seed, const EpochRecord& e) {
  nlohmann::json j;
  j["run"] = run;
  j["seed"] = seed;
  j["epoch"] = e.epoch;
  j["train_loss"] = e.train_loss;
  j["val_accuracy"] = e.val.accuracy;
  j["val_macro_f1"] = e.val.macro_f1;
  j["val_auroc"] = e.val.auroc;
  return j.dump();
}

}  // namespace darc
