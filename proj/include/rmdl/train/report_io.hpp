#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "rmdl/io/files.hpp"
#include "rmdl/train/metrics.hpp"
#include "rmdl/train/trainer.hpp"

namespace rmdl {

inline std::string format_threshold(double t) { return std::isinf(t) ? "inf" : format_double(t); }

inline std::string per_slide_csv(const EvalReport& r) {
  std::string out = "id,true,pred,p0,p1,p2\n";
  for (const auto& s : r.per_slide) {
    out += s.id + "," + std::to_string(to_int(s.truth)) + "," + std::to_string(to_int(s.predicted));
    for (double p : s.probs) out += "," + format_double(p);
    out += "\n";
  }
  return out;
}

inline std::string roc_csv(const RocCurve& c) {
  std::string out = "fpr,tpr,threshold\n";
  for (const auto& p : c.points) out += format_double(p.fpr) + "," + format_double(p.tpr) + "," + format_threshold(p.threshold) + "\n";
  return out;
}

inline std::string confusion_csv(const Confusion& c) {
  std::string out = "true\\pred";
  for (auto g : kAllGrades) out += "," + std::string(grade_name(g));
  out += "\n";
  for (auto t : kAllGrades) {
    out += std::string(grade_name(t));
    for (auto p : kAllGrades) out += "," + std::to_string(c[to_index(t)][to_index(p)]);
    out += "\n";
  }
  return out;
}

inline std::string loss_csv(const std::vector<TrainStep>& curve) {
  std::string out = "iteration,lr,loss\n";
  for (const auto& s : curve) out += std::to_string(s.iteration) + "," + format_double(s.lr) + "," + format_double(s.loss) + "\n";
  return out;
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json auc = nlohmann::json::object(), confusion = nlohmann::json::array(), slides = nlohmann::json::array();
  for (auto g : kAllGrades) {
    const auto& a = r.roc[to_index(g)].auc;
    auc[std::string(grade_name(g))] = a ? nlohmann::json(*a) : nlohmann::json(nullptr);
  }
  for (const auto& row : r.confusion) confusion.push_back(row);
  for (const auto& s : r.per_slide)
    slides.push_back({{"id", s.id}, {"true", to_int(s.truth)}, {"pred", to_int(s.predicted)}, {"probs", s.probs}});
  return {{"format", "rmdl-report"}, {"model", r.model},         {"slides", r.per_slide.size()},
          {"accuracy", r.accuracy},  {"avg_score", r.avg_score}, {"confusion", confusion},
          {"auc", auc},              {"per_slide", slides}};
}

inline EvalReport eval_report_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "rmdl-report") throw ConfigError("not an evaluation report (format != rmdl-report)");
  std::vector<SlidePrediction> slides;
  for (const auto& s : j.at("per_slide")) {
    SlidePrediction p{s.at("id").get<std::string>(), grade_from_int(s.at("true").get<int>()),
                      grade_from_int(s.at("pred").get<int>()), s.at("probs").get<std::array<double, kNumGrades>>()};
    slides.push_back(std::move(p));
  }
  return make_report(j.at("model").get<std::string>(), std::move(slides));
}

inline void write_eval_report(const std::filesystem::path& dir, const EvalReport& r) {
  write_file_atomic(dir / "per_slide.csv", per_slide_csv(r));
  for (auto g : kAllGrades) write_file_atomic(dir / ("roc_" + std::string(grade_name(g)) + ".csv"), roc_csv(r.roc[to_index(g)]));
  write_file_atomic(dir / "confusion.csv", confusion_csv(r.confusion));
  write_file_atomic(dir / "report.json", to_json(r).dump(2) + "\n");
}

/// Markdown table, one row per report, highest accuracy first (ties keep input order).
inline std::string render_report_table(std::vector<std::pair<std::string, EvalReport>> named) {
  std::stable_sort(named.begin(), named.end(),
                   [](const auto& a, const auto& b) { return a.second.accuracy > b.second.accuracy; });
  std::string out = "| Report | Head | Slides | Average score | Accuracy (%) | AUC normal | AUC dysplasia | AUC cancer |\n";
  out += "|---|---|---|---|---|---|---|---|\n";
  auto fixed = [](double v, int digits) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, digits);
    return std::string(buf, r.ptr);
  };
  for (const auto& [name, r] : named) {
    out += "| " + name + " | " + r.model + " | " + std::to_string(r.per_slide.size()) + " | " + fixed(r.avg_score, 3) +
           " | " + fixed(100.0 * r.accuracy, 1);
    for (const auto& c : r.roc) out += " | " + (c.auc ? fixed(*c.auc, 3) : std::string("n/a"));
    out += " |\n";
  }
  return out;
}

}  // namespace rmdl
