#pragma once

// Threshold-free detection metrics over frame scores. Abnormal is the positive
// class and higher scores mean more anomalous.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "maad/io.hpp"
#include "maad/simdata.hpp"

namespace maad::metrics {

// Evaluation needs both classes.
class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct LabeledScores {
  std::vector<double> scores;
  std::vector<std::uint8_t> positive;  // 1 = abnormal

  std::size_t size() const { return scores.size(); }
  std::size_t positives() const { return static_cast<std::size_t>(std::count(positive.begin(), positive.end(), 1)); }
  std::size_t negatives() const { return size() - positives(); }

  void push_back(double s, bool is_positive) {
    scores.push_back(s);
    positive.push_back(is_positive ? 1 : 0);
  }
};

// Drops transition frames; throws when nothing is left.
inline LabeledScores filter_ignore(std::span<const double> scores, std::span<const FrameLabel> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("filter_ignore: scores and labels differ in length");
  LabeledScores out;
  for (std::size_t k = 0; k < scores.size(); ++k) {
    if (labels[k].state == FrameState::transition) continue;
    out.push_back(scores[k], labels[k].state == FrameState::abnormal);
  }
  if (out.size() == 0) throw MetricError("no evaluable frames");
  return out;
}

namespace detail {

struct Step {
  std::size_t tp = 0;
  std::size_t fp = 0;
};

// Cumulative (tp, fp) after each distinct threshold, from the highest score
// down. Equal scores form a single step.
inline std::vector<Step> threshold_steps(const LabeledScores& s) {
  if (s.scores.size() != s.positive.size()) throw std::invalid_argument("scores and labels differ in length");
  for (double v : s.scores)
    if (std::isnan(v)) throw MetricError("NaN score");
  std::vector<std::size_t> order(s.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s.scores[a] > s.scores[b]; });
  std::vector<Step> steps;
  Step cur;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (s.positive[order[k]])
      ++cur.tp;
    else
      ++cur.fp;
    if (k + 1 == order.size() || s.scores[order[k + 1]] != s.scores[order[k]]) steps.push_back(cur);
  }
  return steps;
}

inline void require_both(const LabeledScores& s, const char* what) {
  if (s.positives() == 0 || s.negatives() == 0) throw MetricError(std::string(what) + ": needs both classes");
}

}  // namespace detail

inline double auroc(const LabeledScores& s) {
  detail::require_both(s, "auroc");
  const double P = static_cast<double>(s.positives()), N = static_cast<double>(s.negatives());
  double area = 0.0, prev_tpr = 0.0, prev_fpr = 0.0;
  for (const auto& st : detail::threshold_steps(s)) {
    const double tpr = st.tp / P, fpr = st.fp / N;
    area += (fpr - prev_fpr) * (tpr + prev_tpr) * 0.5;
    prev_tpr = tpr;
    prev_fpr = fpr;
  }
  return area;
}

inline LabeledScores negated(const LabeledScores& s) {
  LabeledScores out = s;
  for (double& v : out.scores) v = -v;
  for (auto& p : out.positive) p = p ? 0 : 1;
  return out;
}

// Step-wise area under precision-recall: each recall increment is weighted by
// the best precision achieved at that recall or beyond.
inline double aupr(const LabeledScores& s) {
  if (s.positives() == 0) throw MetricError("aupr: no positives");
  const double P = static_cast<double>(s.positives());
  const auto steps = detail::threshold_steps(s);
  std::vector<double> precision(steps.size());
  for (std::size_t k = 0; k < steps.size(); ++k)
    precision[k] = static_cast<double>(steps[k].tp) / static_cast<double>(steps[k].tp + steps[k].fp);
  for (std::size_t k = steps.size() - 1; k-- > 0;) precision[k] = std::max(precision[k], precision[k + 1]);
  double area = 0.0, prev_recall = 0.0;
  for (std::size_t k = 0; k < steps.size(); ++k) {
    const double recall = steps[k].tp / P;
    area += (recall - prev_recall) * precision[k];
    prev_recall = recall;
  }
  return area;
}

inline double aupr_abnormal(const LabeledScores& s) { return aupr(s); }
inline double aupr_normal(const LabeledScores& s) { return aupr(negated(s)); }

// Smallest false positive rate over thresholds whose true positive rate is >= 0.95.
inline double fpr_at_95_tpr(const LabeledScores& s) {
  detail::require_both(s, "fpr_at_95_tpr");
  const double P = static_cast<double>(s.positives()), N = static_cast<double>(s.negatives());
  for (const auto& st : detail::threshold_steps(s))
    if (st.tp / P >= 0.95) return st.fp / N;
  return 1.0;
}

struct FrameRecord {
  double score = 0.0;
  FrameLabel label;
};

// Normal frames plus frames of `target` only; nullopt when the class is absent.
inline std::optional<double> per_class_auroc(std::span<const FrameRecord> frames, AnomalyClass target,
                                             std::size_t* abnormal_count = nullptr) {
  LabeledScores s;
  for (const FrameRecord& f : frames) {
    if (f.label.state == FrameState::normal)
      s.push_back(f.score, false);
    else if (f.label.state == FrameState::abnormal && f.label.anomaly_class == target)
      s.push_back(f.score, true);
  }
  if (abnormal_count != nullptr) *abnormal_count = s.positives();
  if (s.positives() == 0 || s.negatives() == 0) return std::nullopt;
  return auroc(s);
}

inline LabeledScores overall(std::span<const FrameRecord> frames) {
  LabeledScores s;
  for (const FrameRecord& f : frames)
    if (f.label.state != FrameState::transition) s.push_back(f.score, f.label.state == FrameState::abnormal);
  if (s.size() == 0) throw MetricError("no evaluable frames");
  return s;
}

struct Headline {
  double auroc = 0.0;
  double aupr_abnormal = 0.0;
  double aupr_normal = 0.0;
  double fpr_at_95_tpr = 0.0;
};

inline Headline headline(const LabeledScores& s) {
  return {auroc(s), aupr_abnormal(s), aupr_normal(s), fpr_at_95_tpr(s)};
}

struct ClassRow {
  AnomalyClass anomaly_class = AnomalyClass::none;
  std::vector<double> auroc;  // one per seed
  std::size_t abnormal_frames = 0;
};

struct Report {
  std::vector<Headline> seeds;
  std::vector<ClassRow> classes;  // only classes present in the data
  std::vector<std::string> notices;
};

inline double mean(std::span<const double> v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Sample standard deviation; 0 for a single value.
inline double stddev(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

// One entry per seed, each the frame records of all test scenes.
inline Report evaluate(const std::vector<std::vector<FrameRecord>>& per_seed) {
  if (per_seed.empty()) throw std::invalid_argument("evaluate: no score sets");
  Report r;
  for (const auto& frames : per_seed) r.seeds.push_back(headline(overall(frames)));
  for (AnomalyClass c : kAnomalyClasses) {
    ClassRow row{c, {}, 0};
    for (const auto& frames : per_seed) {
      const auto a = per_class_auroc(frames, c, &row.abnormal_frames);
      if (a) row.auroc.push_back(*a);
    }
    if (row.auroc.size() == per_seed.size())
      r.classes.push_back(std::move(row));
    else
      r.notices.push_back("class '" + std::string(to_string(c)) + "' absent from the test data; skipped");
  }
  return r;
}

inline void write_report(const Report& r, const std::string& path) {
  auto out = open_for_write(path);
  const auto column = [&](auto field) {
    std::vector<double> v;
    for (const Headline& h : r.seeds) v.push_back(h.*field);
    return v;
  };
  out << "metric,mean,std,seeds\n";
  const std::pair<const char*, double Headline::*> rows[] = {{"auroc", &Headline::auroc},
                                                            {"aupr_abnormal", &Headline::aupr_abnormal},
                                                            {"aupr_normal", &Headline::aupr_normal},
                                                            {"fpr_at_95_tpr", &Headline::fpr_at_95_tpr}};
  for (const auto& [name, field] : rows) {
    const auto v = column(field);
    out << name << ',' << format_double(mean(v)) << ',' << format_double(stddev(v)) << ',' << v.size() << '\n';
  }
  out << '\n' << "class,auroc_mean,auroc_std,abnormal_frames\n";
  for (const ClassRow& c : r.classes)
    out << to_string(c.anomaly_class) << ',' << format_double(mean(c.auroc)) << ',' << format_double(stddev(c.auroc))
        << ',' << c.abnormal_frames << '\n';
  if (!out) throw DataError("failed writing report '" + path + "'");
}

// ROC curve points (fpr, tpr) for plotting, starting at (0, 0).
inline std::vector<std::pair<double, double>> roc_points(const LabeledScores& s) {
  detail::require_both(s, "roc_points");
  const double P = static_cast<double>(s.positives()), N = static_cast<double>(s.negatives());
  std::vector<std::pair<double, double>> pts{{0.0, 0.0}};
  for (const auto& st : detail::threshold_steps(s)) pts.emplace_back(st.fp / N, st.tp / P);
  return pts;
}

}  // namespace maad::metrics
