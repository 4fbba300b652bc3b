#pragma once

// Classification metrics and probability-averaging ensembles.
//
// Conventions:
//  - predicted class = argmax of the probability row, ties to the lowest index
//  - precision/recall/F1 are 0 when their denominator is 0; the class carries
//    a flag naming the undefined quantity
//  - AUC is one-vs-rest per class via the Mann–Whitney statistic with mid
//    ranks for ties; classes lacking positives or negatives are skipped in the
//    macro mean and flagged

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "egmae/errors.hpp"

namespace egmae {

struct PredictionSet {
  std::size_t num_classes = 0;
  std::vector<double> probabilities;  // row-major N×C
  std::vector<std::size_t> labels;
  std::vector<std::uint64_t> ids;     // sample ids, same order as rows
  std::vector<std::string> class_names;

  std::size_t size() const { return labels.size(); }
  const double* row(std::size_t n) const { return probabilities.data() + n * num_classes; }

  void validate(double tol = 1e-5) const {
    if (num_classes == 0) throw DimensionError("prediction set has no classes");
    if (probabilities.size() != labels.size() * num_classes) {
      throw DimensionError("prediction set: " + std::to_string(probabilities.size()) + " probabilities for " +
                           std::to_string(labels.size()) + " rows of " + std::to_string(num_classes));
    }
    if (!ids.empty() && ids.size() != labels.size()) throw DimensionError("prediction set: id count mismatch");
    for (std::size_t n = 0; n < size(); ++n) {
      if (labels[n] >= num_classes) throw IndexError("prediction set: label out of range at row " + std::to_string(n));
      double s = 0.0;
      for (std::size_t c = 0; c < num_classes; ++c) s += row(n)[c];
      if (std::abs(s - 1.0) > tol) throw ContractError("prediction set: row " + std::to_string(n) + " sums to " + std::to_string(s));
    }
  }
};

inline std::size_t argmax_row(const double* row, std::size_t C) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < C; ++c)
    if (row[c] > row[best]) best = c;
  return best;
}

/// Elementwise (a + b)/2 over aligned prediction sets.
inline PredictionSet ensemble_average(const PredictionSet& a, const PredictionSet& b) {
  if (a.num_classes != b.num_classes || a.size() != b.size() || a.probabilities.size() != b.probabilities.size()) {
    throw AlignmentError("ensemble_average: prediction sets differ in shape (" + std::to_string(a.size()) + "x" +
                         std::to_string(a.num_classes) + " vs " + std::to_string(b.size()) + "x" +
                         std::to_string(b.num_classes) + ")");
  }
  if (a.ids != b.ids) throw AlignmentError("ensemble_average: sample ids/order differ between prediction sets");
  if (a.labels != b.labels) throw AlignmentError("ensemble_average: labels differ between prediction sets");
  PredictionSet out = a;
  for (std::size_t i = 0; i < out.probabilities.size(); ++i) {
    out.probabilities[i] = (a.probabilities[i] + b.probabilities[i]) / 2.0;
  }
  return out;
}

struct ClassMetrics {
  std::string name;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::optional<double> auc;
  std::size_t support = 0;  // true instances
  std::vector<std::string> flags;
};

struct MetricsReport {
  std::size_t n_samples = 0;
  double accuracy = 0.0;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  std::optional<double> macro_auc;
  std::vector<ClassMetrics> per_class;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]

  bool operator==(const MetricsReport& o) const {
    auto same_class = [](const ClassMetrics& x, const ClassMetrics& y) {
      return x.name == y.name && x.precision == y.precision && x.recall == y.recall && x.f1 == y.f1 &&
             x.auc == y.auc && x.support == y.support && x.flags == y.flags;
    };
    return n_samples == o.n_samples && accuracy == o.accuracy && macro_precision == o.macro_precision &&
           macro_recall == o.macro_recall && macro_f1 == o.macro_f1 && macro_auc == o.macro_auc &&
           confusion == o.confusion && per_class.size() == o.per_class.size() &&
           std::equal(per_class.begin(), per_class.end(), o.per_class.begin(), same_class);
  }
};

struct ConfusionSummary {
  std::vector<std::vector<std::size_t>> confusion;
  std::vector<ClassMetrics> per_class;
  double accuracy = 0.0;
  double macro_precision = 0.0, macro_recall = 0.0, macro_f1 = 0.0;
};

inline ConfusionSummary confusion_and_prf(const PredictionSet& p) {
  const std::size_t C = p.num_classes;
  ConfusionSummary s;
  s.confusion.assign(C, std::vector<std::size_t>(C, 0));
  for (std::size_t n = 0; n < p.size(); ++n) ++s.confusion[p.labels[n]][argmax_row(p.row(n), C)];
  std::size_t correct = 0;
  for (std::size_t c = 0; c < C; ++c) correct += s.confusion[c][c];
  s.accuracy = p.size() ? static_cast<double>(correct) / static_cast<double>(p.size()) : 0.0;

  for (std::size_t c = 0; c < C; ++c) {
    ClassMetrics m;
    m.name = c < p.class_names.size() ? p.class_names[c] : std::to_string(c);
    const std::size_t tp = s.confusion[c][c];
    std::size_t predicted = 0, actual = 0;
    for (std::size_t k = 0; k < C; ++k) {
      predicted += s.confusion[k][c];
      actual += s.confusion[c][k];
    }
    m.support = actual;
    if (predicted) {
      m.precision = static_cast<double>(tp) / static_cast<double>(predicted);
    } else {
      m.flags.push_back("precision_undefined");
    }
    if (actual) {
      m.recall = static_cast<double>(tp) / static_cast<double>(actual);
    } else {
      m.flags.push_back("recall_undefined");
    }
    if (m.precision + m.recall > 0.0) {
      m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    } else {
      m.flags.push_back("f1_undefined");
    }
    s.macro_precision += m.precision;
    s.macro_recall += m.recall;
    s.macro_f1 += m.f1;
    s.per_class.push_back(std::move(m));
  }
  s.macro_precision /= static_cast<double>(C);
  s.macro_recall /= static_cast<double>(C);
  s.macro_f1 /= static_cast<double>(C);
  return s;
}

/// Binary AUC of `scores` for boolean `positive`, via mid-rank Mann–Whitney U.
/// Returns nullopt when either class is absent.
inline std::optional<double> binary_auc(const std::vector<double>& scores, const std::vector<bool>& positive) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::size_t n_pos = 0;
  double rank_sum = 0.0;  // ranks of positives, 1-based, ties averaged
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (positive[order[k]]) {
        rank_sum += mid;
        ++n_pos;
      }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  const double u = rank_sum - static_cast<double>(n_pos) * static_cast<double>(n_pos + 1) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

struct AucResult {
  double macro = 0.0;
  std::vector<std::optional<double>> per_class;
};

/// Macro one-vs-rest AUC over classes with at least one positive and one
/// negative sample. Throws MetricError when no class qualifies.
inline AucResult roc_auc_macro_ovr(const PredictionSet& p) {
  AucResult r;
  std::size_t included = 0;
  std::vector<double> scores(p.size());
  std::vector<bool> pos(p.size());
  for (std::size_t c = 0; c < p.num_classes; ++c) {
    for (std::size_t n = 0; n < p.size(); ++n) {
      scores[n] = p.row(n)[c];
      pos[n] = p.labels[n] == c;
    }
    auto auc = binary_auc(scores, pos);
    r.per_class.push_back(auc);
    if (auc) {
      r.macro += *auc;
      ++included;
    }
  }
  if (included == 0) throw MetricError("roc_auc_macro_ovr: no class has both positive and negative samples");
  r.macro /= static_cast<double>(included);
  return r;
}

inline MetricsReport compute_report(const PredictionSet& p) {
  const auto s = confusion_and_prf(p);
  MetricsReport r;
  r.n_samples = p.size();
  r.accuracy = s.accuracy;
  r.macro_precision = s.macro_precision;
  r.macro_recall = s.macro_recall;
  r.macro_f1 = s.macro_f1;
  r.confusion = s.confusion;
  r.per_class = s.per_class;
  try {
    auto auc = roc_auc_macro_ovr(p);
    r.macro_auc = auc.macro;
    for (std::size_t c = 0; c < r.per_class.size(); ++c) {
      r.per_class[c].auc = auc.per_class[c];
      if (!auc.per_class[c]) r.per_class[c].flags.push_back("auc_skipped");
    }
  } catch (const MetricError&) {
    for (auto& c : r.per_class) c.flags.push_back("auc_skipped");
  }
  return r;
}

inline nlohmann::json to_json(const MetricsReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json per = nlohmann::json::array();
  for (const auto& c : r.per_class) {
    per.push_back({{"name", c.name},
                   {"precision", c.precision},
                   {"recall", c.recall},
                   {"f1", c.f1},
                   {"auc", opt(c.auc)},
                   {"support", c.support},
                   {"flags", c.flags}});
  }
  return {{"n_samples", r.n_samples},
          {"accuracy", r.accuracy},
          {"macro",
           {{"precision", r.macro_precision}, {"recall", r.macro_recall}, {"f1", r.macro_f1}, {"auc", opt(r.macro_auc)}}},
          {"per_class", per},
          {"confusion", r.confusion}};
}

inline MetricsReport report_from_json(const nlohmann::json& j) {
  auto opt = [](const nlohmann::json& v) { return v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()); };
  MetricsReport r;
  r.n_samples = j.at("n_samples").get<std::size_t>();
  r.accuracy = j.at("accuracy").get<double>();
  const auto& m = j.at("macro");
  r.macro_precision = m.at("precision").get<double>();
  r.macro_recall = m.at("recall").get<double>();
  r.macro_f1 = m.at("f1").get<double>();
  r.macro_auc = opt(m.at("auc"));
  for (const auto& c : j.at("per_class")) {
    ClassMetrics cm;
    cm.name = c.at("name").get<std::string>();
    cm.precision = c.at("precision").get<double>();
    cm.recall = c.at("recall").get<double>();
    cm.f1 = c.at("f1").get<double>();
    cm.auc = opt(c.at("auc"));
    cm.support = c.at("support").get<std::size_t>();
    cm.flags = c.at("flags").get<std::vector<std::string>>();
    r.per_class.push_back(std::move(cm));
  }
  r.confusion = j.at("confusion").get<std::vector<std::vector<std::size_t>>>();
  return r;
}

/// Structural check of a report JSON document against the report schema.
inline bool report_json_well_formed(const nlohmann::json& j, std::string* why = nullptr) {
  auto fail = [&](const std::string& msg) {
    if (why) *why = msg;
    return false;
  };
  auto unit = [](const nlohmann::json& v) { return v.is_number() && v.get<double>() >= 0.0 && v.get<double>() <= 1.0; };
  auto unit_or_null = [&](const nlohmann::json& v) { return v.is_null() || unit(v); };
  auto count = [](const nlohmann::json& v) { return v.is_number_integer() && v.get<std::int64_t>() >= 0; };
  if (!j.is_object()) return fail("report is not an object");
  for (const char* k : {"n_samples", "accuracy", "macro", "per_class", "confusion"})
    if (!j.contains(k)) return fail(std::string("missing key ") + k);
  if (!count(j["n_samples"])) return fail("n_samples must be a non-negative integer");
  if (!unit(j["accuracy"])) return fail("accuracy outside [0,1]");
  const auto& m = j["macro"];
  if (!m.is_object() || !unit(m.value("precision", nlohmann::json(-1))) || !unit(m.value("recall", nlohmann::json(-1))) ||
      !unit(m.value("f1", nlohmann::json(-1))) || !m.contains("auc") || !unit_or_null(m["auc"])) {
    return fail("macro block malformed");
  }
  const auto& per = j["per_class"];
  if (!per.is_array()) return fail("per_class must be an array");
  for (const auto& c : per) {
    if (!c.is_object() || !c.contains("name") || !c["name"].is_string() || !unit(c.value("precision", nlohmann::json(-1))) ||
        !unit(c.value("recall", nlohmann::json(-1))) || !unit(c.value("f1", nlohmann::json(-1))) || !c.contains("auc") ||
        !unit_or_null(c["auc"]) || !c.contains("support") || !count(c["support"]) ||
        !c.contains("flags") || !c["flags"].is_array()) {
      return fail("per_class entry malformed");
    }
  }
  const auto& conf = j["confusion"];
  if (!conf.is_array() || conf.size() != per.size()) return fail("confusion must be C×C");
  std::size_t total = 0;
  for (const auto& row : conf) {
    if (!row.is_array() || row.size() != per.size()) return fail("confusion must be C×C");
    for (const auto& v : row) {
      if (!count(v)) return fail("confusion entries must be non-negative integers");
      total += v.get<std::size_t>();
    }
  }
  if (total != j["n_samples"].get<std::size_t>()) return fail("confusion does not sum to n_samples");
  return true;
}

}  // namespace egmae
