#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "egmae/data.hpp"
#include "egmae/errors.hpp"
#include "egmae/metrics.hpp"
#include "egmae/model.hpp"

namespace egmae {

inline Normalization resolve_normalization(const std::vector<double>& mean, const std::vector<double>& std,
                                           std::size_t channels) {
  if (mean.empty()) return Normalization::defaults(channels);
  return {mean, std};
}

/// Class probabilities for every sample under the deterministic eval view.
template <typename T>
PredictionSet predict(const Model<T>& model, const std::vector<ImageSample>& samples, std::size_t image_size,
                      const Normalization& norm, std::size_t batch_size = 64) {
  if (!model.has_head()) throw UsageError("predict: model has no classification head");
  if (samples.empty()) throw DataError("predict: no samples");
  NoGradGuard no_grad;
  PredictionSet out;
  out.num_classes = model.class_names.size();
  out.class_names = model.class_names;
  out.probabilities.reserve(samples.size() * out.num_classes);
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::size_t end = std::min(samples.size(), start + batch_size);
    std::vector<Image> views(end - start);
    parallel_for(views.size(), [&](std::size_t i) { views[i] = eval_transform(samples[start + i].pixels, image_size); });
    Tensor<float> x = stack_normalized(views, norm);
    Tensor<T> xt = [&] {
      if constexpr (std::is_same_v<T, float>) {
        return x;
      } else {
        return Tensor<T>(x.shape(), std::vector<T>(x.data().begin(), x.data().end()));
      }
    }();
    const auto probs = classify(xt, model.encoder, model.params);
    for (T p : probs.data()) out.probabilities.push_back(static_cast<double>(p));
    for (std::size_t i = start; i < end; ++i) {
      if (samples[i].label >= out.num_classes) {
        throw DataError("sample " + samples[i].path + " has label " + std::to_string(samples[i].label) +
                        " but the model has " + std::to_string(out.num_classes) + " classes");
      }
      out.labels.push_back(samples[i].label);
      out.ids.push_back(samples[i].id);
    }
  }
  return out;
}

struct EvaluationResult {
  MetricsReport report;                   // ensemble report when ensembling
  std::vector<MetricsReport> individual;  // per-model reports when ensembling
  PredictionSet predictions;
};

/// Evaluates one model, or two models and their probability average.
template <typename T>
EvaluationResult evaluate(const std::vector<const Model<T>*>& models, const std::vector<ImageSample>& samples,
                          bool ensemble, std::size_t image_size, const Normalization& norm,
                          std::size_t batch_size = 64) {
  if (models.empty() || models.size() > 2) throw UsageError("evaluate: expected one or two models");
  if (ensemble && models.size() != 2) throw UsageError("evaluate: --ensemble requires exactly two models");
  if (!ensemble && models.size() != 1) throw UsageError("evaluate: two models given without --ensemble");
  EvaluationResult r;
  if (!ensemble) {
    r.predictions = predict(*models[0], samples, image_size, norm, batch_size);
    r.report = compute_report(r.predictions);
    return r;
  }
  if (models[0]->class_names != models[1]->class_names) {
    throw AlignmentError("evaluate: the two models were trained on different class lists");
  }
  const auto a = predict(*models[0], samples, image_size, norm, batch_size);
  const auto b = predict(*models[1], samples, image_size, norm, batch_size);
  r.individual = {compute_report(a), compute_report(b)};
  r.predictions = ensemble_average(a, b);
  r.report = compute_report(r.predictions);
  return r;
}

}  // namespace egmae
