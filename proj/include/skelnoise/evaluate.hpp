#pragma once

#include <span>
#include <vector>

#include <json.hpp>

#include "skelnoise/model.hpp"

namespace skelnoise {

struct AccuracyMetrics {
  double top1 = 0.0;
  double top5 = 0.0;  // top-min(5, K)
  std::vector<double> per_class;  // NaN-free: classes absent from the split report 0 with count 0
  std::vector<int> per_class_count;
  std::size_t samples = 0;
};

void to_json(nlohmann::json& j, const AccuracyMetrics& m);

/// Scores of any kind (logits or probabilities) ranked per row. Ties rank
/// the lower class index first.
AccuracyMetrics accuracy_from_scores(const Matrix& scores, std::span<const int> labels);

/// Logits for every tensor, computed in chunks of `batch_size`. Results do
/// not depend on the chunking.
Matrix predict_logits(const Classifier& model, std::span<const ModalityTensor> data, int batch_size = 256);

/// Top-1/top-5/per-class accuracy of a classifier on ground-truth labels.
/// Throws InvalidConfiguration on an empty split.
AccuracyMetrics evaluate(const Classifier& model, std::span<const ModalityTensor> data,
                         std::span<const int> labels, int batch_size = 256);

int argmax(std::span<const double> row);

}  // namespace skelnoise
