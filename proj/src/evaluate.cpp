#include "skelnoise/evaluate.hpp"

#include <algorithm>
#include <numeric>

#include "skelnoise/error.hpp"

namespace skelnoise {

void to_json(nlohmann::json& j, const AccuracyMetrics& m) {
  j = nlohmann::json{{"top1", m.top1},
                     {"top5", m.top5},
                     {"per_class", m.per_class},
                     {"per_class_count", m.per_class_count},
                     {"samples", m.samples}};
}

int argmax(std::span<const double> row) {
  return static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
}

AccuracyMetrics accuracy_from_scores(const Matrix& scores, std::span<const int> labels) {
  if (scores.rows == 0) fail(ErrorKind::InvalidConfiguration, "cannot evaluate an empty split");
  if (labels.size() != scores.rows) fail(ErrorKind::Dimension, "one label per score row required");
  const std::size_t K = scores.cols;
  const std::size_t k5 = std::min<std::size_t>(5, K);
  AccuracyMetrics m;
  m.samples = scores.rows;
  m.per_class.assign(K, 0.0);
  m.per_class_count.assign(K, 0);
  std::vector<int> per_class_hits(K, 0);
  std::size_t hit1 = 0, hit5 = 0;
  std::vector<std::size_t> order(K);
  for (std::size_t r = 0; r < scores.rows; ++r) {
    const auto row = scores.row(r);
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= K) fail(ErrorKind::InvalidLabel, "label out of range");
    // rank of the true class = number of classes that beat it
    std::size_t rank = 0;
    for (std::size_t c = 0; c < K; ++c)
      if (row[c] > row[y] || (row[c] == row[y] && c < static_cast<std::size_t>(y))) ++rank;
    ++m.per_class_count[y];
    if (rank == 0) {
      ++hit1;
      ++per_class_hits[y];
    }
    if (rank < k5) ++hit5;
  }
  m.top1 = static_cast<double>(hit1) / static_cast<double>(scores.rows);
  m.top5 = static_cast<double>(hit5) / static_cast<double>(scores.rows);
  for (std::size_t c = 0; c < K; ++c)
    m.per_class[c] = m.per_class_count[c] ? static_cast<double>(per_class_hits[c]) / m.per_class_count[c] : 0.0;
  return m;
}

Matrix predict_logits(const Classifier& model, std::span<const ModalityTensor> data, int batch_size) {
  if (batch_size < 1) fail(ErrorKind::InvalidArgument, "batch size must be positive");
  Matrix out(data.size(), static_cast<std::size_t>(model.class_count()));
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + static_cast<std::size_t>(batch_size));
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Matrix logits = model.forward(make_batch(data, idx));
    std::copy(logits.values.begin(), logits.values.end(), out.values.begin() + start * out.cols);
  }
  return out;
}

AccuracyMetrics evaluate(const Classifier& model, std::span<const ModalityTensor> data, std::span<const int> labels,
                         int batch_size) {
  if (data.empty()) fail(ErrorKind::InvalidConfiguration, "cannot evaluate an empty split");
  return accuracy_from_scores(predict_logits(model, data, batch_size), labels);
}

}  // namespace skelnoise
