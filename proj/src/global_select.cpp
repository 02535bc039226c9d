#include "skelnoise/global_select.hpp"

#include <algorithm>
#include <cmath>

#include "skelnoise/error.hpp"
#include "skelnoise/evaluate.hpp"

namespace skelnoise {

using nlohmann::json;

LossTable rank_by_loss(const Classifier& model, const ModalityStream& stream, int batch_size) {
  if (model.training()) fail(ErrorKind::InvalidArgument, "loss ranking requires an eval-mode model");
  if (stream.labels.size() != stream.tensors.size()) fail(ErrorKind::Dimension, "stream needs one label per tensor");
  LossTable table;
  table.modality = stream.modality;
  table.sample_ids = stream.sample_ids;
  if (table.sample_ids.empty())
    for (std::size_t i = 0; i < stream.size(); ++i) table.sample_ids.push_back(std::to_string(i));
  table.losses = cross_entropy_rows(predict_logits(model, stream.tensors, batch_size), stream.labels);
  for (std::size_t i = 0; i < table.losses.size(); ++i)
    if (!std::isfinite(table.losses[i]))
      fail(ErrorKind::CorruptModel, "non-finite loss for sample " + table.sample_ids[i]);
  return table;
}

GlobalSelection select_clean(std::span<const LossTable> tables, double p) {
  if (tables.size() != 3) fail(ErrorKind::InvalidArgument, "global selection needs joint, bone and motion tables");
  if (!(p > 0.0 && p <= 1.0)) fail(ErrorKind::InvalidArgument, "selection fraction must lie in (0, 1]");
  for (const LossTable& t : tables) {
    if (t.sample_ids != tables[0].sample_ids)
      fail(ErrorKind::Inconsistent, "loss tables cover different sample ids");
    if (t.losses.size() != t.sample_ids.size()) fail(ErrorKind::Dimension, "loss table has one loss per id");
  }
  GlobalSelection sel;
  sel.fraction = p;
  sel.sample_ids = tables[0].sample_ids;
  sel.membership.assign(sel.sample_ids.size(), 0);
  if (sel.sample_ids.empty()) return sel;
  for (int m = 0; m < 3; ++m) {
    sel.per_modality[m] = small_loss_select(tables[m].losses, p);
    for (std::size_t i : sel.per_modality[m]) sel.membership[i] |= static_cast<std::uint8_t>(1u << m);
  }
  for (std::size_t i = 0; i < sel.membership.size(); ++i)
    if (sel.membership[i]) sel.clean_set.push_back(i);
  return sel;
}

json selection_manifest(const GlobalSelection& sel, const NoisyDataset* provenance) {
  auto ids_of = [&](std::span<const std::size_t> idx) {
    std::vector<std::string> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(sel.sample_ids[i]);
    return out;
  };
  json j;
  j["p"] = sel.fraction;
  j["sample_count"] = sel.sample_ids.size();
  for (int m = 0; m < 3; ++m) {
    const std::string name(to_string(kModalities[m]));
    j["sets"][name] = ids_of(sel.per_modality[m]);
    j["sizes"][name] = sel.per_modality[m].size();
  }
  j["sets"]["union"] = ids_of(sel.clean_set);
  j["sizes"]["union"] = sel.clean_set.size();
  json membership = json::array();
  for (std::size_t i : sel.clean_set) membership.push_back({{"sample_id", sel.sample_ids[i]}, {"modalities", sel.membership[i]}});
  j["membership"] = std::move(membership);
  j["membership_bits"] = {{"joint", 1}, {"bone", 2}, {"motion", 4}};
  if (provenance) {
    if (provenance->size() != sel.sample_ids.size())
      fail(ErrorKind::Inconsistent, "provenance does not cover the selection's samples");
    auto quality = [&](std::span<const std::size_t> idx) {
      const SelectorQuality q = selector_quality(idx, *provenance);
      return json{{"precision", q.precision ? json(*q.precision) : json(nullptr)}, {"recall", q.recall}};
    };
    for (int m = 0; m < 3; ++m) j["quality"][std::string(to_string(kModalities[m]))] = quality(sel.per_modality[m]);
    j["quality"]["union"] = quality(sel.clean_set);
    j["quality"]["base_clean_rate"] =
        provenance->size() ? 1.0 - static_cast<double>(provenance->corrupted_count()) / provenance->size() : 0.0;
  }
  return j;
}

}  // namespace skelnoise
