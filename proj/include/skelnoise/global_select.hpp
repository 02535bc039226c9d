#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "skelnoise/cross_training.hpp"
#include "skelnoise/noise.hpp"

namespace skelnoise {

/// Per-sample training loss of one modality's expert over the whole set.
struct LossTable {
  Modality modality = Modality::Joint;
  std::vector<std::string> sample_ids;
  std::vector<double> losses;
};

/// Eval-mode losses for every sample of `stream` (against its labels).
/// Chunking by `batch_size` does not change the values.
LossTable rank_by_loss(const Classifier& model, const ModalityStream& stream, int batch_size = 256);

struct GlobalSelection {
  double fraction = 1.0;  // p
  std::vector<std::string> sample_ids;
  std::array<std::vector<std::size_t>, 3> per_modality;  // ascending indices
  std::vector<std::size_t> clean_set;                    // union, ascending
  std::vector<std::uint8_t> membership;  // per sample: bit m set if modality m selected it
};

/// Takes the ceil(p * n) smallest-loss samples per modality (lower index wins
/// ties) and returns their union. Tables are indexed joint, bone, motion.
GlobalSelection select_clean(std::span<const LossTable> tables, double p);

/// JSON manifest of a selection; adds precision/recall of every set when
/// `provenance` is given.
nlohmann::json selection_manifest(const GlobalSelection& selection, const NoisyDataset* provenance = nullptr);

}  // namespace skelnoise
