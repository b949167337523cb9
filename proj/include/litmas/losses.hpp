#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "litmas/center_bank.hpp"
#include "litmas/dataio.hpp"
#include "litmas/model.hpp"
#include "litmas/numgrad.hpp"

namespace litmas {

/// Embeddings of one training batch together with their labels and modalities.
struct MacBatch {
  ng::Value embeddings;  // n x d
  std::vector<Label> labels;
  std::vector<std::size_t> modalities;

  void validate() const;
};

/// Members of the concentration set for modality m: the bonafide samples of
/// m plus every spoof sample in the batch, ascending.
std::vector<std::size_t> select_concentration_set(const MacBatch& batch, std::size_t modality);

/// Cross-entropy between the uniform distribution over the bonafide-of-m
/// members and the softmax of their cosine similarities to `center`. The
/// center is detached. Returns nullopt when the batch holds no bonafide
/// sample of modality m.
std::optional<ng::Value> concentration_loss(const MacBatch& batch, std::size_t modality,
                                            const ng::Value& center);

/// Mean of the concentration losses over modalities that have at least one
/// bonafide sample in the batch. Throws BatchError if there is none.
ng::Value mac_loss(const MacBatch& batch, std::span<const ng::Value> centers);
/// Places the bank's centers on the batch tape as constants.
ng::Value mac_loss(const MacBatch& batch, const CenterBank& bank);

/// Fresh centers: the mean backbone embedding of every modality's bonafide
/// samples, reduced pairwise in dataset order. The epoch stamp is one past
/// `previous` (or 0 when there is none).
CenterBank update_centers(const ModelBundle& bundle, const DatasetView& view,
                          const CenterBank* previous = nullptr);

/// Mean over rows of -log softmax(logits)[label]; labels must be 0 or 1.
ng::Value cross_entropy(const ng::Value& logits, std::span<const int> labels);

}  // namespace litmas
