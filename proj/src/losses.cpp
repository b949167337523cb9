#include "litmas/losses.hpp"

#include <string>

#include "litmas/errors.hpp"

namespace litmas {

void MacBatch::validate() const {
  const Tensor& z = embeddings.tensor();
  if (z.rank() != 2) throw DimensionError("MacBatch embeddings must be a matrix");
  if (labels.size() != z.rows() || modalities.size() != z.rows()) {
    throw DimensionError("MacBatch labels/modalities are not aligned with embeddings");
  }
}

std::vector<std::size_t> select_concentration_set(const MacBatch& batch, std::size_t modality) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < batch.labels.size(); ++i) {
    if (batch.labels[i] == Label::spoof ||
        (batch.labels[i] == Label::bonafide && batch.modalities[i] == modality)) {
      idx.push_back(i);
    }
  }
  return idx;
}

std::optional<ng::Value> concentration_loss(const MacBatch& batch, std::size_t modality,
                                            const ng::Value& center) {
  batch.validate();
  const std::vector<std::size_t> members = select_concentration_set(batch, modality);
  Tensor target({members.size()});
  std::size_t bonafide = 0;
  for (std::size_t r = 0; r < members.size(); ++r) {
    if (batch.labels[members[r]] == Label::bonafide) {
      target[r] = 1.0;
      ++bonafide;
    }
  }
  if (bonafide == 0) return std::nullopt;
  for (double& t : target.data()) t /= static_cast<double>(bonafide);

  ng::Tape& tape = batch.embeddings.tape();
  const ng::Value sims =
      ng::cosine_rows(ng::gather_rows(batch.embeddings, members), ng::stop_gradient(center));
  const ng::Value log_p = ng::log_softmax(sims);
  return ng::scale(ng::sum(ng::mul(log_p, tape.constant(std::move(target)))), -1.0);
}

ng::Value mac_loss(const MacBatch& batch, std::span<const ng::Value> centers) {
  batch.validate();
  for (std::size_t m : batch.modalities) {
    if (m >= centers.size()) {
      throw DimensionError("mac_loss: modality " + std::to_string(m) + " has no center");
    }
  }
  std::optional<ng::Value> total;
  std::size_t used = 0;
  for (std::size_t m = 0; m < centers.size(); ++m) {
    auto term = concentration_loss(batch, m, centers[m]);
    if (!term) continue;
    total = total ? ng::add(*total, *term) : *term;
    ++used;
  }
  if (!total) throw BatchError("mac_loss: no modality has a bonafide sample in this batch");
  return ng::scale(*total, 1.0 / static_cast<double>(used));
}

ng::Value mac_loss(const MacBatch& batch, const CenterBank& bank) {
  ng::Tape& tape = batch.embeddings.tape();
  std::vector<ng::Value> centers;
  centers.reserve(bank.size());
  for (const Tensor& c : bank.centers) centers.push_back(tape.constant(c));
  return mac_loss(batch, centers);
}

namespace {

// Pairwise sum of rows[lo, hi) of z into out; the split points depend only
// on the row count, so the reduction order is fixed by dataset order.
void pairwise_sum(const Tensor& z, const std::vector<std::size_t>& rows, std::size_t lo,
                  std::size_t hi, std::vector<double>& out) {
  const std::size_t d = z.cols();
  if (hi - lo <= 8) {
    for (std::size_t r = lo; r < hi; ++r) {
      const auto row = z.row(rows[r]);
      for (std::size_t j = 0; j < d; ++j) out[j] += row[j];
    }
    return;
  }
  const std::size_t mid = lo + (hi - lo) / 2;
  std::vector<double> right(d, 0.0);
  pairwise_sum(z, rows, lo, mid, out);
  pairwise_sum(z, rows, mid, hi, right);
  for (std::size_t j = 0; j < d; ++j) out[j] += right[j];
}

}  // namespace

CenterBank update_centers(const ModelBundle& bundle, const DatasetView& view,
                          const CenterBank* previous) {
  if (view.modalities() != bundle.modalities) {
    throw ConfigError("update_centers: dataset modality table differs from the model's");
  }
  for (std::size_t m = 0; m < view.modalities().size(); ++m) {
    if (view.bonafide(m).empty()) {
      throw ConfigError("update_centers: modality '" + view.modalities().name(m) +
                        "' has no bonafide samples");
    }
  }
  const Tensor z = encode(bundle, feature_matrix(view));
  CenterBank bank;
  bank.epoch = previous ? previous->epoch + 1 : 0;
  for (std::size_t m = 0; m < view.modalities().size(); ++m) {
    const auto& rows = view.bonafide(m);
    std::vector<double> acc(z.cols(), 0.0);
    pairwise_sum(z, rows, 0, rows.size(), acc);
    for (double& v : acc) v /= static_cast<double>(rows.size());
    bank.centers.push_back(Tensor::vector(std::move(acc)));
  }
  return bank;
}

ng::Value cross_entropy(const ng::Value& logits, std::span<const int> labels) {
  const Tensor& x = logits.tensor();
  if (x.rank() != 2 || x.cols() != 2) {
    throw DimensionError("cross_entropy: logits must be n x 2, got " + shape_str(x.shape()));
  }
  if (labels.size() != x.rows()) throw DimensionError("cross_entropy: labels not aligned");
  std::vector<std::size_t> cols;
  cols.reserve(labels.size());
  for (int l : labels) {
    if (l != 0 && l != 1) throw DimensionError("cross_entropy: label " + std::to_string(l));
    cols.push_back(static_cast<std::size_t>(l));
  }
  return ng::scale(ng::mean(ng::pick_columns(ng::log_softmax(logits), cols)), -1.0);
}

}  // namespace litmas
