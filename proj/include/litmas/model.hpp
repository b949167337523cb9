#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "litmas/center_bank.hpp"
#include "litmas/dataio.hpp"
#include "litmas/numgrad.hpp"
#include "litmas/tensor.hpp"

namespace litmas {

/// y = x * weight + bias, weight stored in x out layout.
struct Linear {
  Tensor weight;
  Tensor bias;

  std::size_t in_dim() const { return weight.rows(); }
  std::size_t out_dim() const { return weight.cols(); }
  friend bool operator==(const Linear&, const Linear&) = default;
};

struct ModelDims {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden{256, 256};
  std::size_t embed_dim = 192;  // backbone embedding d
  std::size_t proj_dim = 512;   // expert output k

  void validate() const;
  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

enum class StepTag : std::uint8_t { step1 = 1, step2 = 2 };

// per_modality routes each sample through its own modality's head; shared
// sends every sample through head 0 (the no-MoPE ablation arm).
enum class HeadRouting : std::uint8_t { per_modality = 0, shared = 1 };

struct MoPEParams {
  HeadRouting routing = HeadRouting::per_modality;
  std::vector<Linear> heads;

  friend bool operator==(const MoPEParams&, const MoPEParams&) = default;
};

struct ModelBundle {
  ModelDims dims;
  ModalityTable modalities;
  StepTag step = StepTag::step1;
  std::vector<Linear> encoder;
  std::optional<MoPEParams> mope;
  std::optional<Linear> classifier;
  std::optional<CenterBank> centers;

  /// Parameters in declared order: encoder layers, heads, classifier; each
  /// as weight then bias. This order is also the checkpoint blob order.
  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;

  void validate() const;
  friend bool operator==(const ModelBundle&, const ModelBundle&) = default;
};

/// Encoder only (Step 1 layout). Hidden and expert weights are Kaiming
/// uniform, U(-sqrt(6/fan_in), sqrt(6/fan_in)); biases are zero.
ModelBundle init_model(const ModelDims& dims, const ModalityTable& modalities,
                       std::uint64_t seed);

/// Adds freshly seeded projection experts and a zero classifier, turning
/// a Step-1 bundle into a Step-2 bundle. The encoder is left untouched.
void attach_heads(ModelBundle& bundle, HeadRouting routing, std::uint64_t seed);

std::size_t param_count(const ModelBundle& bundle);

/// Bundle parameters placed on a tape, either as trainable leaves or as
/// constants, with the forward pieces expressed as tape ops.
class BoundModel {
 public:
  BoundModel(ng::Tape& tape, const ModelBundle& bundle, bool trainable);

  ng::Value encode(const ng::Value& x) const;
  ng::Value project(const ng::Value& z, std::span<const std::size_t> modalities) const;
  ng::Value classify(const ng::Value& h) const;

  /// Same order as ModelBundle::parameters().
  const std::vector<ng::Value>& params() const noexcept { return params_; }

 private:
  const ModelBundle& bundle_;
  std::vector<ng::Value> params_;
  std::size_t encoder_begin_ = 0, heads_begin_ = 0, classifier_begin_ = 0;
};

// Gradient-free forward helpers over plain tensors.
Tensor encode(const ModelBundle& bundle, const Tensor& x);
Tensor project(const ModelBundle& bundle, const Tensor& z,
               std::span<const std::size_t> modalities);
Tensor classify(const ModelBundle& bundle, const Tensor& h);

/// logit_bonafide - logit_spoof; higher means more live.
double liveness_score(std::span<const double> logits);

/// Stacks the features of `positions` (all samples when empty) into a matrix.
Tensor feature_matrix(const DatasetView& view, std::span<const std::size_t> positions = {});
std::vector<std::size_t> modality_ids(const DatasetView& view,
                                      std::span<const std::size_t> positions = {});

void save_checkpoint(const ModelBundle& bundle, const std::filesystem::path& path);
ModelBundle load_checkpoint(const std::filesystem::path& path);
std::string serialize_checkpoint(const ModelBundle& bundle);
ModelBundle deserialize_checkpoint(std::string_view bytes);

}  // namespace litmas
