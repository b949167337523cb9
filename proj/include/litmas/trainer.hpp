#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "litmas/dataio.hpp"
#include "litmas/kvconfig.hpp"
#include "litmas/model.hpp"
#include "litmas/padmetrics.hpp"

namespace litmas {

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 1e-5;
  std::size_t batch_size = 64;
  std::size_t epochs_step1 = 40;
  std::size_t epochs_step2 = 40;
  ModelDims dims;  // input_dim is taken from the training data when 0
  std::uint64_t seed = 0;
  bool use_mac_pretrain = true;
  bool use_mope = true;
  // Off by default so that RunLogs are byte-reproducible.
  bool log_wall_time = false;

  void validate(std::size_t n_modalities) const;

  /// Unknown keys are rejected; absent keys keep their defaults.
  static TrainConfig from_kv(const KeyValueConfig& kv);
  /// Every field, defaults materialized, in key=value form.
  KeyValueConfig to_kv() const;
};

struct AdamWHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamWState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t t = 0;
  AdamWHyper hyper;
};

/// One decoupled-weight-decay Adam update:
///   theta <- theta * (1 - lr*wd) - lr * m_hat / (sqrt(v_hat) + eps)
/// State moments are allocated on first use.
void adamw_step(std::span<Tensor* const> params, std::span<const Tensor> grads,
                AdamWState& state, double lr, double weight_decay);

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double seconds = 0.0;
  std::optional<double> center_drift;  // Step 1 only
  std::optional<double> val_eer;
  std::optional<double> val_auc;
};

struct RunLog {
  std::vector<EpochRecord> epochs;

  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;
};

struct StepResult {
  ModelBundle bundle;
  RunLog log;
};

/// MAC-loss pre-training of the encoder. Centers are initialized from the
/// freshly seeded encoder and refreshed after every epoch.
StepResult pretrain_step1(const TrainConfig& config, const DatasetView& train);

/// Cross-entropy fine-tuning of encoder, projection heads and classifier.
/// With use_mac_pretrain the encoder comes from `step1`; otherwise it is
/// initialized from the seed exactly as Step 1 would have initialized it.
StepResult finetune_step2(const TrainConfig& config, const DatasetView& train,
                          const ModelBundle* step1 = nullptr,
                          const DatasetView* validation = nullptr);

/// Liveness score per sample, in view order.
std::vector<pad::ScoreRecord> score_view(const ModelBundle& bundle, const DatasetView& view);

struct AblationRow {
  bool pretrain = false;
  bool mope = false;
  double auc = 0.0;
  double eer = 0.0;
  ModelBundle bundle;
};

struct AblationReport {
  std::vector<AblationRow> rows;  // (no,no) (yes,no) (no,yes) (yes,yes)

  std::string to_csv() const;
};

/// Trains and evaluates the four (pretrain x MoPE) arms on the same data
/// and seed. Arms run concurrently when `parallel` is set; the report order
/// is fixed either way.
AblationReport run_ablation(const TrainConfig& config, const DatasetView& train,
                            const DatasetView& test, bool parallel = true);

}  // namespace litmas
