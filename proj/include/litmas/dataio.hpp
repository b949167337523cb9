#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace litmas {

enum class Label : std::uint8_t { bonafide = 0, spoof = 1 };

inline int label_int(Label l) { return static_cast<int>(l); }

/// Dense modality indices 0..n-1 with unique canonical names.
class ModalityTable {
 public:
  ModalityTable() = default;
  explicit ModalityTable(std::vector<std::string> names);

  std::size_t size() const noexcept { return names_.size(); }
  bool empty() const noexcept { return names_.empty(); }
  const std::string& name(std::size_t id) const { return names_.at(id); }
  const std::vector<std::string>& names() const noexcept { return names_; }
  std::optional<std::size_t> find(std::string_view name) const;

  friend bool operator==(const ModalityTable&, const ModalityTable&) = default;

 private:
  std::vector<std::string> names_;
};

struct Sample {
  std::string id;
  std::size_t modality = 0;
  Label label = Label::bonafide;
  std::string dataset_tag;
  std::vector<double> features;

  friend bool operator==(const Sample&, const Sample&) = default;
};

/// The combined training set: the concatenation of per-modality subsets,
/// with bonafide/spoof index lists per modality.
class DatasetView {
 public:
  DatasetView(ModalityTable modalities, std::size_t input_dim, std::vector<Sample> samples);

  const ModalityTable& modalities() const noexcept { return modalities_; }
  std::size_t input_dim() const noexcept { return input_dim_; }
  std::size_t size() const noexcept { return samples_.size(); }
  bool empty() const noexcept { return samples_.empty(); }
  const std::vector<Sample>& samples() const noexcept { return samples_; }
  const Sample& operator[](std::size_t i) const { return samples_[i]; }

  const std::vector<std::size_t>& bonafide(std::size_t modality) const {
    return bonafide_.at(modality);
  }
  const std::vector<std::size_t>& spoof(std::size_t modality) const {
    return spoof_.at(modality);
  }
  /// Modalities with at least one sample, ascending.
  std::vector<std::size_t> present_modalities() const;

  /// New view over the given sample positions, in that order.
  DatasetView subset(const std::vector<std::size_t>& positions) const;

  friend bool operator==(const DatasetView& a, const DatasetView& b) {
    return a.modalities_ == b.modalities_ && a.input_dim_ == b.input_dim_ &&
           a.samples_ == b.samples_;
  }

 private:
  ModalityTable modalities_;
  std::size_t input_dim_;
  std::vector<Sample> samples_;
  std::vector<std::vector<std::size_t>> bonafide_;
  std::vector<std::vector<std::size_t>> spoof_;
};

// Feature file, UTF-8 text:
//   litmas-features v1 dim=<D>
//   modalities=<name0,name1,...>
//   <id>\t<modality>\t<0|1>\t<dataset_tag>\t<f0> <f1> ... <fD-1>
// Lines starting with '#' are comments. Floats use shortest round-trip
// decimal, so load(write(v)) == v bit for bit.
DatasetView load_feature_file(const std::filesystem::path& path);
DatasetView parse_feature_text(std::string_view text);
void write_feature_file(const DatasetView& view, const std::filesystem::path& path);
std::string format_feature_text(const DatasetView& view);

// Shortest decimal that parses back to exactly `v`.
std::string format_double(double v);
std::optional<double> parse_double(std::string_view s);

/// Spoof cluster relative to its modality's bonafide mean.
struct SpoofCluster {
  std::vector<double> offset;
  double scale = 1.0;
};

struct SynthModality {
  std::string name;
  std::vector<double> bonafide_mean;
  double bonafide_scale = 1.0;
  std::vector<SpoofCluster> spoof_clusters;
};

/// Fully explicit synthetic dataset description.
struct SynthConfig {
  std::size_t input_dim = 0;
  std::vector<SynthModality> modalities;
  std::size_t bonafide_per_modality = 0;
  std::size_t spoof_per_modality = 0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Compact recipe the CLI config file maps onto. Mean and offset directions
/// are drawn from `seed`, so one recipe fixes the whole generating process.
struct SynthRecipe {
  std::vector<std::string> modality_names;
  std::size_t input_dim = 0;
  double modality_separation = 0.0;   // norm of each bonafide mean
  double bonafide_scale = 1.0;
  std::size_t spoof_clusters = 1;     // per modality
  double spoof_offset = 0.0;          // norm of each cluster offset
  double spoof_scale = 1.0;
  std::size_t bonafide_per_modality = 0;
  std::size_t spoof_per_modality = 0;
  std::uint64_t seed = 0;

  SynthConfig build() const;
};

/// Same seed yields bit-identical output. Samples are grouped by modality,
/// bonafide before spoof, with ids `<split>-<modality>-<n>`.
DatasetView gen_synthetic(const SynthConfig& cfg, std::string_view split = "train");

/// Train/test pair drawn from one generating process; the test draw uses an
/// independent stream derived from the same seed.
struct SynthSplit {
  DatasetView train;
  DatasetView test;
};
SynthSplit gen_synthetic_split(const SynthConfig& cfg);

using Batch = std::vector<std::size_t>;

/// One epoch of index batches in which every present modality contributes
/// floor(batch_size / (2 * |M|)) bonafide samples (cycling through a shuffled
/// pool when it runs out) and the remaining slots hold spoof samples drawn
/// without replacement. The epoch ends when every spoof has been emitted and
/// every bonafide has been drawn at least once.
std::vector<Batch> make_balanced_batches(const DatasetView& view, std::size_t batch_size,
                                         std::uint64_t seed);

}  // namespace litmas
