#pragma once

#include <cstddef>
#include <filesystem>
#include <limits>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "litmas/dataio.hpp"

// Presentation-attack-detection metrics.
//
// Scores are liveness scores: higher means more live. A sample is accepted
// as bonafide when score >= threshold. APCER is the fraction of spoof
// samples accepted; BPCER the fraction of bonafide samples rejected.
//
// Candidate thresholds are the midpoints between adjacent distinct sorted
// scores plus -inf and +inf. Every operating point the accept rule can
// produce is reached by exactly one candidate.
namespace litmas::pad {

struct ScoreRecord {
  std::string id;
  std::string modality;
  std::string dataset_tag;
  Label label = Label::bonafide;
  double score = 0.0;

  friend bool operator==(const ScoreRecord&, const ScoreRecord&) = default;
};

struct RocPoint {
  double threshold;
  double apcer;
  double bpcer;
};

struct OperatingPoint {
  double apcer;
  double bpcer;
};

struct EerResult {
  double eer;
  double threshold;
  double apcer;
  double bpcer;
};

struct BpcerAtApcer {
  double bpcer;
  double threshold;
  double apcer;
  // The spoof count is below 1/target, so only apcer = 0 can meet it.
  bool coarse_resolution;
};

enum class TdcfVariant {
  // ASVspoof 2019 evaluation form: C1*Pmiss_cm + C2*Pfa_cm normalized by
  // min(C1, C2). Default.
  asvspoof2019,
  // Revised form with the ASV-only constant term C0, normalized by
  // C0 + min(C1, C2).
  revised,
};

/// Priors, costs and the fixed ASV operating point of the tandem cost.
/// Defaults are the ASVspoof 2019 challenge cost model; the ASV rates are
/// placeholders that should come from the ASV system actually deployed.
struct TdcfParams {
  double p_target = 0.9405;
  double p_nontarget = 0.0095;
  double p_spoof = 0.05;
  double c_miss_asv = 1.0;
  double c_fa_asv = 10.0;
  double c_miss_cm = 1.0;
  double c_fa_cm = 10.0;
  double c_fa_spoof = 10.0;  // revised variant only
  double asv_miss_rate = 0.0;
  double asv_fa_rate = 0.0;
  double asv_spoof_pass_rate = 1.0;
  TdcfVariant variant = TdcfVariant::asvspoof2019;

  void validate() const;
};

struct TdcfCoefficients {
  double c0;  // zero for the 2019 variant
  double c1;
  double c2;
  double norm;
};

struct TdcfResult {
  double min_tdcf;
  double threshold;
};

// Every function below throws MetricUndefinedError unless both classes are
// present.
std::vector<RocPoint> roc(std::span<const ScoreRecord> scores);
std::vector<double> candidate_thresholds(std::span<const ScoreRecord> scores);
/// Mann-Whitney statistic: P(bona > spoof) + 0.5 P(bona == spoof).
double auc(std::span<const ScoreRecord> scores);
/// Threshold minimizing |APCER - BPCER|; ties go to the smaller mean error,
/// then the smaller threshold. EER is the mean of the two rates there.
EerResult eer(std::span<const ScoreRecord> scores);
OperatingPoint apcer_bpcer_at(std::span<const ScoreRecord> scores, double threshold);
/// Smallest candidate threshold with APCER <= target; no interpolation.
BpcerAtApcer bpcer_at_apcer(std::span<const ScoreRecord> scores, double target = 0.01);
TdcfCoefficients tdcf_coefficients(const TdcfParams& params);
double tdcf_at(std::span<const ScoreRecord> scores, const TdcfParams& params, double threshold);
TdcfResult min_tdcf(std::span<const ScoreRecord> scores, const TdcfParams& params);

enum class Grouping { none, modality, dataset, both };
Grouping parse_grouping(std::string_view s);

struct EvalOptions {
  Grouping grouping = Grouping::both;
  double apcer_target = 0.01;
  TdcfParams tdcf;
  // Group names (modality names or dataset tags) that get a min t-DCF.
  std::set<std::string> tdcf_groups;
};

struct MetricsRow {
  std::string group;
  std::string kind;  // overall | modality | dataset
  bool defined = false;
  double auc = 0, eer = 0, eer_threshold = 0, apcer_at_eer = 0, bpcer_at_eer = 0,
         bpcer_at_apcer = 0;
  std::optional<double> min_tdcf;
  std::vector<std::string> flags;
};

struct MetricsReport {
  std::vector<MetricsRow> rows;

  const MetricsRow* find(std::string_view kind, std::string_view group) const;
};

/// Rows: overall, then modalities, then dataset tags, each lexicographic.
/// A group lacking one class yields a row flagged `undefined`.
MetricsReport evaluate(std::span<const ScoreRecord> scores, const EvalOptions& options = {});

inline constexpr std::string_view kReportColumns =
    "group,kind,auc,eer,eer_threshold,apcer_at_eer,bpcer_at_eer,bpcer_at_apcer1,min_tdcf,flags";
std::string format_report_csv(const MetricsReport& report, const EvalOptions& options);

// Score file: header `litmas-scores v1`, then
// <id>\t<modality>\t<dataset_tag>\t<0|1>\t<score>
std::vector<ScoreRecord> parse_score_text(std::string_view text);
std::vector<ScoreRecord> load_score_file(const std::filesystem::path& path);
std::string format_score_text(std::span<const ScoreRecord> scores);
void write_score_file(std::span<const ScoreRecord> scores, const std::filesystem::path& path);

/// Flat `key = value` t-DCF parameter file; unknown keys are rejected.
TdcfParams load_tdcf_params(const std::filesystem::path& path);

}  // namespace litmas::pad
