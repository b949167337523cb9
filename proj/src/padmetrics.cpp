#include "litmas/padmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>

#include "litmas/errors.hpp"
#include "litmas/kvconfig.hpp"

namespace litmas::pad {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Sorted per-class scores.
struct Split {
  std::vector<double> bona;
  std::vector<double> spoof;
};

Split split_scores(std::span<const ScoreRecord> scores) {
  Split s;
  for (const ScoreRecord& r : scores) {
    if (!std::isfinite(r.score)) {
      throw MetricUndefinedError("non-finite score for record '" + r.id + "'");
    }
    (r.label == Label::bonafide ? s.bona : s.spoof).push_back(r.score);
  }
  if (s.bona.empty() || s.spoof.empty()) {
    throw MetricUndefinedError("metric undefined: score set needs both bonafide and spoof records");
  }
  std::sort(s.bona.begin(), s.bona.end());
  std::sort(s.spoof.begin(), s.spoof.end());
  return s;
}

std::vector<double> thresholds_of(const Split& s) {
  std::vector<double> all;
  all.reserve(s.bona.size() + s.spoof.size());
  std::merge(s.bona.begin(), s.bona.end(), s.spoof.begin(), s.spoof.end(),
             std::back_inserter(all));
  all.erase(std::unique(all.begin(), all.end()), all.end());
  std::vector<double> t;
  t.reserve(all.size() + 1);
  t.push_back(-kInf);
  for (std::size_t i = 0; i + 1 < all.size(); ++i) {
    double mid = all[i] + (all[i + 1] - all[i]) / 2.0;
    // Adjacent doubles: the midpoint rounds onto a score. Accepting from the
    // upper score reproduces the intended operating point.
    if (!(mid > all[i])) mid = all[i + 1];
    t.push_back(mid);
  }
  t.push_back(kInf);
  return t;
}

// Integer error counts at a threshold.
struct Counts {
  std::size_t spoof_accepted;
  std::size_t bona_rejected;
};

Counts counts_at(const Split& s, double threshold) {
  const auto bona_rej = static_cast<std::size_t>(
      std::lower_bound(s.bona.begin(), s.bona.end(), threshold) - s.bona.begin());
  const auto spoof_rej = static_cast<std::size_t>(
      std::lower_bound(s.spoof.begin(), s.spoof.end(), threshold) - s.spoof.begin());
  return {s.spoof.size() - spoof_rej, bona_rej};
}

OperatingPoint rates(const Split& s, Counts c) {
  return {static_cast<double>(c.spoof_accepted) / static_cast<double>(s.spoof.size()),
          static_cast<double>(c.bona_rejected) / static_cast<double>(s.bona.size())};
}

}  // namespace

std::vector<double> candidate_thresholds(std::span<const ScoreRecord> scores) {
  return thresholds_of(split_scores(scores));
}

std::vector<RocPoint> roc(std::span<const ScoreRecord> scores) {
  const Split s = split_scores(scores);
  std::vector<RocPoint> out;
  for (double t : thresholds_of(s)) {
    const auto r = rates(s, counts_at(s, t));
    out.push_back({t, r.apcer, r.bpcer});
  }
  return out;
}

double auc(std::span<const ScoreRecord> scores) {
  const Split s = split_scores(scores);
  // Twice the Mann-Whitney U, kept integral so ties stay exact.
  std::uint64_t twice_u = 0;
  for (double b : s.bona) {
    const auto lo = std::lower_bound(s.spoof.begin(), s.spoof.end(), b);
    const auto hi = std::upper_bound(lo, s.spoof.end(), b);
    twice_u += 2 * static_cast<std::uint64_t>(lo - s.spoof.begin()) +
               static_cast<std::uint64_t>(hi - lo);
  }
  return static_cast<double>(twice_u) /
         (2.0 * static_cast<double>(s.bona.size()) * static_cast<double>(s.spoof.size()));
}

EerResult eer(std::span<const ScoreRecord> scores) {
  const Split s = split_scores(scores);
  // Compare rates as exact rationals scaled by n_spoof * n_bona.
  const auto nb = static_cast<std::int64_t>(s.bona.size());
  const auto ns = static_cast<std::int64_t>(s.spoof.size());
  bool have = false;
  std::int64_t best_gap = 0, best_sum = 0;
  double best_t = 0;
  Counts best_c{};
  for (double t : thresholds_of(s)) {
    const Counts c = counts_at(s, t);
    const std::int64_t a = static_cast<std::int64_t>(c.spoof_accepted) * nb;
    const std::int64_t b = static_cast<std::int64_t>(c.bona_rejected) * ns;
    const std::int64_t gap = a > b ? a - b : b - a;
    const std::int64_t sum = a + b;
    // Thresholds ascend, so strict comparisons keep the smallest on ties.
    if (!have || gap < best_gap || (gap == best_gap && sum < best_sum)) {
      have = true;
      best_gap = gap;
      best_sum = sum;
      best_t = t;
      best_c = c;
    }
  }
  const auto r = rates(s, best_c);
  return {(r.apcer + r.bpcer) / 2.0, best_t, r.apcer, r.bpcer};
}

OperatingPoint apcer_bpcer_at(std::span<const ScoreRecord> scores, double threshold) {
  const Split s = split_scores(scores);
  return rates(s, counts_at(s, threshold));
}

BpcerAtApcer bpcer_at_apcer(std::span<const ScoreRecord> scores, double target) {
  if (!(target >= 0.0 && target <= 1.0)) {
    throw ParameterError("APCER target must lie in [0, 1]");
  }
  const Split s = split_scores(scores);
  const double ns = static_cast<double>(s.spoof.size());
  const double allowed = std::floor(target * ns + 1e-9);
  const bool coarse = ns * target < 1.0 - 1e-12;
  for (double t : thresholds_of(s)) {
    const Counts c = counts_at(s, t);
    if (static_cast<double>(c.spoof_accepted) <= allowed) {
      const auto r = rates(s, c);
      return {r.bpcer, t, r.apcer, coarse};
    }
  }
  // +inf always accepts nothing, so the loop returns before here.
  throw MetricUndefinedError("no threshold meets the APCER target");
}

void TdcfParams::validate() const {
  for (double p : {p_target, p_nontarget, p_spoof}) {
    if (!(p > 0.0)) throw ParameterError("t-DCF priors must be positive");
  }
  if (std::abs(p_target + p_nontarget + p_spoof - 1.0) > 1e-9) {
    throw ParameterError("t-DCF priors must sum to 1");
  }
  for (double c : {c_miss_asv, c_fa_asv, c_miss_cm, c_fa_cm, c_fa_spoof}) {
    if (!(c > 0.0)) throw ParameterError("t-DCF costs must be positive");
  }
  for (double r : {asv_miss_rate, asv_fa_rate, asv_spoof_pass_rate}) {
    if (!(r >= 0.0 && r <= 1.0)) throw ParameterError("ASV rates must lie in [0, 1]");
  }
}

TdcfCoefficients tdcf_coefficients(const TdcfParams& p) {
  p.validate();
  TdcfCoefficients k{};
  if (p.variant == TdcfVariant::asvspoof2019) {
    k.c0 = 0.0;
    k.c1 = p.p_target * (p.c_miss_cm - p.c_miss_asv * p.asv_miss_rate) -
           p.p_nontarget * p.c_fa_asv * p.asv_fa_rate;
    k.c2 = p.c_fa_cm * p.p_spoof * p.asv_spoof_pass_rate;
  } else {
    k.c0 = p.p_target * p.c_miss_asv * p.asv_miss_rate +
           p.p_nontarget * p.c_fa_asv * p.asv_fa_rate;
    k.c1 = p.p_target * p.c_miss_asv - k.c0;
    k.c2 = p.p_spoof * p.c_fa_spoof * p.asv_spoof_pass_rate;
  }
  if (!(k.c1 > 0.0) || !(k.c2 > 0.0)) {
    throw ParameterError("degenerate t-DCF parameters: C1 = " + std::to_string(k.c1) +
                         ", C2 = " + std::to_string(k.c2));
  }
  k.norm = k.c0 + std::min(k.c1, k.c2);
  return k;
}

double tdcf_at(std::span<const ScoreRecord> scores, const TdcfParams& params, double threshold) {
  const auto k = tdcf_coefficients(params);
  const auto r = apcer_bpcer_at(scores, threshold);
  return (k.c0 + k.c1 * r.bpcer + k.c2 * r.apcer) / k.norm;
}

TdcfResult min_tdcf(std::span<const ScoreRecord> scores, const TdcfParams& params) {
  const auto k = tdcf_coefficients(params);
  const Split s = split_scores(scores);
  TdcfResult best{kInf, 0.0};
  for (double t : thresholds_of(s)) {
    const auto r = rates(s, counts_at(s, t));
    const double v = (k.c0 + k.c1 * r.bpcer + k.c2 * r.apcer) / k.norm;
    if (v < best.min_tdcf) best = {v, t};
  }
  return best;
}

Grouping parse_grouping(std::string_view s) {
  if (s == "none") return Grouping::none;
  if (s == "modality") return Grouping::modality;
  if (s == "dataset") return Grouping::dataset;
  if (s == "both") return Grouping::both;
  throw ConfigError("unknown grouping '" + std::string(s) + "'");
}

const MetricsRow* MetricsReport::find(std::string_view kind, std::string_view group) const {
  for (const auto& r : rows) {
    if (r.kind == kind && r.group == group) return &r;
  }
  return nullptr;
}

namespace {

MetricsRow compute_row(std::string group, std::string kind, std::span<const ScoreRecord> scores,
                       const EvalOptions& opt) {
  MetricsRow row;
  row.group = std::move(group);
  row.kind = std::move(kind);
  std::size_t nb = 0;
  for (const auto& r : scores) nb += r.label == Label::bonafide;
  if (nb == 0 || nb == scores.size()) {
    row.flags.push_back("undefined");
    return row;
  }
  row.defined = true;
  row.auc = auc(scores);
  const EerResult e = eer(scores);
  row.eer = e.eer;
  row.eer_threshold = e.threshold;
  row.apcer_at_eer = e.apcer;
  row.bpcer_at_eer = e.bpcer;
  const BpcerAtApcer b = bpcer_at_apcer(scores, opt.apcer_target);
  row.bpcer_at_apcer = b.bpcer;
  if (b.coarse_resolution) row.flags.push_back("coarse_apcer");
  if (opt.tdcf_groups.count(row.group)) row.min_tdcf = min_tdcf(scores, opt.tdcf).min_tdcf;
  return row;
}

}  // namespace

MetricsReport evaluate(std::span<const ScoreRecord> scores, const EvalOptions& options) {
  MetricsReport report;
  report.rows.push_back(compute_row("overall", "overall", scores, options));

  auto grouped = [&](const char* kind, auto key) {
    std::map<std::string, std::vector<ScoreRecord>> groups;
    for (const auto& r : scores) {
      const std::string& k = key(r);
      if (!k.empty()) groups[k].push_back(r);
    }
    for (const auto& [name, members] : groups) {
      report.rows.push_back(compute_row(name, kind, members, options));
    }
  };
  if (options.grouping == Grouping::modality || options.grouping == Grouping::both) {
    grouped("modality", [](const ScoreRecord& r) -> const std::string& { return r.modality; });
  }
  if (options.grouping == Grouping::dataset || options.grouping == Grouping::both) {
    grouped("dataset", [](const ScoreRecord& r) -> const std::string& { return r.dataset_tag; });
  }
  return report;
}

std::string format_report_csv(const MetricsReport& report, const EvalOptions& options) {
  std::string out;
  out += "# litmas-report v1\n";
  out += "# accept: score >= threshold; candidates: midpoints of adjacent distinct scores "
         "plus -inf/+inf\n";
  out += "# eer: threshold minimizing |APCER-BPCER| (ties: lower mean error, then lower "
         "threshold), eer = (APCER+BPCER)/2 there\n";
  out += "# bpcer_at_apcer1: smallest threshold with APCER <= " +
         format_double(options.apcer_target) + ", no interpolation\n";
  out += std::string("# min_tdcf: ") +
         (options.tdcf.variant == TdcfVariant::asvspoof2019 ? "asvspoof2019" : "revised") +
         " variant\n";
  out += kReportColumns;
  out += '\n';
  for (const auto& r : report.rows) {
    out += r.group + "," + r.kind + ",";
    if (r.defined) {
      for (double v : {r.auc, r.eer, r.eer_threshold, r.apcer_at_eer, r.bpcer_at_eer,
                       r.bpcer_at_apcer}) {
        out += format_double(v) + ",";
      }
    } else {
      out += ",,,,,,";
    }
    if (r.min_tdcf) out += format_double(*r.min_tdcf);
    out += ",";
    for (std::size_t i = 0; i < r.flags.size(); ++i) {
      if (i) out += ';';
      out += r.flags[i];
    }
    out += '\n';
  }
  return out;
}

namespace {
constexpr std::string_view kScoreMagic = "litmas-scores v1";
}

std::vector<ScoreRecord> parse_score_text(std::string_view text) {
  std::vector<ScoreRecord> out;
  bool header = false;
  std::size_t line_no = 0, pos = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty() || line.front() == '#') continue;
    if (!header) {
      if (line != kScoreMagic) throw ParseError("expected header 'litmas-scores v1'", line_no);
      header = true;
      continue;
    }
    std::vector<std::string_view> f;
    std::size_t start = 0;
    while (true) {
      const auto tab = line.find('\t', start);
      f.push_back(line.substr(start, tab == std::string_view::npos ? tab : tab - start));
      if (tab == std::string_view::npos) break;
      start = tab + 1;
    }
    if (f.size() != 5) {
      throw ParseError("expected 5 tab-separated fields, got " + std::to_string(f.size()),
                       line_no);
    }
    ScoreRecord r;
    r.id = std::string(f[0]);
    r.modality = std::string(f[1]);
    r.dataset_tag = std::string(f[2]);
    if (f[3] == "0") {
      r.label = Label::bonafide;
    } else if (f[3] == "1") {
      r.label = Label::spoof;
    } else {
      throw ParseError("label must be 0 or 1", line_no);
    }
    const auto v = parse_double(f[4]);
    if (!v || !std::isfinite(*v)) {
      throw ParseError("invalid score '" + std::string(f[4]) + "'", line_no);
    }
    r.score = *v;
    out.push_back(std::move(r));
  }
  if (!header) throw ParseError("missing header 'litmas-scores v1'", line_no);
  return out;
}

std::vector<ScoreRecord> load_score_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open score file '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_score_text(ss.str());
}

std::string format_score_text(std::span<const ScoreRecord> scores) {
  std::string out(kScoreMagic);
  out += '\n';
  for (const auto& r : scores) {
    out += r.id + '\t' + r.modality + '\t' + r.dataset_tag + '\t' +
           (r.label == Label::bonafide ? '0' : '1') + '\t' + format_double(r.score) + '\n';
  }
  return out;
}

void write_score_file(std::span<const ScoreRecord> scores, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << format_score_text(scores);
  if (!out) throw IoError("write failure on '" + path.string() + "'");
}

TdcfParams load_tdcf_params(const std::filesystem::path& path) {
  const auto kv = KeyValueConfig::load(path);
  kv.reject_unknown({"p_target", "p_nontarget", "p_spoof", "c_miss_asv", "c_fa_asv",
                     "c_miss_cm", "c_fa_cm", "c_fa_spoof", "asv_miss_rate", "asv_fa_rate",
                     "asv_spoof_pass_rate", "variant"});
  TdcfParams p;
  p.p_target = kv.get_double("p_target", p.p_target);
  p.p_nontarget = kv.get_double("p_nontarget", p.p_nontarget);
  p.p_spoof = kv.get_double("p_spoof", p.p_spoof);
  p.c_miss_asv = kv.get_double("c_miss_asv", p.c_miss_asv);
  p.c_fa_asv = kv.get_double("c_fa_asv", p.c_fa_asv);
  p.c_miss_cm = kv.get_double("c_miss_cm", p.c_miss_cm);
  p.c_fa_cm = kv.get_double("c_fa_cm", p.c_fa_cm);
  p.c_fa_spoof = kv.get_double("c_fa_spoof", p.c_fa_spoof);
  p.asv_miss_rate = kv.get_double("asv_miss_rate", p.asv_miss_rate);
  p.asv_fa_rate = kv.get_double("asv_fa_rate", p.asv_fa_rate);
  p.asv_spoof_pass_rate = kv.get_double("asv_spoof_pass_rate", p.asv_spoof_pass_rate);
  const std::string variant = kv.get("variant").value_or("asvspoof2019");
  if (variant == "asvspoof2019" || variant == "constrained") {
    p.variant = TdcfVariant::asvspoof2019;
  } else if (variant == "revised") {
    p.variant = TdcfVariant::revised;
  } else {
    throw ConfigError("unknown t-DCF variant '" + variant + "'");
  }
  try {
    p.validate();
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
  return p;
}

}  // namespace litmas::pad
