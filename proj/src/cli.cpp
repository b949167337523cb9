#include "litmas/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "litmas/dataio.hpp"
#include "litmas/digest.hpp"
#include "litmas/errors.hpp"
#include "litmas/kvconfig.hpp"
#include "litmas/model.hpp"
#include "litmas/padmetrics.hpp"
#include "litmas/trainer.hpp"

namespace litmas::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// Every output carries a manifest with enough to rerun it: the argument
// list, the fully resolved config, and digests of inputs and outputs.
struct Manifest {
  std::string command;
  std::vector<std::string> argv;
  json config = json::object();
  std::uint64_t seed = 0;
  std::vector<fs::path> inputs;
  std::vector<fs::path> outputs;

  void write(const fs::path& path) const {
    json j;
    j["tool"] = "litmas";
    j["version"] = kToolVersion;
    j["command"] = command;
    j["argv"] = argv;
    j["config"] = config;
    j["seed"] = seed;
    auto files = [](const std::vector<fs::path>& paths) {
      json arr = json::array();
      for (const auto& p : paths) {
        arr.push_back({{"path", p.generic_string()}, {"sha256", sha256_file_hex(p)}});
      }
      return arr;
    };
    j["inputs"] = files(inputs);
    j["outputs"] = files(outputs);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write manifest '" + path.string() + "'");
    out << j.dump(2) << '\n';
    if (!out) throw IoError("write failure on '" + path.string() + "'");
  }
};

json kv_json(const KeyValueConfig& kv) {
  json j = json::object();
  for (const auto& [k, v] : kv.entries()) j[k] = v;
  return j;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("write failure on '" + path.string() + "'");
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw IoError("cannot create output directory '" + dir.string() + "'");
  }
}

const std::set<std::string> kSynthKeys = {
    "modalities",    "input_dim",   "modality_separation",   "bonafide_scale",
    "spoof_clusters", "spoof_offset", "spoof_scale",          "bonafide_per_modality",
    "spoof_per_modality", "seed"};

SynthRecipe recipe_from_kv(const KeyValueConfig& kv) {
  kv.reject_unknown(kSynthKeys);
  SynthRecipe r;
  r.modality_names = kv.require_list("modalities");
  r.input_dim = kv.require_uint("input_dim");
  r.modality_separation = kv.require_double("modality_separation");
  r.bonafide_scale = kv.require_double("bonafide_scale");
  r.spoof_clusters = kv.require_uint("spoof_clusters");
  r.spoof_offset = kv.require_double("spoof_offset");
  r.spoof_scale = kv.require_double("spoof_scale");
  r.bonafide_per_modality = kv.require_uint("bonafide_per_modality");
  r.spoof_per_modality = kv.require_uint("spoof_per_modality");
  r.seed = kv.require_uint("seed");
  return r;
}

void print_class_table(std::ostream& out, const DatasetView& train, const DatasetView* test) {
  struct Row {
    std::size_t tr_real = 0, tr_spoof = 0, te_real = 0, te_spoof = 0;
  };
  std::map<std::string, Row> rows;
  for (const auto& s : train.samples()) {
    (s.label == Label::bonafide ? rows[s.dataset_tag].tr_real : rows[s.dataset_tag].tr_spoof)++;
  }
  if (test) {
    for (const auto& s : test->samples()) {
      (s.label == Label::bonafide ? rows[s.dataset_tag].te_real : rows[s.dataset_tag].te_spoof)++;
    }
  }
  Row total;
  out << std::left << std::setw(24) << "Dataset" << std::right << std::setw(12) << "Train Real"
      << std::setw(12) << "Train Spoof" << std::setw(12) << "Test Real" << std::setw(12)
      << "Test Spoof" << '\n';
  auto line = [&](const std::string& name, const Row& r) {
    out << std::left << std::setw(24) << name << std::right << std::setw(12) << r.tr_real
        << std::setw(12) << r.tr_spoof << std::setw(12) << r.te_real << std::setw(12)
        << r.te_spoof << '\n';
  };
  for (const auto& [name, r] : rows) {
    line(name, r);
    total.tr_real += r.tr_real;
    total.tr_spoof += r.tr_spoof;
    total.te_real += r.te_real;
    total.te_spoof += r.te_spoof;
  }
  line("Total", total);
}

// ---- gen-synth -----------------------------------------------------------

struct GenSynthArgs {
  std::string config, out, test_out;
};

int cmd_gen_synth(const GenSynthArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  const auto kv = KeyValueConfig::load(a.config);
  const SynthConfig cfg = recipe_from_kv(kv).build();
  Manifest m{"gen-synth", argv, kv_json(kv), cfg.seed, {a.config}, {}};
  if (a.test_out.empty()) {
    const DatasetView train = gen_synthetic(cfg, "train");
    write_feature_file(train, a.out);
    print_class_table(out, train, nullptr);
    m.outputs = {a.out};
  } else {
    const SynthSplit split = gen_synthetic_split(cfg);
    write_feature_file(split.train, a.out);
    write_feature_file(split.test, a.test_out);
    print_class_table(out, split.train, &split.test);
    m.outputs = {a.out, a.test_out};
  }
  m.write(a.out + ".manifest.json");
  return kOk;
}

// ---- train ---------------------------------------------------------------

struct TrainArgs {
  std::string config, train, out_dir, step = "both", step1_ckpt, val;
  bool no_mac = false, no_mope = false;
  std::vector<std::string> overrides;
};

KeyValueConfig load_train_kv(const std::string& path, const std::vector<std::string>& overrides) {
  KeyValueConfig kv = path.empty() ? KeyValueConfig{} : KeyValueConfig::load(path);
  for (const auto& o : overrides) kv.set_assignment(o);
  return kv;
}

int cmd_train(const TrainArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  KeyValueConfig kv = load_train_kv(a.config, a.overrides);
  if (a.no_mac) kv.set("use_mac_pretrain", "false");
  if (a.no_mope) kv.set("use_mope", "false");
  TrainConfig cfg = TrainConfig::from_kv(kv);
  const bool run1 = a.step == "1" || a.step == "both";
  const bool run2 = a.step == "2" || a.step == "both";
  if (run1 && !cfg.use_mac_pretrain) {
    throw ConfigError("--no-mac disables MAC pre-training; use --step 2");
  }

  const DatasetView train = load_feature_file(a.train);
  if (cfg.dims.input_dim == 0) cfg.dims.input_dim = train.input_dim();
  std::optional<DatasetView> val;
  if (!a.val.empty()) val = load_feature_file(a.val);
  ensure_dir(a.out_dir);
  const fs::path dir(a.out_dir);

  Manifest m{"train", argv, kv_json(cfg.to_kv()), cfg.seed, {a.train}, {}};
  if (!a.config.empty()) m.inputs.push_back(a.config);
  if (val) m.inputs.push_back(a.val);

  std::optional<ModelBundle> step1;
  if (run1) {
    StepResult r = pretrain_step1(cfg, train);
    save_checkpoint(r.bundle, dir / "step1.ckpt");
    r.log.write_csv(dir / "step1_runlog.csv");
    m.outputs.push_back(dir / "step1.ckpt");
    m.outputs.push_back(dir / "step1_runlog.csv");
    out << "step1: " << r.log.epochs.size() << " epochs";
    if (!r.log.epochs.empty()) out << ", final mac loss " << r.log.epochs.back().loss;
    out << '\n';
    step1 = std::move(r.bundle);
  } else if (run2 && cfg.use_mac_pretrain) {
    if (a.step1_ckpt.empty()) {
      throw ConfigError("--step 2 with MAC pre-training needs --step1-ckpt (or pass --no-mac)");
    }
    step1 = load_checkpoint(a.step1_ckpt);
    if (step1->step != StepTag::step1) throw ContractError("--step1-ckpt is not a step1 checkpoint");
    m.inputs.push_back(a.step1_ckpt);
  }
  if (run2) {
    StepResult r = finetune_step2(cfg, train, step1 ? &*step1 : nullptr, val ? &*val : nullptr);
    save_checkpoint(r.bundle, dir / "step2.ckpt");
    r.log.write_csv(dir / "step2_runlog.csv");
    m.outputs.push_back(dir / "step2.ckpt");
    m.outputs.push_back(dir / "step2_runlog.csv");
    out << "step2: " << r.log.epochs.size() << " epochs";
    if (!r.log.epochs.empty()) out << ", final ce loss " << r.log.epochs.back().loss;
    out << '\n';
  }
  m.write(dir / "manifest.json");
  return kOk;
}

// ---- score ---------------------------------------------------------------

struct ScoreArgs {
  std::string ckpt, features, out;
};

int cmd_score(const ScoreArgs& a, const std::vector<std::string>& argv, std::ostream&) {
  const ModelBundle bundle = load_checkpoint(a.ckpt);
  if (bundle.step != StepTag::step2) {
    throw ContractError("score needs a step2 checkpoint; '" + a.ckpt + "' is tagged step1");
  }
  const DatasetView view = load_feature_file(a.features);
  pad::write_score_file(score_view(bundle, view), a.out);
  Manifest m{"score", argv, json::object(), 0, {a.ckpt, a.features}, {a.out}};
  m.write(a.out + ".manifest.json");
  return kOk;
}

// ---- eval ----------------------------------------------------------------

struct EvalArgs {
  std::string scores, group = "both", tdcf_params, out;
  std::vector<std::string> tdcf_groups{"speech"};
  double apcer_target = 0.01;
};

int cmd_eval(const EvalArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  const auto records = pad::load_score_file(a.scores);
  pad::EvalOptions opt;
  opt.grouping = pad::parse_grouping(a.group);
  opt.apcer_target = a.apcer_target;
  opt.tdcf_groups = {a.tdcf_groups.begin(), a.tdcf_groups.end()};
  if (!a.tdcf_params.empty()) opt.tdcf = pad::load_tdcf_params(a.tdcf_params);
  const pad::MetricsReport report = pad::evaluate(records, opt);
  const std::string csv = pad::format_report_csv(report, opt);
  if (a.out.empty()) {
    out << csv;
  } else {
    write_text(a.out, csv);
    Manifest m{"eval", argv, json::object(), 0, {a.scores}, {a.out}};
    if (!a.tdcf_params.empty()) m.inputs.push_back(a.tdcf_params);
    m.config = {{"group", a.group},
                {"apcer_target", format_double(a.apcer_target)},
                {"tdcf_groups", a.tdcf_groups}};
    m.write(a.out + ".manifest.json");
  }
  return report.rows.front().defined ? kOk : kMetricUndefined;
}

// ---- ablate --------------------------------------------------------------

struct AblateArgs {
  std::string config, train, test, out_dir;
  std::vector<std::string> overrides;
  bool serial = false;
};

int cmd_ablate(const AblateArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  const KeyValueConfig kv = load_train_kv(a.config, a.overrides);
  TrainConfig cfg = TrainConfig::from_kv(kv);
  const DatasetView train = load_feature_file(a.train);
  const DatasetView test = load_feature_file(a.test);
  if (cfg.dims.input_dim == 0) cfg.dims.input_dim = train.input_dim();
  ensure_dir(a.out_dir);
  const fs::path dir(a.out_dir);

  const AblationReport report = run_ablation(cfg, train, test, !a.serial);
  Manifest m{"ablate", argv, kv_json(cfg.to_kv()), cfg.seed, {a.train, a.test}, {}};
  if (!a.config.empty()) m.inputs.push_back(a.config);
  for (const auto& row : report.rows) {
    const fs::path ckpt = dir / (std::string("arm_pretrain-") + (row.pretrain ? "yes" : "no") +
                                 "_mope-" + (row.mope ? "yes" : "no") + ".ckpt");
    save_checkpoint(row.bundle, ckpt);
    m.outputs.push_back(ckpt);
  }
  write_text(dir / "ablation.csv", report.to_csv());
  m.outputs.push_back(dir / "ablation.csv");
  m.write(dir / "manifest.json");
  out << report.to_csv();
  return kOk;
}

// ---- export-embeddings ---------------------------------------------------

struct ExportArgs {
  std::string ckpt, features, out, space = "backbone";
};

int cmd_export(const ExportArgs& a, const std::vector<std::string>& argv, std::ostream&) {
  const ModelBundle bundle = load_checkpoint(a.ckpt);
  if (a.space != "backbone" && a.space != "projected") {
    throw ConfigError("--space must be backbone or projected");
  }
  if (a.space == "projected" && !bundle.mope) {
    throw ContractError("projected space needs a step2 checkpoint with projection heads");
  }
  const DatasetView view = load_feature_file(a.features);
  if (view.input_dim() != bundle.dims.input_dim) {
    throw DimensionError("feature dim does not match checkpoint input_dim");
  }
  std::vector<std::size_t> mods;
  for (const auto& s : view.samples()) {
    const auto m = bundle.modalities.find(view.modalities().name(s.modality));
    if (!m) throw ContractError("modality unknown to the checkpoint");
    mods.push_back(*m);
  }
  Tensor e = encode(bundle, feature_matrix(view));
  if (a.space == "projected") e = project(bundle, e, mods);

  std::string csv = "id,modality,label";
  for (std::size_t j = 0; j < e.cols(); ++j) csv += ",e" + std::to_string(j);
  csv += '\n';
  for (std::size_t i = 0; i < view.size(); ++i) {
    const Sample& s = view[i];
    csv += s.id + "," + view.modalities().name(s.modality) + "," +
           std::to_string(label_int(s.label));
    for (double v : e.row(i)) csv += "," + format_double(v);
    csv += '\n';
  }
  write_text(a.out, csv);
  Manifest m{"export-embeddings", argv, {{"space", a.space}}, 0, {a.ckpt, a.features}, {a.out}};
  m.write(a.out + ".manifest.json");
  return kOk;
}

// ---- replay --------------------------------------------------------------

int cmd_replay(const std::string& manifest_path, std::ostream& out, std::ostream& err) {
  std::ifstream in(manifest_path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest '" + manifest_path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed manifest: ") + e.what());
  }
  if (j.value("tool", "") != "litmas" || !j.contains("argv")) {
    throw ConfigError("not a litmas manifest: '" + manifest_path + "'");
  }
  for (const auto& f : j["inputs"]) {
    const std::string path = f.at("path");
    if (sha256_file_hex(path) != f.at("sha256").get<std::string>()) {
      throw ConfigError("input '" + path + "' changed since the manifest was written");
    }
  }
  const auto argv = j["argv"].get<std::vector<std::string>>();
  std::ostringstream quiet;
  const int code = run(argv, quiet, err);
  if (code != kOk) return code;
  std::size_t mismatched = 0;
  for (const auto& f : j["outputs"]) {
    const std::string path = f.at("path");
    const bool same = sha256_file_hex(path) == f.at("sha256").get<std::string>();
    out << (same ? "identical  " : "DIFFERENT  ") << path << '\n';
    mismatched += !same;
  }
  return mismatched ? kFailure : kOk;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const fs::filesystem_error*>(&e)) {
    return kIoError;
  }
  if (dynamic_cast<const DivergenceError*>(&e) ||
      dynamic_cast<const DegenerateEmbeddingError*>(&e)) {
    return kDiverged;
  }
  if (dynamic_cast<const MetricUndefinedError*>(&e)) return kMetricUndefined;
  if (dynamic_cast<const Error*>(&e)) return kConfigError;
  return kFailure;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-modal anti-spoofing: training, scoring and PAD evaluation",
               "litmas"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  GenSynthArgs gen;
  auto* c_gen = app.add_subcommand("gen-synth", "Generate a synthetic multi-modal feature file");
  c_gen->add_option("--config", gen.config, "Synthetic recipe (key = value)")->required();
  c_gen->add_option("--out", gen.out, "Output feature file (train split)")->required();
  c_gen->add_option("--test-out", gen.test_out, "Optional test split drawn from the same process");

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Run Step 1 (MAC pre-training) and/or Step 2 (MoPE)");
  c_train->add_option("--config", tr.config, "Training config (key = value)");
  c_train->add_option("--train", tr.train, "Training feature file")->required();
  c_train->add_option("--out-dir", tr.out_dir, "Output directory")->required();
  c_train->add_option("--step", tr.step, "1, 2 or both")
      ->check(CLI::IsMember({"1", "2", "both"}));
  c_train->add_flag("--no-mac", tr.no_mac, "Skip MAC pre-training; Step 2 trains from scratch");
  c_train->add_flag("--no-mope", tr.no_mope, "One shared projection head instead of experts");
  c_train->add_option("--step1-ckpt", tr.step1_ckpt, "Step 1 checkpoint for --step 2");
  c_train->add_option("--val", tr.val, "Validation feature file for per-epoch EER/AUC");
  c_train->add_option("--set", tr.overrides, "Config override key=value (repeatable)");

  ScoreArgs sc;
  auto* c_score = app.add_subcommand("score", "Write liveness scores for a feature file");
  c_score->add_option("--ckpt", sc.ckpt, "Step 2 checkpoint")->required();
  c_score->add_option("--features", sc.features, "Feature file")->required();
  c_score->add_option("--out", sc.out, "Output score file")->required();

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Compute the PAD metrics report for a score file");
  c_eval->add_option("--scores", ev.scores, "Score file")->required();
  c_eval->add_option("--group", ev.group, "none, modality, dataset or both")
      ->check(CLI::IsMember({"none", "modality", "dataset", "both"}));
  c_eval->add_option("--tdcf-params", ev.tdcf_params, "t-DCF parameter file");
  c_eval->add_option("--tdcf-groups", ev.tdcf_groups, "Groups that get a min t-DCF")
      ->delimiter(',');
  c_eval->add_option("--apcer-target", ev.apcer_target, "APCER for the BPCER@APCER column");
  c_eval->add_option("--out", ev.out, "Report CSV (stdout when omitted)");

  AblateArgs ab;
  auto* c_ablate = app.add_subcommand("ablate", "Train and evaluate the four ablation arms");
  c_ablate->add_option("--config", ab.config, "Training config (key = value)");
  c_ablate->add_option("--train", ab.train, "Training feature file")->required();
  c_ablate->add_option("--test", ab.test, "Test feature file")->required();
  c_ablate->add_option("--out-dir", ab.out_dir, "Output directory")->required();
  c_ablate->add_option("--set", ab.overrides, "Config override key=value (repeatable)");
  c_ablate->add_flag("--serial", ab.serial, "Run the arms one after another");

  ExportArgs ex;
  auto* c_export = app.add_subcommand("export-embeddings", "Dump embeddings as CSV");
  c_export->add_option("--ckpt", ex.ckpt, "Checkpoint")->required();
  c_export->add_option("--features", ex.features, "Feature file")->required();
  c_export->add_option("--out", ex.out, "Output CSV")->required();
  c_export->add_option("--space", ex.space, "backbone or projected")
      ->check(CLI::IsMember({"backbone", "projected"}));

  std::string manifest;
  auto* c_replay = app.add_subcommand("replay", "Re-run a command from its manifest and compare");
  c_replay->add_option("manifest", manifest, "Manifest JSON")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, er;
    const int code = app.exit(e, o, er);
    out << o.str();
    err << er.str();
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*c_gen) return cmd_gen_synth(gen, args, out);
    if (*c_train) return cmd_train(tr, args, out);
    if (*c_score) return cmd_score(sc, args, out);
    if (*c_eval) return cmd_eval(ev, args, out);
    if (*c_ablate) return cmd_ablate(ab, args, out);
    if (*c_export) return cmd_export(ex, args, out);
    if (*c_replay) return cmd_replay(manifest, out, err);
  } catch (const std::exception& e) {
    err << "litmas: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return kFailure;
}

}  // namespace litmas::cli
