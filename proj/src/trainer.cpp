#include "litmas/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <future>

#include "litmas/errors.hpp"
#include "litmas/losses.hpp"
#include "litmas/rng.hpp"

namespace litmas {

void TrainConfig::validate(std::size_t n_modalities) const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be > 0");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) {
    throw ConfigError("weight_decay must be >= 0");
  }
  if (batch_size < 2 * n_modalities) {
    throw ConfigError("batch_size must be >= 2 * number of modalities (" +
                      std::to_string(2 * n_modalities) + ")");
  }
}

namespace {

const std::set<std::string> kTrainKeys = {
    "lr",       "weight_decay",   "batch_size", "epochs_step1",     "epochs_step2",
    "input_dim", "encoder_widths", "embed_dim", "proj_dim",         "seed",
    "use_mac_pretrain", "use_mope", "log_wall_time"};

std::string join_uints(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}

}  // namespace

TrainConfig TrainConfig::from_kv(const KeyValueConfig& kv) {
  kv.reject_unknown(kTrainKeys);
  TrainConfig c;
  c.lr = kv.get_double("lr", c.lr);
  c.weight_decay = kv.get_double("weight_decay", c.weight_decay);
  c.batch_size = kv.get_uint("batch_size", c.batch_size);
  c.epochs_step1 = kv.get_uint("epochs_step1", c.epochs_step1);
  c.epochs_step2 = kv.get_uint("epochs_step2", c.epochs_step2);
  c.dims.input_dim = kv.get_uint("input_dim", c.dims.input_dim);
  if (kv.has("encoder_widths")) {
    c.dims.hidden.clear();
    for (auto w : kv.get_uint_list("encoder_widths", {})) c.dims.hidden.push_back(w);
  }
  c.dims.embed_dim = kv.get_uint("embed_dim", c.dims.embed_dim);
  c.dims.proj_dim = kv.get_uint("proj_dim", c.dims.proj_dim);
  c.seed = kv.get_uint("seed", c.seed);
  c.use_mac_pretrain = kv.get_bool("use_mac_pretrain", c.use_mac_pretrain);
  c.use_mope = kv.get_bool("use_mope", c.use_mope);
  c.log_wall_time = kv.get_bool("log_wall_time", c.log_wall_time);
  return c;
}

KeyValueConfig TrainConfig::to_kv() const {
  KeyValueConfig kv;
  kv.set("lr", format_double(lr));
  kv.set("weight_decay", format_double(weight_decay));
  kv.set("batch_size", std::to_string(batch_size));
  kv.set("epochs_step1", std::to_string(epochs_step1));
  kv.set("epochs_step2", std::to_string(epochs_step2));
  kv.set("input_dim", std::to_string(dims.input_dim));
  kv.set("encoder_widths", join_uints(dims.hidden));
  kv.set("embed_dim", std::to_string(dims.embed_dim));
  kv.set("proj_dim", std::to_string(dims.proj_dim));
  kv.set("seed", std::to_string(seed));
  kv.set("use_mac_pretrain", use_mac_pretrain ? "true" : "false");
  kv.set("use_mope", use_mope ? "true" : "false");
  kv.set("log_wall_time", log_wall_time ? "true" : "false");
  return kv;
}

void adamw_step(std::span<Tensor* const> params, std::span<const Tensor> grads,
                AdamWState& state, double lr, double weight_decay) {
  if (params.size() != grads.size()) {
    throw DimensionError("adamw_step: " + std::to_string(params.size()) + " params but " +
                         std::to_string(grads.size()) + " grads");
  }
  if (state.m.empty()) {
    for (const Tensor* p : params) {
      state.m.push_back(Tensor::zeros_like(*p));
      state.v.push_back(Tensor::zeros_like(*p));
    }
  }
  if (state.m.size() != params.size()) throw DimensionError("adamw_step: state size mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape() || params[i]->shape() != state.m[i].shape()) {
      throw DimensionError("adamw_step: shape mismatch at parameter " + std::to_string(i));
    }
  }

  state.t += 1;
  const auto& h = state.hyper;
  const double t = static_cast<double>(state.t);
  const double bc1 = 1.0 - std::pow(h.beta1, t);
  const double bc2 = 1.0 - std::pow(h.beta2, t);
  const double decay = 1.0 - lr * weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i]->data();
    const auto g = grads[i].data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t j = 0; j < theta.size(); ++j) {
      m[j] = h.beta1 * m[j] + (1.0 - h.beta1) * g[j];
      v[j] = h.beta2 * v[j] + (1.0 - h.beta2) * g[j] * g[j];
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      theta[j] = theta[j] * decay - lr * (m_hat / (std::sqrt(v_hat) + h.eps));
    }
  }
}

std::string RunLog::to_csv() const {
  std::string out = "epoch,loss,seconds,center_drift,val_eer,val_auc\n";
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  for (const auto& e : epochs) {
    out += std::to_string(e.epoch) + "," + format_double(e.loss) + "," + format_double(e.seconds) +
           "," + opt(e.center_drift) + "," + opt(e.val_eer) + "," + opt(e.val_auc) + "\n";
  }
  return out;
}

void RunLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << to_csv();
  if (!out) throw IoError("write failure on '" + path.string() + "'");
}

namespace {

ModelDims resolve_dims(const TrainConfig& config, const DatasetView& train) {
  ModelDims dims = config.dims;
  if (dims.input_dim == 0) dims.input_dim = train.input_dim();
  if (dims.input_dim != train.input_dim()) {
    throw DimensionError("config input_dim " + std::to_string(dims.input_dim) +
                         " does not match data dim " + std::to_string(train.input_dim()));
  }
  dims.validate();
  return dims;
}

std::vector<Label> labels_of(const DatasetView& view, const Batch& batch) {
  std::vector<Label> out;
  out.reserve(batch.size());
  for (std::size_t i : batch) out.push_back(view[i].label);
  return out;
}

std::uint64_t epoch_seed(std::uint64_t seed, const char* step, std::size_t epoch) {
  return derive_rng(seed, step, epoch)();
}

void check_finite_loss(double loss, const char* step, std::size_t epoch) {
  if (!std::isfinite(loss)) {
    throw DivergenceError(std::string(step) + " diverged: non-finite loss in epoch " +
                          std::to_string(epoch));
  }
}

double center_drift(const CenterBank& a, const CenterBank& b) {
  double s = 0.0;
  for (std::size_t m = 0; m < a.size(); ++m) {
    for (std::size_t j = 0; j < a.centers[m].numel(); ++j) {
      const double d = a.centers[m][j] - b.centers[m][j];
      s += d * d;
    }
  }
  return std::sqrt(s);
}

void apply_gradients(ModelBundle& bundle, const BoundModel& bound, AdamWState& opt,
                     const TrainConfig& config) {
  std::vector<Tensor> grads;
  grads.reserve(bound.params().size());
  for (const auto& p : bound.params()) grads.push_back(p.grad());
  const auto params = bundle.parameters();
  adamw_step(params, grads, opt, config.lr, config.weight_decay);
}

using Clock = std::chrono::steady_clock;

double elapsed(const TrainConfig& config, Clock::time_point start) {
  if (!config.log_wall_time) return 0.0;
  return std::chrono::duration<double>(Clock::now() - start).count();
}

}  // namespace

StepResult pretrain_step1(const TrainConfig& config, const DatasetView& train) {
  config.validate(train.present_modalities().size());
  const ModelDims dims = resolve_dims(config, train);
  StepResult result{init_model(dims, train.modalities(), config.seed), {}};
  ModelBundle& bundle = result.bundle;
  CenterBank bank = update_centers(bundle, train);
  AdamWState opt;

  for (std::size_t epoch = 1; epoch <= config.epochs_step1; ++epoch) {
    const auto start = Clock::now();
    const auto batches =
        make_balanced_batches(train, config.batch_size, epoch_seed(config.seed, "step1", epoch));
    double loss_sum = 0.0;
    for (const Batch& batch : batches) {
      ng::Tape tape;
      BoundModel model(tape, bundle, true);
      MacBatch mb{model.encode(tape.constant(feature_matrix(train, batch))),
                  labels_of(train, batch), modality_ids(train, batch)};
      const ng::Value loss = mac_loss(mb, bank);
      check_finite_loss(loss.tensor().item(), "step 1", epoch);
      loss_sum += loss.tensor().item();
      tape.backward(loss);
      apply_gradients(bundle, model, opt, config);
    }
    CenterBank next = update_centers(bundle, train, &bank);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = loss_sum / static_cast<double>(batches.size());
    rec.center_drift = center_drift(bank, next);
    bank = std::move(next);
    rec.seconds = elapsed(config, start);
    result.log.epochs.push_back(rec);
  }
  bundle.centers = std::move(bank);
  bundle.step = StepTag::step1;
  return result;
}

StepResult finetune_step2(const TrainConfig& config, const DatasetView& train,
                          const ModelBundle* step1, const DatasetView* validation) {
  config.validate(train.present_modalities().size());
  const ModelDims dims = resolve_dims(config, train);
  StepResult result;
  ModelBundle& bundle = result.bundle;
  if (config.use_mac_pretrain) {
    if (!step1) throw ContractError("use_mac_pretrain requires a step1 checkpoint");
    if (step1->step != StepTag::step1) {
      throw ContractError("expected a step1 checkpoint for fine-tuning, got step2");
    }
    if (step1->dims.input_dim != dims.input_dim || step1->dims.hidden != dims.hidden ||
        step1->dims.embed_dim != dims.embed_dim) {
      throw DimensionError("step1 checkpoint dims do not match the training config");
    }
    if (step1->modalities != train.modalities()) {
      throw DimensionError("step1 checkpoint modality table differs from the training data");
    }
    bundle.dims = dims;
    bundle.modalities = step1->modalities;
    bundle.encoder = step1->encoder;
  } else {
    bundle = init_model(dims, train.modalities(), config.seed);
  }
  attach_heads(bundle, config.use_mope ? HeadRouting::per_modality : HeadRouting::shared,
               config.seed);
  AdamWState opt;

  for (std::size_t epoch = 1; epoch <= config.epochs_step2; ++epoch) {
    const auto start = Clock::now();
    const auto batches =
        make_balanced_batches(train, config.batch_size, epoch_seed(config.seed, "step2", epoch));
    double loss_sum = 0.0;
    for (const Batch& batch : batches) {
      ng::Tape tape;
      BoundModel model(tape, bundle, true);
      const auto mods = modality_ids(train, batch);
      std::vector<int> labels;
      for (std::size_t i : batch) labels.push_back(label_int(train[i].label));
      const ng::Value logits =
          model.classify(model.project(model.encode(tape.constant(feature_matrix(train, batch))),
                                       mods));
      const ng::Value loss = cross_entropy(logits, labels);
      check_finite_loss(loss.tensor().item(), "step 2", epoch);
      loss_sum += loss.tensor().item();
      tape.backward(loss);
      apply_gradients(bundle, model, opt, config);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = loss_sum / static_cast<double>(batches.size());
    if (validation) {
      const auto scores = score_view(bundle, *validation);
      try {
        rec.val_auc = pad::auc(scores);
        rec.val_eer = pad::eer(scores).eer;
      } catch (const MetricUndefinedError&) {
      }
    }
    rec.seconds = elapsed(config, start);
    result.log.epochs.push_back(rec);
  }
  bundle.centers = update_centers(bundle, train);
  return result;
}

std::vector<pad::ScoreRecord> score_view(const ModelBundle& bundle, const DatasetView& view) {
  if (bundle.step != StepTag::step2) {
    throw ContractError("scoring requires a step2 checkpoint (got step1)");
  }
  if (view.input_dim() != bundle.dims.input_dim) {
    throw DimensionError("feature dim " + std::to_string(view.input_dim()) +
                         " does not match checkpoint input_dim " +
                         std::to_string(bundle.dims.input_dim));
  }
  // Route by name so files with a reordered modality table still score.
  std::vector<std::size_t> mods;
  mods.reserve(view.size());
  for (const Sample& s : view.samples()) {
    const auto m = bundle.modalities.find(view.modalities().name(s.modality));
    if (!m) {
      throw ContractError("modality '" + view.modalities().name(s.modality) +
                          "' is unknown to the checkpoint");
    }
    mods.push_back(*m);
  }
  const Tensor logits =
      classify(bundle, project(bundle, encode(bundle, feature_matrix(view)), mods));
  std::vector<pad::ScoreRecord> out;
  out.reserve(view.size());
  for (std::size_t i = 0; i < view.size(); ++i) {
    const Sample& s = view[i];
    out.push_back({s.id, view.modalities().name(s.modality), s.dataset_tag, s.label,
                   liveness_score(logits.row(i))});
  }
  return out;
}

std::string AblationReport::to_csv() const {
  std::string out = "pretrain,mope,auc,eer\n";
  for (const auto& r : rows) {
    out += std::string(r.pretrain ? "yes" : "no") + "," + (r.mope ? "yes" : "no") + "," +
           format_double(r.auc) + "," + format_double(r.eer) + "\n";
  }
  return out;
}

AblationReport run_ablation(const TrainConfig& config, const DatasetView& train,
                            const DatasetView& test, bool parallel) {
  // Both pretrained arms share one Step-1 run: same seed, same data.
  TrainConfig pre = config;
  pre.use_mac_pretrain = true;
  const StepResult step1 = pretrain_step1(pre, train);

  const std::pair<bool, bool> arms[4] = {{false, false}, {true, false}, {false, true}, {true, true}};
  auto run_arm = [&](bool pretrain, bool mope) {
    TrainConfig c = config;
    c.use_mac_pretrain = pretrain;
    c.use_mope = mope;
    StepResult r = finetune_step2(c, train, pretrain ? &step1.bundle : nullptr);
    const auto scores = score_view(r.bundle, test);
    return AblationRow{pretrain, mope, pad::auc(scores), pad::eer(scores).eer, std::move(r.bundle)};
  };

  AblationReport report;
  if (parallel) {
    std::vector<std::future<AblationRow>> futures;
    for (const auto& [p, m] : arms) futures.push_back(std::async(std::launch::async, run_arm, p, m));
    for (auto& f : futures) report.rows.push_back(f.get());
  } else {
    for (const auto& [p, m] : arms) report.rows.push_back(run_arm(p, m));
  }
  return report;
}

}  // namespace litmas
