#include <gtest/gtest.h>

#include <cmath>

#include "litmas/errors.hpp"
#include "litmas/kvconfig.hpp"
#include "litmas/losses.hpp"
#include "litmas/model.hpp"
#include "litmas/padmetrics.hpp"
#include "litmas/trainer.hpp"

using namespace litmas;

namespace {

DatasetView separable(std::uint64_t seed = 7) {
  SynthRecipe r;
  r.modality_names = {"speech", "face"};
  r.input_dim = 8;
  r.modality_separation = 4.0;
  r.spoof_clusters = 2;
  r.spoof_offset = 6.0;
  r.bonafide_per_modality = 60;
  r.spoof_per_modality = 60;
  r.seed = seed;
  return gen_synthetic(r.build());
}

TrainConfig small_config() {
  TrainConfig c;
  c.dims = ModelDims{8, {32}, 16, 16};
  c.lr = 3e-3;
  c.batch_size = 32;
  c.epochs_step1 = 15;
  c.epochs_step2 = 15;
  c.seed = 7;
  return c;
}

double step(double theta, double g, AdamWState& state, double lr, double wd) {
  Tensor p = Tensor::vector({theta});
  Tensor* params[] = {&p};
  const Tensor grads[] = {Tensor::vector({g})};
  adamw_step(params, grads, state, lr, wd);
  return p[0];
}

}  // namespace

TEST(AdamW, FirstStepIsLearningRate) {
  AdamWState s;
  EXPECT_EQ(step(1.0, 1.0, s, 0.1, 0.0), 1.0 - 0.1 * (1.0 / (1.0 + 1e-8)));
  EXPECT_NEAR(step(0.0, 1.0, s = AdamWState{}, 0.1, 0.0), -0.1, 1e-8);
  EXPECT_EQ(s.t, 1u);
}

TEST(AdamW, ZeroGradientWithoutDecayIsFixedPoint) {
  AdamWState s;
  double theta = 0.75;
  for (int i = 0; i < 50; ++i) theta = step(theta, 0.0, s, 0.1, 0.0);
  EXPECT_EQ(theta, 0.75);
}

TEST(AdamW, PureDecayStep) {
  AdamWState s;
  EXPECT_EQ(step(1.0, 0.0, s, 0.1, 0.5), 0.95);
}

TEST(AdamW, DecayIsExactlyGeometric) {
  AdamWState s;
  double theta = 3.0, expected = 3.0;
  const double lr = 0.01, wd = 0.3;
  for (int i = 0; i < 500; ++i) {
    theta = step(theta, 0.0, s, lr, wd);
    expected *= 1.0 - lr * wd;
    ASSERT_EQ(theta, expected) << "step " << i;
  }
}

TEST(AdamW, MinimizesQuadratic) {
  Tensor theta = Tensor::vector({1.0, 1.0});
  Tensor* params[] = {&theta};
  AdamWState s;
  auto f = [&] { return theta[0] * theta[0] + theta[1] * theta[1]; };
  const double f0 = f();
  for (int i = 0; i < 200; ++i) {
    const Tensor grads[] = {Tensor::vector({2 * theta[0], 2 * theta[1]})};
    adamw_step(params, grads, s, 0.05, 0.0);
  }
  EXPECT_LE(f(), f0 / 100.0);
}

TEST(AdamW, ShapeMismatchRejected) {
  Tensor p = Tensor::vector({1, 2});
  Tensor* params[] = {&p};
  const Tensor grads[] = {Tensor::vector({1})};
  AdamWState s;
  EXPECT_THROW(adamw_step(params, grads, s, 0.1, 0.0), DimensionError);
}

TEST(TrainConfig, KeyValueRoundTripAndValidation) {
  TrainConfig c = small_config();
  c.use_mope = false;
  const TrainConfig back = TrainConfig::from_kv(c.to_kv());
  EXPECT_EQ(back.to_kv().entries(), c.to_kv().entries());
  EXPECT_EQ(back.dims, c.dims);
  EXPECT_FALSE(back.use_mope);
  KeyValueConfig kv;
  kv.set("learning_rate", "0.1");
  EXPECT_THROW(TrainConfig::from_kv(kv), ConfigError);
  TrainConfig bad = small_config();
  bad.batch_size = 3;
  EXPECT_THROW(bad.validate(2), ConfigError);
  bad = small_config();
  bad.lr = 0.0;
  EXPECT_THROW(bad.validate(2), ConfigError);
}

TEST(Step1, ZeroEpochsReturnsInitialization) {
  TrainConfig c = small_config();
  c.epochs_step1 = 0;
  const DatasetView data = separable();
  const StepResult r = pretrain_step1(c, data);
  const ModelBundle init = init_model(c.dims, data.modalities(), c.seed);
  EXPECT_EQ(r.bundle.encoder, init.encoder);
  EXPECT_EQ(r.bundle.step, StepTag::step1);
  EXPECT_TRUE(r.log.epochs.empty());
  ASSERT_TRUE(r.bundle.centers);
  EXPECT_EQ(r.bundle.centers->centers, update_centers(init, data).centers);
}

TEST(Step1, LossDecreasesAndSettles) {
  const StepResult r = pretrain_step1(small_config(), separable());
  const auto& e = r.log.epochs;
  ASSERT_EQ(e.size(), 15u);
  for (std::size_t i = 0; i < e.size(); ++i) {
    EXPECT_EQ(e[i].epoch, i + 1);
    EXPECT_TRUE(e[i].center_drift);
  }
  EXPECT_LT(e.back().loss, e.front().loss);
  for (std::size_t i = e.size() - 10; i < e.size(); ++i) {
    EXPECT_LE(e[i].loss, e[i - 1].loss * 1.05) << "epoch " << e[i].epoch;
  }
}

TEST(Step1, DeterministicPerSeed) {
  TrainConfig c = small_config();
  c.epochs_step1 = 3;
  const DatasetView data = separable();
  const StepResult a = pretrain_step1(c, data), b = pretrain_step1(c, data);
  EXPECT_EQ(serialize_checkpoint(a.bundle), serialize_checkpoint(b.bundle));
  EXPECT_EQ(a.log.to_csv(), b.log.to_csv());
  c.seed = 8;
  EXPECT_NE(serialize_checkpoint(pretrain_step1(c, data).bundle), serialize_checkpoint(a.bundle));
}

TEST(Step2, SharedHeadArm) {
  TrainConfig c = small_config();
  c.use_mac_pretrain = false;
  c.use_mope = false;
  c.epochs_step2 = 1;
  const StepResult r = finetune_step2(c, separable());
  ASSERT_TRUE(r.bundle.mope);
  EXPECT_EQ(r.bundle.mope->heads.size(), 1u);
  EXPECT_EQ(r.bundle.mope->routing, HeadRouting::shared);
  EXPECT_EQ(r.bundle.step, StepTag::step2);
}

TEST(Step2, UntrainedModelHasZeroMargin) {
  TrainConfig c = small_config();
  c.use_mac_pretrain = false;
  c.epochs_step2 = 0;
  const DatasetView data = separable();
  const StepResult r = finetune_step2(c, data);
  for (const auto& s : score_view(r.bundle, data)) EXPECT_EQ(s.score, 0.0);
}

TEST(Step2, SeparableFixtureIsLearned) {
  const TrainConfig c = small_config();
  const DatasetView data = separable();
  const StepResult s1 = pretrain_step1(c, data);
  const StepResult s2 = finetune_step2(c, data, &s1.bundle, &data);
  std::size_t correct = 0;
  const auto scores = score_view(s2.bundle, data);
  for (const auto& s : scores) correct += (s.score > 0) == (s.label == Label::bonafide);
  EXPECT_GT(static_cast<double>(correct) / static_cast<double>(scores.size()), 0.95);
  // Per-epoch validation metrics agree with an evaluation of the final model.
  ASSERT_TRUE(s2.log.epochs.back().val_auc);
  EXPECT_DOUBLE_EQ(*s2.log.epochs.back().val_auc, pad::auc(scores));
  EXPECT_DOUBLE_EQ(*s2.log.epochs.back().val_eer, pad::eer(scores).eer);
}

TEST(Step2, RequiresMatchingStep1Bundle) {
  TrainConfig c = small_config();
  c.epochs_step1 = 0;
  c.epochs_step2 = 0;
  const DatasetView data = separable();
  EXPECT_THROW(finetune_step2(c, data), ContractError);
  const StepResult s1 = pretrain_step1(c, data);
  TrainConfig other = c;
  other.dims.embed_dim = 12;
  EXPECT_THROW(finetune_step2(other, data, &s1.bundle), DimensionError);
  const StepResult s2 = finetune_step2(c, data, &s1.bundle);
  EXPECT_THROW(finetune_step2(c, data, &s2.bundle), ContractError);
  EXPECT_THROW(score_view(s1.bundle, data), ContractError);
}

TEST(Step2, EncoderFromStep1IsTheStartingPoint) {
  TrainConfig c = small_config();
  c.epochs_step2 = 0;
  const DatasetView data = separable();
  const StepResult s1 = pretrain_step1(c, data);
  EXPECT_EQ(finetune_step2(c, data, &s1.bundle).bundle.encoder, s1.bundle.encoder);
}

TEST(RunLog, CsvLayout) {
  RunLog log;
  log.epochs.push_back({1, 0.5, 0.0, 0.25, std::nullopt, std::nullopt});
  log.epochs.push_back({2, 0.125, 0.0, std::nullopt, 0.1, 0.9});
  EXPECT_EQ(log.to_csv(),
            "epoch,loss,seconds,center_drift,val_eer,val_auc\n"
            "1,0.5,0,0.25,,\n"
            "2,0.125,0,,0.1,0.9\n");
}

TEST(Ablation, FourArmsInFixedOrder) {
  TrainConfig c = small_config();
  c.epochs_step1 = 2;
  c.epochs_step2 = 2;
  const DatasetView train = separable(7), test = separable(8);
  const AblationReport r = run_ablation(c, train, test, false);
  ASSERT_EQ(r.rows.size(), 4u);
  const bool want[4][2] = {{false, false}, {true, false}, {false, true}, {true, true}};
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(r.rows[i].pretrain, want[i][0]);
    EXPECT_EQ(r.rows[i].mope, want[i][1]);
  }
  EXPECT_EQ(r.to_csv().substr(0, r.to_csv().find('\n')), "pretrain,mope,auc,eer");
  const AblationReport p = run_ablation(c, train, test, true);
  EXPECT_EQ(p.to_csv(), r.to_csv());
}

TEST(Ablation, ZeroEpochsGiveIdenticalArms) {
  TrainConfig c = small_config();
  c.epochs_step1 = 0;
  c.epochs_step2 = 0;
  const AblationReport r = run_ablation(c, separable(7), separable(8));
  for (const auto& row : r.rows) {
    EXPECT_EQ(row.auc, r.rows[0].auc);
    EXPECT_EQ(row.eer, r.rows[0].eer);
  }
}

TEST(Training, DivergenceIsReported) {
  TrainConfig c = small_config();
  c.lr = 1e6;
  c.epochs_step1 = 5;
  try {
    const StepResult s1 = pretrain_step1(c, separable());
    finetune_step2(c, separable(), &s1.bundle);
    FAIL() << "expected divergence";
  } catch (const DivergenceError&) {
  } catch (const DegenerateEmbeddingError&) {
  }
}
