#pragma once

// Randomized oracle suites shared by the unit tests and the acceptance run.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "litmas/losses.hpp"
#include "litmas/model.hpp"
#include "litmas/numgrad.hpp"
#include "litmas/padmetrics.hpp"
#include "oracles/gradcheck.hpp"
#include "oracles/mac_reference.hpp"
#include "oracles/pad_bruteforce.hpp"

namespace suites {

using litmas::Label;
using litmas::Shape;
using litmas::Tensor;
namespace ng = litmas::ng;
namespace pad = litmas::pad;

inline Tensor random_tensor(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (double& x : t.data()) x = u(rng);
  return t;
}

inline std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

struct OpCheck {
  std::string name;
  std::size_t trials = 0;
  double max_rel = 0.0;
};

// Random batch for the MAC loss: n rows of dim d over `mods` modalities,
// with at least one bonafide row.
struct RandomMacBatch {
  Tensor z;
  std::vector<int> labels;
  std::vector<std::size_t> mods;
  std::vector<Tensor> centers;
};

inline RandomMacBatch random_mac_batch(std::mt19937_64& rng, std::size_t max_n, std::size_t max_mods,
                                       std::size_t max_d) {
  RandomMacBatch b;
  const std::size_t n = pick(rng, 1, max_n), mods = pick(rng, 1, max_mods),
                    d = pick(rng, 2, max_d);
  b.z = random_tensor(rng, {n, d});
  for (std::size_t i = 0; i < n; ++i) {
    b.labels.push_back(static_cast<int>(pick(rng, 0, 1)));
    b.mods.push_back(pick(rng, 0, mods - 1));
  }
  b.labels[pick(rng, 0, n - 1)] = 0;
  for (std::size_t m = 0; m < mods; ++m) b.centers.push_back(random_tensor(rng, {d}));
  return b;
}

inline std::vector<Label> to_labels(const std::vector<int>& v) {
  std::vector<Label> out;
  for (int x : v) out.push_back(x == 0 ? Label::bonafide : Label::spoof);
  return out;
}

inline ng::Value library_mac(ng::Tape& tape, const ng::Value& z, const RandomMacBatch& b) {
  std::vector<ng::Value> centers;
  for (const auto& c : b.centers) centers.push_back(tape.constant(c));
  litmas::MacBatch batch{z, to_labels(b.labels), b.mods};
  return litmas::mac_loss(batch, centers);
}

inline std::vector<OpCheck> gradient_suite(std::size_t trials = 100, std::uint64_t seed = 2024) {
  std::mt19937_64 rng(seed);
  std::vector<OpCheck> out;
  auto run = [&](const std::string& name, auto&& make_case) {
    OpCheck c{name, trials, 0.0};
    for (std::size_t t = 0; t < trials; ++t) {
      auto [inputs, graph] = make_case();
      c.max_rel = std::max(c.max_rel, oracle::gradcheck(inputs, graph));
    }
    out.push_back(c);
  };
  using Inputs = std::vector<Tensor>;
  using V = std::vector<ng::Value>;

  run("matmul", [&] {
    const std::size_t m = pick(rng, 1, 4), k = pick(rng, 1, 4), n = pick(rng, 1, 4);
    const Tensor w = random_tensor(rng, {m, n});
    return std::pair{Inputs{random_tensor(rng, {m, k}), random_tensor(rng, {k, n})},
                     oracle::Graph([w](ng::Tape&, const V& x) {
                       return oracle::weighted_sum(ng::matmul(x[0], x[1]), w);
                     })};
  });
  run("add_bias", [&] {
    const std::size_t m = pick(rng, 1, 4), n = pick(rng, 1, 4);
    const Tensor w = random_tensor(rng, {m, n});
    return std::pair{Inputs{random_tensor(rng, {m, n}), random_tensor(rng, {n})},
                     oracle::Graph([w](ng::Tape&, const V& x) {
                       return oracle::weighted_sum(ng::add_bias(x[0], x[1]), w);
                     })};
  });
  run("add", [&] {
    const Shape s{pick(rng, 1, 4), pick(rng, 1, 4)};
    const Tensor w = random_tensor(rng, s);
    return std::pair{Inputs{random_tensor(rng, s), random_tensor(rng, s)},
                     oracle::Graph([w](ng::Tape&, const V& x) {
                       return oracle::weighted_sum(ng::add(x[0], x[1]), w);
                     })};
  });
  run("mul", [&] {
    const Shape s{pick(rng, 1, 4), pick(rng, 1, 4)};
    const Tensor w = random_tensor(rng, s);
    return std::pair{Inputs{random_tensor(rng, s), random_tensor(rng, s)},
                     oracle::Graph([w](ng::Tape&, const V& x) {
                       return oracle::weighted_sum(ng::mul(x[0], x[1]), w);
                     })};
  });
  run("scale", [&] {
    const Shape s{pick(rng, 1, 6)};
    const Tensor w = random_tensor(rng, s);
    const double f = std::uniform_real_distribution<double>(-3, 3)(rng);
    return std::pair{Inputs{random_tensor(rng, s)}, oracle::Graph([w, f](ng::Tape&, const V& x) {
                       return oracle::weighted_sum(ng::scale(x[0], f), w);
                     })};
  });
  run("relu", [&] {
    const Shape s{pick(rng, 1, 4), pick(rng, 1, 4)};
    const Tensor w = random_tensor(rng, s);
    Tensor x = random_tensor(rng, s);
    // Keep clear of the kink so the finite difference stays on one side.
    for (double& v : x.data()) v = (v < 0 ? -0.05 : 0.05) + v;
    return std::pair{Inputs{x}, oracle::Graph([w](ng::Tape&, const V& v) {
                       return oracle::weighted_sum(ng::relu(v[0]), w);
                     })};
  });
  run("log_softmax_vector", [&] {
    const Shape s{pick(rng, 1, 6)};
    const Tensor w = random_tensor(rng, s);
    return std::pair{Inputs{random_tensor(rng, s, -3, 3)}, oracle::Graph([w](ng::Tape&, const V& x) {
                       return oracle::weighted_sum(ng::log_softmax(x[0]), w);
                     })};
  });
  run("log_softmax_rows", [&] {
    const Shape s{pick(rng, 1, 4), pick(rng, 1, 5)};
    const Tensor w = random_tensor(rng, s);
    return std::pair{Inputs{random_tensor(rng, s, -3, 3)}, oracle::Graph([w](ng::Tape&, const V& x) {
                       return oracle::weighted_sum(ng::log_softmax(x[0]), w);
                     })};
  });
  run("cosine_rows", [&] {
    const std::size_t n = pick(rng, 1, 5), d = pick(rng, 2, 6);
    const Tensor w = random_tensor(rng, {n});
    return std::pair{Inputs{random_tensor(rng, {n, d}), random_tensor(rng, {d})},
                     oracle::Graph([w](ng::Tape&, const V& x) {
                       return oracle::weighted_sum(ng::cosine_rows(x[0], x[1]), w);
                     })};
  });
  run("reduce_sum", [&] {
    return std::pair{Inputs{random_tensor(rng, {pick(rng, 1, 4), pick(rng, 1, 4)})},
                     oracle::Graph([](ng::Tape&, const V& x) { return ng::sum(x[0]); })};
  });
  run("reduce_mean", [&] {
    const Tensor w = random_tensor(rng, {});
    return std::pair{Inputs{random_tensor(rng, {pick(rng, 1, 4), pick(rng, 1, 4)})},
                     oracle::Graph([w](ng::Tape&, const V& x) {
                       return oracle::weighted_sum(ng::mean(x[0]), w);
                     })};
  });
  run("gather_rows", [&] {
    const std::size_t n = pick(rng, 1, 5), d = pick(rng, 1, 4), k = pick(rng, 1, 6);
    std::vector<std::size_t> idx(k);
    for (auto& i : idx) i = pick(rng, 0, n - 1);
    const Tensor w = random_tensor(rng, {k, d});
    return std::pair{Inputs{random_tensor(rng, {n, d})}, oracle::Graph([w, idx](ng::Tape&, const V& x) {
                       return oracle::weighted_sum(ng::gather_rows(x[0], idx), w);
                     })};
  });
  run("pick_columns", [&] {
    const std::size_t n = pick(rng, 1, 5), c = pick(rng, 1, 4);
    std::vector<std::size_t> cols(n);
    for (auto& i : cols) i = pick(rng, 0, c - 1);
    const Tensor w = random_tensor(rng, {n});
    return std::pair{Inputs{random_tensor(rng, {n, c})}, oracle::Graph([w, cols](ng::Tape&, const V& x) {
                       return oracle::weighted_sum(ng::pick_columns(x[0], cols), w);
                     })};
  });
  run("scatter_rows", [&] {
    const std::size_t a = pick(rng, 0, 3), b = pick(rng, 1, 3), d = pick(rng, 1, 3);
    std::vector<std::size_t> perm(a + b);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::vector<std::size_t>> pos{{perm.begin(), perm.begin() + a},
                                              {perm.begin() + a, perm.end()}};
    const Tensor w = random_tensor(rng, {a + b, d});
    return std::pair{Inputs{random_tensor(rng, {a, d}), random_tensor(rng, {b, d})},
                     oracle::Graph([w, pos, n = a + b](ng::Tape&, const V& x) {
                       return oracle::weighted_sum(ng::scatter_rows(x, pos, n), w);
                     })};
  });
  run("mac_loss", [&] {
    const RandomMacBatch b = random_mac_batch(rng, 12, 3, 5);
    return std::pair{Inputs{b.z}, oracle::Graph([b](ng::Tape& tape, const V& x) {
                       return library_mac(tape, x[0], b);
                     })};
  });
  run("cross_entropy", [&] {
    const std::size_t n = pick(rng, 1, 6);
    std::vector<int> labels(n);
    for (int& l : labels) l = static_cast<int>(pick(rng, 0, 1));
    return std::pair{Inputs{random_tensor(rng, {n, 2}, -3, 3)},
                     oracle::Graph([labels](ng::Tape&, const V& x) {
                       return litmas::cross_entropy(x[0], labels);
                     })};
  });
  run("classifier_pipeline", [&] {
    // encoder -> per-modality heads -> classifier -> cross-entropy, w.r.t.
    // the input features.
    litmas::ModelDims dims{3, {4}, 3, 4};
    litmas::ModelBundle bundle =
        litmas::init_model(dims, litmas::ModalityTable({"a", "b"}), rng());
    litmas::attach_heads(bundle, litmas::HeadRouting::per_modality, rng());
    bundle.classifier->weight = random_tensor(rng, {4, 2});
    const std::size_t n = pick(rng, 1, 5);
    std::vector<int> labels(n);
    std::vector<std::size_t> mods(n);
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = static_cast<int>(pick(rng, 0, 1));
      mods[i] = pick(rng, 0, 1);
    }
    Tensor x = random_tensor(rng, {n, 3});
    return std::pair{Inputs{x}, oracle::Graph([bundle, labels, mods](ng::Tape& tape, const V& v) {
                       litmas::BoundModel model(tape, bundle, false);
                       return litmas::cross_entropy(
                           model.classify(model.project(model.encode(v[0]), mods)), labels);
                     })};
  });
  return out;
}

// Largest |library - reference| over random batches.
inline double mac_oracle_suite(std::size_t batches = 1000, std::uint64_t seed = 77) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (std::size_t t = 0; t < batches; ++t) {
    const RandomMacBatch b = random_mac_batch(rng, 32, 4, 8);
    oracle::Rows z(b.z.rows()), centers;
    for (std::size_t i = 0; i < z.size(); ++i) z[i].assign(b.z.row(i).begin(), b.z.row(i).end());
    for (const auto& c : b.centers) centers.push_back(c.vec());
    const double want = *oracle::mac_reference(z, b.labels, b.mods, centers);
    ng::Tape tape;
    const double got = library_mac(tape, tape.constant(b.z), b).tensor().item();
    worst = std::max(worst, std::abs(got - want));
  }
  return worst;
}

struct MetricOracleResult {
  std::size_t sets = 0;
  double auc_err = 0.0;
  double eer_err = 0.0;
  // The library's EER threshold must reproduce the oracle's operating point.
  bool operating_points_match = true;
};

inline std::vector<pad::ScoreRecord> random_scores(std::mt19937_64& rng, std::size_t max_n) {
  const std::size_t n = pick(rng, 2, max_n);
  const bool coarse = pick(rng, 0, 1) == 1;  // many ties
  std::vector<pad::ScoreRecord> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].id = "s" + std::to_string(i);
    out[i].label = pick(rng, 0, 1) ? Label::spoof : Label::bonafide;
    out[i].score = coarse ? static_cast<double>(pick(rng, 0, 6)) / 2.0
                          : std::normal_distribution<double>(0.0, 1.0)(rng);
    if (out[i].label == Label::bonafide && !coarse) out[i].score += 0.7;
  }
  out[0].label = Label::bonafide;
  out[1].label = Label::spoof;
  return out;
}

inline std::vector<oracle::Scored> to_scored(const std::vector<pad::ScoreRecord>& r) {
  std::vector<oracle::Scored> out;
  for (const auto& x : r) out.push_back({litmas::label_int(x.label), x.score});
  return out;
}

inline MetricOracleResult metric_oracle_suite(std::size_t sets = 500, std::uint64_t seed = 5) {
  std::mt19937_64 rng(seed);
  MetricOracleResult res;
  for (std::size_t t = 0; t < sets; ++t) {
    const auto records = random_scores(rng, 200);
    const auto scored = to_scored(records);
    res.auc_err = std::max(res.auc_err, std::abs(pad::auc(records) - oracle::auc_pairs(scored)));
    const pad::EerResult e = pad::eer(records);
    const oracle::SweepPoint o = oracle::eer_sweep(scored);
    res.eer_err = std::max(res.eer_err, std::abs(e.eer - (o.apcer + o.bpcer) / 2.0));
    const oracle::SweepPoint at = oracle::count_at(scored, e.threshold);
    if (at.apcer != o.apcer || at.bpcer != o.bpcer || e.apcer != o.apcer || e.bpcer != o.bpcer) {
      res.operating_points_match = false;
    }
    ++res.sets;
  }
  return res;
}

}  // namespace suites
