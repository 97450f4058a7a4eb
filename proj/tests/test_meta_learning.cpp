#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "damstf/meta_learning.hpp"
#include "damstf/self_training.hpp"
#include "test_util.hpp"

using namespace damstf;

namespace {

Architecture small_arch() {
  Architecture a;
  a.layer_dims = {2, 4, 2};
  return a;
}

std::vector<MetaExample> random_batch(const Architecture& arch, std::mt19937_64& rng, int n) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_int_distribution<int> cls(0, arch.output_dim() - 1);
  std::vector<MetaExample> batch;
  for (int i = 0; i < n; ++i) {
    MetaExample ex;
    for (int d = 0; d < arch.input_dim(); ++d) ex.features.push_back(gauss(rng));
    ex.supervision = one_hot(arch.output_dim(), cls(rng));
    batch.push_back(std::move(ex));
  }
  return batch;
}

MetaValidationSet random_dm(const Architecture& arch, std::mt19937_64& rng, int n) {
  MetaValidationSet dm;
  dm.examples = random_batch(arch, rng, n);
  return dm;
}

}  // namespace

TEST(WeightedBatchLoss, SigmaZeroHalvesUnweightedMean) {
  std::mt19937_64 rng(1);
  const Architecture arch = small_arch();
  const ParamVector p = init_params(arch, 1);
  const std::vector<MetaExample> batch = random_batch(arch, rng, 6);
  // sigma(40) rounds to exactly 1.0, giving the unweighted mean.
  InstanceWeights ones{std::vector<double>(6, 40.0)};
  InstanceWeights zeros = InstanceWeights::zeros(6);
  EXPECT_NEAR(weighted_batch_loss(p, arch, batch, zeros),
              0.5 * weighted_batch_loss(p, arch, batch, ones), 1e-14);
}

TEST(WeightedBatchLoss, MatchesDirectSummation) {
  std::mt19937_64 rng(2);
  const Architecture arch = small_arch();
  const ParamVector p = init_params(arch, 2);
  const std::vector<MetaExample> batch = random_batch(arch, rng, 5);
  InstanceWeights w{{0.3, -1.2, 0.0, 2.0, -0.5}};
  double expected = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    expected += sigmoid(w.raw[i]) *
                cross_entropy(forward(p, arch, batch[i].features).probabilities,
                              batch[i].supervision);
  }
  expected /= static_cast<double>(batch.size());
  EXPECT_NEAR(weighted_batch_loss(p, arch, batch, w), expected, 1e-15);
}

TEST(WeightedBatchLoss, KnownArithmetic) {
  // Zero-parameter model predicts [0.5, 0.5]: per-example loss is ln 2.
  // sigma(w) = (1.0, 0.5)  =>  (ln2 + 0.5 ln2) / 2 = 0.75 ln2.
  Architecture arch;
  arch.layer_dims = {1, 2};
  const ParamVector p = zeros_like(arch);
  std::vector<MetaExample> batch{{{0.3}, {1.0, 0.0}}, {{-0.7}, {0.0, 1.0}}};
  InstanceWeights w{{44.0, 0.0}};
  EXPECT_NEAR(weighted_batch_loss(p, arch, batch, w), 0.75 * std::log(2.0), 1e-14);
}

TEST(WeightedBatchLoss, SizeMismatchThrows) {
  std::mt19937_64 rng(3);
  const Architecture arch = small_arch();
  EXPECT_THROW(weighted_batch_loss(init_params(arch, 1), arch, random_batch(arch, rng, 3),
                                   InstanceWeights::zeros(2)),
               ConfigError);
}

TEST(VirtualUpdate, EtaZeroLeavesParamsUnchanged) {
  std::mt19937_64 rng(4);
  const Architecture arch = small_arch();
  const ParamVector p = init_params(arch, 4);
  const std::vector<MetaExample> batch = random_batch(arch, rng, 4);
  EXPECT_EQ(virtual_update(p, arch, batch, InstanceWeights::zeros(4), 0.0).values, p.values);
}

TEST(VirtualUpdate, RawZeroMatchesHalfMeanGradientStep) {
  std::mt19937_64 rng(5);
  const Architecture arch = small_arch();
  const ParamVector p = init_params(arch, 5);
  const std::vector<MetaExample> batch = random_batch(arch, rng, 4);
  const double eta = 0.1;
  ParamVector expected = p;
  for (const MetaExample& ex : batch) {
    axpy_inplace(expected, -eta * 0.5 / 4.0,
                 per_example_gradient(p, arch, ex.features, ex.supervision));
  }
  const ParamVector got = virtual_update(p, arch, batch, InstanceWeights::zeros(4), eta);
  EXPECT_LE(testutil::max_rel_error(got.values, expected.values, 1e-15), 1e-12);
}

TEST(VirtualUpdate, DoesNotMutateInput) {
  std::mt19937_64 rng(6);
  const Architecture arch = small_arch();
  const ParamVector p = init_params(arch, 6);
  const std::vector<double> before = p.values;
  (void)virtual_update(p, arch, random_batch(arch, rng, 3), InstanceWeights::zeros(3), 0.5);
  EXPECT_EQ(p.values, before);
}

TEST(MetaValidationLoss, PerfectPredictionNearZero) {
  Architecture arch;
  arch.layer_dims = {1, 2};
  const ParamVector p = testutil::make_params(arch, {40.0, -40.0, 0.0, 0.0});
  MetaValidationSet dm;
  dm.examples.push_back({{1.0}, {1.0, 0.0}});
  EXPECT_NEAR(meta_validation_loss(p, arch, dm), 0.0, 1e-11);
}

TEST(MetaValidationLoss, DuplicationInvariant) {
  std::mt19937_64 rng(7);
  const Architecture arch = small_arch();
  const ParamVector p = init_params(arch, 7);
  MetaValidationSet dm = random_dm(arch, rng, 5);
  MetaValidationSet doubled = dm;
  doubled.examples.insert(doubled.examples.end(), dm.examples.begin(), dm.examples.end());
  EXPECT_NEAR(meta_validation_loss(p, arch, dm), meta_validation_loss(p, arch, doubled), 1e-14);
}

TEST(MetaValidationLoss, MatchesDirectSummationAndRejectsEmpty) {
  std::mt19937_64 rng(8);
  const Architecture arch = small_arch();
  const ParamVector p = init_params(arch, 8);
  const MetaValidationSet dm = random_dm(arch, rng, 7);
  double expected = 0.0;
  for (const MetaExample& ex : dm.examples) {
    expected += cross_entropy(forward(p, arch, ex.features).probabilities, ex.supervision);
  }
  expected /= 7.0;
  EXPECT_NEAR(meta_validation_loss(p, arch, dm), expected, 1e-15);
  EXPECT_THROW(meta_validation_loss(p, arch, MetaValidationSet{}), ConfigError);
}

TEST(TrainingGuidance, ZeroValidationGradientGivesZeroGuidance) {
  // D_M made of one saturated, correctly-predicted example: its gradient
  // vanishes, so the guidance must vanish for every batch element.
  Architecture arch;
  arch.layer_dims = {1, 2};
  const ParamVector p = testutil::make_params(arch, {40.0, -40.0, 0.0, 0.0});
  MetaValidationSet dm;
  dm.examples.push_back({{1.0}, {1.0, 0.0}});
  std::vector<MetaExample> batch{{{0.5}, {0.0, 1.0}}, {{-0.3}, {1.0, 0.0}}};
  const std::vector<double> g =
      training_guidance(p, arch, batch, InstanceWeights::zeros(2), dm, 0.01);
  for (double v : g) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(TrainingGuidance, DuplicateBatchElementsGetEqualGuidance) {
  std::mt19937_64 rng(9);
  const Architecture arch = small_arch();
  const ParamVector p = init_params(arch, 9);
  std::vector<MetaExample> batch = random_batch(arch, rng, 1);
  batch.push_back(batch[0]);
  const MetaValidationSet dm = random_dm(arch, rng, 4);
  const std::vector<double> g =
      training_guidance(p, arch, batch, InstanceWeights::zeros(2), dm, 0.05);
  EXPECT_DOUBLE_EQ(g[0], g[1]);
}

TEST(TrainingGuidance, MatchesFiniteDifferenceHypergradient) {
  std::mt19937_64 rng(10);
  const Architecture arch = small_arch();
  for (int trial = 0; trial < 10; ++trial) {
    const ParamVector p = init_params(arch, rng());
    const std::vector<MetaExample> batch = random_batch(arch, rng, 5);
    const MetaValidationSet dm = random_dm(arch, rng, 8);
    std::uniform_real_distribution<double> wdist(-1.5, 1.5);
    InstanceWeights w{{}};
    for (int i = 0; i < 5; ++i) w.raw.push_back(wdist(rng));
    const double eta = trial % 2 == 0 ? 1e-2 : 1e-3;
    const std::vector<double> analytic = training_guidance(p, arch, batch, w, dm, eta);
    const std::vector<double> fd = testutil::fd_hypergradient(p, arch, batch, w, dm, eta, 1e-4);
    EXPECT_LE(testutil::max_rel_error(analytic, fd), 1e-4) << "trial " << trial;
  }
}

TEST(TrainingGuidance, SignOpposesGradientAlignment) {
  std::mt19937_64 rng(11);
  const Architecture arch = small_arch();
  const ParamVector p = init_params(arch, 12);
  const std::vector<MetaExample> batch = random_batch(arch, rng, 6);
  const MetaValidationSet dm = random_dm(arch, rng, 6);
  InstanceWeights w{{0.4, -0.4, 0.0, 1.0, -1.0, 0.2}};
  const double eta = 0.02;
  const std::vector<double> g = training_guidance(p, arch, batch, w, dm, eta);
  const ParamVector p_hat = virtual_update(p, arch, batch, w, eta);
  const ParamVector g_val = mean_validation_gradient(p_hat, arch, dm);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double align =
        dot(g_val, per_example_gradient(p, arch, batch[i].features, batch[i].supervision));
    if (align > 0.0) {
      EXPECT_LT(g[i], 0.0);  // weight pushed up
    } else if (align < 0.0) {
      EXPECT_GT(g[i], 0.0);
    }
  }
}

TEST(WeightUpdate, Basics) {
  InstanceWeights w{{0.0}};
  EXPECT_EQ(weight_update(w, {0.0}, 0.5).raw[0], 0.0);
  EXPECT_EQ(weight_update(w, {2.0}, 0.0).raw[0], 0.0);
  EXPECT_NEAR(weight_update(w, {2.0}, 0.1).raw[0], -0.2, 1e-15);
  EXPECT_THROW(weight_update(w, {1.0, 2.0}, 0.1), ConfigError);
}

TEST(ModelUpdate, IdenticalContractToVirtualUpdate) {
  std::mt19937_64 rng(13);
  const Architecture arch = small_arch();
  const ParamVector p = init_params(arch, 14);
  const std::vector<MetaExample> batch = random_batch(arch, rng, 4);
  InstanceWeights w{{0.5, -0.5, 1.0, 0.0}};
  EXPECT_EQ(model_update(p, arch, batch, w, 0.05).values,
            virtual_update(p, arch, batch, w, 0.05).values);
}

TEST(ModelUpdate, ConcentratedWeightsFollowSingleGradient) {
  std::mt19937_64 rng(15);
  const Architecture arch = small_arch();
  const ParamVector p = init_params(arch, 16);
  const std::vector<MetaExample> batch = random_batch(arch, rng, 2);
  // sigma(800) == 1 and sigma(-800) == 0 exactly in double precision.
  InstanceWeights w{{800.0, -800.0}};
  const double eta = 0.1;
  const ParamVector got = model_update(p, arch, batch, w, eta);
  const ParamVector expected =
      axpy(p, -eta / 2.0,
           per_example_gradient(p, arch, batch[0].features, batch[0].supervision));
  EXPECT_EQ(got.values, expected.values);
}

TEST(RunMetaPass, TmZeroIsUniformHalfWeightedEpoch) {
  std::mt19937_64 rng(17);
  const Architecture arch = small_arch();
  const ParamVector p0 = init_params(arch, 18);
  std::vector<TrainInstance> pool;
  for (const MetaExample& ex : random_batch(arch, rng, 23)) {
    TrainInstance inst;
    inst.ex = ex;
    inst.id = static_cast<long long>(pool.size());
    pool.push_back(inst);
  }
  MetaConfig cfg;
  cfg.eta = 0.07;
  cfg.t_m = 0;
  cfg.batch_size = 5;
  const std::uint64_t seed = 99;
  const MetaPassResult got = run_meta_pass(p0, arch, pool, MetaValidationSet{}, cfg, seed);

  // Independent replay: same shuffle, sigma(0) = 0.5 on every batch element.
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 replay(seed);
  std::shuffle(order.begin(), order.end(), replay);
  ParamVector expected = p0;
  for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
    const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
    std::vector<ParamVector> grads;
    for (std::size_t i = start; i < stop; ++i) {
      grads.push_back(per_example_gradient(expected, arch, pool[order[i]].ex.features,
                                           pool[order[i]].ex.supervision));
    }
    for (const ParamVector& g : grads) {
      axpy_inplace(expected, -cfg.eta * 0.5 / static_cast<double>(stop - start), g);
    }
  }
  EXPECT_EQ(got.params.values, expected.values);
  for (const WeightLogRow& row : got.weight_log) EXPECT_DOUBLE_EQ(row.sigma_w, 0.5);
}

TEST(RunMetaPass, SourceOnlyPoolRuns) {
  std::mt19937_64 rng(19);
  const Architecture arch = small_arch();
  std::vector<TrainInstance> pool;
  for (const MetaExample& ex : random_batch(arch, rng, 10)) {
    TrainInstance inst;
    inst.ex = ex;
    inst.domain = Domain::Source;
    pool.push_back(inst);
  }
  MetaConfig cfg;
  cfg.t_m = 2;
  const MetaPassResult res =
      run_meta_pass(init_params(arch, 20), arch, pool, random_dm(arch, rng, 4), cfg, 7);
  EXPECT_EQ(res.weight_log.size(), pool.size());
  for (const WeightLogRow& row : res.weight_log) EXPECT_FALSE(row.pseudo);
}

TEST(RunMetaPass, EmptyPoolIsNoOp) {
  const Architecture arch = small_arch();
  const ParamVector p = init_params(arch, 21);
  const MetaPassResult res = run_meta_pass(p, arch, {}, MetaValidationSet{}, MetaConfig{}, 1);
  EXPECT_EQ(res.params.values, p.values);
  EXPECT_TRUE(res.weight_log.empty());
}

TEST(RunMetaPass, DownWeightsFlippedLabels) {
  // Controlled-noise fixture, single seed; the acceptance suite runs the
  // 10-seed version. Clean validation set, 30% of the pool supervision
  // flipped: flipped instances must end with lower mean sigma(w).
  const std::uint64_t seed = 5;
  const DatasetBundle b = gen_shifted_gaussians(seed, 200, 120, 40, 0, M_PI / 4.0, 0.8);
  Architecture arch;
  arch.layer_dims = {2, 8, 2};
  ParamVector p = init_params(arch, seed);
  p = pretrain_on_source(p, arch, b.source_labeled, 20, 0.05, 16, seed);

  std::vector<Example> pool_examples;
  for (std::size_t i = 0; i < b.target_unlabeled.size(); ++i) {
    Example ex = b.target_unlabeled[i];
    ex.label = b.target_truth[i];
    pool_examples.push_back(std::move(ex));
  }
  const auto [noisy, mask] = flip_labels(pool_examples, 0.3, seed + 1);

  std::vector<TrainInstance> pool;
  for (std::size_t i = 0; i < noisy.size(); ++i) {
    TrainInstance inst;
    inst.ex = {noisy[i].features, one_hot(2, *noisy[i].label)};
    inst.id = static_cast<long long>(i);
    inst.domain = Domain::Target;
    inst.pseudo = true;
    const ForwardResult fr = forward(p, arch, noisy[i].features);
    inst.confidence = *std::max_element(fr.probabilities.begin(), fr.probabilities.end());
    inst.correct = mask[i] ? 0 : 1;
    pool.push_back(std::move(inst));
  }
  MetaValidationSet dm;
  for (const Example& ex : b.target_in_domain) {
    dm.examples.push_back({ex.features, one_hot(2, *ex.label)});
  }
  MetaConfig cfg;
  cfg.eta = 0.05;
  cfg.gamma = 200.0;
  cfg.t_m = 5;
  const MetaPassResult res = run_meta_pass(p, arch, pool, dm, cfg, seed + 2);
  double flipped_mean = 0.0, clean_mean = 0.0;
  int n_flipped = 0, n_clean = 0;
  for (const WeightLogRow& row : res.weight_log) {
    if (row.correct == 0) {
      flipped_mean += row.sigma_w;
      ++n_flipped;
    } else {
      clean_mean += row.sigma_w;
      ++n_clean;
    }
  }
  ASSERT_GT(n_flipped, 0);
  ASSERT_GT(n_clean, 0);
  EXPECT_LT(flipped_mean / n_flipped, clean_mean / n_clean);
}
