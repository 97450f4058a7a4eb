#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "damstf/data.hpp"
#include "damstf/domain_adversarial.hpp"
#include "damstf/errors.hpp"
#include "damstf/meta_constructor.hpp"
#include "damstf/meta_learning.hpp"
#include "damstf/nn.hpp"
#include "damstf/theory.hpp"

namespace damstf {

struct Ablation {
  bool no_adversarial = false;  // "w/o D"
  bool no_expansion = false;    // "w/o E"
};

struct Seeds {
  std::uint64_t data = 1;     // exposure subset selection
  std::uint64_t shuffle = 2;  // batch order, pretraining, eval split
  std::uint64_t init = 3;     // parameter initialization
};

struct RunConfig {
  Mode mode = Mode::SemiSupervised;
  double k_fraction = 0.10;  // expansion size as a fraction of the pseudo pool
  int max_iters = 10;
  int patience = 3;
  Ablation ablation;
  double exposure_fraction = 1.0;
  // When set, indices ever selected into D_E stay in the meta validation set
  // on later iterations (with their current pseudo labels) instead of D_M
  // being rebuilt from the top-k alone.
  bool accumulate_expansion = false;
  Seeds seeds;
  MetaConfig meta;
  AdvConfig adv;
  // model and pretraining
  std::vector<int> hidden_dims = {8};
  Activation activation = Activation::Tanh;
  int disc_hidden = 16;
  int pretrain_epochs = 20;
  double pretrain_eta = 0.05;

  void validate() const {
    if (k_fraction < 0.0 || k_fraction > 1.0) throw ConfigError("k_fraction must be in [0, 1]");
    if (max_iters < 0) throw ConfigError("max_iters must be non-negative");
    if (patience < 1) throw ConfigError("patience must be at least 1");
    if (exposure_fraction < 0.0 || exposure_fraction > 1.0) {
      throw ConfigError("exposure_fraction must be in [0, 1]");
    }
    if (mode == Mode::Unsupervised && ablation.no_expansion) {
      throw ConfigError("meta validation set would be empty: cannot ablate the expansion set "
                        "in unsupervised mode");
    }
    for (int d : hidden_dims) {
      if (d <= 0) throw ConfigError("hidden_dims entries must be positive");
    }
    if (disc_hidden <= 0) throw ConfigError("disc_hidden must be positive");
    if (pretrain_epochs < 0) throw ConfigError("pretrain.epochs must be non-negative");
    if (pretrain_eta <= 0.0) throw ConfigError("pretrain.eta must be positive");
    meta.validate();
    adv.validate();
  }
};

inline std::string variant_name(const Ablation& a) {
  if (a.no_adversarial && a.no_expansion) return "DaMSTF - w/o D,E";
  if (a.no_adversarial) return "DaMSTF - w/o D";
  if (a.no_expansion) return "DaMSTF - w/o E";
  return "DaMSTF";
}

struct EvalResult {
  std::vector<double> f1_per_class;
  double macro_f1 = 0.0;
  double accuracy = 0.0;
};

// Confusion-matrix F1 per class; a class never predicted scores 0, macro-F1
// averages over all classes unweighted.
inline EvalResult evaluate(const ParamVector& params, const Architecture& arch,
                           const std::vector<Example>& test) {
  if (test.empty()) throw ConfigError("evaluate: test set is empty");
  const int c_count = arch.output_dim();
  std::vector<long> tp(c_count, 0), fp(c_count, 0), fn(c_count, 0);
  long correct = 0;
  for (const Example& ex : test) {
    if (!ex.label.has_value()) throw ConfigError("evaluate: test examples must be labeled");
    const int truth = *ex.label;
    const int pred = argmax(forward(params, arch, ex.features).probabilities);
    if (pred == truth) {
      ++tp[truth];
      ++correct;
    } else {
      ++fp[pred];
      ++fn[truth];
    }
  }
  EvalResult r;
  for (int c = 0; c < c_count; ++c) {
    const double denom = static_cast<double>(2 * tp[c] + fp[c] + fn[c]);
    r.f1_per_class.push_back(denom == 0.0 ? 0.0 : 2.0 * static_cast<double>(tp[c]) / denom);
  }
  r.macro_f1 = std::accumulate(r.f1_per_class.begin(), r.f1_per_class.end(), 0.0) /
               static_cast<double>(c_count);
  r.accuracy = static_cast<double>(correct) / static_cast<double>(test.size());
  return r;
}

// Plain mini-batch cross-entropy SGD on the labeled source pool.
inline ParamVector pretrain_on_source(const ParamVector& params, const Architecture& arch,
                                      const std::vector<Example>& d_s, int epochs, double eta,
                                      int batch_size, std::uint64_t seed) {
  if (batch_size < 1) throw ConfigError("pretrain: batch_size must be at least 1");
  const int c_count = arch.output_dim();
  ParamVector theta = params;
  std::vector<std::size_t> order(d_s.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const std::size_t stop = std::min(order.size(), start + batch_size);
      ParamVector grad = zeros_like(arch);
      const double inv = 1.0 / static_cast<double>(stop - start);
      for (std::size_t i = start; i < stop; ++i) {
        const Example& ex = d_s[order[i]];
        if (!ex.label.has_value()) throw ConfigError("pretrain: source examples must be labeled");
        axpy_inplace(grad, inv,
                     per_example_gradient(theta, arch, ex.features, one_hot(c_count, *ex.label)));
      }
      axpy_inplace(theta, -eta, grad);
    }
  }
  return theta;
}

struct PseudoSnapshotRow {
  int pool_index = 0;  // position in the visible unlabeled pool
  double entropy = 0.0;
  bool selected = false;  // member of D_E
  int pseudo_class = 0;
  int true_class = -1;  // -1 when ground truth is unknown
};

struct IterationReport {
  int iteration = 0;
  double target_f1 = 0.0;   // F1 of class 1 on the test split
  double macro_f1 = 0.0;    // macro-F1 on the test split
  double val_macro_f1 = 0.0;  // macro-F1 on the validation split (early stopping)
  double test_accuracy = 0.0;
  int expansion_size = 0;
  double mean_entropy_expansion = std::numeric_limits<double>::quiet_NaN();
  double validation_grad_norm = std::numeric_limits<double>::quiet_NaN();  // after adversarial
  double expansion_error_rate = std::numeric_limits<double>::quiet_NaN();
  double expansion_loss_before_adv = std::numeric_limits<double>::quiet_NaN();
  double expansion_loss_after_adv = std::numeric_limits<double>::quiet_NaN();
  double val_grad_norm_before_adv = std::numeric_limits<double>::quiet_NaN();
  bool has_bound = false;
  BoundReport bound;
};

struct RunResult {
  std::vector<IterationReport> reports;
  Architecture arch;
  ParamVector final_params;
  int best_iteration = 0;  // 1-based index of the best validation macro-F1
  double best_val_macro_f1 = -1.0;
  std::vector<WeightLogRow> final_weight_log;
  std::vector<PseudoSnapshotRow> final_pseudo;
  std::vector<std::string> phase_trace;  // executed phases, in loop order

  // Test macro-F1 at the early-stopping iteration.
  double summary_macro_f1() const {
    if (reports.empty() || best_iteration < 1) return std::numeric_limits<double>::quiet_NaN();
    return reports[static_cast<std::size_t>(best_iteration) - 1].macro_f1;
  }
};

// Indices of the visible part of the unlabeled pool: the first
// round(fraction * n) entries of one seeded permutation, so for a fixed data
// seed the subsets are nested across fractions.
inline std::vector<std::size_t> exposure_subset(std::size_t pool_size, double fraction,
                                                std::uint64_t data_seed) {
  if (fraction < 0.0 || fraction > 1.0) {
    throw ConfigError("exposure_fraction must be in [0, 1]");
  }
  std::vector<std::size_t> perm(pool_size);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(mix_seed(data_seed, 0xF00D));
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto n = static_cast<std::size_t>(
      std::llround(fraction * static_cast<double>(pool_size)));
  perm.resize(n);
  return perm;
}

namespace detail {

inline int infer_num_classes(const DatasetBundle& b) {
  int max_label = 1;
  auto scan = [&max_label](const std::vector<Example>& pool) {
    for (const Example& ex : pool) {
      if (ex.label.has_value()) max_label = std::max(max_label, *ex.label);
    }
  };
  scan(b.source_labeled);
  scan(b.target_in_domain);
  scan(b.target_test);
  return max_label + 1;
}

}  // namespace detail

// The self-training driver: pretrain on source, then loop
//   pseudo label -> entropy partition -> rebuild D_M -> adversarial pass ->
//   meta pass -> evaluate,
// stopping at max_iters or when the validation macro-F1 has not improved for
// `patience` iterations.
inline RunResult run_damstf(const DatasetBundle& bundle, const RunConfig& cfg) {
  cfg.validate();
  const bool unsup = cfg.mode == Mode::Unsupervised;
  if (unsup != bundle.target_in_domain.empty()) {
    throw ConfigError(unsup ? "unsupervised mode requires an empty in-domain set"
                            : "semi-supervised mode requires a nonempty in-domain set");
  }
  if (bundle.source_labeled.empty()) throw ConfigError("source pool is empty");
  if (bundle.target_test.empty()) throw ConfigError("target test set is empty");

  const int c_count = detail::infer_num_classes(bundle);
  RunResult run;
  run.arch.layer_dims.push_back(static_cast<int>(bundle.source_labeled.front().features.size()));
  for (int d : cfg.hidden_dims) run.arch.layer_dims.push_back(d);
  run.arch.layer_dims.push_back(c_count);
  run.arch.activation = cfg.activation;
  run.arch.validate();
  const Architecture& arch = run.arch;

  // Labeled target data split 7:3 into test and validation parts.
  std::vector<std::size_t> eval_order(bundle.target_test.size());
  std::iota(eval_order.begin(), eval_order.end(), std::size_t{0});
  {
    std::mt19937_64 rng(mix_seed(cfg.seeds.shuffle, 0xE7A1));
    std::shuffle(eval_order.begin(), eval_order.end(), rng);
  }
  const auto n_test = static_cast<std::size_t>(
      std::llround(0.7 * static_cast<double>(bundle.target_test.size())));
  std::vector<Example> test_split, val_split;
  for (std::size_t i = 0; i < eval_order.size(); ++i) {
    (i < n_test ? test_split : val_split).push_back(bundle.target_test[eval_order[i]]);
  }
  if (test_split.empty()) test_split = val_split;
  if (val_split.empty()) val_split = test_split;  // degenerate split on tiny test sets

  const std::vector<std::size_t> visible_idx =
      exposure_subset(bundle.target_unlabeled.size(), cfg.exposure_fraction, cfg.seeds.data);
  std::vector<Example> visible_pool;
  visible_pool.reserve(visible_idx.size());
  for (std::size_t idx : visible_idx) visible_pool.push_back(bundle.target_unlabeled[idx]);

  const bool truth_known = bundle.target_truth.size() == bundle.target_unlabeled.size() &&
                           !bundle.target_unlabeled.empty();

  // Labeled pool standing in for the target domain in the bound report.
  std::vector<Example> target_proxy;
  if (truth_known) {
    target_proxy = bundle.target_in_domain;
    for (std::size_t i = 0; i < bundle.target_unlabeled.size(); ++i) {
      Example ex = bundle.target_unlabeled[i];
      ex.label = bundle.target_truth[i];
      target_proxy.push_back(std::move(ex));
    }
    target_proxy.insert(target_proxy.end(), bundle.target_test.begin(),
                        bundle.target_test.end());
  }

  ParamVector params = init_params(arch, cfg.seeds.init);
  params = pretrain_on_source(params, arch, bundle.source_labeled, cfg.pretrain_epochs,
                              cfg.pretrain_eta, cfg.meta.batch_size,
                              mix_seed(cfg.seeds.shuffle, 0x9BE7));
  Discriminator disc =
      make_discriminator(arch.feature_dim(), cfg.disc_hidden, mix_seed(cfg.seeds.init, 0xD15C));

  // Static mixed pool for the adversarial phase: D_S and the visible D_T^u.
  std::vector<DomainExample> mixed_pool;
  for (const Example& ex : bundle.source_labeled) {
    mixed_pool.push_back({ex.features, domain_one_hot(Domain::Source)});
  }
  for (const Example& ex : visible_pool) {
    mixed_pool.push_back({ex.features, domain_one_hot(Domain::Target)});
  }

  int bad_iters = 0;
  std::set<int> ever_selected;  // pool indices, used when accumulating D_E
  for (int iter = 1; iter <= cfg.max_iters; ++iter) {
    const ParamVector params_prev = params;

    run.phase_trace.push_back("pseudo_label");
    std::vector<PseudoExample> pseudo = pseudo_label(params, arch, visible_pool);
    const int k = cfg.ablation.no_expansion
                      ? 0
                      : static_cast<int>(std::llround(
                            cfg.k_fraction * static_cast<double>(pseudo.size())));
    run.phase_trace.push_back("partition");
    Partition part = partition(std::move(pseudo), k);
    if (cfg.accumulate_expansion && !cfg.ablation.no_expansion) {
      for (const PseudoExample& pe : part.expansion) ever_selected.insert(pe.pool_index);
      std::vector<PseudoExample> expansion = std::move(part.expansion);
      std::vector<PseudoExample> remainder;
      for (PseudoExample& pe : part.remainder) {
        (ever_selected.count(pe.pool_index) ? expansion : remainder).push_back(std::move(pe));
      }
      part.expansion = std::move(expansion);
      part.remainder = std::move(remainder);
    }
    run.phase_trace.push_back("build_meta_validation");
    MetaValidationSet d_m = build_meta_validation(bundle.target_in_domain, part.expansion,
                                                  cfg.mode, c_count);

    IterationReport rep;
    rep.iteration = iter;
    rep.expansion_size = static_cast<int>(part.expansion.size());
    if (!part.expansion.empty()) {
      double sum_h = 0.0;
      for (const PseudoExample& pe : part.expansion) sum_h += pe.entropy;
      rep.mean_entropy_expansion = sum_h / static_cast<double>(part.expansion.size());
      const auto before = vanishment_probe(params, arch, part.expansion, d_m);
      rep.val_grad_norm_before_adv = before.first;
      rep.expansion_loss_before_adv = before.second;
    } else {
      rep.val_grad_norm_before_adv = l2_norm(mean_validation_gradient(params, arch, d_m));
    }

    if (!cfg.ablation.no_adversarial && !visible_pool.empty()) {
      run.phase_trace.push_back("domain_adversarial");
      auto [theta, new_disc] = run_adversarial_pass(params, disc, mixed_pool, arch, cfg.adv,
                                                    mix_seed(cfg.seeds.shuffle, 2 * iter));
      params = std::move(theta);
      disc = std::move(new_disc);
    }

    if (!part.expansion.empty()) {
      const auto after = vanishment_probe(params, arch, part.expansion, d_m);
      rep.validation_grad_norm = after.first;
      rep.expansion_loss_after_adv = after.second;
    } else {
      rep.validation_grad_norm = l2_norm(mean_validation_gradient(params, arch, d_m));
    }

    std::vector<TrainInstance> meta_pool;
    for (std::size_t i = 0; i < bundle.source_labeled.size(); ++i) {
      const Example& ex = bundle.source_labeled[i];
      TrainInstance inst;
      inst.ex = {ex.features, one_hot(c_count, *ex.label)};
      inst.id = static_cast<long long>(i);
      inst.domain = Domain::Source;
      meta_pool.push_back(std::move(inst));
    }
    for (const PseudoExample& pe : part.remainder) {
      const std::size_t orig = visible_idx[static_cast<std::size_t>(pe.pool_index)];
      TrainInstance inst;
      inst.ex = {pe.base.features, pe.pseudo_one_hot()};
      inst.id = static_cast<long long>(orig);
      inst.domain = Domain::Target;
      inst.pseudo = true;
      inst.confidence = pe.confidence();
      if (truth_known) inst.correct = pe.pseudo_class == bundle.target_truth[orig] ? 1 : 0;
      meta_pool.push_back(std::move(inst));
    }
    run.phase_trace.push_back("meta_learning");
    MetaPassResult meta = run_meta_pass(params, arch, meta_pool, d_m, cfg.meta,
                                        mix_seed(cfg.seeds.shuffle, 2 * iter + 1));
    params = std::move(meta.params);

    run.phase_trace.push_back("evaluate");
    const EvalResult test_eval = evaluate(params, arch, test_split);
    const EvalResult val_eval = evaluate(params, arch, val_split);
    rep.target_f1 = test_eval.f1_per_class.size() > 1 ? test_eval.f1_per_class[1]
                                                      : test_eval.f1_per_class[0];
    rep.macro_f1 = test_eval.macro_f1;
    rep.val_macro_f1 = val_eval.macro_f1;
    rep.test_accuracy = test_eval.accuracy;

    if (truth_known && !part.expansion.empty()) {
      long wrong = 0;
      for (const PseudoExample& pe : part.expansion) {
        const std::size_t orig = visible_idx[static_cast<std::size_t>(pe.pool_index)];
        if (pe.pseudo_class != bundle.target_truth[orig]) ++wrong;
      }
      rep.expansion_error_rate =
          static_cast<double>(wrong) / static_cast<double>(part.expansion.size());
    }
    if (truth_known && !(bundle.target_in_domain.empty() && part.expansion.empty())) {
      std::vector<int> d_e_truth;
      for (const PseudoExample& pe : part.expansion) {
        d_e_truth.push_back(
            bundle.target_truth[visible_idx[static_cast<std::size_t>(pe.pool_index)]]);
      }
      rep.bound = theorem2_report(params, params_prev, arch, bundle.target_in_domain,
                                  part.expansion, d_e_truth, target_proxy);
      rep.has_bound = true;
    }

    run.reports.push_back(rep);
    run.final_weight_log = std::move(meta.weight_log);
    run.final_pseudo.clear();
    auto snapshot = [&](const std::vector<PseudoExample>& list, bool selected) {
      for (const PseudoExample& pe : list) {
        PseudoSnapshotRow row;
        row.pool_index = pe.pool_index;
        row.entropy = pe.entropy;
        row.selected = selected;
        row.pseudo_class = pe.pseudo_class;
        if (truth_known) {
          row.true_class = bundle.target_truth[visible_idx[static_cast<std::size_t>(pe.pool_index)]];
        }
        run.final_pseudo.push_back(row);
      }
    };
    snapshot(part.expansion, true);
    snapshot(part.remainder, false);
    std::sort(run.final_pseudo.begin(), run.final_pseudo.end(),
              [](const PseudoSnapshotRow& a, const PseudoSnapshotRow& b) {
                return a.pool_index < b.pool_index;
              });

    if (rep.val_macro_f1 > run.best_val_macro_f1) {
      run.best_val_macro_f1 = rep.val_macro_f1;
      run.best_iteration = iter;
      bad_iters = 0;
    } else if (++bad_iters >= cfg.patience) {
      break;
    }
  }
  run.final_params = std::move(params);
  return run;
}

// Runs the driver once per exposure fraction with everything else fixed; the
// seeded exposure permutation makes larger fractions supersets of smaller
// ones. Rows come back sorted ascending by fraction.
inline std::vector<std::pair<double, double>> exposure_sweep(const DatasetBundle& bundle,
                                                             const RunConfig& cfg,
                                                             std::vector<double> fractions) {
  for (double f : fractions) {
    if (f < 0.0 || f > 1.0) throw ConfigError("exposure fractions must be in [0, 1]");
  }
  std::sort(fractions.begin(), fractions.end());
  std::vector<std::pair<double, double>> table;
  for (double f : fractions) {
    RunConfig run_cfg = cfg;
    run_cfg.exposure_fraction = f;
    table.emplace_back(f, run_damstf(bundle, run_cfg).summary_macro_f1());
  }
  return table;
}

// The default exposure grid.
inline std::vector<double> default_exposure_fractions() {
  return {0.0, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
}

}  // namespace damstf
