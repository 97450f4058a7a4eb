#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "damstf/data.hpp"
#include "damstf/errors.hpp"
#include "damstf/nn.hpp"

namespace damstf {

enum class Mode { SemiSupervised, Unsupervised };

// -sum_c p_c log p_c with clamped probabilities, so degenerate predictions
// stay finite. Bounded by log C.
inline double prediction_entropy(const std::vector<double>& probs) {
  double h = 0.0;
  for (double p : probs) {
    const double q = std::clamp(p, kProbEps, 1.0 - kProbEps);
    h -= q * std::log(q);
  }
  return h < 0.0 ? 0.0 : h;
}

// An unlabeled example annotated with the current model's prediction.
struct PseudoExample {
  Example base;
  std::vector<double> distribution;
  int pseudo_class = 0;
  double entropy = 0.0;
  int pool_index = 0;  // position in the pool that was pseudo labeled

  std::vector<double> pseudo_one_hot() const {
    return one_hot(static_cast<int>(distribution.size()), pseudo_class);
  }
  double confidence() const { return *std::max_element(distribution.begin(), distribution.end()); }
};

struct Partition {
  std::vector<PseudoExample> expansion;  // the k lowest-entropy instances
  std::vector<PseudoExample> remainder;  // meta training pool, sorted order
  int k = 0;
};

struct MetaExample {
  std::vector<double> features;
  std::vector<double> supervision;  // one-hot
};

struct MetaValidationSet {
  std::vector<MetaExample> examples;
  Mode mode = Mode::SemiSupervised;

  std::size_t size() const { return examples.size(); }
};

// Annotates each pool element with the model's distribution, argmax pseudo
// label, and prediction entropy. An empty pool yields an empty list.
inline std::vector<PseudoExample> pseudo_label(const ParamVector& params, const Architecture& arch,
                                               const std::vector<Example>& pool) {
  std::vector<PseudoExample> out;
  out.reserve(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    PseudoExample pe;
    pe.base = pool[i];
    pe.distribution = forward(params, arch, pool[i].features).probabilities;
    pe.pseudo_class = argmax(pe.distribution);
    pe.entropy = prediction_entropy(pe.distribution);
    pe.pool_index = static_cast<int>(i);
    out.push_back(std::move(pe));
  }
  return out;
}

// Ascending entropy sort (ties by pool index); the first k become the
// expansion set D_E, the rest stay in the meta training pool.
inline Partition partition(std::vector<PseudoExample> pool, int k) {
  if (k < 0) throw ConfigError("partition: k must be non-negative");
  std::sort(pool.begin(), pool.end(), [](const PseudoExample& a, const PseudoExample& b) {
    if (a.entropy != b.entropy) return a.entropy < b.entropy;
    return a.pool_index < b.pool_index;
  });
  Partition part;
  part.k = k;
  const std::size_t cut = std::min<std::size_t>(static_cast<std::size_t>(k), pool.size());
  part.expansion.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(cut));
  part.remainder.assign(pool.begin() + static_cast<std::ptrdiff_t>(cut), pool.end());
  return part;
}

// D_M = D_T^l union D_E in semi-supervised mode, D_E alone in unsupervised
// mode. Rebuilt from scratch each self-training iteration.
inline MetaValidationSet build_meta_validation(const std::vector<Example>& in_domain,
                                               const std::vector<PseudoExample>& expansion,
                                               Mode mode, int num_classes) {
  MetaValidationSet dm;
  dm.mode = mode;
  if (mode == Mode::Unsupervised && expansion.empty()) {
    throw ConfigError("build_meta_validation: meta validation set would be empty");
  }
  if (mode == Mode::SemiSupervised) {
    for (const Example& ex : in_domain) {
      if (!ex.label.has_value()) {
        throw ConfigError("build_meta_validation: in-domain examples must be labeled");
      }
      dm.examples.push_back({ex.features, one_hot(num_classes, *ex.label)});
    }
    if (dm.examples.empty() && expansion.empty()) {
      throw ConfigError("build_meta_validation: meta validation set would be empty");
    }
  }
  for (const PseudoExample& pe : expansion) {
    dm.examples.push_back({pe.base.features, pe.pseudo_one_hot()});
  }
  return dm;
}

}  // namespace damstf
