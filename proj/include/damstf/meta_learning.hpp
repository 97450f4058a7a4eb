#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "damstf/data.hpp"
#include "damstf/errors.hpp"
#include "damstf/meta_constructor.hpp"
#include "damstf/nn.hpp"

namespace damstf {

// splitmix64 of (a, b); used to derive independent per-phase seeds.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Per-batch instance weights; the raw values live on the real line and are
// squashed by sigmoid wherever a weight multiplies a loss.
struct InstanceWeights {
  std::vector<double> raw;

  static InstanceWeights zeros(std::size_t n) { return {std::vector<double>(n, 0.0)}; }

  std::vector<double> activated() const {
    std::vector<double> a(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) a[i] = sigmoid(raw[i]);
    return a;
  }
};

struct MetaConfig {
  double eta = 0.05;     // virtual/model update rate
  double gamma = 200.0;  // weight step, scaled to desk-size hypergradients
  int t_m = 5;           // inner weight-optimization iterations
  int batch_size = 16;

  void validate() const {
    if (eta <= 0.0) throw ConfigError("meta.eta must be positive");
    if (gamma <= 0.0) throw ConfigError("meta.gamma must be positive");
    if (t_m < 0) throw ConfigError("meta.t_m must be non-negative");
    if (batch_size < 1) throw ConfigError("meta.batch_size must be at least 1");
  }
};

// One meta-training pool element: the (features, supervision) pair plus the
// bookkeeping the weight log needs. confidence is the pseudo-labeling
// max-probability (NaN for ground-truth supervision); correct is 1/0 when the
// synthetic ground truth is known, -1 otherwise.
struct TrainInstance {
  MetaExample ex;
  long long id = 0;
  Domain domain = Domain::Source;
  bool pseudo = false;
  double confidence = std::numeric_limits<double>::quiet_NaN();
  int correct = -1;
};

struct WeightLogRow {
  long long example_id = 0;
  Domain domain = Domain::Source;
  bool pseudo = false;
  double confidence = std::numeric_limits<double>::quiet_NaN();
  int correct = -1;
  double sigma_w = 0.5;
};

struct MetaPassResult {
  ParamVector params;
  std::vector<WeightLogRow> weight_log;
};

namespace detail {

inline std::vector<ParamVector> batch_gradients(const ParamVector& params, const Architecture& arch,
                                                const std::vector<MetaExample>& batch) {
  std::vector<ParamVector> grads;
  grads.reserve(batch.size());
  for (const MetaExample& ex : batch) {
    grads.push_back(per_example_gradient(params, arch, ex.features, ex.supervision));
  }
  return grads;
}

// theta - (eta / |B|) * sum_i sigma(w_i) * g_i with precomputed g_i.
inline ParamVector descend_weighted(const ParamVector& params,
                                    const std::vector<ParamVector>& grads,
                                    const InstanceWeights& weights, double eta) {
  ParamVector out = params;
  const double inv_b = 1.0 / static_cast<double>(grads.size());
  for (std::size_t i = 0; i < grads.size(); ++i) {
    axpy_inplace(out, -eta * inv_b * sigmoid(weights.raw[i]), grads[i]);
  }
  return out;
}

inline void check_batch_weights(const std::vector<MetaExample>& batch,
                                const InstanceWeights& weights) {
  if (batch.empty()) throw ConfigError("meta batch must be nonempty");
  if (batch.size() != weights.raw.size()) {
    throw ConfigError("meta batch and instance weights differ in size");
  }
}

}  // namespace detail

// (1 / |B|) * sum_i sigma(w_i) * E(forward(x_i), y_i)
inline double weighted_batch_loss(const ParamVector& params, const Architecture& arch,
                                  const std::vector<MetaExample>& batch,
                                  const InstanceWeights& weights) {
  detail::check_batch_weights(batch, weights);
  double loss = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    loss += sigmoid(weights.raw[i]) *
            cross_entropy(forward(params, arch, batch[i].features).probabilities,
                          batch[i].supervision);
  }
  return loss / static_cast<double>(batch.size());
}

// One virtual SGD step on the weighted batch loss; the input parameters are
// left untouched.
inline ParamVector virtual_update(const ParamVector& params, const Architecture& arch,
                                  const std::vector<MetaExample>& batch,
                                  const InstanceWeights& weights, double eta) {
  detail::check_batch_weights(batch, weights);
  return detail::descend_weighted(params, detail::batch_gradients(params, arch, batch), weights,
                                  eta);
}

inline double meta_validation_loss(const ParamVector& params_hat, const Architecture& arch,
                                   const MetaValidationSet& d_m) {
  if (d_m.examples.empty()) throw ConfigError("meta validation set is empty");
  double loss = 0.0;
  for (const MetaExample& ex : d_m.examples) {
    loss += cross_entropy(forward(params_hat, arch, ex.features).probabilities, ex.supervision);
  }
  return loss / static_cast<double>(d_m.examples.size());
}

// (1 / |D_M|) * sum_j g(x_j, y_j) at the given parameters, fixed index order.
inline ParamVector mean_validation_gradient(const ParamVector& params, const Architecture& arch,
                                            const MetaValidationSet& d_m) {
  if (d_m.examples.empty()) throw ConfigError("meta validation set is empty");
  ParamVector mean = zeros_like(arch);
  const double inv = 1.0 / static_cast<double>(d_m.examples.size());
  for (const MetaExample& ex : d_m.examples) {
    axpy_inplace(mean, inv, per_example_gradient(params, arch, ex.features, ex.supervision));
  }
  return mean;
}

// Exact hypergradient of the meta validation loss w.r.t. each raw weight for
// a single virtual step:
//   dL_M/dw_i = -(eta * sigma(w_i)(1 - sigma(w_i)) / |B|) * <g_val, g_i>
// where g_val is the mean validation gradient at the virtually updated
// parameters and g_i the per-example gradient at the current parameters.
inline std::vector<double> training_guidance(const ParamVector& params, const Architecture& arch,
                                             const std::vector<MetaExample>& batch,
                                             const InstanceWeights& weights,
                                             const MetaValidationSet& d_m, double eta) {
  detail::check_batch_weights(batch, weights);
  const std::vector<ParamVector> grads = detail::batch_gradients(params, arch, batch);
  const ParamVector params_hat = detail::descend_weighted(params, grads, weights, eta);
  const ParamVector g_val = mean_validation_gradient(params_hat, arch, d_m);
  std::vector<double> guidance(batch.size());
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double s = sigmoid(weights.raw[i]);
    guidance[i] = -eta * s * (1.0 - s) * inv_b * dot(g_val, grads[i]);
  }
  return guidance;
}

inline InstanceWeights weight_update(const InstanceWeights& weights,
                                     const std::vector<double>& guidance, double gamma) {
  if (weights.raw.size() != guidance.size()) {
    throw ConfigError("weight_update: weights and guidance differ in size");
  }
  InstanceWeights out = weights;
  for (std::size_t i = 0; i < out.raw.size(); ++i) out.raw[i] -= gamma * guidance[i];
  return out;
}

// The real (non-virtual) step on the weighted batch loss with frozen w*.
inline ParamVector model_update(const ParamVector& params, const Architecture& arch,
                                const std::vector<MetaExample>& batch,
                                const InstanceWeights& weights_star, double eta) {
  return virtual_update(params, arch, batch, weights_star, eta);
}

// One epoch of the meta-learning loop: seeded shuffle into batches, then per
// batch t_m rounds of {virtual update -> training guidance -> weight update}
// followed by one model update with the final weights. Instance weights
// restart at raw 0 (sigma 0.5) for every batch.
inline MetaPassResult run_meta_pass(const ParamVector& params, const Architecture& arch,
                                    const std::vector<TrainInstance>& pool,
                                    const MetaValidationSet& d_m, const MetaConfig& cfg,
                                    std::uint64_t seed) {
  cfg.validate();
  MetaPassResult result;
  result.params = params;
  if (pool.empty()) return result;

  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
    const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
    std::vector<MetaExample> batch;
    batch.reserve(stop - start);
    for (std::size_t i = start; i < stop; ++i) batch.push_back(pool[order[i]].ex);

    const std::vector<ParamVector> grads = detail::batch_gradients(result.params, arch, batch);
    InstanceWeights w = InstanceWeights::zeros(batch.size());
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    for (int t = 0; t < cfg.t_m; ++t) {
      const ParamVector params_hat = detail::descend_weighted(result.params, grads, w, cfg.eta);
      const ParamVector g_val = mean_validation_gradient(params_hat, arch, d_m);
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const double s = sigmoid(w.raw[i]);
        const double guidance = -cfg.eta * s * (1.0 - s) * inv_b * dot(g_val, grads[i]);
        w.raw[i] -= cfg.gamma * guidance;
      }
    }
    result.params = detail::descend_weighted(result.params, grads, w, cfg.eta);

    for (std::size_t i = start; i < stop; ++i) {
      const TrainInstance& inst = pool[order[i]];
      result.weight_log.push_back({inst.id, inst.domain, inst.pseudo, inst.confidence,
                                   inst.correct, sigmoid(w.raw[i - start])});
    }
  }
  return result;
}

}  // namespace damstf
