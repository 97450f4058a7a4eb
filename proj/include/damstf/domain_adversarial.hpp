#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <utility>
#include <vector>

#include "damstf/data.hpp"
#include "damstf/errors.hpp"
#include "damstf/nn.hpp"

namespace damstf {

// Domain one-hots: source = [1, 0], target = [0, 1].
inline std::vector<double> domain_one_hot(Domain d) {
  return d == Domain::Source ? std::vector<double>{1.0, 0.0} : std::vector<double>{0.0, 1.0};
}

// The extra domain discriminator operating on the feature extractor output.
struct Discriminator {
  ParamVector params;
  Architecture arch;
};

struct AdvConfig {
  double eta1 = 0.5;  // discriminator descent rate
  double eta2 = 5.0;  // feature ascent rate, perturbation-scale for the MLP
  int t_d = 5;
  int t_g = 1;
  int batch_size = 16;

  void validate() const {
    if (eta1 <= 0.0) throw ConfigError("adv.eta1 must be positive");
    if (eta2 <= 0.0) throw ConfigError("adv.eta2 must be positive");
    if (t_d < 0) throw ConfigError("adv.t_d must be non-negative");
    if (t_g < 0) throw ConfigError("adv.t_g must be non-negative");
    if (batch_size < 1) throw ConfigError("adv.batch_size must be at least 1");
  }
};

// Raw model input plus its domain one-hot.
struct DomainExample {
  std::vector<double> input;
  std::vector<double> domain;
};

inline Discriminator make_discriminator(int feature_dim, int hidden, std::uint64_t seed) {
  Discriminator disc;
  disc.arch.layer_dims = {feature_dim, hidden, 2};
  disc.arch.activation = Activation::Tanh;
  disc.params = init_params(disc.arch, seed);
  return disc;
}

// (1 / |B|) * sum_i E(disc(features(x_i)), d_i)
inline double domain_loss(const ParamVector& theta, const Architecture& arch,
                          const Discriminator& disc, const std::vector<DomainExample>& batch) {
  double loss = 0.0;
  for (const DomainExample& ex : batch) {
    const std::vector<double> feats =
        forward_features_trace(theta, arch, ex.input).acts.back();
    loss += cross_entropy(forward(disc.params, disc.arch, feats).probabilities, ex.domain);
  }
  return batch.empty() ? 0.0 : loss / static_cast<double>(batch.size());
}

// One descent step on the discriminator parameters with the feature extractor
// frozen.
inline Discriminator discriminator_step(const Discriminator& disc, const ParamVector& theta,
                                        const Architecture& arch,
                                        const std::vector<DomainExample>& batch, double eta1) {
  if (batch.empty()) return disc;
  ParamVector grad = zeros_like(disc.arch);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (const DomainExample& ex : batch) {
    const std::vector<double> feats =
        forward_features_trace(theta, arch, ex.input).acts.back();
    axpy_inplace(grad, inv_b, per_example_gradient(disc.params, disc.arch, feats, ex.domain));
  }
  Discriminator out = disc;
  axpy_inplace(out.params, -eta1, grad);
  return out;
}

// One ascent step on the feature extractor parameters with the discriminator
// frozen; the task head's coordinates are untouched.
inline ParamVector feature_ascent_step(const ParamVector& theta, const Architecture& arch,
                                       const Discriminator& disc,
                                       const std::vector<DomainExample>& batch, double eta2) {
  if (batch.empty()) return theta;
  ParamVector grad = zeros_like(arch);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (const DomainExample& ex : batch) {
    const ForwardTrace feat_trace = forward_features_trace(theta, arch, ex.input);
    const ForwardTrace disc_trace = forward_trace(disc.params, disc.arch, feat_trace.acts.back());
    const std::vector<double> disc_probs = softmax(disc_trace.acts.back());
    const BackwardResult disc_back = backward_from_logits(
        disc.params, disc.arch, disc_trace,
        detail::softmax_ce_logit_grad(disc_probs, ex.domain));
    axpy_inplace(grad, inv_b,
                 backward_from_features(theta, arch, feat_trace, disc_back.input_grad).grad);
  }
  return axpy(theta, eta2, grad);
}

// Algorithm: per seeded batch of the mixed source/target pool, t_d
// discriminator descent steps then t_g feature ascent steps.
inline std::pair<ParamVector, Discriminator> run_adversarial_pass(
    const ParamVector& theta, const Discriminator& disc, const std::vector<DomainExample>& pool,
    const Architecture& arch, const AdvConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParamVector cur_theta = theta;
  Discriminator cur_disc = disc;
  if (pool.empty()) return {std::move(cur_theta), std::move(cur_disc)};

  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
    const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
    std::vector<DomainExample> batch;
    batch.reserve(stop - start);
    for (std::size_t i = start; i < stop; ++i) batch.push_back(pool[order[i]]);
    for (int t = 0; t < cfg.t_d; ++t) {
      cur_disc = discriminator_step(cur_disc, cur_theta, arch, batch, cfg.eta1);
    }
    for (int t = 0; t < cfg.t_g; ++t) {
      cur_theta = feature_ascent_step(cur_theta, arch, cur_disc, batch, cfg.eta2);
    }
  }
  return {std::move(cur_theta), std::move(cur_disc)};
}

}  // namespace damstf
