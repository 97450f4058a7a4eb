#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "damstf/data.hpp"
#include "damstf/errors.hpp"
#include "damstf/meta_constructor.hpp"
#include "damstf/meta_learning.hpp"
#include "damstf/nn.hpp"

namespace damstf {

// The three error-bound terms for one training snapshot:
//   eps_val + hdh_term + rho * eps_expansion >= actual target error.
// The H-delta-H term uses the exact nested-input-set value with the synthetic
// target pool standing in for the full domain, which makes it a proxy rather
// than the intractable supremum over hypothesis pairs.
struct BoundReport {
  double eps_val = 0.0;        // error of h^t on D_T^l (truth) + D_E (pseudo labels)
  double hdh_term = 0.0;       // 0.5 * d_HdH(proxy pool, D_T^l union D_E)
  double rho = 0.0;            // |D_E| / (|D_T^l| + |D_E|)
  double eps_expansion = 0.0;  // disagreement(h*, h^{t-1}) on D_E
  double bound = 0.0;
  double actual_target_error = 0.0;  // error of h^t on the proxy pool
};

// Mean per-instance prediction difference of two hypotheses (each prediction
// a one-hot vector): (1/|D|) sum (1/C) * ||h1(x) - h2(x)||_1. For one-hot
// binary predictions each differing instance contributes exactly 1, so the
// value equals the error rate when one list is the ground truth.
inline double disagreement(const std::vector<std::vector<double>>& preds_a,
                           const std::vector<std::vector<double>>& preds_b) {
  if (preds_a.size() != preds_b.size()) {
    throw ConfigError("disagreement: prediction lists differ in length");
  }
  if (preds_a.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < preds_a.size(); ++i) {
    if (preds_a[i].size() != preds_b[i].size() || preds_a[i].empty()) {
      throw ConfigError("disagreement: prediction vectors differ in class count");
    }
    double l1 = 0.0;
    for (std::size_t c = 0; c < preds_a[i].size(); ++c) {
      l1 += std::abs(preds_a[i][c] - preds_b[i][c]);
    }
    total += l1 / static_cast<double>(preds_a[i].size());
  }
  return total / static_cast<double>(preds_a.size());
}

// Exact H-delta-H distance for nested input sets: 2 * (|D2| - |D1|) / |D2|.
inline double hdh_nested(std::size_t size_inner, std::size_t size_outer) {
  if (size_outer == 0) throw ConfigError("hdh_nested: outer set must be nonempty");
  if (size_inner > size_outer) {
    throw ConfigError("hdh_nested: inner set cannot be larger than the outer set");
  }
  return 2.0 * static_cast<double>(size_outer - size_inner) / static_cast<double>(size_outer);
}

// For nested inputs X1 <= X2 <= X3 the distance to the outer set shrinks as
// the inner set grows; always true by the nested-set formula.
inline bool theorem3_check(std::size_t n1, std::size_t n2, std::size_t n3) {
  if (n1 > n2 || n2 > n3) throw ConfigError("theorem3_check: sizes must be ordered n1 <= n2 <= n3");
  return hdh_nested(n2, n3) <= hdh_nested(n1, n3);
}

namespace detail {

inline std::vector<std::vector<double>> predict_one_hots(const ParamVector& params,
                                                         const Architecture& arch,
                                                         const std::vector<Example>& pool) {
  std::vector<std::vector<double>> preds;
  preds.reserve(pool.size());
  for (const Example& ex : pool) {
    const ForwardResult fr = forward(params, arch, ex.features);
    preds.push_back(one_hot(arch.output_dim(), argmax(fr.probabilities)));
  }
  return preds;
}

inline std::vector<std::vector<double>> label_one_hots(const std::vector<Example>& pool,
                                                       int num_classes) {
  std::vector<std::vector<double>> hots;
  hots.reserve(pool.size());
  for (const Example& ex : pool) {
    if (!ex.label.has_value()) throw ConfigError("expected a labeled example");
    hots.push_back(one_hot(num_classes, *ex.label));
  }
  return hots;
}

}  // namespace detail

// Assembles the bound for one snapshot. d_e_truth holds the ground-truth
// class of each expansion instance; target_truth is the labeled pool standing
// in for the target domain and must contain the inputs of D_T^l and D_E.
inline BoundReport theorem2_report(const ParamVector& params_t, const ParamVector& params_prev,
                                   const Architecture& arch, const std::vector<Example>& d_tl,
                                   const std::vector<PseudoExample>& d_e,
                                   const std::vector<int>& d_e_truth,
                                   const std::vector<Example>& target_truth) {
  if (d_tl.empty() && d_e.empty()) {
    throw ConfigError("theorem2_report: both the in-domain set and the expansion set are empty");
  }
  if (d_e.size() != d_e_truth.size()) {
    throw ConfigError("theorem2_report: expansion set and its truth labels differ in size");
  }
  const int c_count = arch.output_dim();
  BoundReport r;

  // eps_val: h^t against truth on D_T^l and pseudo labels on D_E.
  std::vector<std::vector<double>> supervision = detail::label_one_hots(d_tl, c_count);
  std::vector<Example> val_inputs = d_tl;
  for (const PseudoExample& pe : d_e) {
    supervision.push_back(pe.pseudo_one_hot());
    val_inputs.push_back(pe.base);
  }
  r.eps_val = disagreement(detail::predict_one_hots(params_t, arch, val_inputs), supervision);

  r.hdh_term = 0.5 * hdh_nested(d_tl.size() + d_e.size(), target_truth.size());
  r.rho = static_cast<double>(d_e.size()) / static_cast<double>(d_tl.size() + d_e.size());

  if (!d_e.empty()) {
    std::vector<Example> e_inputs;
    std::vector<std::vector<double>> e_truth;
    for (std::size_t i = 0; i < d_e.size(); ++i) {
      e_inputs.push_back(d_e[i].base);
      e_truth.push_back(one_hot(c_count, d_e_truth[i]));
    }
    r.eps_expansion = disagreement(e_truth, detail::predict_one_hots(params_prev, arch, e_inputs));
  }

  r.bound = r.eps_val + r.hdh_term + r.rho * r.eps_expansion;
  r.actual_target_error =
      disagreement(detail::predict_one_hots(params_t, arch, target_truth),
                   detail::label_one_hots(target_truth, c_count));
  return r;
}

// Norm of the mean validation gradient at the current parameters, and the
// mean risk loss on the expansion set under its own pseudo supervision. Both
// shrink together when the model saturates on its confident predictions,
// which is the guidance-vanishment signature.
inline std::pair<double, double> vanishment_probe(const ParamVector& params,
                                                  const Architecture& arch,
                                                  const std::vector<PseudoExample>& d_e,
                                                  const MetaValidationSet& d_m) {
  if (d_e.empty()) throw ConfigError("vanishment_probe: expansion set is empty");
  const double grad_norm = l2_norm(mean_validation_gradient(params, arch, d_m));
  double loss = 0.0;
  for (const PseudoExample& pe : d_e) {
    loss += cross_entropy(forward(params, arch, pe.base.features).probabilities,
                          pe.pseudo_one_hot());
  }
  return {grad_norm, loss / static_cast<double>(d_e.size())};
}

struct WeightDistributionRow {
  std::string confidence_bucket;  // e.g. "0.5-0.6"
  bool correct = false;
  double sigma_lo = 0.0;
  double sigma_hi = 0.0;
  double density = 0.0;
};

inline std::string bucket_label(double lo, double hi) {
  auto fmt = [](double v) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%.1f", v);
    return std::string(buf);
  };
  return fmt(lo) + "-" + fmt(hi);
}

// Histogram of the final activated weights per (confidence bucket x pseudo
// label correctness), density normalized to sum 1 within each cell. Only
// pseudo-supervised rows with a known correctness flag participate.
inline std::vector<WeightDistributionRow> weight_distribution_export(
    const std::vector<WeightLogRow>& weight_log, const std::vector<double>& bucket_edges,
    int sigma_bins = 10) {
  if (bucket_edges.size() < 2) {
    throw ConfigError("weight_distribution_export: need at least two bucket edges");
  }
  if (sigma_bins < 1) throw ConfigError("weight_distribution_export: sigma_bins must be positive");
  const std::size_t n_buckets = bucket_edges.size() - 1;
  // counts[bucket][correct][bin]
  std::vector<std::vector<std::vector<double>>> counts(
      n_buckets, std::vector<std::vector<double>>(2, std::vector<double>(sigma_bins, 0.0)));
  for (const WeightLogRow& row : weight_log) {
    if (!row.pseudo || row.correct < 0 || std::isnan(row.confidence)) continue;
    std::size_t bucket = n_buckets;  // sentinel: outside all buckets
    for (std::size_t b = 0; b < n_buckets; ++b) {
      const bool last = b + 1 == n_buckets;
      if (row.confidence >= bucket_edges[b] &&
          (row.confidence < bucket_edges[b + 1] || (last && row.confidence <= bucket_edges[b + 1]))) {
        bucket = b;
        break;
      }
    }
    if (bucket == n_buckets) continue;
    int bin = static_cast<int>(row.sigma_w * sigma_bins);
    bin = std::clamp(bin, 0, sigma_bins - 1);
    counts[bucket][row.correct == 1 ? 1 : 0][bin] += 1.0;
  }
  std::vector<WeightDistributionRow> rows;
  for (std::size_t b = 0; b < n_buckets; ++b) {
    for (int correct = 0; correct < 2; ++correct) {
      const double total =
          std::accumulate(counts[b][correct].begin(), counts[b][correct].end(), 0.0);
      if (total == 0.0) continue;
      for (int bin = 0; bin < sigma_bins; ++bin) {
        WeightDistributionRow row;
        row.confidence_bucket = bucket_label(bucket_edges[b], bucket_edges[b + 1]);
        row.correct = correct == 1;
        row.sigma_lo = static_cast<double>(bin) / sigma_bins;
        row.sigma_hi = static_cast<double>(bin + 1) / sigma_bins;
        row.density = counts[b][correct][bin] / total;
        rows.push_back(std::move(row));
      }
    }
  }
  return rows;
}

}  // namespace damstf
