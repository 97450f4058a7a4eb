#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "damstf/errors.hpp"

namespace damstf {

// Probabilities are clamped to [kProbEps, 1 - kProbEps] before any log so
// cross-entropy and prediction entropy stay finite on saturated outputs.
constexpr double kProbEps = 1e-12;

enum class Activation { Tanh, Relu };

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Feed-forward topology: the affine layer sizes, a shared hidden activation,
// and the cut separating the feature extractor from the task head. The head
// is always the final affine layer, so feature_cut() is num_layers() - 1.
struct Architecture {
  std::vector<int> layer_dims;
  Activation activation = Activation::Tanh;

  int num_layers() const { return static_cast<int>(layer_dims.size()) - 1; }
  int feature_cut() const { return num_layers() - 1; }
  int input_dim() const { return layer_dims.front(); }
  int output_dim() const { return layer_dims.back(); }
  // Dimension of the feature extractor output; equals input_dim() for a
  // single-layer network (the extractor degenerates to the identity).
  int feature_dim() const { return layer_dims[layer_dims.size() - 2]; }

  void validate() const {
    if (layer_dims.size() < 2) {
      throw ConfigError("architecture: layer_dims needs at least an input and an output dimension");
    }
    for (int d : layer_dims) {
      if (d <= 0) throw ConfigError("architecture: layer dimensions must be positive");
    }
  }
};

struct LayerSlice {
  int weight_offset = 0;
  int bias_offset = 0;
  int fan_in = 0;
  int fan_out = 0;

  friend bool operator==(const LayerSlice&, const LayerSlice&) = default;
};

// All trainable parameters of one network as a flat vector plus the
// per-layer (offset, shape) map. Weights are row-major [fan_out][fan_in],
// each layer stored as weights then biases.
struct ParamVector {
  std::vector<double> values;
  std::vector<LayerSlice> layout;

  int size() const { return static_cast<int>(values.size()); }

  double* weights(int layer) { return values.data() + layout[layer].weight_offset; }
  const double* weights(int layer) const { return values.data() + layout[layer].weight_offset; }
  double* biases(int layer) { return values.data() + layout[layer].bias_offset; }
  const double* biases(int layer) const { return values.data() + layout[layer].bias_offset; }
};

inline std::vector<LayerSlice> make_layout(const Architecture& arch) {
  std::vector<LayerSlice> layout;
  layout.reserve(arch.layer_dims.size() - 1);
  int offset = 0;
  for (std::size_t l = 0; l + 1 < arch.layer_dims.size(); ++l) {
    LayerSlice s;
    s.fan_in = arch.layer_dims[l];
    s.fan_out = arch.layer_dims[l + 1];
    s.weight_offset = offset;
    s.bias_offset = offset + s.fan_in * s.fan_out;
    offset = s.bias_offset + s.fan_out;
    layout.push_back(s);
  }
  return layout;
}

inline ParamVector zeros_like(const Architecture& arch) {
  ParamVector p;
  p.layout = make_layout(arch);
  const auto& last = p.layout.back();
  p.values.assign(static_cast<std::size_t>(last.bias_offset + last.fan_out), 0.0);
  return p;
}

inline bool same_layout(const ParamVector& a, const ParamVector& b) {
  return a.values.size() == b.values.size() && a.layout == b.layout;
}

inline void check_params_match(const ParamVector& p, const Architecture& arch) {
  bool ok = static_cast<int>(p.layout.size()) == arch.num_layers() && !p.layout.empty();
  for (int l = 0; ok && l < arch.num_layers(); ++l) {
    ok = p.layout[l].fan_in == arch.layer_dims[l] && p.layout[l].fan_out == arch.layer_dims[l + 1];
  }
  if (ok) {
    const LayerSlice& last = p.layout.back();
    ok = static_cast<int>(p.values.size()) == last.bias_offset + last.fan_out;
  }
  if (!ok) throw InvariantError("parameter layout does not match architecture");
}

// Glorot-uniform weights, zero biases; deterministic for a fixed seed.
inline ParamVector init_params(const Architecture& arch, std::uint64_t seed) {
  arch.validate();
  ParamVector p = zeros_like(arch);
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l < p.layout.size(); ++l) {
    const LayerSlice& s = p.layout[l];
    const double bound = std::sqrt(6.0 / (s.fan_in + s.fan_out));
    std::uniform_real_distribution<double> u(-bound, bound);
    double* w = p.weights(static_cast<int>(l));
    for (int i = 0; i < s.fan_in * s.fan_out; ++i) w[i] = u(rng);
  }
  return p;
}

struct ForwardResult {
  std::vector<double> features;       // output of the feature extractor
  std::vector<double> logits;
  std::vector<double> probabilities;  // clamped softmax(logits)
};

// acts[0] is the input; acts[l+1] is the output of affine layer l, activated
// for hidden layers and left as raw logits for the final layer.
struct ForwardTrace {
  std::vector<std::vector<double>> acts;
};

namespace detail {

inline double activate(Activation a, double z) {
  return a == Activation::Tanh ? std::tanh(z) : (z > 0.0 ? z : 0.0);
}

// Derivative expressed through the post-activation value. relu'(0) uses the
// zero subgradient, consistent with activate() mapping 0 -> 0.
inline double activate_deriv(Activation a, double post) {
  return a == Activation::Tanh ? 1.0 - post * post : (post > 0.0 ? 1.0 : 0.0);
}

inline ForwardTrace run_layers(const ParamVector& params, const Architecture& arch,
                               const std::vector<double>& x, int count) {
  if (static_cast<int>(x.size()) != arch.input_dim()) {
    throw ConfigError("forward: input has length " + std::to_string(x.size()) +
                      ", architecture expects " + std::to_string(arch.input_dim()));
  }
  check_params_match(params, arch);
  ForwardTrace trace;
  trace.acts.resize(static_cast<std::size_t>(count) + 1);
  trace.acts[0] = x;
  const int last = arch.num_layers() - 1;
  for (int l = 0; l < count; ++l) {
    const LayerSlice& s = params.layout[l];
    const double* w = params.weights(l);
    const double* b = params.biases(l);
    const std::vector<double>& in = trace.acts[l];
    std::vector<double>& out = trace.acts[l + 1];
    out.resize(static_cast<std::size_t>(s.fan_out));
    for (int j = 0; j < s.fan_out; ++j) {
      double z = b[j];
      const double* wrow = w + static_cast<std::size_t>(j) * s.fan_in;
      for (int k = 0; k < s.fan_in; ++k) z += wrow[k] * in[k];
      out[j] = (l == last) ? z : activate(arch.activation, z);
    }
  }
  return trace;
}

}  // namespace detail

inline ForwardTrace forward_trace(const ParamVector& params, const Architecture& arch,
                                  const std::vector<double>& x) {
  return detail::run_layers(params, arch, x, arch.num_layers());
}

// Activations up to the feature extractor output (acts.back() == features).
inline ForwardTrace forward_features_trace(const ParamVector& params, const Architecture& arch,
                                           const std::vector<double>& x) {
  return detail::run_layers(params, arch, x, arch.feature_cut());
}

inline std::vector<double> softmax(const std::vector<double>& logits) {
  std::vector<double> p(logits.size());
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

inline std::vector<double> clamp_probs(std::vector<double> p) {
  for (double& v : p) v = std::clamp(v, kProbEps, 1.0 - kProbEps);
  return p;
}

inline ForwardResult forward(const ParamVector& params, const Architecture& arch,
                             const std::vector<double>& x) {
  ForwardTrace trace = forward_trace(params, arch, x);
  ForwardResult out;
  out.features = trace.acts[trace.acts.size() - 2];
  out.logits = trace.acts.back();
  out.probabilities = clamp_probs(softmax(out.logits));
  return out;
}

inline double cross_entropy(const std::vector<double>& probs, const std::vector<double>& y) {
  if (probs.size() != y.size()) {
    throw ConfigError("cross_entropy: probability and label vectors differ in length");
  }
  double loss = 0.0;
  for (std::size_t c = 0; c < probs.size(); ++c) {
    if (y[c] != 0.0) loss -= y[c] * std::log(std::clamp(probs[c], kProbEps, 1.0 - kProbEps));
  }
  return loss;
}

struct BackwardResult {
  ParamVector grad;
  std::vector<double> input_grad;
};

namespace detail {

// Gradient of cross_entropy(clamp(softmax(logits)), y) w.r.t. logits. Where
// the clamp saturates, the loss is locally constant in that coordinate and
// the contribution is zero, matching the finite-difference view.
inline std::vector<double> softmax_ce_logit_grad(const std::vector<double>& probs_unclamped,
                                                 const std::vector<double>& y) {
  const std::size_t c_count = probs_unclamped.size();
  std::vector<double> dldp(c_count, 0.0);
  for (std::size_t c = 0; c < c_count; ++c) {
    const double p = probs_unclamped[c];
    if (y[c] != 0.0 && p > kProbEps && p < 1.0 - kProbEps) dldp[c] = -y[c] / p;
  }
  double s = 0.0;
  for (std::size_t c = 0; c < c_count; ++c) s += dldp[c] * probs_unclamped[c];
  std::vector<double> dlogits(c_count);
  for (std::size_t k = 0; k < c_count; ++k) {
    dlogits[k] = probs_unclamped[k] * (dldp[k] - s);
  }
  return dlogits;
}

// Shared reverse pass over affine layers [0, upto]; `upstream` is the
// gradient w.r.t. acts[upto + 1]. When that activation is the raw logits the
// activation derivative is skipped for the top layer.
inline BackwardResult backward_range(const ParamVector& params, const Architecture& arch,
                                     const ForwardTrace& trace, std::vector<double> upstream,
                                     int upto, bool top_is_logits) {
  BackwardResult res;
  res.grad = zeros_like(arch);
  for (int l = upto; l >= 0; --l) {
    const LayerSlice& s = params.layout[l];
    std::vector<double> dz = std::move(upstream);
    if (!(top_is_logits && l == upto)) {
      for (int j = 0; j < s.fan_out; ++j) {
        dz[j] *= activate_deriv(arch.activation, trace.acts[l + 1][j]);
      }
    }
    const std::vector<double>& in = trace.acts[l];
    double* gw = res.grad.weights(l);
    double* gb = res.grad.biases(l);
    for (int j = 0; j < s.fan_out; ++j) {
      double* gwrow = gw + static_cast<std::size_t>(j) * s.fan_in;
      for (int k = 0; k < s.fan_in; ++k) gwrow[k] += dz[j] * in[k];
      gb[j] += dz[j];
    }
    upstream.assign(static_cast<std::size_t>(s.fan_in), 0.0);
    const double* w = params.weights(l);
    for (int j = 0; j < s.fan_out; ++j) {
      const double* wrow = w + static_cast<std::size_t>(j) * s.fan_in;
      for (int k = 0; k < s.fan_in; ++k) upstream[k] += wrow[k] * dz[j];
    }
  }
  res.input_grad = std::move(upstream);
  return res;
}

}  // namespace detail

// Backprop from a full trace given dLoss/dlogits.
inline BackwardResult backward_from_logits(const ParamVector& params, const Architecture& arch,
                                           const ForwardTrace& trace, std::vector<double> dlogits) {
  return detail::backward_range(params, arch, trace, std::move(dlogits),
                                arch.num_layers() - 1, /*top_is_logits=*/true);
}

// Backprop from a features trace given dLoss/dfeatures; the task head's
// parameters receive zero gradient. With no feature layers the input grad is
// just the upstream gradient.
inline BackwardResult backward_from_features(const ParamVector& params, const Architecture& arch,
                                             const ForwardTrace& trace,
                                             std::vector<double> dfeatures) {
  if (arch.feature_cut() == 0) {
    BackwardResult res;
    res.grad = zeros_like(arch);
    res.input_grad = std::move(dfeatures);
    return res;
  }
  return detail::backward_range(params, arch, trace, std::move(dfeatures),
                                arch.feature_cut() - 1, /*top_is_logits=*/false);
}

// Exact reverse-mode gradient of cross_entropy(forward(params, x), y).
inline ParamVector per_example_gradient(const ParamVector& params, const Architecture& arch,
                                        const std::vector<double>& x,
                                        const std::vector<double>& y) {
  ForwardTrace trace = forward_trace(params, arch, x);
  std::vector<double> probs = softmax(trace.acts.back());
  if (probs.size() != y.size()) {
    throw ConfigError("per_example_gradient: label vector length does not match output dimension");
  }
  return backward_from_logits(params, arch, trace,
                              detail::softmax_ce_logit_grad(probs, y))
      .grad;
}

// Central differences of an arbitrary scalar function of a flat vector.
template <class F>
std::vector<double> central_difference(F&& f, std::vector<double> point, double step) {
  if (step <= 0.0) throw ConfigError("central_difference: step must be positive");
  std::vector<double> grad(point.size());
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double orig = point[i];
    point[i] = orig + step;
    const double f_plus = f(point);
    point[i] = orig - step;
    const double f_minus = f(point);
    point[i] = orig;
    grad[i] = (f_plus - f_minus) / (2.0 * step);
  }
  return grad;
}

inline ParamVector finite_difference_gradient(const ParamVector& params, const Architecture& arch,
                                              const std::vector<double>& x,
                                              const std::vector<double>& y, double step) {
  ParamVector grad = params;
  grad.values = central_difference(
      [&](const std::vector<double>& values) {
        ParamVector p = params;
        p.values = values;
        return cross_entropy(forward(p, arch, x).probabilities, y);
      },
      params.values, step);
  return grad;
}

// dst + scale * src, elementwise; layouts must match.
inline ParamVector axpy(const ParamVector& dst, double scale, const ParamVector& src) {
  if (!same_layout(dst, src)) throw InvariantError("axpy: parameter layout mismatch");
  ParamVector out = dst;
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += scale * src.values[i];
  return out;
}

inline void axpy_inplace(ParamVector& dst, double scale, const ParamVector& src) {
  if (!same_layout(dst, src)) throw InvariantError("axpy: parameter layout mismatch");
  for (std::size_t i = 0; i < dst.values.size(); ++i) dst.values[i] += scale * src.values[i];
}

inline double dot(const ParamVector& a, const ParamVector& b) {
  if (!same_layout(a, b)) throw InvariantError("dot: parameter layout mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) s += a.values[i] * b.values[i];
  return s;
}

inline double l2_norm(const ParamVector& p) {
  double s = 0.0;
  for (double v : p.values) s += v * v;
  return std::sqrt(s);
}

inline int argmax(const std::vector<double>& v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

inline std::vector<double> one_hot(int num_classes, int index) {
  std::vector<double> v(static_cast<std::size_t>(num_classes), 0.0);
  v[static_cast<std::size_t>(index)] = 1.0;
  return v;
}

}  // namespace damstf
