#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "damstf/errors.hpp"

namespace damstf {

enum class Domain { Source, Target };

inline const char* domain_name(Domain d) { return d == Domain::Source ? "source" : "target"; }

struct Example {
  std::vector<double> features;
  std::optional<int> label;  // class index; absent for unlabeled pools
  Domain domain = Domain::Source;
};

// The four training pools: labeled source, unlabeled target, the small
// labeled in-domain set (empty in unsupervised mode), and held-out labeled
// target data for testing. target_truth holds the generator's ground-truth
// class per unlabeled example (diagnostics only); empty when unknown.
struct DatasetBundle {
  std::vector<Example> source_labeled;
  std::vector<Example> target_unlabeled;
  std::vector<Example> target_in_domain;
  std::vector<Example> target_test;
  std::vector<int> target_truth;
};

namespace detail {

// Class-conditional means of the binary synthetic task; the target domain
// rotates the means about the origin, translating each class mean while the
// single shift_angle scalar controls the size of the covariate shift.
inline std::vector<double> class_mean(int cls, double angle) {
  const double mx = cls == 0 ? 1.2 : -1.2;
  const double my = 0.0;
  return {mx * std::cos(angle) - my * std::sin(angle),
          mx * std::sin(angle) + my * std::cos(angle)};
}

inline std::vector<Example> gen_split(std::mt19937_64& rng, int n, Domain domain, double angle,
                                      double noise_std, bool labeled, std::vector<int>* truth) {
  std::normal_distribution<double> noise(0.0, noise_std);
  std::vector<Example> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int cls = i % 2;
    std::vector<double> mean = class_mean(cls, domain == Domain::Target ? angle : 0.0);
    Example ex;
    ex.features = {mean[0] + noise(rng), mean[1] + noise(rng)};
    ex.domain = domain;
    if (labeled) ex.label = cls;
    if (truth != nullptr) truth->push_back(cls);
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace detail

// Binary 2-D domain-shift benchmark: two class-conditional Gaussians, target
// splits drawn from the means rotated by shift_angle. Classes alternate so
// every split is balanced.
inline DatasetBundle gen_shifted_gaussians(std::uint64_t seed, int n_source,
                                           int n_target_unlabeled, int n_in_domain, int n_test,
                                           double shift_angle, double noise_std) {
  if (n_source < 0 || n_target_unlabeled < 0 || n_in_domain < 0 || n_test < 0) {
    throw ConfigError("gen_shifted_gaussians: counts must be non-negative");
  }
  if (noise_std < 0.0) throw ConfigError("gen_shifted_gaussians: noise_std must be non-negative");
  std::mt19937_64 rng(seed);
  DatasetBundle b;
  b.source_labeled =
      detail::gen_split(rng, n_source, Domain::Source, shift_angle, noise_std, true, nullptr);
  b.target_unlabeled = detail::gen_split(rng, n_target_unlabeled, Domain::Target, shift_angle,
                                         noise_std, false, &b.target_truth);
  b.target_in_domain =
      detail::gen_split(rng, n_in_domain, Domain::Target, shift_angle, noise_std, true, nullptr);
  b.target_test =
      detail::gen_split(rng, n_test, Domain::Target, shift_angle, noise_std, true, nullptr);
  return b;
}

// JSONL schema, one object per line:
//   {"features": [..], "label": <int or null>, "domain": "source"|"target"}
// Feature length must be consistent across the file.
inline std::vector<Example> load_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_jsonl: cannot open " + path);
  std::vector<Example> out;
  std::string line;
  std::size_t line_no = 0;
  std::size_t feature_len = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    Example ex;
    if (!j.is_object() || !j.contains("features") || !j["features"].is_array()) {
      throw ParseError(path + ":" + std::to_string(line_no) +
                       ": expected an object with a \"features\" array");
    }
    for (const auto& v : j["features"]) {
      if (!v.is_number()) {
        throw ParseError(path + ":" + std::to_string(line_no) + ": features must be numbers");
      }
      ex.features.push_back(v.get<double>());
    }
    if (j.contains("label") && !j["label"].is_null()) {
      if (!j["label"].is_number_integer()) {
        throw ParseError(path + ":" + std::to_string(line_no) + ": label must be an integer or null");
      }
      ex.label = j["label"].get<int>();
    }
    const std::string dom = j.value("domain", std::string{});
    if (dom == "source") {
      ex.domain = Domain::Source;
    } else if (dom == "target") {
      ex.domain = Domain::Target;
    } else {
      throw ParseError(path + ":" + std::to_string(line_no) +
                       ": domain must be \"source\" or \"target\"");
    }
    if (out.empty()) {
      feature_len = ex.features.size();
    } else if (ex.features.size() != feature_len) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": feature length " +
                       std::to_string(ex.features.size()) + " differs from first line's " +
                       std::to_string(feature_len));
    }
    out.push_back(std::move(ex));
  }
  return out;
}

inline void save_jsonl(const std::string& path, const std::vector<Example>& examples) {
  std::ofstream out(path);
  if (!out) throw IoError("save_jsonl: cannot write " + path);
  for (const Example& ex : examples) {
    nlohmann::json j;
    j["features"] = ex.features;
    if (ex.label.has_value()) {
      j["label"] = *ex.label;
    } else {
      j["label"] = nullptr;
    }
    j["domain"] = domain_name(ex.domain);
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("save_jsonl: write failed for " + path);
}

// Flips round(fraction * n) labels of a labeled binary pool, positions drawn
// by seeded shuffle; returns the modified pool and the flip mask.
inline std::pair<std::vector<Example>, std::vector<bool>> flip_labels(std::vector<Example> examples,
                                                                      double fraction,
                                                                      std::uint64_t seed) {
  if (fraction < 0.0 || fraction > 1.0) {
    throw ConfigError("flip_labels: fraction must be in [0, 1]");
  }
  for (const Example& ex : examples) {
    if (!ex.label.has_value()) throw ConfigError("flip_labels: all examples must be labeled");
    if (*ex.label != 0 && *ex.label != 1) {
      throw ConfigError("flip_labels: only binary labels are supported");
    }
  }
  const std::size_t n = examples.size();
  const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<bool> mask(n, false);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t idx = order[i];
    examples[idx].label = 1 - *examples[idx].label;
    mask[idx] = true;
  }
  return {std::move(examples), std::move(mask)};
}

}  // namespace damstf
