#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "damstf/data.hpp"
#include "damstf/errors.hpp"
#include "damstf/self_training.hpp"
#include "damstf/theory.hpp"

namespace damstf {

inline std::string fmt_double(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf);
}

namespace detail {

// Strict object reader that carries the field path for error messages.
class JsonObj {
 public:
  JsonObj(const nlohmann::json& j, std::string path) : j_(&j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError(path_ + ": expected a JSON object");
  }

  bool has(const std::string& key) const { return j_->contains(key); }

  double number(const std::string& key, double def) const {
    if (!has(key)) return def;
    const auto& v = (*j_)[key];
    if (!v.is_number()) throw ConfigError(field(key) + ": expected a number");
    return v.get<double>();
  }

  int integer(const std::string& key, int def) const {
    if (!has(key)) return def;
    const auto& v = (*j_)[key];
    if (!v.is_number_integer()) throw ConfigError(field(key) + ": expected an integer");
    return v.get<int>();
  }

  std::uint64_t uinteger(const std::string& key, std::uint64_t def) const {
    if (!has(key)) return def;
    const auto& v = (*j_)[key];
    if (!v.is_number_integer()) throw ConfigError(field(key) + ": expected an integer");
    return v.get<std::uint64_t>();
  }

  bool boolean(const std::string& key, bool def) const {
    if (!has(key)) return def;
    const auto& v = (*j_)[key];
    if (!v.is_boolean()) throw ConfigError(field(key) + ": expected a boolean");
    return v.get<bool>();
  }

  std::string str(const std::string& key, const std::string& def) const {
    if (!has(key)) return def;
    const auto& v = (*j_)[key];
    if (!v.is_string()) throw ConfigError(field(key) + ": expected a string");
    return v.get<std::string>();
  }

  std::vector<int> int_array(const std::string& key, std::vector<int> def) const {
    if (!has(key)) return def;
    const auto& v = (*j_)[key];
    if (!v.is_array()) throw ConfigError(field(key) + ": expected an array of integers");
    std::vector<int> out;
    for (const auto& e : v) {
      if (!e.is_number_integer()) throw ConfigError(field(key) + ": expected integer entries");
      out.push_back(e.get<int>());
    }
    return out;
  }

  JsonObj child(const std::string& key) const { return JsonObj((*j_)[key], field(key)); }

  void reject_unknown(const std::set<std::string>& known) const {
    for (const auto& [key, value] : j_->items()) {
      if (known.count(key) == 0) throw ConfigError(field(key) + ": unknown field");
    }
  }

  std::string field(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

 private:
  const nlohmann::json* j_;
  std::string path_;
};

}  // namespace detail

inline nlohmann::json to_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["mode"] = cfg.mode == Mode::Unsupervised ? "unsup" : "semi";
  j["k_fraction"] = cfg.k_fraction;
  j["max_iters"] = cfg.max_iters;
  j["patience"] = cfg.patience;
  j["exposure_fraction"] = cfg.exposure_fraction;
  j["accumulate_expansion"] = cfg.accumulate_expansion;
  j["ablation"] = {{"no_adversarial", cfg.ablation.no_adversarial},
                   {"no_expansion", cfg.ablation.no_expansion}};
  j["seeds"] = {{"data", cfg.seeds.data}, {"shuffle", cfg.seeds.shuffle}, {"init", cfg.seeds.init}};
  j["meta"] = {{"eta", cfg.meta.eta},
               {"gamma", cfg.meta.gamma},
               {"t_m", cfg.meta.t_m},
               {"batch_size", cfg.meta.batch_size}};
  j["adv"] = {{"eta1", cfg.adv.eta1},
              {"eta2", cfg.adv.eta2},
              {"t_d", cfg.adv.t_d},
              {"t_g", cfg.adv.t_g},
              {"batch_size", cfg.adv.batch_size}};
  j["model"] = {{"hidden_dims", cfg.hidden_dims},
                {"activation", cfg.activation == Activation::Tanh ? "tanh" : "relu"},
                {"disc_hidden", cfg.disc_hidden}};
  j["pretrain"] = {{"epochs", cfg.pretrain_epochs}, {"eta", cfg.pretrain_eta}};
  return j;
}

// Strict parse of a RunConfig JSON document; wrong types and unknown fields
// are reported with their dotted field path.
inline RunConfig parse_run_config(const nlohmann::json& j, const std::string& root = "") {
  detail::JsonObj obj(j, root);
  obj.reject_unknown({"mode", "k_fraction", "max_iters", "patience", "exposure_fraction",
                      "accumulate_expansion", "ablation", "seeds", "meta", "adv", "model",
                      "pretrain"});
  RunConfig cfg;
  const std::string mode = obj.str("mode", "semi");
  if (mode == "semi") {
    cfg.mode = Mode::SemiSupervised;
  } else if (mode == "unsup") {
    cfg.mode = Mode::Unsupervised;
  } else {
    throw ConfigError(obj.field("mode") + ": expected \"semi\" or \"unsup\"");
  }
  cfg.k_fraction = obj.number("k_fraction", cfg.k_fraction);
  cfg.max_iters = obj.integer("max_iters", cfg.max_iters);
  cfg.patience = obj.integer("patience", cfg.patience);
  cfg.exposure_fraction = obj.number("exposure_fraction", cfg.exposure_fraction);
  cfg.accumulate_expansion = obj.boolean("accumulate_expansion", cfg.accumulate_expansion);
  if (obj.has("ablation")) {
    auto sub = obj.child("ablation");
    sub.reject_unknown({"no_adversarial", "no_expansion"});
    cfg.ablation.no_adversarial = sub.boolean("no_adversarial", false);
    cfg.ablation.no_expansion = sub.boolean("no_expansion", false);
  }
  if (obj.has("seeds")) {
    auto sub = obj.child("seeds");
    sub.reject_unknown({"data", "shuffle", "init"});
    cfg.seeds.data = sub.uinteger("data", cfg.seeds.data);
    cfg.seeds.shuffle = sub.uinteger("shuffle", cfg.seeds.shuffle);
    cfg.seeds.init = sub.uinteger("init", cfg.seeds.init);
  }
  if (obj.has("meta")) {
    auto sub = obj.child("meta");
    sub.reject_unknown({"eta", "gamma", "t_m", "batch_size"});
    cfg.meta.eta = sub.number("eta", cfg.meta.eta);
    cfg.meta.gamma = sub.number("gamma", cfg.meta.gamma);
    cfg.meta.t_m = sub.integer("t_m", cfg.meta.t_m);
    cfg.meta.batch_size = sub.integer("batch_size", cfg.meta.batch_size);
  }
  if (obj.has("adv")) {
    auto sub = obj.child("adv");
    sub.reject_unknown({"eta1", "eta2", "t_d", "t_g", "batch_size"});
    cfg.adv.eta1 = sub.number("eta1", cfg.adv.eta1);
    cfg.adv.eta2 = sub.number("eta2", cfg.adv.eta2);
    cfg.adv.t_d = sub.integer("t_d", cfg.adv.t_d);
    cfg.adv.t_g = sub.integer("t_g", cfg.adv.t_g);
    cfg.adv.batch_size = sub.integer("batch_size", cfg.adv.batch_size);
  }
  if (obj.has("model")) {
    auto sub = obj.child("model");
    sub.reject_unknown({"hidden_dims", "activation", "disc_hidden"});
    cfg.hidden_dims = sub.int_array("hidden_dims", cfg.hidden_dims);
    const std::string act = sub.str("activation", "tanh");
    if (act == "tanh") {
      cfg.activation = Activation::Tanh;
    } else if (act == "relu") {
      cfg.activation = Activation::Relu;
    } else {
      throw ConfigError(sub.field("activation") + ": expected \"tanh\" or \"relu\"");
    }
    cfg.disc_hidden = sub.integer("disc_hidden", cfg.disc_hidden);
  }
  if (obj.has("pretrain")) {
    auto sub = obj.child("pretrain");
    sub.reject_unknown({"epochs", "eta"});
    cfg.pretrain_epochs = sub.integer("epochs", cfg.pretrain_epochs);
    cfg.pretrain_eta = sub.number("eta", cfg.pretrain_eta);
  }
  return cfg;
}

inline nlohmann::json to_json(const BoundReport& b) {
  return {{"eps_val", b.eps_val},
          {"hdh_term", b.hdh_term},
          {"rho", b.rho},
          {"eps_expansion", b.eps_expansion},
          {"bound", b.bound},
          {"actual_target_error", b.actual_target_error}};
}

inline nlohmann::json to_json(const IterationReport& r) {
  nlohmann::json j;
  j["iteration"] = r.iteration;
  j["target_f1"] = r.target_f1;
  j["macro_f1"] = r.macro_f1;
  j["val_macro_f1"] = r.val_macro_f1;
  j["test_accuracy"] = r.test_accuracy;
  j["expansion_size"] = r.expansion_size;
  j["mean_entropy_expansion"] = r.mean_entropy_expansion;
  j["validation_grad_norm"] = r.validation_grad_norm;
  j["expansion_error_rate"] = r.expansion_error_rate;
  j["expansion_loss_before_adv"] = r.expansion_loss_before_adv;
  j["expansion_loss_after_adv"] = r.expansion_loss_after_adv;
  j["val_grad_norm_before_adv"] = r.val_grad_norm_before_adv;
  j["bound"] = r.has_bound ? to_json(r.bound) : nlohmann::json(nullptr);
  return j;
}

namespace detail {

inline double json_number_or_nan(const nlohmann::json& j, const std::string& key) {
  if (!j.contains(key) || j[key].is_null()) return std::numeric_limits<double>::quiet_NaN();
  return j[key].get<double>();
}

}  // namespace detail

inline IterationReport report_from_json(const nlohmann::json& j) {
  IterationReport r;
  r.iteration = j.value("iteration", 0);
  r.expansion_size = j.value("expansion_size", 0);
  r.target_f1 = detail::json_number_or_nan(j, "target_f1");
  r.macro_f1 = detail::json_number_or_nan(j, "macro_f1");
  r.val_macro_f1 = detail::json_number_or_nan(j, "val_macro_f1");
  r.test_accuracy = detail::json_number_or_nan(j, "test_accuracy");
  r.mean_entropy_expansion = detail::json_number_or_nan(j, "mean_entropy_expansion");
  r.validation_grad_norm = detail::json_number_or_nan(j, "validation_grad_norm");
  r.expansion_error_rate = detail::json_number_or_nan(j, "expansion_error_rate");
  r.expansion_loss_before_adv = detail::json_number_or_nan(j, "expansion_loss_before_adv");
  r.expansion_loss_after_adv = detail::json_number_or_nan(j, "expansion_loss_after_adv");
  r.val_grad_norm_before_adv = detail::json_number_or_nan(j, "val_grad_norm_before_adv");
  if (j.contains("bound") && !j["bound"].is_null()) {
    const auto& b = j["bound"];
    r.has_bound = true;
    r.bound.eps_val = detail::json_number_or_nan(b, "eps_val");
    r.bound.hdh_term = detail::json_number_or_nan(b, "hdh_term");
    r.bound.rho = detail::json_number_or_nan(b, "rho");
    r.bound.eps_expansion = detail::json_number_or_nan(b, "eps_expansion");
    r.bound.bound = detail::json_number_or_nan(b, "bound");
    r.bound.actual_target_error = detail::json_number_or_nan(b, "actual_target_error");
  }
  return r;
}

inline void write_reports_jsonl(const std::string& path,
                                const std::vector<IterationReport>& reports) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  for (const IterationReport& r : reports) out << to_json(r).dump() << '\n';
}

inline std::vector<IterationReport> read_reports_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<IterationReport> reports;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      reports.push_back(report_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return reports;
}

// Minimal CSV layer; fields never contain commas or quotes.
inline void write_csv(const std::string& path, const std::vector<std::string>& header,
                      const std::vector<std::vector<std::string>>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << '\n';
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path);
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  CsvTable table;
  std::string line;
  bool first = true;
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
      if (c == ',') {
        out.push_back(cur);
        cur.clear();
      } else if (c != '\r') {
        cur.push_back(c);
      }
    }
    out.push_back(cur);
    return out;
  };
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (first) {
      table.header = split(line);
      first = false;
    } else {
      table.rows.push_back(split(line));
    }
  }
  return table;
}

// Atomic JSON write: temp file then rename.
inline void write_json_atomic(const std::string& path, const nlohmann::json& j) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw IoError("cannot write " + tmp);
    out << j.dump(2) << '\n';
    if (!out) throw IoError("write failed for " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp + " to " + path + ": " + ec.message());
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
}

// ---- dataset directory layout -------------------------------------------

inline constexpr const char* kSourceFile = "source.jsonl";
inline constexpr const char* kTargetUnlabeledFile = "target_unlabeled.jsonl";
inline constexpr const char* kInDomainFile = "in_domain.jsonl";
inline constexpr const char* kTargetTestFile = "target_test.jsonl";
inline constexpr const char* kTruthFile = "target_unlabeled_truth.csv";

inline void save_bundle(const std::string& dir, const DatasetBundle& bundle) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
  const fs::path base(dir);
  save_jsonl((base / kSourceFile).string(), bundle.source_labeled);
  save_jsonl((base / kTargetUnlabeledFile).string(), bundle.target_unlabeled);
  save_jsonl((base / kInDomainFile).string(), bundle.target_in_domain);
  save_jsonl((base / kTargetTestFile).string(), bundle.target_test);
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < bundle.target_truth.size(); ++i) {
    rows.push_back({std::to_string(i), std::to_string(bundle.target_truth[i])});
  }
  write_csv((base / kTruthFile).string(), {"index", "label"}, rows);
}

inline DatasetBundle load_bundle(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path base(dir);
  DatasetBundle bundle;
  bundle.source_labeled = load_jsonl((base / kSourceFile).string());
  bundle.target_unlabeled = load_jsonl((base / kTargetUnlabeledFile).string());
  bundle.target_in_domain = load_jsonl((base / kInDomainFile).string());
  bundle.target_test = load_jsonl((base / kTargetTestFile).string());
  if (fs::exists(base / kTruthFile)) {
    const CsvTable truth = read_csv((base / kTruthFile).string());
    bundle.target_truth.resize(truth.rows.size(), -1);
    for (const auto& row : truth.rows) {
      if (row.size() != 2) throw ParseError((base / kTruthFile).string() + ": expected two columns");
      const std::size_t idx = std::stoul(row[0]);
      if (idx >= bundle.target_truth.size()) {
        throw ParseError((base / kTruthFile).string() + ": index out of range");
      }
      bundle.target_truth[idx] = std::stoi(row[1]);
    }
  }
  return bundle;
}

}  // namespace damstf
