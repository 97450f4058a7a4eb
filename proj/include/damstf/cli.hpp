#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "damstf/data.hpp"
#include "damstf/errors.hpp"
#include "damstf/self_training.hpp"
#include "damstf/serialize.hpp"
#include "damstf/theory.hpp"

namespace damstf {

inline constexpr const char* kFormatVersion = "1";

namespace cli_detail {

namespace fs = std::filesystem;

inline std::string resolve_out_dir(const std::string& flag_value) {
  if (!flag_value.empty()) return flag_value;
  if (const char* env = std::getenv("DAMSTF_OUT_DIR"); env != nullptr && env[0] != '\0') {
    return env;
  }
  throw ConfigError("--out is required (or set DAMSTF_OUT_DIR)");
}

inline void make_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

inline std::vector<double> parse_fraction_list(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    try {
      out.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw ConfigError("--fractions: cannot parse \"" + tok + "\" as a number");
    }
  }
  if (out.empty()) throw ConfigError("--fractions: empty list");
  return out;
}

inline std::vector<std::uint64_t> parse_seed_list(const std::string& csv) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    try {
      out.push_back(std::stoull(tok));
    } catch (const std::exception&) {
      throw ConfigError("--seeds: cannot parse \"" + tok + "\" as an integer");
    }
  }
  if (out.empty()) throw ConfigError("--seeds: empty list");
  return out;
}

inline std::string confidence_bucket_of(double confidence) {
  if (std::isnan(confidence)) return "";
  const int b = std::clamp(static_cast<int>(confidence * 10.0), 0, 9);
  return bucket_label(b / 10.0, (b + 1) / 10.0);
}

// Accepts either a plain RunConfig document or a run manifest (re-running
// from a manifest reproduces the original outputs).
inline RunConfig load_config_file(const std::string& path) {
  const nlohmann::json j = read_json_file(path);
  if (j.is_object() && j.contains("config")) return parse_run_config(j["config"], "config");
  return parse_run_config(j);
}

struct GenerateOptions {
  std::uint64_t seed = 1;
  double shift_angle = 0.7853981633974483;  // pi/4
  int n_source = 200;
  int n_target = 200;
  int n_in_domain = 100;
  int n_test = 200;
  double noise_std = 0.8;
  std::string out;
};

inline int cmd_generate(const GenerateOptions& opt) {
  const std::string out_dir = resolve_out_dir(opt.out);
  const DatasetBundle bundle =
      gen_shifted_gaussians(opt.seed, opt.n_source, opt.n_target, opt.n_in_domain, opt.n_test,
                            opt.shift_angle, opt.noise_std);
  make_dir(out_dir);
  nlohmann::json manifest;
  manifest["format_version"] = kFormatVersion;
  manifest["command"] = "generate";
  manifest["params"] = {{"seed", opt.seed},         {"shift_angle", opt.shift_angle},
                        {"n_source", opt.n_source}, {"n_target", opt.n_target},
                        {"n_in_domain", opt.n_in_domain}, {"n_test", opt.n_test},
                        {"noise_std", opt.noise_std}};
  manifest["artifacts"] = {{"source", kSourceFile},
                           {"target_unlabeled", kTargetUnlabeledFile},
                           {"in_domain", kInDomainFile},
                           {"target_test", kTargetTestFile},
                           {"target_unlabeled_truth", kTruthFile}};
  write_json_atomic((fs::path(out_dir) / "manifest.json").string(), manifest);
  save_bundle(out_dir, bundle);
  std::cout << "generated " << bundle.source_labeled.size() << " source / "
            << bundle.target_unlabeled.size() << " unlabeled / "
            << bundle.target_in_domain.size() << " in-domain / " << bundle.target_test.size()
            << " test examples in " << out_dir << "\n";
  return 0;
}

struct TrainOptions {
  std::string data;
  std::string config;
  std::string mode;     // "", "semi", "unsup"
  std::string ablate;   // "", "D", "E", "DE"
  double exposure = -1.0;
  int max_iters = -1;
  std::string out;
};

inline RunConfig effective_train_config(const TrainOptions& opt) {
  RunConfig cfg;
  if (!opt.config.empty()) cfg = load_config_file(opt.config);
  if (!opt.mode.empty()) {
    if (opt.mode == "semi") {
      cfg.mode = Mode::SemiSupervised;
    } else if (opt.mode == "unsup") {
      cfg.mode = Mode::Unsupervised;
    } else {
      throw ConfigError("--mode: expected \"semi\" or \"unsup\"");
    }
  }
  if (!opt.ablate.empty()) {
    if (opt.ablate == "D") {
      cfg.ablation = {true, false};
    } else if (opt.ablate == "E") {
      cfg.ablation = {false, true};
    } else if (opt.ablate == "DE") {
      cfg.ablation = {true, true};
    } else {
      throw ConfigError("--ablate: expected \"D\", \"E\", or \"DE\"");
    }
  }
  if (opt.exposure >= 0.0) cfg.exposure_fraction = opt.exposure;
  if (opt.max_iters >= 0) cfg.max_iters = opt.max_iters;
  cfg.validate();
  return cfg;
}

inline void write_train_artifacts(const std::string& out_dir, const RunResult& run) {
  const fs::path base(out_dir);

  write_reports_jsonl((base / "reports.jsonl").string(), run.reports);

  std::vector<std::vector<std::string>> weight_rows;
  for (const WeightLogRow& row : run.final_weight_log) {
    weight_rows.push_back({std::to_string(row.example_id), domain_name(row.domain),
                           row.pseudo ? "pseudo" : "true", confidence_bucket_of(row.confidence),
                           row.correct < 0 ? "" : std::to_string(row.correct),
                           fmt_double(row.sigma_w)});
  }
  write_csv((base / "weights.csv").string(),
            {"example_id", "domain", "supervision_source", "confidence_bucket", "correct_flag",
             "sigma_w"},
            weight_rows);

  std::vector<std::vector<std::string>> entropy_rows, pseudo_rows;
  for (const PseudoSnapshotRow& row : run.final_pseudo) {
    entropy_rows.push_back(
        {std::to_string(row.pool_index), fmt_double(row.entropy), row.selected ? "1" : "0"});
    pseudo_rows.push_back({std::to_string(row.pool_index), fmt_double(row.entropy),
                           row.selected ? "1" : "0", std::to_string(row.pseudo_class),
                           std::to_string(row.true_class)});
  }
  write_csv((base / "entropy.csv").string(), {"index", "entropy", "selected_flag"}, entropy_rows);
  write_csv((base / "pseudo_final.csv").string(),
            {"index", "entropy", "selected_flag", "pseudo_class", "true_class"}, pseudo_rows);
  return;
}

inline int cmd_train(const TrainOptions& opt) {
  const RunConfig cfg = effective_train_config(opt);
  const std::string out_dir = resolve_out_dir(opt.out);
  const DatasetBundle bundle = load_bundle(opt.data);
  make_dir(out_dir);

  nlohmann::json manifest;
  manifest["format_version"] = kFormatVersion;
  manifest["command"] = "train";
  manifest["data_dir"] = opt.data;
  manifest["variant"] = variant_name(cfg.ablation);
  manifest["config"] = to_json(cfg);
  manifest["artifacts"] = {{"reports", "reports.jsonl"}, {"summary", "summary.csv"},
                           {"weights", "weights.csv"},   {"entropy", "entropy.csv"},
                           {"pseudo", "pseudo_final.csv"}};
  write_json_atomic((fs::path(out_dir) / "manifest.json").string(), manifest);

  const RunResult run = run_damstf(bundle, cfg);
  write_train_artifacts(out_dir, run);
  {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row{variant_name(cfg.ablation),
                                 cfg.mode == Mode::Unsupervised ? "unsup" : "semi",
                                 std::to_string(run.reports.size()),
                                 std::to_string(run.best_iteration)};
    if (run.best_iteration >= 1) {
      const IterationReport& best = run.reports[static_cast<std::size_t>(run.best_iteration) - 1];
      row.push_back(fmt_double(best.target_f1));
      row.push_back(fmt_double(best.macro_f1));
      row.push_back(fmt_double(best.test_accuracy));
    } else {
      row.insert(row.end(), {"", "", ""});
    }
    rows.push_back(std::move(row));
    write_csv((fs::path(out_dir) / "summary.csv").string(),
              {"variant", "mode", "iterations", "best_iteration", "target_f1", "macro_f1",
               "test_accuracy"},
              rows);
  }
  std::cout << variant_name(cfg.ablation) << ": " << run.reports.size()
            << " iterations, best iteration " << run.best_iteration << ", test macro-F1 "
            << (run.best_iteration >= 1 ? fmt_double(run.summary_macro_f1()) : "n/a") << "\n";
  return 0;
}

struct SweepOptions {
  std::string data;
  std::string config;
  std::string fractions;
  std::string seeds;
  std::string out;
};

inline int cmd_sweep(const SweepOptions& opt) {
  RunConfig cfg;
  if (!opt.config.empty()) cfg = load_config_file(opt.config);
  cfg.validate();
  const std::string out_dir = resolve_out_dir(opt.out);
  std::vector<double> fractions =
      opt.fractions.empty() ? default_exposure_fractions() : parse_fraction_list(opt.fractions);
  for (double f : fractions) {
    if (f < 0.0 || f > 1.0) throw ConfigError("--fractions: values must be in [0, 1]");
  }
  std::vector<std::uint64_t> seeds =
      opt.seeds.empty() ? std::vector<std::uint64_t>{cfg.seeds.init} : parse_seed_list(opt.seeds);

  const DatasetBundle bundle = load_bundle(opt.data);
  make_dir(out_dir);
  nlohmann::json manifest;
  manifest["format_version"] = kFormatVersion;
  manifest["command"] = "sweep";
  manifest["data_dir"] = opt.data;
  manifest["config"] = to_json(cfg);
  manifest["fractions"] = fractions;
  manifest["seeds"] = seeds;
  manifest["artifacts"] = {{"exposure", "exposure.csv"}};
  write_json_atomic((fs::path(out_dir) / "manifest.json").string(), manifest);

  // rows: one per (fraction, seed), sorted ascending by fraction
  std::vector<std::vector<std::string>> rows;
  std::vector<std::pair<double, std::pair<std::uint64_t, double>>> results;
  for (std::uint64_t seed : seeds) {
    RunConfig seed_cfg = cfg;
    seed_cfg.seeds.data = mix_seed(seed, 0xDA7A);
    seed_cfg.seeds.shuffle = mix_seed(seed, 0x5F1E);
    seed_cfg.seeds.init = mix_seed(seed, 0x171D);
    for (const auto& [fraction, macro] : exposure_sweep(bundle, seed_cfg, fractions)) {
      results.push_back({fraction, {seed, macro}});
    }
  }
  std::stable_sort(results.begin(), results.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  for (const auto& [fraction, rest] : results) {
    rows.push_back({fmt_double(fraction), fmt_double(rest.second), std::to_string(rest.first)});
  }
  write_csv((fs::path(out_dir) / "exposure.csv").string(), {"fraction", "macro_f1", "seed"}, rows);
  std::cout << "exposure sweep: " << rows.size() << " rows in " << out_dir << "/exposure.csv\n";
  return 0;
}

struct DiagnoseOptions {
  std::string run;
  std::string out;  // defaults to the run directory
};

inline int cmd_diagnose(const DiagnoseOptions& opt) {
  const fs::path run_dir(opt.run);
  const fs::path out_dir(opt.out.empty() ? opt.run : opt.out);
  for (const char* name : {"manifest.json", "reports.jsonl", "weights.csv", "pseudo_final.csv"}) {
    if (!fs::exists(run_dir / name)) {
      throw IoError("missing run artifact: " + (run_dir / name).string());
    }
  }
  make_dir(out_dir.string());
  const std::vector<IterationReport> reports =
      read_reports_jsonl((run_dir / "reports.jsonl").string());

  // entropy_vs_error.csv: error rate of the lowest-entropy slices.
  {
    const CsvTable pseudo = read_csv((run_dir / "pseudo_final.csv").string());
    struct Row {
      double entropy;
      int pseudo_class;
      int true_class;
    };
    std::vector<Row> known;
    for (const auto& r : pseudo.rows) {
      if (r.size() != 5) throw ParseError("pseudo_final.csv: expected five columns");
      Row row{std::stod(r[1]), std::stoi(r[3]), std::stoi(r[4])};
      if (row.true_class >= 0) known.push_back(row);
    }
    std::stable_sort(known.begin(), known.end(),
                     [](const Row& a, const Row& b) { return a.entropy < b.entropy; });
    std::vector<std::vector<std::string>> rows;
    if (!known.empty()) {
      for (double ratio : {0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0}) {
        const auto count = std::max<std::size_t>(
            1, static_cast<std::size_t>(
                   std::llround(ratio * static_cast<double>(known.size()))));
        long wrong = 0;
        for (std::size_t i = 0; i < count; ++i) {
          if (known[i].pseudo_class != known[i].true_class) ++wrong;
        }
        rows.push_back({fmt_double(ratio),
                        fmt_double(static_cast<double>(wrong) / static_cast<double>(count)),
                        std::to_string(count)});
      }
    }
    write_csv((out_dir / "entropy_vs_error.csv").string(),
              {"selection_ratio", "error_rate", "count"}, rows);
  }

  // expansion_loss.csv: the before/after adversarial probes per iteration.
  {
    std::vector<std::vector<std::string>> rows;
    for (const IterationReport& r : reports) {
      rows.push_back({std::to_string(r.iteration), fmt_double(r.expansion_loss_before_adv),
                      fmt_double(r.expansion_loss_after_adv),
                      fmt_double(r.val_grad_norm_before_adv),
                      fmt_double(r.validation_grad_norm)});
    }
    write_csv((out_dir / "expansion_loss.csv").string(),
              {"iteration", "loss_before", "loss_after", "val_grad_norm_before",
               "val_grad_norm_after"},
              rows);
  }

  // weight_distribution.csv: per (confidence bucket x correctness) histogram.
  {
    const CsvTable weights = read_csv((run_dir / "weights.csv").string());
    std::vector<WeightLogRow> log;
    for (const auto& r : weights.rows) {
      if (r.size() != 6) throw ParseError("weights.csv: expected six columns");
      if (r[2] != "pseudo" || r[3].empty() || r[4].empty()) continue;
      WeightLogRow row;
      row.pseudo = true;
      const auto dash = r[3].find('-');
      if (dash == std::string::npos) throw ParseError("weights.csv: malformed confidence bucket");
      const double lo = std::stod(r[3].substr(0, dash));
      const double hi = std::stod(r[3].substr(dash + 1));
      row.confidence = 0.5 * (lo + hi);
      row.correct = std::stoi(r[4]);
      row.sigma_w = std::stod(r[5]);
      log.push_back(row);
    }
    const std::vector<double> edges{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
    std::vector<std::vector<std::string>> rows;
    for (const WeightDistributionRow& row : weight_distribution_export(log, edges)) {
      rows.push_back({row.confidence_bucket, row.correct ? "1" : "0", fmt_double(row.sigma_lo),
                      fmt_double(row.sigma_hi), fmt_double(row.density)});
    }
    write_csv((out_dir / "weight_distribution.csv").string(),
              {"confidence_bucket", "correct_flag", "sigma_lo", "sigma_hi", "density"}, rows);
  }

  // bound_trace.csv: one row per iteration, fields empty when the bound was
  // not computable (no ground truth).
  {
    std::vector<std::vector<std::string>> rows;
    for (const IterationReport& r : reports) {
      if (r.has_bound) {
        rows.push_back({std::to_string(r.iteration), fmt_double(r.bound.eps_val),
                        fmt_double(r.bound.hdh_term), fmt_double(r.bound.rho),
                        fmt_double(r.bound.eps_expansion), fmt_double(r.bound.bound),
                        fmt_double(r.bound.actual_target_error)});
      } else {
        rows.push_back({std::to_string(r.iteration), "", "", "", "", "", ""});
      }
    }
    write_csv((out_dir / "bound_trace.csv").string(),
              {"iteration", "eps_val", "hdh_term", "rho", "eps_expansion", "bound",
               "actual_target_error"},
              rows);
  }
  std::cout << "diagnostics written to " << out_dir.string() << "\n";
  return 0;
}

}  // namespace cli_detail

// Entry point shared by the binary and the tests. Exit codes: 0 success,
// 2 config/validation error, 3 I/O error, 4 internal invariant violation.
inline int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"DaMSTF: domain-adversarial meta self-training on desk-scale benchmarks"};
  app.require_subcommand(1);

  cli_detail::GenerateOptions gen;
  auto* generate = app.add_subcommand("generate", "Generate a synthetic domain-shift dataset");
  generate->add_option("--seed", gen.seed, "RNG seed");
  generate->add_option("--shift-angle", gen.shift_angle, "target rotation in radians");
  generate->add_option("--n-source", gen.n_source, "labeled source examples");
  generate->add_option("--n-target", gen.n_target, "unlabeled target examples");
  generate->add_option("--n-in-domain", gen.n_in_domain, "labeled in-domain examples");
  generate->add_option("--n-test", gen.n_test, "held-out labeled target examples");
  generate->add_option("--noise-std", gen.noise_std, "class-conditional noise std");
  generate->add_option("--out", gen.out, "output directory");

  cli_detail::TrainOptions train;
  auto* train_cmd = app.add_subcommand("train", "Run the self-training driver");
  train_cmd->add_option("--data", train.data, "dataset directory")->required();
  train_cmd->add_option("--config", train.config, "RunConfig JSON (or a previous manifest.json)");
  train_cmd->add_option("--mode", train.mode, "semi|unsup (overrides config)");
  train_cmd->add_option("--ablate", train.ablate, "D|E|DE (overrides config)");
  train_cmd->add_option("--exposure-fraction", train.exposure,
                        "visible fraction of the unlabeled pool (overrides config)");
  train_cmd->add_option("--max-iters", train.max_iters, "overrides config");
  train_cmd->add_option("--out", train.out, "output directory");

  cli_detail::SweepOptions sweep;
  auto* sweep_cmd = app.add_subcommand("sweep", "Exposure-ratio sweep");
  sweep_cmd->add_option("--data", sweep.data, "dataset directory")->required();
  sweep_cmd->add_option("--config", sweep.config, "RunConfig JSON (or a previous manifest.json)");
  sweep_cmd->add_option("--fractions", sweep.fractions, "comma list, default the 12-point grid");
  sweep_cmd->add_option("--seeds", sweep.seeds, "comma list of run seeds");
  sweep_cmd->add_option("--out", sweep.out, "output directory");

  cli_detail::DiagnoseOptions diag;
  auto* diag_cmd = app.add_subcommand("diagnose", "Derive diagnostic CSVs from a completed run");
  diag_cmd->add_option("--run", diag.run, "run directory")->required();
  diag_cmd->add_option("--out", diag.out, "output directory (default: the run directory)");

  std::vector<const char*> argv;
  argv.push_back("damstf");
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
    if (generate->parsed()) return cli_detail::cmd_generate(gen);
    if (train_cmd->parsed()) return cli_detail::cmd_train(train);
    if (sweep_cmd->parsed()) return cli_detail::cmd_sweep(sweep);
    if (diag_cmd->parsed()) return cli_detail::cmd_diagnose(diag);
    return 2;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 4;
  }
}

}  // namespace damstf
