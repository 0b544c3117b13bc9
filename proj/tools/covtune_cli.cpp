#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "covtune/covtune.hpp"

namespace fs = std::filesystem;
using namespace covtune;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DomainError("cannot write '" + path.string() + "'");
  return out;
}

std::optional<std::size_t> env_threads() {
  const char* v = std::getenv("COVTUNE_THREADS");
  if (!v || !*v) return std::nullopt;
  try {
    return static_cast<std::size_t>(std::stoul(v));
  } catch (...) {
    throw UsageError(std::string("COVTUNE_THREADS='") + v + "' is not a number");
  }
}

// ---------------------------------------------------------------------------

struct StudyArgs {
  std::string config;
  std::string out;
  std::optional<std::size_t> threads;
  std::optional<std::uint64_t> seed;
};

int run_study_command(const StudyArgs& a) {
  auto in = std::ifstream(a.config);
  if (!in) throw UsageError("cannot open config '" + a.config + "'");
  bool threads_in_file = false;
  auto config = parse_study_config(in, &threads_in_file);
  if (a.threads) config.threads = *a.threads;
  else if (!threads_in_file) config.threads = env_threads().value_or(1);
  if (a.seed) config.seed = *a.seed;
  config.validate();

  const fs::path dir(a.out);
  fs::create_directories(dir);
  open_output(dir / "config.ini") << format_study_config(config);

  const auto result = run_study(config);
  {
    auto out = open_output(dir / "records.csv");
    write_records(out, result.records);
  }
  {
    auto out = open_output(dir / "timings.csv");
    write_timings(out, result.records);
  }
  const auto summary = summarize(result.records);
  {
    auto out = open_output(dir / "summary.csv");
    write_summary(out, summary);
  }
  {
    auto out = open_output(dir / "ranks.csv");
    write_ranks(out, summary);
  }
  {
    auto log = open_output(dir / "run.log");
    for (const auto& line : result.log) log << line << '\n';
  }
  std::size_t failed = 0;
  for (const auto& r : result.records) failed += r.ok ? 0 : 1;
  std::cerr << result.records.size() << " records (" << failed << " failed) written to " << dir.string() << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------

struct EstimateArgs {
  std::string data, family, rule, truth, out, report;
  std::uint64_t seed = 1;
  std::size_t resamples = 200;
  bool header = false;
  bool preserve_diagonal = false;
};

int run_estimate_command(const EstimateArgs& a) {
  const Family family = [&] {
    try {
      return parse_family(a.family);
    } catch (const DomainError& e) {
      throw UsageError(e.what());
    }
  }();
  const SelectionRule rule = [&] {
    try {
      return parse_rule(a.rule, a.resamples);
    } catch (const DomainError& e) {
      throw UsageError(e.what());
    }
  }();
  if (rule.kind == RuleKind::oracle && a.truth.empty()) throw UsageError("rule 'oracle' needs --truth");
  if (!StudyConfig::admissible(rule, family))
    throw UsageError("rule " + rule.name() + " cannot be used with " + std::string(family_name(family)));

  const Dataset data = read_dataset(a.data, a.header);
  if (data.n() < 2) throw DomainError("data needs at least 2 rows");
  const SymMatrix empirical = empirical_cov(data);
  auto spec = default_spec(family, sample_cov(data), data.n());
  spec.preserve_diagonal = a.preserve_diagonal;
  const RngStream rng(a.seed);

  SelectionResult result;
  std::optional<double> constant;
  switch (rule.kind) {
    case RuleKind::oracle: {
      const auto truth = read_matrix(a.truth);
      if (truth.dim() != data.p()) throw DomainError("truth is " + std::to_string(truth.dim()) + "x" +
                                                     std::to_string(truth.dim()) + " but data has " +
                                                     std::to_string(data.p()) + " columns");
      result = oracle_select(spec, empirical, truth, rule.norm);
      break;
    }
    case RuleKind::cv:
    case RuleKind::reverse_cv:
    case RuleKind::repeated_cv: {
      const auto plans = rule_plans(rule, data.n(), rng.child(1));
      const auto pairs = rule_pairs(rule, data, plans);
      result = select_from_pairs(spec, pairs, rule);
      break;
    }
    case RuleKind::boot_frobenius:
      result = boot_frobenius_select(spec, data, rule.resamples, rng.child(2));
      if (is_linear_weight(family)) constant = frobenius_constant(data);
      break;
    case RuleKind::sure:
      result = sure_select(spec, data);
      constant = frobenius_constant(data);
      break;
    case RuleKind::boot_operator:
      result = boot_operator_select(spec, data, rule.resamples, rng.child(2));
      break;
  }

  const auto estimate = apply(spec, empirical, result.lambda);
  {
    auto out = open_output(a.out);
    write_matrix(out, estimate);
  }

  nlohmann::json report;
  report["family"] = family_name(family);
  report["rule"] = rule.name();
  report["n"] = data.n();
  report["p"] = data.p();
  report["seed"] = a.seed;
  report["lambda"] = result.lambda;
  report["preserve_diagonal"] = spec.preserve_diagonal;
  if (result.pilot_lambda) report["pilot_lambda"] = *result.pilot_lambda;
  if (rule.kind == RuleKind::boot_frobenius || rule.kind == RuleKind::boot_operator)
    report["clipped_mass"] = result.clipped_mass;
  if (constant) {
    // The curve omits sum_ij var(s_ij); adding this plug-in estimate gives the full risk.
    report["risk_constant"] = *constant;
    report["full_risk_at_lambda"] = result.curve[result.index].score - *constant;
  }
  auto& curve = report["curve"] = nlohmann::json::array();
  for (const auto& pt : result.curve) curve.push_back({{"lambda", pt.lambda}, {"score", pt.score}});
  const std::string report_path = a.report.empty() ? a.out + ".json" : a.report;
  open_output(report_path) << report.dump(2) << '\n';
  std::cout << "lambda = " << format_double(result.lambda) << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------

struct SummarizeArgs {
  std::string in, out, ranks;
  std::optional<double> max_mse;
};

int run_summarize_command(const SummarizeArgs& a) {
  std::ifstream in(a.in);
  if (!in) throw DomainError("cannot open '" + a.in + "'");
  auto rows = summarize(read_records(in));
  if (a.max_mse) rows = trim_summary(std::move(rows), *a.max_mse);
  {
    auto out = open_output(a.out);
    write_summary(out, rows);
  }
  {
    auto out = open_output(a.ranks.empty() ? a.out + ".ranks.csv" : a.ranks);
    write_ranks(out, rows);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Regularized covariance estimation with tuning-parameter selection"};
  app.require_subcommand(1);

  StudyArgs study;
  auto* study_cmd = app.add_subcommand("study", "Run a simulation study from a config file");
  study_cmd->add_option("--config", study.config, "INI study description")->required();
  study_cmd->add_option("--out", study.out, "Output directory")->required();
  study_cmd->add_option("--threads", study.threads, "Worker threads (overrides config and COVTUNE_THREADS)");
  study_cmd->add_option("--seed", study.seed, "Base seed (overrides config)");

  EstimateArgs est;
  auto* est_cmd = app.add_subcommand("estimate", "Tune and apply an estimator to a data file");
  est_cmd->add_option("--data", est.data, "Headerless CSV, one observation per line")->required();
  est_cmd->add_option("--family", est.family, "hard, soft, band or taper")->required();
  est_cmd->add_option("--rule", est.rule, "oracle_F, cv10_F, recv3_op, rcv2_op, boot_frobenius, sure, boot_operator, ...")
      ->required();
  est_cmd->add_option("--truth", est.truth, "True covariance CSV (oracle rule only)");
  est_cmd->add_option("--seed", est.seed, "Random seed");
  est_cmd->add_option("--resamples", est.resamples, "Bootstrap sample count")->check(CLI::Range(2, 1000000));
  est_cmd->add_option("--out", est.out, "Output matrix CSV")->required();
  est_cmd->add_option("--report", est.report, "JSON report (default: <out>.json)");
  est_cmd->add_flag("--header", est.header, "Skip the first line of the data file");
  est_cmd->add_flag("--preserve-diagonal", est.preserve_diagonal, "Do not threshold the diagonal");

  SummarizeArgs sum;
  auto* sum_cmd = app.add_subcommand("summarize", "Aggregate a records CSV");
  sum_cmd->add_option("--in", sum.in, "Records CSV")->required();
  sum_cmd->add_option("--out", sum.out, "Summary CSV")->required();
  sum_cmd->add_option("--ranks", sum.ranks, "Rule ranking CSV (default: <out>.ranks.csv)");
  sum_cmd->add_option("--max-mse", sum.max_mse,
                      "Drop cells whose MSE exceeds this value (summaries keep everything by default)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*study_cmd) return run_study_command(study);
    if (*est_cmd) return run_estimate_command(est);
    if (*sum_cmd) return run_summarize_command(sum);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const UnsupportedFamily& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}
