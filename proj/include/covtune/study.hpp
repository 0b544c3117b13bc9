#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <boost/algorithm/string.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "covtune/boot_frobenius.hpp"
#include "covtune/boot_operator.hpp"
#include "covtune/csv.hpp"
#include "covtune/error.hpp"
#include "covtune/estimators.hpp"
#include "covtune/models.hpp"
#include "covtune/rng.hpp"
#include "covtune/selection.hpp"

namespace covtune {

struct StudySize {
  std::size_t n = 100;
  std::size_t p = 100;
  friend bool operator==(const StudySize&, const StudySize&) = default;
};

struct StudyConfig {
  std::vector<ModelSpec> models;  // p is taken from each size
  std::vector<StudySize> sizes;
  std::vector<Family> families;
  std::vector<SelectionRule> rules;
  std::size_t replications = 1;
  std::uint64_t seed = 1;
  std::size_t resamples = 200;
  std::size_t threads = 1;
  bool preserve_diagonal = false;
  // Operator-norm CV through the branch-and-bound scan (same argmin, far fewer eigen-solves).
  bool prune_operator = true;
  // Drop (rule, family) pairs such as sure + hard instead of rejecting the config.
  bool skip_inadmissible = false;

  static bool admissible(const SelectionRule& rule, Family family) noexcept {
    if (rule.kind == RuleKind::sure || rule.kind == RuleKind::boot_operator) return is_linear_weight(family);
    return true;
  }

  void validate() const {
    if (replications < 1) throw DomainError("replications must be at least 1");
    if (models.empty()) throw DomainError("config lists no models");
    if (sizes.empty()) throw DomainError("config lists no sizes");
    if (families.empty()) throw DomainError("config lists no estimators");
    if (rules.empty()) throw DomainError("config lists no rules");
    if (threads < 1) throw DomainError("threads must be at least 1");
    for (const auto& m : models) {
      auto check = m;
      check.p = 1;
      check.validate();
    }
    for (const auto& s : sizes)
      if (s.n < 2 || s.p < 1) throw DomainError("every size needs n >= 2 and p >= 1");
    for (const auto& r : rules) {
      r.validate();
      for (const auto& s : sizes)
        if (r.is_cross_validation() && r.folds > s.n)
          throw DomainError("rule " + r.name() + " has more folds than n = " + std::to_string(s.n));
      if (skip_inadmissible) continue;
      for (auto f : families)
        if (!admissible(r, f))
          throw UnsupportedFamily("rule " + r.name() + " cannot be used with " + std::string(family_name(f)) +
                                  " (set skip_inadmissible = true to skip such pairs)");
    }
  }
};

// ---------------------------------------------------------------------------
// Config file

namespace detail {

inline std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  boost::split(out, text, boost::is_any_of(",;"));
  for (auto& s : out) boost::trim(s);
  std::erase_if(out, [](const std::string& s) { return s.empty(); });
  return out;
}

inline double parse_real(const std::string& s, const std::string& what) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v))
    throw DomainError(what + ": '" + s + "' is not a number");
  return v;
}

inline std::uint64_t parse_count(const std::string& s, const std::string& what) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
    throw DomainError(what + ": '" + s + "' is not a non-negative integer");
  return v;
}

inline bool parse_flag(std::string s, const std::string& what) {
  boost::to_lower(s);
  if (s == "true" || s == "yes" || s == "on" || s == "1") return true;
  if (s == "false" || s == "no" || s == "off" || s == "0") return false;
  throw DomainError(what + ": '" + s + "' is not a boolean");
}

}  // namespace detail

/**
 * INI-style study description:
 *
 *   [study]       replications, seed, resamples, threads, preserve_diagonal,
 *                 prune_operator, skip_inadmissible
 *   [models]      one entry per model: name = id, rho[, alpha]
 *   [sizes]       one entry per size:  name = NxP
 *   [estimators]  comma-separated families (hard, soft, band, taper)
 *   [rules]       comma-separated rule labels (oracle_F, cv10_F, recv3_op, rcv2_op, boot_frobenius, ...)
 *
 * Within [estimators] and [rules] every value is read and the lists are joined.
 * `threads_set` reports whether the file set a thread count.
 */
inline StudyConfig parse_study_config(std::istream& in, bool* threads_set = nullptr) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ParseError(e.message(), e.line(), 1);
  }
  StudyConfig c;
  bool resamples_set = false;
  if (threads_set) *threads_set = false;
  for (const auto& [section, body] : tree) {
    if (section == "study") {
      for (const auto& [key, node] : body) {
        const auto value = boost::trim_copy(node.data());
        const std::string what = "study." + key;
        if (key == "replications") c.replications = detail::parse_count(value, what);
        else if (key == "seed") c.seed = detail::parse_count(value, what);
        else if (key == "resamples") c.resamples = detail::parse_count(value, what), resamples_set = true;
        else if (key == "threads") {
          c.threads = detail::parse_count(value, what);
          if (threads_set) *threads_set = true;
        } else if (key == "preserve_diagonal") c.preserve_diagonal = detail::parse_flag(value, what);
        else if (key == "prune_operator") c.prune_operator = detail::parse_flag(value, what);
        else if (key == "skip_inadmissible") c.skip_inadmissible = detail::parse_flag(value, what);
        else throw DomainError("unknown key '" + what + "'");
      }
    } else if (section == "models") {
      for (const auto& [key, node] : body) {
        const auto parts = detail::split_list(node.data());
        if (parts.size() < 2 || parts.size() > 3)
          throw DomainError("models." + key + ": expected 'id, rho[, alpha]'");
        ModelSpec m;
        m.id = static_cast<int>(detail::parse_count(parts[0], "models." + key));
        m.rho = detail::parse_real(parts[1], "models." + key);
        m.alpha = parts.size() == 3 ? detail::parse_real(parts[2], "models." + key) : 0.0;
        c.models.push_back(m);
      }
    } else if (section == "sizes") {
      for (const auto& [key, node] : body) {
        std::vector<std::string> parts;
        auto text = boost::trim_copy(node.data());
        boost::split(parts, text, boost::is_any_of("xX,"));
        if (parts.size() != 2) throw DomainError("sizes." + key + ": expected NxP");
        c.sizes.push_back({detail::parse_count(boost::trim_copy(parts[0]), "sizes." + key),
                           detail::parse_count(boost::trim_copy(parts[1]), "sizes." + key)});
      }
    } else if (section == "estimators") {
      for (const auto& [key, node] : body)
        for (const auto& f : detail::split_list(node.data())) c.families.push_back(parse_family(f));
    } else if (section == "rules") {
      for (const auto& [key, node] : body)
        for (const auto& r : detail::split_list(node.data())) c.rules.push_back(parse_rule(r));
    } else {
      throw DomainError("unknown config section '" + section + "'");
    }
  }
  if (resamples_set)
    for (auto& r : c.rules)
      if (r.kind == RuleKind::boot_frobenius || r.kind == RuleKind::boot_operator) r.resamples = c.resamples;
  return c;
}

inline StudyConfig parse_study_config(const std::string& text, bool* threads_set = nullptr) {
  std::istringstream in(text);
  return parse_study_config(in, threads_set);
}

/// Resolved config in the same format, for provenance.
inline std::string format_study_config(const StudyConfig& c) {
  std::ostringstream out;
  out << "[study]\n"
      << "replications = " << c.replications << "\n"
      << "seed = " << c.seed << "\n"
      << "resamples = " << c.resamples << "\n"
      << "threads = " << c.threads << "\n"
      << "preserve_diagonal = " << (c.preserve_diagonal ? "true" : "false") << "\n"
      << "prune_operator = " << (c.prune_operator ? "true" : "false") << "\n"
      << "skip_inadmissible = " << (c.skip_inadmissible ? "true" : "false") << "\n\n[models]\n";
  for (std::size_t k = 0; k < c.models.size(); ++k)
    out << "m" << k + 1 << " = " << c.models[k].id << ", " << format_double(c.models[k].rho) << ", "
        << format_double(c.models[k].alpha) << "\n";
  out << "\n[sizes]\n";
  for (std::size_t k = 0; k < c.sizes.size(); ++k) out << "s" << k + 1 << " = " << c.sizes[k].n << "x" << c.sizes[k].p << "\n";
  out << "\n[estimators]\nfamilies = ";
  for (std::size_t k = 0; k < c.families.size(); ++k) out << (k ? ", " : "") << family_name(c.families[k]);
  out << "\n\n[rules]\nlist = ";
  for (std::size_t k = 0; k < c.rules.size(); ++k) out << (k ? ", " : "") << c.rules[k].name();
  out << "\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// Records

struct TrialRecord {
  int model = 0;
  double rho = 0.0;
  double alpha = 0.0;
  std::size_t n = 0;
  std::size_t p = 0;
  std::string estimator;
  std::string rule;
  std::size_t replication = 0;
  double lambda = std::numeric_limits<double>::quiet_NaN();
  double frobenius_error = std::numeric_limits<double>::quiet_NaN();  // squared
  double operator_error = std::numeric_limits<double>::quiet_NaN();   // squared
  std::optional<double> pilot_lambda;
  double clipped_mass = 0.0;
  std::uint64_t digest = 0;  // of the replication's dataset
  bool ok = true;
  std::string message;
  double wall_ms = 0.0;  // kept out of records.csv so reruns are byte-identical
};

inline std::uint64_t dataset_digest(const Dataset& d) {
  const auto v = d.values();
  std::string_view bytes(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
  return fnv1a(bytes, fnv1a(std::to_string(d.n()) + "x" + std::to_string(d.p())));
}

inline const char* kRecordHeader =
    "model,rho,alpha,n,p,estimator,rule,replication,lambda,frobenius_error,operator_error,pilot_lambda,clipped_mass,"
    "digest,status,message";

namespace detail {

inline std::string na_or(double v) { return std::isfinite(v) ? format_double(v) : "NA"; }

inline std::string clean_message(std::string s) {
  for (char& ch : s)
    if (ch == ',' || ch == '\n' || ch == '\r') ch = ';';
  return s;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace detail

inline void write_records(std::ostream& out, const std::vector<TrialRecord>& records) {
  out << kRecordHeader << '\n';
  for (const auto& r : records) {
    out << r.model << ',' << format_double(r.rho) << ',' << format_double(r.alpha) << ',' << r.n << ',' << r.p << ','
        << r.estimator << ',' << r.rule << ',' << r.replication << ',' << detail::na_or(r.lambda) << ','
        << detail::na_or(r.frobenius_error) << ',' << detail::na_or(r.operator_error) << ','
        << (r.pilot_lambda ? format_double(*r.pilot_lambda) : "NA") << ',' << format_double(r.clipped_mass) << ','
        << detail::hex64(r.digest) << ',' << (r.ok ? "ok" : "failed") << ',' << detail::clean_message(r.message)
        << '\n';
  }
}

inline void write_timings(std::ostream& out, const std::vector<TrialRecord>& records) {
  out << "model,rho,alpha,n,p,estimator,rule,replication,wall_ms\n";
  for (const auto& r : records)
    out << r.model << ',' << format_double(r.rho) << ',' << format_double(r.alpha) << ',' << r.n << ',' << r.p << ','
        << r.estimator << ',' << r.rule << ',' << r.replication << ',' << format_double(r.wall_ms) << '\n';
}

inline std::vector<TrialRecord> read_records(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  std::vector<TrialRecord> out;
  std::map<std::string, std::size_t> col;
  auto split = [](const std::string& s) {
    std::vector<std::string> f;
    boost::split(f, s, boost::is_any_of(","));
    for (auto& x : f) boost::trim(x);
    return f;
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::blank(line)) continue;
    auto fields = split(line);
    if (col.empty()) {
      for (std::size_t k = 0; k < fields.size(); ++k) col[fields[k]] = k;
      for (const char* need : {"model", "rho", "alpha", "n", "p", "estimator", "rule", "replication", "lambda",
                               "frobenius_error", "operator_error"})
        if (!col.contains(need)) throw ParseError(std::string("missing column '") + need + "'", lineno, 1);
      continue;
    }
    if (fields.size() < col.size()) throw ParseError("too few fields", lineno, fields.size() + 1);
    auto get = [&](const char* name) -> const std::string& { return fields[col.at(name)]; };
    auto real = [&](const char* name) {
      const auto& s = get(name);
      if (s == "NA") return std::numeric_limits<double>::quiet_NaN();
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc() || ptr != s.data() + s.size())
        throw ParseError("'" + s + "' is not a number", lineno, col.at(name) + 1);
      return v;
    };
    auto count = [&](const char* name) {
      const double v = real(name);
      if (!(v >= 0.0) || v != std::floor(v)) throw ParseError("bad integer in " + std::string(name), lineno, col.at(name) + 1);
      return static_cast<std::size_t>(v);
    };
    TrialRecord r;
    r.model = static_cast<int>(count("model"));
    r.rho = real("rho");
    r.alpha = real("alpha");
    r.n = count("n");
    r.p = count("p");
    r.estimator = get("estimator");
    r.rule = get("rule");
    r.replication = count("replication");
    r.lambda = real("lambda");
    r.frobenius_error = real("frobenius_error");
    r.operator_error = real("operator_error");
    if (col.contains("pilot_lambda")) {
      const double pl = real("pilot_lambda");
      if (std::isfinite(pl)) r.pilot_lambda = pl;
    }
    if (col.contains("clipped_mass")) r.clipped_mass = real("clipped_mass");
    if (col.contains("digest")) r.digest = std::stoull(get("digest"), nullptr, 16);
    if (col.contains("status")) r.ok = get("status") == "ok";
    if (col.contains("message")) r.message = get("message");
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Summary

struct SummaryRow {
  int model = 0;
  double rho = 0.0, alpha = 0.0;
  std::size_t n = 0, p = 0;
  std::string estimator, rule;
  std::size_t replications = 0;  // successful records in the cell
  double mse_frobenius = 0.0, se_frobenius = 0.0;
  double mse_operator = 0.0, se_operator = 0.0;
  double mean_lambda = 0.0;
  std::size_t failed = 0;
};

inline const char* kSummaryHeader =
    "model,rho,alpha,n,p,estimator,rule,K,mse_frobenius,se_frobenius,mse_operator,se_operator,mean_lambda";

namespace detail {

using CellKey = std::tuple<int, double, double, std::size_t, std::size_t, std::string, std::string>;

inline CellKey cell_key(const TrialRecord& r) { return {r.model, r.rho, r.alpha, r.n, r.p, r.estimator, r.rule}; }

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

inline MeanSe mean_se(std::span<const double> x) {
  MeanSe out;
  if (x.empty()) return out;
  double s = 0.0;
  for (double v : x) s += v;
  out.mean = s / static_cast<double>(x.size());
  if (x.size() < 2) {
    out.se = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  double ss = 0.0;
  for (double v : x) ss += (v - out.mean) * (v - out.mean);
  out.se = std::sqrt(ss / static_cast<double>(x.size() - 1) / static_cast<double>(x.size()));
  return out;
}

}  // namespace detail

/**
 * Mean squared errors per (model, n, p, estimator, rule) cell. Failed records
 * are counted but contribute no error. Cells are ordered by key and records by
 * replication inside a cell, so the result does not depend on record order.
 */
inline std::vector<SummaryRow> summarize(std::vector<TrialRecord> records) {
  std::map<detail::CellKey, std::vector<const TrialRecord*>> cells;
  for (const auto& r : records) cells[detail::cell_key(r)].push_back(&r);
  std::vector<SummaryRow> out;
  for (auto& [key, recs] : cells) {
    std::sort(recs.begin(), recs.end(), [](const TrialRecord* a, const TrialRecord* b) {
      if (a->replication != b->replication) return a->replication < b->replication;
      return std::tie(a->lambda, a->frobenius_error, a->operator_error) <
             std::tie(b->lambda, b->frobenius_error, b->operator_error);
    });
    SummaryRow row;
    std::tie(row.model, row.rho, row.alpha, row.n, row.p, row.estimator, row.rule) = key;
    std::vector<double> f, o, l;
    for (const auto* r : recs) {
      if (!r->ok || !std::isfinite(r->frobenius_error) || !std::isfinite(r->operator_error)) {
        ++row.failed;
        continue;
      }
      f.push_back(r->frobenius_error);
      o.push_back(r->operator_error);
      l.push_back(r->lambda);
    }
    row.replications = f.size();
    const auto mf = detail::mean_se(f), mo = detail::mean_se(o), ml = detail::mean_se(l);
    row.mse_frobenius = mf.mean;
    row.se_frobenius = mf.se;
    row.mse_operator = mo.mean;
    row.se_operator = mo.se;
    row.mean_lambda = ml.mean;
    if (row.replications == 0)
      row.mse_frobenius = row.mse_operator = row.mean_lambda = row.se_frobenius = row.se_operator =
          std::numeric_limits<double>::quiet_NaN();
    out.push_back(std::move(row));
  }
  return out;
}

/// Drops summary rows whose MSE in either norm exceeds `limit`.
inline std::vector<SummaryRow> trim_summary(std::vector<SummaryRow> rows, double limit) {
  std::erase_if(rows, [&](const SummaryRow& r) { return !(r.mse_frobenius <= limit && r.mse_operator <= limit); });
  return rows;
}

inline void write_summary(std::ostream& out, const std::vector<SummaryRow>& rows) {
  out << kSummaryHeader << '\n';
  for (const auto& r : rows)
    out << r.model << ',' << format_double(r.rho) << ',' << format_double(r.alpha) << ',' << r.n << ',' << r.p << ','
        << r.estimator << ',' << r.rule << ',' << r.replications << ',' << detail::na_or(r.mse_frobenius) << ','
        << detail::na_or(r.se_frobenius) << ',' << detail::na_or(r.mse_operator) << ','
        << detail::na_or(r.se_operator) << ',' << detail::na_or(r.mean_lambda) << '\n';
}

struct RankRow {
  const SummaryRow* row = nullptr;
  std::size_t rank_frobenius = 0;
  std::size_t rank_operator = 0;
};

/// Competition ranks (1 = smallest MSE, ties share a rank) of the rules within each estimator cell.
inline std::vector<RankRow> rank_rules(const std::vector<SummaryRow>& rows) {
  std::vector<RankRow> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back({&r, 0, 0});
  auto same_cell = [](const SummaryRow& a, const SummaryRow& b) {
    return std::tie(a.model, a.rho, a.alpha, a.n, a.p, a.estimator) ==
           std::tie(b.model, b.rho, b.alpha, b.n, b.p, b.estimator);
  };
  auto rank_of = [](double v, double w) { return w < v; };
  for (auto& a : out) {
    std::size_t rf = 1, ro = 1;
    for (const auto& b : out) {
      if (!same_cell(*a.row, *b.row)) continue;
      if (rank_of(a.row->mse_frobenius, b.row->mse_frobenius)) ++rf;
      if (rank_of(a.row->mse_operator, b.row->mse_operator)) ++ro;
    }
    a.rank_frobenius = rf;
    a.rank_operator = ro;
  }
  return out;
}

inline void write_ranks(std::ostream& out, const std::vector<SummaryRow>& rows) {
  out << "model,rho,alpha,n,p,estimator,rule,rank_frobenius,rank_operator\n";
  for (const auto& r : rank_rules(rows))
    out << r.row->model << ',' << format_double(r.row->rho) << ',' << format_double(r.row->alpha) << ',' << r.row->n
        << ',' << r.row->p << ',' << r.row->estimator << ',' << r.row->rule << ',' << r.rank_frobenius << ','
        << r.rank_operator << '\n';
}

// ---------------------------------------------------------------------------
// Running

struct StudyLog {
  std::mutex mutex;
  std::vector<std::string> lines;

  void add(std::string line) {
    std::lock_guard lock(mutex);
    lines.push_back(std::move(line));
  }
};

namespace detail {

inline std::uint64_t cell_stream_key(const ModelSpec& m, const StudySize& s) {
  return fnv1a("model=" + std::to_string(m.id) + ";rho=" + format_double(m.rho) + ";alpha=" + format_double(m.alpha) +
               ";n=" + std::to_string(s.n) + ";p=" + std::to_string(s.p));
}

// CV rules that differ only in norm share one fold plan.
inline std::string plan_key(const SelectionRule& r) {
  auto name = r.name();
  return name.substr(0, name.rfind('_'));
}

// Squared errors of est(input, lambda) at each grid index, computed on demand.
class ErrorTable {
 public:
  ErrorTable(const EstimatorSpec& spec, const SymMatrix& input, const SymMatrix& truth)
      : spec_(spec), input_(input), truth_(truth), f_(spec.grid.size()), o_(spec.grid.size()) {}

  double get(std::size_t g, Norm norm) {
    auto& slot = norm == Norm::frobenius ? f_[g] : o_[g];
    if (!slot) slot = squared_error(spec_, input_, spec_.grid[g], truth_, norm);
    return *slot;
  }

 private:
  const EstimatorSpec& spec_;
  const SymMatrix& input_;
  const SymMatrix& truth_;
  std::vector<std::optional<double>> f_, o_;
};

}  // namespace detail

/// All records of one replication of one (model, size) cell.
inline std::vector<TrialRecord> run_replication(const StudyConfig& config, const ModelTruth& truth,
                                                const StudySize& size, std::size_t replication, StudyLog* log = nullptr) {
  const auto& model = truth.model;
  const RngStream stream = RngStream(config.seed).child(detail::cell_stream_key(model, size), replication);
  auto data_rng = stream.child(0);
  const Trial trial = generate_trial(truth, size.n, data_rng);
  const std::uint64_t digest = dataset_digest(trial.data);
  const SymMatrix empirical = empirical_cov(trial.data);
  const SymMatrix sample = sample_cov(trial.data);
  const SelectionOptions options{config.prune_operator};

  std::map<std::string, std::vector<FitPair>> pair_cache;
  auto pairs_for = [&](const SelectionRule& rule) -> const std::vector<FitPair>& {
    const auto key = detail::plan_key(rule);
    auto it = pair_cache.find(key);
    if (it != pair_cache.end()) return it->second;
    const auto plans = rule_plans(rule, size.n, stream.child(1, fnv1a(key)));
    return pair_cache.emplace(key, rule_pairs(rule, trial.data, plans)).first->second;
  };
  const RngStream boot_rng = stream.child(2);

  std::vector<TrialRecord> out;
  for (auto family : config.families) {
    auto spec = default_spec(family, sample, size.n);
    spec.preserve_diagonal = config.preserve_diagonal;
    detail::ErrorTable errors(spec, empirical, trial.sigma);
    // Both bootstrap rules start from the same ultimate-model pilot.
    std::map<std::size_t, double> pilots;
    auto pilot_for = [&](std::size_t resamples) {
      auto it = pilots.find(resamples);
      if (it == pilots.end())
        it = pilots.emplace(resamples, boot_frobenius_pilot(spec, trial.data, resamples, boot_rng)).first;
      return it->second;
    };

    for (const auto& rule : config.rules) {
      if (!StudyConfig::admissible(rule, family)) continue;
      TrialRecord rec;
      rec.model = model.id;
      rec.rho = model.rho;
      rec.alpha = model.alpha;
      rec.n = size.n;
      rec.p = size.p;
      rec.estimator = std::string(family_name(family));
      rec.rule = rule.name();
      rec.replication = replication;
      rec.digest = digest;
      const auto start = std::chrono::steady_clock::now();
      try {
        SelectionResult result;
        switch (rule.kind) {
          case RuleKind::oracle: {
            std::vector<double> scores(spec.grid.size());
            for (std::size_t g = 0; g < scores.size(); ++g) scores[g] = errors.get(g, rule.norm);
            result = make_result(spec, scores, rule);
            break;
          }
          case RuleKind::cv:
          case RuleKind::reverse_cv:
          case RuleKind::repeated_cv:
            result = select_from_pairs(spec, pairs_for(rule), rule, options);
            break;
          case RuleKind::boot_frobenius:
            result = boot_frobenius_select(spec, trial.data, rule.resamples, boot_rng, pilot_for(rule.resamples));
            break;
          case RuleKind::sure:
            result = sure_select(spec, trial.data);
            break;
          case RuleKind::boot_operator:
            result = boot_operator_select(spec, trial.data, rule.resamples, boot_rng, pilot_for(rule.resamples));
            break;
        }
        rec.lambda = result.lambda;
        rec.frobenius_error = errors.get(result.index, Norm::frobenius);
        rec.operator_error = errors.get(result.index, Norm::operator_norm);
        rec.pilot_lambda = result.pilot_lambda;
        rec.clipped_mass = result.clipped_mass;
        if (log && result.clipped_mass > 0.0)
          log->add("clip: model " + std::to_string(model.id) + " n=" + std::to_string(size.n) +
                   " p=" + std::to_string(size.p) + " rep " + std::to_string(replication) + " " + rec.estimator + " " +
                   rec.rule + ": bootstrap truth lost eigenvalue mass " + format_double(result.clipped_mass));
      } catch (const std::exception& e) {
        rec.ok = false;
        rec.message = e.what();
        if (log)
          log->add("failure: model " + std::to_string(model.id) + " rep " + std::to_string(replication) + " " +
                   rec.estimator + " " + rec.rule + ": " + e.what());
      }
      rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      out.push_back(std::move(rec));
    }
  }
  return out;
}

struct StudyResult {
  std::vector<TrialRecord> records;
  std::vector<std::string> log;
};

/**
 * Runs every (model, size, replication) task, spread over config.threads
 * workers. Records come back in task order whatever the thread count.
 */
inline StudyResult run_study(const StudyConfig& config) {
  config.validate();
  StudyLog log;

  struct Cell {
    ModelTruth truth;
    StudySize size;
  };
  std::vector<Cell> cells;
  for (const auto& m : config.models)
    for (const auto& s : config.sizes) {
      auto spec = m;
      spec.p = s.p;
      auto truth = model_truth(spec);
      if (spec.nonstandard())
        log.add("note: model " + std::to_string(spec.id) + " with rho=" + format_double(spec.rho) +
                " alpha=" + format_double(spec.alpha) + " is outside the published settings");
      if (truth.clipped_count > 0)
        log.add("clip: model " + std::to_string(spec.id) + " p=" + std::to_string(s.p) + " truth had " +
                std::to_string(truth.clipped_count) + " negative eigenvalues, mass " +
                format_double(truth.clipped_mass) + " clipped");
      cells.push_back({std::move(truth), s});
    }

  const std::size_t tasks = cells.size() * config.replications;
  std::vector<std::vector<TrialRecord>> slots(tasks);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t t; (t = next.fetch_add(1)) < tasks;) {
      const auto& cell = cells[t / config.replications];
      slots[t] = run_replication(config, cell.truth, cell.size, t % config.replications, &log);
    }
  };
  const std::size_t nthreads = std::min(config.threads, std::max<std::size_t>(tasks, 1));
  if (nthreads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t k = 0; k < nthreads; ++k) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  StudyResult result;
  for (auto& s : slots)
    for (auto& r : s) result.records.push_back(std::move(r));
  result.log = std::move(log.lines);
  std::sort(result.log.begin(), result.log.end());
  return result;
}

}  // namespace covtune
