#include "tve/cli.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/chrono.h>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include "tve/data.hpp"
#include "tve/error.hpp"
#include "tve/learners.hpp"
#include "tve/resample.hpp"
#include "tve/rng.hpp"
#include "tve/sigma2.hpp"
#include "tve/target_psi.hpp"

namespace tve::cli {

using nlohmann::json;

std::string_view version() { return TVE_VERSION; }

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

std::string num(double x) { return fmt::format("{:.17g}", x); }

std::string now_utc() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", fmt::gmtime(t));
}

[[noreturn]] void config_error(const std::string& what) {
  throw Error(ErrorKind::Config, what);
}

void reject_unknown(const json& j, const std::string& where,
                    std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) config_error(fmt::format("{}: expected an object", where));
  for (const auto& [key, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      config_error(fmt::format("{}: unknown key '{}'", where, key));
  }
}

double number(const json& v, const std::string& what) {
  if (!v.is_number()) config_error(fmt::format("{}: expected a number", what));
  const double x = v.get<double>();
  if (!std::isfinite(x)) config_error(fmt::format("{}: must be finite", what));
  return x;
}

std::uint64_t count(const json& v, const std::string& what) {
  if (!v.is_number_integer() || v.get<long long>() < 0)
    config_error(fmt::format("{}: expected a non-negative integer", what));
  return v.get<std::uint64_t>();
}

bool boolean(const json& v, const std::string& what) {
  if (!v.is_boolean()) config_error(fmt::format("{}: expected true or false", what));
  return v.get<bool>();
}

template <class F>
auto list(const json& v, const std::string& what, F each) {
  std::vector<decltype(each(v, what))> out;
  if (v.is_array()) {
    if (v.empty()) config_error(fmt::format("{}: list is empty", what));
    for (const auto& x : v) out.push_back(each(x, what));
  } else {
    out.push_back(each(v, what));
  }
  return out;
}

Terms parse_terms(const std::string& s) {
  if (s == "intercept") return Terms::InterceptOnly;
  if (s == "main") return Terms::Main;
  if (s == "expanded") return Terms::Expanded;
  config_error(fmt::format("unknown formula '{}' (intercept, main, expanded)", s));
}

std::string terms_name(Terms t) {
  switch (t) {
    case Terms::InterceptOnly: return "intercept";
    case Terms::Main: return "main";
    case Terms::Expanded: return "expanded";
  }
  return "main";
}

std::vector<FormulaSpec> parse_library(const json& v, const std::string& what,
                                       bool with_treatment) {
  std::vector<FormulaSpec> out;
  for (const std::string& s : list(v, what, [](const json& x, const std::string& w) {
         if (!x.is_string()) config_error(fmt::format("{}: expected strings", w));
         return x.get<std::string>();
       })) {
    FormulaSpec f;
    f.terms = parse_terms(s);
    f.with_treatment = with_treatment;
    out.push_back(f);
  }
  return out;
}

json library_json(const std::vector<FormulaSpec>& specs) {
  json out = json::array();
  for (const auto& f : specs) out.push_back(terms_name(f.terms));
  return out;
}

json learner_defaults_json(const ScenarioConfig& c) {
  const TruncationBounds& b = c.learner.bounds;
  return json{{"d_eps", c.onestep.d_eps},
              {"max_iter", c.onestep.max_iter},
              {"curvature_fraction", c.onestep.curvature_fraction},
              {"max_rounds", c.iterative.max_rounds},
              {"folds", c.learner.folds},
              {"truncation", {{"g_lo", b.g_lo}, {"g_hi", b.g_hi}, {"q_lo", b.q_lo}, {"q_hi", b.q_hi}}},
              {"q_library", library_json(c.learner.q_specs)},
              {"g_library", library_json(c.learner.g_specs)},
              {"misspecify_q", c.learner.misspecify_q},
              {"misspecified_q_formula", LearnerSpec::misspecified_q().label()}};
}

json manifest(const std::string& digest, std::uint64_t seed, const std::string& started,
              const ScenarioConfig& defaults) {
  return json{{"tool", "tve"},
              {"version", std::string(version())},
              {"config_digest", digest},
              {"seed", seed},
              {"started_at", started},
              {"finished_at", now_utc()},
              {"defaults", learner_defaults_json(defaults)}};
}

std::string opt_num(const std::optional<double>& x) { return x ? num(*x) : ""; }
std::string opt_flag(const std::optional<bool>& x) { return x ? (*x ? "1" : "0") : ""; }

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& s, const std::string& what) {
  char* end = nullptr;
  const double x = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size())
    throw Error(ErrorKind::Schema, fmt::format("{}: '{}' is not a number", what, s));
  return x;
}

std::uint64_t parse_u64(const std::string& s, const std::string& what) {
  std::uint64_t x = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
  if (s.empty() || ec != std::errc() || p != s.data() + s.size())
    throw Error(ErrorKind::Schema, fmt::format("{}: '{}' is not an integer", what, s));
  return x;
}

std::optional<double> parse_opt_double(const std::string& s, const std::string& what) {
  if (s.empty()) return std::nullopt;
  return parse_double(s, what);
}

std::optional<bool> parse_opt_flag(const std::string& s, const std::string& what) {
  if (s.empty()) return std::nullopt;
  if (s == "1") return true;
  if (s == "0") return false;
  throw Error(ErrorKind::Schema, fmt::format("{}: '{}' is not 0 or 1", what, s));
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

std::vector<ScenarioConfig> GridConfig::cells() const {
  std::vector<ScenarioConfig> out;
  for (DgdKind k : dgd)
    for (double bpsi : beta_psi)
      for (std::size_t nn : n)
        for (double bp : beta_p) {
          ScenarioConfig c = base;
          c.dgd = DgdSpec{k, bp, bpsi};
          c.n = nn;
          out.push_back(std::move(c));
        }
  return out;
}

GridConfig parse_config(const json& j) {
  try {
    reject_unknown(j, "config",
                   {"schema_version", "dgd", "beta_p", "beta_psi", "n", "reps", "seed",
                    "level", "estimators", "learner", "onestep", "iterative",
                    "full_fidelity"});
    if (!j.contains("schema_version")) config_error("config: missing schema_version");
    if (count(j["schema_version"], "schema_version") != kSchemaVersion)
      config_error(fmt::format("config: schema_version must be {}", kSchemaVersion));
    for (const char* key : {"beta_p", "beta_psi", "n"})
      if (!j.contains(key)) config_error(fmt::format("config: missing '{}'", key));

    GridConfig g;
    g.dgd = j.contains("dgd")
                ? list(j["dgd"], "dgd",
                       [](const json& x, const std::string& w) {
                         if (!x.is_string()) config_error(w + ": expected strings");
                         return parse_dgd_kind(x.get<std::string>());
                       })
                : std::vector<DgdKind>{DgdKind::Simple};
    g.beta_p = list(j["beta_p"], "beta_p", number);
    g.beta_psi = list(j["beta_psi"], "beta_psi", number);
    g.n = list(j["n"], "n", [](const json& x, const std::string& w) {
      return static_cast<std::size_t>(count(x, w));
    });

    ScenarioConfig& b = g.base;
    const bool full = j.contains("full_fidelity") && boolean(j["full_fidelity"], "full_fidelity");
    b.reps = full ? 1000 : 500;
    if (j.contains("reps")) b.reps = count(j["reps"], "reps");
    if (j.contains("seed")) b.seed = count(j["seed"], "seed");
    if (j.contains("level")) b.level = number(j["level"], "level");
    if (j.contains("estimators")) {
      b.estimators.clear();
      if (!j["estimators"].is_array()) config_error("estimators: expected a list");
      for (const auto& x : j["estimators"]) {
        if (!x.is_string()) config_error("estimators: expected strings");
        const Estimator e = parse_estimator(x.get<std::string>());
        if (!b.uses(e)) b.estimators.push_back(e);
      }
    }
    if (j.contains("learner")) {
      const json& l = j["learner"];
      reject_unknown(l, "learner",
                     {"folds", "misspecify_q", "seed", "truncation", "q_library", "g_library"});
      if (l.contains("folds")) b.learner.folds = count(l["folds"], "learner.folds");
      if (l.contains("misspecify_q"))
        b.learner.misspecify_q = boolean(l["misspecify_q"], "learner.misspecify_q");
      if (l.contains("seed")) b.learner.seed = count(l["seed"], "learner.seed");
      if (l.contains("q_library"))
        b.learner.q_specs = parse_library(l["q_library"], "learner.q_library", true);
      if (l.contains("g_library"))
        b.learner.g_specs = parse_library(l["g_library"], "learner.g_library", false);
      if (l.contains("truncation")) {
        const json& t = l["truncation"];
        reject_unknown(t, "learner.truncation", {"g_lo", "g_hi", "q_lo", "q_hi"});
        TruncationBounds& tb = b.learner.bounds;
        if (t.contains("g_lo")) tb.g_lo = number(t["g_lo"], "truncation.g_lo");
        if (t.contains("g_hi")) tb.g_hi = number(t["g_hi"], "truncation.g_hi");
        if (t.contains("q_lo")) tb.q_lo = number(t["q_lo"], "truncation.q_lo");
        if (t.contains("q_hi")) tb.q_hi = number(t["q_hi"], "truncation.q_hi");
        if (!(0 < tb.g_lo && tb.g_lo < tb.g_hi && tb.g_hi < 1 && 0 < tb.q_lo &&
              tb.q_lo < tb.q_hi && tb.q_hi < 1))
          config_error("learner.truncation: need 0 < lo < hi < 1");
      }
    }
    if (j.contains("onestep")) {
      const json& o = j["onestep"];
      reject_unknown(o, "onestep", {"d_eps", "max_iter", "curvature_fraction", "retruncate"});
      if (o.contains("d_eps")) b.onestep.d_eps = number(o["d_eps"], "onestep.d_eps");
      if (o.contains("max_iter"))
        b.onestep.max_iter = static_cast<int>(count(o["max_iter"], "onestep.max_iter"));
      if (o.contains("curvature_fraction"))
        b.onestep.curvature_fraction = number(o["curvature_fraction"], "onestep.curvature_fraction");
      if (o.contains("retruncate"))
        b.onestep.retruncate = boolean(o["retruncate"], "onestep.retruncate");
      if (!(b.onestep.d_eps > 0)) config_error("onestep.d_eps must be > 0");
      if (b.onestep.curvature_fraction < 0) config_error("onestep.curvature_fraction must be >= 0");
    }
    if (j.contains("iterative")) {
      const json& o = j["iterative"];
      reject_unknown(o, "iterative", {"max_rounds"});
      if (o.contains("max_rounds"))
        b.iterative.max_rounds = static_cast<int>(count(o["max_rounds"], "iterative.max_rounds"));
    }
    for (const ScenarioConfig& c : g.cells()) c.validate();
    return g;
  } catch (const json::exception& e) {
    config_error(fmt::format("config: {}", e.what()));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Config) throw;
    config_error(e.what());
  }
}

json canonical_config(const GridConfig& g) {
  const ScenarioConfig& b = g.base;
  json dgd = json::array();
  for (DgdKind k : g.dgd) dgd.push_back(to_string(k));
  json est = json::array();
  for (Estimator e : b.estimators) est.push_back(to_string(e));
  const TruncationBounds& t = b.learner.bounds;
  return json{
      {"schema_version", kSchemaVersion},
      {"dgd", dgd},
      {"beta_p", g.beta_p},
      {"beta_psi", g.beta_psi},
      {"n", g.n},
      {"reps", b.reps},
      {"seed", b.seed},
      {"level", b.level},
      {"estimators", est},
      {"learner",
       {{"folds", b.learner.folds},
        {"misspecify_q", b.learner.misspecify_q},
        {"seed", b.learner.seed},
        {"q_library", library_json(b.learner.q_specs)},
        {"g_library", library_json(b.learner.g_specs)},
        {"truncation", {{"g_lo", t.g_lo}, {"g_hi", t.g_hi}, {"q_lo", t.q_lo}, {"q_hi", t.q_hi}}}}},
      {"onestep",
       {{"d_eps", b.onestep.d_eps},
        {"max_iter", b.onestep.max_iter},
        {"curvature_fraction", b.onestep.curvature_fraction},
        {"retruncate", b.onestep.retruncate}}},
      {"iterative", {{"max_rounds", b.iterative.max_rounds}}}};
}

std::string config_digest(const GridConfig& g) {
  return fmt::format("{:016x}", fnv1a(canonical_config(g).dump()));
}

// ---------------------------------------------------------------------------
// Tables

std::vector<std::string> per_rep_header() {
  std::vector<std::string> h{"dgd", "beta_p", "beta_psi", "n", "rep", "seed_stream", "psi_hat"};
  for (Estimator e : kAllEstimators) h.push_back("sigma2_" + to_string(e));
  for (Estimator e : kAllEstimators) {
    h.push_back("ci_lo_" + to_string(e));
    h.push_back("ci_hi_" + to_string(e));
  }
  for (Estimator e : kAllEstimators) h.push_back("covered_" + to_string(e));
  for (Estimator e : kAllEstimators) h.push_back("reject_" + to_string(e));
  for (const char* c : {"steps_os", "term_os", "steps_it", "term_it", "n_g_trunc",
                        "n_q_trunc", "failed_reason"})
    h.push_back(c);
  return h;
}

void write_per_rep(std::ostream& os, const std::vector<ScenarioResult>& results,
                   bool with_header) {
  if (with_header) fmt::print(os, "{}\n", fmt::join(per_rep_header(), ","));
  for (const ScenarioResult& res : results) {
    for (const RepResult& r : res.per_rep) {
      std::vector<std::string> f{to_string(res.key.dgd.kind), num(res.key.dgd.beta_p),
                                 num(res.key.dgd.beta_psi), std::to_string(res.key.n),
                                 std::to_string(r.rep), std::to_string(r.seed_stream),
                                 r.failed() ? "" : num(r.psi_hat)};
      for (std::size_t k = 0; k < kNumEstimators; ++k) f.push_back(opt_num(r.sigma2[k]));
      for (std::size_t k = 0; k < kNumEstimators; ++k) {
        f.push_back(opt_num(r.ci_lo[k]));
        f.push_back(opt_num(r.ci_hi[k]));
      }
      for (std::size_t k = 0; k < kNumEstimators; ++k) f.push_back(opt_flag(r.covered[k]));
      for (std::size_t k = 0; k < kNumEstimators; ++k) f.push_back(opt_flag(r.reject[k]));
      f.push_back(r.steps_os ? std::to_string(*r.steps_os) : "");
      f.push_back(r.term_os.value_or(""));
      f.push_back(r.steps_it ? std::to_string(*r.steps_it) : "");
      f.push_back(r.term_it.value_or(""));
      f.push_back(std::to_string(r.n_g_trunc));
      f.push_back(std::to_string(r.n_q_trunc));
      f.push_back(r.failed_reason);
      fmt::print(os, "{}\n", fmt::join(f, ","));
    }
  }
}

std::vector<PerRepRow> read_per_rep(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Input, fmt::format("cannot open '{}'", path.string()));
  std::string line;
  if (!std::getline(in, line))
    throw Error(ErrorKind::Schema, fmt::format("{}: empty file", path.string()));
  const auto header = per_rep_header();
  if (split(line, ',') != header)
    throw Error(ErrorKind::Schema,
                fmt::format("{}: header does not match the per-replication schema", path.string()));
  std::vector<PerRepRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = split(line, ',');
    const std::string where = fmt::format("{}:{}", path.string(), lineno);
    if (f.size() != header.size())
      throw Error(ErrorKind::Schema,
                  fmt::format("{}: expected {} fields, found {}", where, header.size(), f.size()));
    PerRepRow row;
    try {
      row.key.dgd.kind = parse_dgd_kind(f[0]);
    } catch (const Error&) {
      throw Error(ErrorKind::Schema, fmt::format("{}: unknown dgd '{}'", where, f[0]));
    }
    row.key.dgd.beta_p = parse_double(f[1], where);
    row.key.dgd.beta_psi = parse_double(f[2], where);
    row.key.n = parse_u64(f[3], where);
    RepResult& r = row.rep;
    r.rep = parse_u64(f[4], where);
    r.seed_stream = parse_u64(f[5], where);
    r.failed_reason = f[header.size() - 1];
    if (!r.failed()) r.psi_hat = parse_double(f[6], where);
    std::size_t c = 7;
    for (std::size_t k = 0; k < kNumEstimators; ++k) r.sigma2[k] = parse_opt_double(f[c++], where);
    for (std::size_t k = 0; k < kNumEstimators; ++k) {
      r.ci_lo[k] = parse_opt_double(f[c++], where);
      r.ci_hi[k] = parse_opt_double(f[c++], where);
    }
    for (std::size_t k = 0; k < kNumEstimators; ++k) r.covered[k] = parse_opt_flag(f[c++], where);
    for (std::size_t k = 0; k < kNumEstimators; ++k) r.reject[k] = parse_opt_flag(f[c++], where);
    if (!f[c].empty()) r.steps_os = static_cast<int>(parse_u64(f[c], where));
    ++c;
    if (!f[c].empty()) r.term_os = f[c];
    ++c;
    if (!f[c].empty()) r.steps_it = static_cast<int>(parse_u64(f[c], where));
    ++c;
    if (!f[c].empty()) r.term_it = f[c];
    ++c;
    r.n_g_trunc = parse_u64(f[c++], where);
    r.n_q_trunc = parse_u64(f[c++], where);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<std::string> summary_header() {
  return {"dgd",      "beta_p",      "beta_psi",      "n",         "estimator",    "reps",
          "n_failed", "coverage",    "type1",         "bias",      "rmse",         "mean_sigma2",
          "var_sigma2", "psi_truth", "sigma2_oracle", "sigma2_mc", "sigma2_mc_se", "var_mc_raw"};
}

void write_summary(std::ostream& os, const std::vector<SummaryRow>& rows) {
  fmt::print(os, "{}\n", fmt::join(summary_header(), ","));
  for (const SummaryRow& s : rows) {
    fmt::print(os, "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n", s.dgd,
               num(s.beta_p), num(s.beta_psi), s.n, s.estimator, s.reps, s.n_failed,
               num(s.coverage), opt_num(s.type1), num(s.bias), num(s.rmse),
               num(s.mean_sigma2), num(s.var_sigma2), num(s.psi_truth),
               num(s.sigma2_oracle), num(s.sigma2_mc), num(s.sigma2_mc_se),
               num(s.var_mc_raw));
  }
}

// ---------------------------------------------------------------------------
// Commands

namespace {

int exit_code_for(const Error& e) {
  return e.kind() == ErrorKind::Config || e.kind() == ErrorKind::Schema ? kExitUsage
                                                                        : kExitFailure;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Input, fmt::format("cannot write '{}'", path.string()));
  out << text;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  for (auto& x : split(s, ',')) out.push_back(x);
  return out;
}

struct DataFlags {
  std::string data;
  std::string treatment;
  std::string outcome;
  std::string covariates;
  std::uint64_t seed = 0;
  std::size_t folds = 10;
  bool misspecify_q = false;
  double level = 0.95;

  void add(CLI::App* cmd) {
    cmd->add_option("--data", data, "Input CSV")->required()->check(CLI::ExistingFile);
    cmd->add_option("--treatment", treatment, "Binary treatment column")->required();
    cmd->add_option("--outcome", outcome, "Binary outcome column")->required();
    cmd->add_option("--covariates", covariates, "Comma-separated covariate columns (default: all others)");
    cmd->add_option("--seed", seed, "Seed for fold assignment and resampling");
    cmd->add_option("--folds", folds, "Cross-validation folds");
    cmd->add_flag("--misspecify-q", misspecify_q, "Restrict the outcome model to A + W1");
    cmd->add_option("--level", level, "Confidence level")->check(CLI::Range(0.0, 1.0));
  }

  LoadedCsv load() const {
    return load_csv(data, CsvColumns{treatment, outcome, split_list(covariates)});
  }

  LearnerSpec learner(std::uint64_t fold_seed) const {
    LearnerSpec spec = LearnerSpec::defaults();
    spec.folds = folds;
    spec.misspecify_q = misspecify_q;
    spec.seed = fold_seed;
    return spec;
  }
};

json trace_json(const FlowTrace& t) {
  return json{{"steps", t.steps},
              {"termination", to_string(t.termination)},
              {"epsilon_total", t.epsilon_total},
              {"loss_path", t.loss_path},
              {"pn_eif_path", t.pn_eif_path},
              {"threshold_path", t.threshold_path}};
}

// The full estimation pipeline on one dataset.
struct Estimate {
  NuisanceFit fit0;
  PsiTarget pt;
  double ic = 0, ss = 0;
  TargetedVariance it, os;
};

Estimate estimate_all(const Dataset& d, const LearnerSpec& spec) {
  Estimate e;
  e.fit0 = fit_nuisances(d, spec);
  e.pt = tmle_psi(d, e.fit0);
  e.ic = var_ic(d, e.pt);
  e.ss = var_ss(e.fit0);
  e.it = var_iterative(d, e.fit0);
  e.os = var_onestep(d, e.fit0);
  return e;
}

json estimate_json(const Estimate& e, std::size_t n, double level) {
  json sigma2 = {{"ic", e.ic}, {"ss", e.ss}, {"it", e.it.sigma2}, {"os", e.os.sigma2}};
  json ci = json::object();
  for (const auto& [name, v] : sigma2.items()) {
    const auto [lo, hi] = confidence_interval(e.pt.psi_hat, v.get<double>(), n, level);
    ci[name] = {lo, hi};
  }
  return json{{"n", n},
              {"psi_hat", e.pt.psi_hat},
              {"level", level},
              {"sigma2", sigma2},
              {"ci", ci},
              {"tmle_psi",
               {{"epsilon", e.pt.epsilon},
                {"pn_eif_psi", e.pt.pn_eif_psi},
                {"residual_bound", e.pt.residual_bound},
                {"rounds", e.pt.rounds}}},
              {"traces", {{"os", trace_json(e.os.trace)}, {"it", trace_json(e.it.trace)}}},
              {"truncation",
               {{"n_g_truncated", e.fit0.n_g_truncated},
                {"n_q_truncated", e.fit0.n_q_truncated}}},
              {"selected", {{"q", e.fit0.q_selected}, {"g", e.fit0.g_selected}}}};
}

ScenarioConfig defaults_for(const LearnerSpec& spec) {
  ScenarioConfig c;
  c.learner = spec;
  return c;
}

int cmd_simulate(const std::string& config_path, const std::string& out_dir, int jobs,
                 std::optional<std::uint64_t> seed) {
  const std::string started = now_utc();
  GridConfig grid;
  try {
    std::ifstream in(config_path);
    if (!in) config_error(fmt::format("cannot open config '{}'", config_path));
    json j;
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      config_error(fmt::format("{}: {}", config_path, e.what()));
    }
    grid = parse_config(j);
    if (seed) grid.base.seed = *seed;
  } catch (const Error& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitUsage;
  }

  std::filesystem::create_directories(out_dir);
  std::vector<ScenarioResult> done;
  std::vector<ScenarioResult> all;
  json failed_cells = json::array();
  for (const ScenarioConfig& cell : grid.cells()) {
    std::vector<RepResult> rows = run_replications(cell, jobs);
    try {
      ScenarioResult r = aggregate({cell.dgd, cell.n}, rows);
      done.push_back(r);
      all.push_back(std::move(r));
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Scenario) throw;
      fmt::print(stderr, "error: {}\n", e.what());
      failed_cells.push_back({{"dgd", to_string(cell.dgd.kind)},
                              {"beta_p", cell.dgd.beta_p},
                              {"beta_psi", cell.dgd.beta_psi},
                              {"n", cell.n},
                              {"reason", e.what()}});
      ScenarioResult partial;
      partial.key = {cell.dgd, cell.n};
      partial.reps = rows.size();
      partial.n_failed = rows.size();
      partial.per_rep = std::move(rows);
      all.push_back(std::move(partial));
    }
  }

  const std::filesystem::path dir(out_dir);
  std::ostringstream per_rep, summary;
  write_per_rep(per_rep, all);
  write_summary(summary, summarize(done));
  write_text(dir / "per_rep.csv", per_rep.str());
  write_text(dir / "summary.csv", summary.str());
  json m = manifest(config_digest(grid), grid.base.seed, started, grid.base);
  m["config"] = canonical_config(grid);
  m["status"] = failed_cells.empty() ? "complete" : "partial";
  m["failed_cells"] = failed_cells;
  m["outputs"] = {"per_rep.csv", "summary.csv"};
  write_text(dir / "manifest.json", m.dump(2) + "\n");
  return failed_cells.empty() ? kExitOk : kExitFailure;
}

int cmd_estimate(const DataFlags& flags, const std::string& out) {
  const std::string started = now_utc();
  const LoadedCsv loaded = flags.load();
  const LearnerSpec spec = flags.learner(flags.seed);
  const Estimate e = estimate_all(loaded.data, spec);
  json report = estimate_json(e, loaded.data.n(), flags.level);
  report["dropped_rows"] = loaded.dropped;
  json cfg = {{"data", flags.data},
              {"treatment", flags.treatment},
              {"outcome", flags.outcome},
              {"covariates", loaded.data.names},
              {"seed", flags.seed},
              {"folds", flags.folds},
              {"misspecify_q", flags.misspecify_q},
              {"level", flags.level}};
  report["manifest"] =
      manifest(fmt::format("{:016x}", fnv1a(cfg.dump())), flags.seed, started, defaults_for(spec));
  report["manifest"]["config"] = cfg;
  const std::string text = report.dump(2) + "\n";
  if (out.empty() || out == "-")
    std::cout << text;
  else
    write_text(out, text);
  return kExitOk;
}

int cmd_resample(const DataFlags& flags, std::size_t m, std::size_t attempts,
                 std::optional<double> trunc_level, double min_prop, const std::string& out_dir) {
  const std::string started = now_utc();
  const LoadedCsv loaded = flags.load();
  const Dataset& source = loaded.data;
  const double level = trunc_level.value_or(default_trunc_level(m));

  constexpr double kBinWidth = 0.005;
  constexpr std::size_t kBins = 20;  // last bin collects everything >= 0.095
  std::vector<std::size_t> hist(kBins, 0);
  std::size_t accepted = 0;

  std::filesystem::create_directories(out_dir);
  std::ostringstream rows;
  fmt::print(rows,
             "attempt,seed_stream,proportion,psi_hat,sigma2_ic,sigma2_ss,sigma2_it,sigma2_os,"
             "steps_os,term_os,steps_it,term_it,n_g_trunc,n_q_trunc,failed_reason\n");
  for (std::size_t k = 0; k < attempts; ++k) {
    const std::uint64_t key = stream_key(flags.seed, k);
    const LearnerSpec spec = flags.learner(key);
    ResampleOutcome r;
    try {
      r = resample_filtered(source, m, level, min_prop, spec, key);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::InvalidSize || e.kind() == ErrorKind::Input) throw;
      // A draw whose propensity model cannot be fit counts as rejected.
      ++hist[0];
      continue;
    }
    ++hist[std::min(kBins - 1, static_cast<std::size_t>(r.proportion / kBinWidth))];
    if (!r.accepted) continue;
    ++accepted;
    try {
      const Estimate e = estimate_all(r.sample, spec);
      fmt::print(rows, "{},{},{},{},{},{},{},{},{},{},{},{},{},{},\n", k, key, num(r.proportion),
                 num(e.pt.psi_hat), num(e.ic), num(e.ss), num(e.it.sigma2), num(e.os.sigma2),
                 e.os.trace.steps, to_string(e.os.trace.termination), e.it.trace.steps,
                 to_string(e.it.trace.termination), e.fit0.n_g_truncated, e.fit0.n_q_truncated);
    } catch (const Error& e) {
      fmt::print(rows, "{},{},{},,,,,,,,,,,,{}\n", k, key, num(r.proportion), to_string(e.kind()));
    }
  }

  json histogram = json::array();
  for (std::size_t b = 0; b < kBins; ++b)
    histogram.push_back({{"lo", kBinWidth * static_cast<double>(b)},
                         {"hi", b + 1 == kBins ? 1.0 : kBinWidth * static_cast<double>(b + 1)},
                         {"count", hist[b]}});
  json meta = {{"attempts", attempts},
               {"accepted", accepted},
               {"rejected", attempts - accepted},
               {"m", m},
               {"source_n", source.n()},
               {"dropped_rows", loaded.dropped},
               {"trunc_level", level},
               {"min_prop", min_prop},
               {"histogram", histogram}};
  json cfg = {{"data", flags.data}, {"treatment", flags.treatment}, {"outcome", flags.outcome},
              {"m", m}, {"attempts", attempts}, {"trunc_level", level}, {"min_prop", min_prop},
              {"seed", flags.seed}, {"folds", flags.folds}, {"misspecify_q", flags.misspecify_q}};
  meta["manifest"] = manifest(fmt::format("{:016x}", fnv1a(cfg.dump())), flags.seed, started,
                              defaults_for(flags.learner(flags.seed)));
  meta["manifest"]["config"] = cfg;

  const std::filesystem::path dir(out_dir);
  write_text(dir / "resample.csv", rows.str());
  write_text(dir / "resample_meta.json", meta.dump(2) + "\n");
  if (accepted == 0) {
    fmt::print(stderr, "error: no subsample accepted in {} attempts; truncated-proportion histogram:\n",
               attempts);
    for (const auto& b : histogram)
      fmt::print(stderr, "  [{:.3f}, {:.3f}) {}\n", b["lo"].get<double>(), b["hi"].get<double>(),
                 b["count"].get<std::size_t>());
    return kExitFailure;
  }
  return kExitOk;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& out) {
  struct Group {
    ScenarioKey key;
    std::map<std::pair<std::size_t, std::uint64_t>, RepResult> reps;
  };
  std::vector<Group> groups;
  std::vector<std::string> duplicates;
  for (const std::string& path : inputs) {
    for (PerRepRow& row : read_per_rep(path)) {
      auto it = std::find_if(groups.begin(), groups.end(), [&](const Group& g) {
        return g.key.dgd.kind == row.key.dgd.kind && g.key.dgd.beta_p == row.key.dgd.beta_p &&
               g.key.dgd.beta_psi == row.key.dgd.beta_psi && g.key.n == row.key.n;
      });
      if (it == groups.end()) {
        groups.push_back(Group{row.key, {}});
        it = std::prev(groups.end());
      }
      const auto id = std::make_pair(row.rep.rep, row.rep.seed_stream);
      if (!it->reps.emplace(id, std::move(row.rep)).second)
        duplicates.push_back(fmt::format("dgd={} beta_p={} beta_psi={} n={} rep={} seed_stream={}",
                                         to_string(row.key.dgd.kind), num(row.key.dgd.beta_p),
                                         num(row.key.dgd.beta_psi), row.key.n, id.first, id.second));
    }
  }
  if (!duplicates.empty()) {
    fmt::print(stderr, "error: {} duplicate replication rows:\n", duplicates.size());
    for (const auto& d : duplicates) fmt::print(stderr, "  {}\n", d);
    return kExitUsage;
  }
  std::vector<ScenarioResult> results;
  for (Group& g : groups) {
    std::vector<RepResult> reps;
    for (auto& [_, r] : g.reps) reps.push_back(std::move(r));
    results.push_back(aggregate(g.key, std::move(reps)));
  }
  std::ostringstream os;
  write_summary(os, summarize(results));
  write_text(out, os.str());
  return kExitOk;
}

int cmd_generate(const std::string& kind, double beta_p, double beta_psi, std::size_t n,
                 std::uint64_t seed, bool oracle, const std::string& out) {
  const SimulatedData sim = simulate(DgdSpec{parse_dgd_kind(kind), beta_p, beta_psi}, n, seed);
  write_csv(out, sim.data, oracle ? &sim.truth : nullptr);
  return kExitOk;
}

int jobs_default() {
  if (const char* v = std::getenv("TVE_JOBS")) {
    char* end = nullptr;
    const long j = std::strtol(v, &end, 10);
    if (end != v && *end == '\0' && j >= 0) return static_cast<int>(j);
  }
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"Targeted variance estimation for the log causal risk ratio"};
  app.set_version_flag("--version", std::string(version()));
  app.require_subcommand(1);

  std::string config, out, out_dir;
  int jobs = jobs_default();
  std::optional<std::uint64_t> seed_override;
  auto* sim = app.add_subcommand("simulate", "Run a scenario grid");
  sim->add_option("--config", config, "Scenario JSON")->required();
  sim->add_option("--out", out_dir, "Output directory")->required();
  sim->add_option("--jobs", jobs, "Worker threads (0: all; default $TVE_JOBS)")
      ->check(CLI::NonNegativeNumber);
  sim->add_option("--seed", seed_override, "Override the config seed");

  DataFlags est_flags;
  auto* est = app.add_subcommand("estimate", "Estimate on a CSV");
  est_flags.add(est);
  est->add_option("--out", out, "Report JSON (default stdout)");

  DataFlags rs_flags;
  std::size_t m = 500, attempts = 1000;
  std::optional<double> trunc_level;
  double min_prop = kDefaultMinProp;
  auto* rs = app.add_subcommand("resample", "Positivity-filtered resampling harness");
  rs_flags.add(rs);
  rs->add_option("--m", m, "Subsample size")->check(CLI::PositiveNumber);
  rs->add_option("--attempts", attempts, "Number of draws");
  rs->add_option("--trunc-level", trunc_level, "Band edge (default 5/(sqrt(m) log m))")
      ->check(CLI::Range(0.0, 0.5));
  rs->add_option("--min-prop", min_prop, "Acceptance threshold on the outside share");
  rs->add_option("--out", out_dir, "Output directory")->required();

  std::vector<std::string> inputs;
  std::string report_out;
  auto* rep = app.add_subcommand("report", "Merge per-replication CSVs into a summary");
  rep->add_option("--in", inputs, "per_rep.csv files")->required()->check(CLI::ExistingFile);
  rep->add_option("--out", report_out, "Summary CSV")->required();

  std::string kind = "simple";
  double beta_p = -2, beta_psi = 0;
  std::size_t gen_n = 1000;
  std::uint64_t gen_seed = 1;
  bool oracle = false;
  std::string gen_out;
  auto* gen = app.add_subcommand("generate", "Write a simulated dataset");
  gen->add_option("--dgd", kind, "simple or complex")
      ->check(CLI::IsMember({"simple", "complex"}));
  gen->add_option("--beta-p", beta_p, "Positivity coefficient");
  gen->add_option("--beta-psi", beta_psi, "Treatment effect");
  gen->add_option("--n", gen_n, "Observations")->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "Seed");
  gen->add_flag("--oracle", oracle, "Append the true nuisance columns");
  gen->add_option("--out", gen_out, "Output CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*sim) return cmd_simulate(config, out_dir, jobs, seed_override);
    if (*est) return cmd_estimate(est_flags, out);
    if (*rs) return cmd_resample(rs_flags, m, attempts, trunc_level, min_prop, out_dir);
    if (*rep) return cmd_report(inputs, report_out);
    if (*gen) return cmd_generate(kind, beta_p, beta_psi, gen_n, gen_seed, oracle, gen_out);
  } catch (const Error& e) {
    fmt::print(stderr, "error ({}): {}\n", to_string(e.kind()), e.what());
    return exit_code_for(e);
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitFailure;
  }
  return kExitUsage;
}

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("tve");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace tve::cli
