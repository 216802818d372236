#include "tve/data.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>
#include <fmt/os.h>

#include "tve/error.hpp"
#include "tve/rng.hpp"

namespace tve {

std::size_t Dataset::n_treated() const {
  return static_cast<std::size_t>(a.sum());
}

void Dataset::validate() const {
  const auto n = a.size();
  if (n < 1) throw Error(ErrorKind::Input, "dataset has no rows");
  if (w.cols() < 1) throw Error(ErrorKind::Input, "dataset has no covariates");
  if (w.rows() != n || y.size() != n)
    throw Error(ErrorKind::Input, "W, A and Y disagree on the number of rows");
  if (names.size() != static_cast<std::size_t>(w.cols()))
    throw Error(ErrorKind::Input, "covariate names do not match W columns");
  for (Eigen::Index i = 0; i < n; ++i) {
    if ((a[i] != 0.0 && a[i] != 1.0) || (y[i] != 0.0 && y[i] != 1.0))
      throw Error(ErrorKind::Input,
                  fmt::format("row {}: A and Y must be 0 or 1", i));
  }
  if (!w.allFinite()) throw Error(ErrorKind::Input, "W has non-finite values");
}

Dataset Dataset::subset(const std::vector<std::size_t>& rows) const {
  Dataset out;
  const auto m = static_cast<Eigen::Index>(rows.size());
  out.w.resize(m, w.cols());
  out.a.resize(m);
  out.y.resize(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    const auto r = static_cast<Eigen::Index>(rows[k]);
    out.w.row(k) = w.row(r);
    out.a[k] = a[r];
    out.y[k] = y[r];
  }
  out.names = names;
  return out;
}

std::string to_string(DgdKind kind) {
  return kind == DgdKind::Simple ? "simple" : "complex";
}

DgdKind parse_dgd_kind(const std::string& s) {
  if (s == "simple") return DgdKind::Simple;
  if (s == "complex") return DgdKind::Complex;
  throw Error(ErrorKind::Config, fmt::format("unknown dgd kind '{}'", s));
}

double treatment_logit(const DgdSpec& spec, double w1, double w2, double w3) {
  const double bp = spec.beta_p;
  double lp = bp - (bp + 2.5) * w1 + 1.75 * w2 + (bp + 3.2) * w3;
  if (spec.kind == DgdKind::Complex) lp += -0.75 * w1 * w2 + 0.75 * w2 * w2;
  return lp;
}

double outcome_logit(const DgdSpec& spec, double w1, double w2, double w3,
                     double a) {
  if (spec.kind == DgdKind::Complex)
    return 0.1 + 0.1 * w1 + 0.1 * w2 + 0.2 * w3 - 0.5 * w1 * w3 +
           0.3 * w1 * w1 + spec.beta_psi * a;
  return 0.1 + 0.1 * w1 + 0.1 * w2 + 0.1 * w3 + spec.beta_psi * a;
}

double expit(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double logit(double p) { return std::log(p / (1.0 - p)); }

SimulatedData simulate(const DgdSpec& spec, std::size_t n, std::uint64_t seed,
                       std::uint64_t stream) {
  if (n == 0) throw Error(ErrorKind::InvalidSize, "simulate: n must be >= 1");
  if (!std::isfinite(spec.beta_p) || !std::isfinite(spec.beta_psi))
    throw Error(ErrorKind::Input, "simulate: DGD coefficients must be finite");

  Stream rng(seed, stream);
  const auto m = static_cast<Eigen::Index>(n);
  SimulatedData out;
  Dataset& d = out.data;
  d.w.resize(m, 3);
  d.a.resize(m);
  d.y.resize(m);
  d.names = {"W1", "W2", "W3"};
  OracleNuisance& t = out.truth;
  t.g1_true.resize(m);
  t.qbar1_true.resize(m);
  t.qbar0_true.resize(m);

  for (Eigen::Index i = 0; i < m; ++i) {
    const double w1 = rng.uniform();
    const double w2 = rng.uniform();
    const double w3 = rng.uniform();
    const double g1 = expit(treatment_logit(spec, w1, w2, w3));
    const double q1 = expit(outcome_logit(spec, w1, w2, w3, 1.0));
    const double q0 = expit(outcome_logit(spec, w1, w2, w3, 0.0));
    const double a = rng.bernoulli(g1) ? 1.0 : 0.0;
    const double y = rng.bernoulli(a == 1.0 ? q1 : q0) ? 1.0 : 0.0;
    d.w(i, 0) = w1;
    d.w(i, 1) = w2;
    d.w(i, 2) = w3;
    d.a[i] = a;
    d.y[i] = y;
    t.g1_true[i] = g1;
    t.qbar1_true[i] = q1;
    t.qbar0_true[i] = q0;
  }
  return out;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

bool is_missing(const std::string& s) {
  return s.empty() || s == "NA" || s == "NaN" || s == "nan" || s == ".";
}

std::optional<double> parse_real(const std::string& s) {
  const char* first = s.data();
  const char* last = s.data() + s.size();
  while (first < last && *first == ' ') ++first;
  while (last > first && last[-1] == ' ') --last;
  if (first < last && *first == '+') ++first;
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v)) return std::nullopt;
  return v;
}

}  // namespace

LoadedCsv load_csv(const std::filesystem::path& path, const CsvColumns& cols) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Input, fmt::format("cannot open '{}'", path.string()));

  std::string line;
  if (!std::getline(in, line))
    throw Error(ErrorKind::Schema, "CSV has no header row");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = split_csv_line(line);
  std::map<std::string, std::size_t> index;
  for (std::size_t j = 0; j < header.size(); ++j) index.emplace(header[j], j);

  auto column = [&](const std::string& name) {
    auto it = index.find(name);
    if (it == index.end())
      throw Error(ErrorKind::Schema, fmt::format("missing column '{}'", name));
    return it->second;
  };
  const std::size_t a_col = column(cols.treatment);
  const std::size_t y_col = column(cols.outcome);
  std::vector<std::string> cov_names = cols.covariates;
  if (cov_names.empty()) {
    for (const auto& h : header)
      if (h != cols.treatment && h != cols.outcome) cov_names.push_back(h);
  }
  if (cov_names.empty()) throw Error(ErrorKind::Schema, "no covariate columns");
  std::vector<std::size_t> w_cols;
  for (const auto& c : cov_names) w_cols.push_back(column(c));

  std::vector<double> wv, av, yv;
  std::size_t dropped = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    if (f.size() != header.size())
      throw Error(ErrorKind::Schema,
                  fmt::format("line {}: expected {} fields, found {}", line_no,
                              header.size(), f.size()));
    bool missing = is_missing(f[a_col]) || is_missing(f[y_col]);
    for (auto j : w_cols) missing = missing || is_missing(f[j]);
    if (missing) {
      ++dropped;
      continue;
    }
    auto binary = [&](std::size_t j) {
      const auto v = parse_real(f[j]);
      if (!v || (*v != 0.0 && *v != 1.0))
        throw Error(ErrorKind::Schema,
                    fmt::format("line {}: column '{}' value '{}' is not 0/1",
                                line_no, header[j], f[j]));
      return *v;
    };
    av.push_back(binary(a_col));
    yv.push_back(binary(y_col));
    for (auto j : w_cols) {
      const auto v = parse_real(f[j]);
      if (!v)
        throw Error(ErrorKind::Schema,
                    fmt::format("line {}: column '{}' value '{}' is not numeric",
                                line_no, header[j], f[j]));
      wv.push_back(*v);
    }
  }
  if (av.empty()) throw Error(ErrorKind::EmptyData, "CSV has no usable rows");

  LoadedCsv out;
  out.dropped = dropped;
  const auto n = static_cast<Eigen::Index>(av.size());
  const auto p = static_cast<Eigen::Index>(w_cols.size());
  out.data.w = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                        Eigen::RowMajor>>(wv.data(), n, p);
  out.data.a = Eigen::Map<Eigen::VectorXd>(av.data(), n);
  out.data.y = Eigen::Map<Eigen::VectorXd>(yv.data(), n);
  out.data.names = cov_names;
  out.data.validate();
  return out;
}

void write_csv(const std::filesystem::path& path, const Dataset& d,
               const OracleNuisance* truth) {
  auto out = fmt::output_file(path.string());
  std::string header;
  for (const auto& name : d.names) header += name + ",";
  header += "A,Y";
  if (truth) header += ",g1_true,qbar1_true,qbar0_true";
  out.print("{}\n", header);
  for (Eigen::Index i = 0; i < d.a.size(); ++i) {
    for (Eigen::Index j = 0; j < d.w.cols(); ++j) out.print("{:.17g},", d.w(i, j));
    out.print("{:.17g},{:.17g}", d.a[i], d.y[i]);
    if (truth)
      out.print(",{:.17g},{:.17g},{:.17g}", truth->g1_true[i],
                truth->qbar1_true[i], truth->qbar0_true[i]);
    out.print("\n");
  }
}

}  // namespace tve
