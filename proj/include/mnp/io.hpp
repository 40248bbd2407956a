#pragma once

#include <Eigen/Dense>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mnp/errors.hpp"
#include "mnp/model.hpp"
#include "mnp/pfm.hpp"
#include "mnp/summary.hpp"

namespace mnp {

inline constexpr const char* kArtifactVersion = "mnp 1.0.0";

namespace detail {

// All floats hit disk with 17 significant digits so read -> write -> read
// round-trips bit-exactly.
inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

inline double parse_double_strict(const std::string& tok, const std::string& where) {
  const std::string t = trim(tok);
  double out = 0.0;
  const char* begin = t.data();
  const char* end = t.data() + t.size();
  const auto res = std::from_chars(begin, end, out);
  if (res.ec != std::errc() || res.ptr != end || t.empty())
    throw ParseError(where + ": cannot parse number '" + tok + "'");
  return out;
}

inline long parse_int_strict(const std::string& tok, const std::string& where) {
  const std::string t = trim(tok);
  long out = 0;
  const auto res = std::from_chars(t.data(), t.data() + t.size(), out);
  if (res.ec != std::errc() || res.ptr != t.data() + t.size() || t.empty())
    throw ParseError(where + ": cannot parse integer '" + tok + "'");
  return out;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::stringstream ss(line);
  while (std::getline(ss, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.emplace_back("");
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Dataset CSV: header `y,x1,...,xp`, one observation per row, y in 1..L.

inline Dataset read_dataset(const std::string& path, int L_override = 0) {
  std::ifstream in(path);
  if (!in) throw IoError("read_dataset: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("read_dataset: " + path + " is empty");
  const auto header = detail::split_csv_line(detail::trim(line));
  if (header.empty() || detail::trim(header[0]) != "y")
    throw ParseError("read_dataset: header must start with 'y'");
  const int p = static_cast<int>(header.size()) - 1;
  if (p < 1) throw ParseError("read_dataset: no covariate columns");
  for (int j = 1; j <= p; ++j) {
    if (detail::trim(header[j]) != "x" + std::to_string(j))
      throw ParseError("read_dataset: expected column x" + std::to_string(j) + ", got '" +
                       header[j] + "'");
  }

  std::vector<int> y;
  std::vector<double> xflat;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    const auto fields = detail::split_csv_line(t);
    const std::string where = path + " line " + std::to_string(line_no);
    if (static_cast<int>(fields.size()) != p + 1)
      throw ParseError(where + ": expected " + std::to_string(p + 1) + " fields, got " +
                       std::to_string(fields.size()));
    y.push_back(static_cast<int>(detail::parse_int_strict(fields[0], where)));
    for (int j = 1; j <= p; ++j) xflat.push_back(detail::parse_double_strict(fields[j], where));
  }
  if (y.empty()) throw ParseError("read_dataset: " + path + " has no data rows");

  Dataset data;
  data.n = static_cast<int>(y.size());
  data.p = p;
  int max_y = 0;
  for (int v : y) max_y = std::max(max_y, v);
  data.L = (L_override > 0) ? L_override : max_y;
  data.y = std::move(y);
  data.X.resize(data.n, p);
  for (int i = 0; i < data.n; ++i)
    for (int j = 0; j < p; ++j) data.X(i, j) = xflat[static_cast<std::size_t>(i) * p + j];
  data.validate();
  return data;
}

inline void write_dataset(const std::string& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) throw IoError("write_dataset: cannot open " + path);
  out << "y";
  for (int j = 1; j <= data.p; ++j) out << ",x" << j;
  out << "\n";
  for (int i = 0; i < data.n; ++i) {
    out << data.y[i];
    for (int j = 0; j < data.p; ++j) out << "," << detail::fmt_double(data.X(i, j));
    out << "\n";
  }
}

// Sigma source: the literal `identity`, or a headerless L x L numeric CSV.
inline Eigen::MatrixXd read_sigma(const std::string& source, int L) {
  if (source == "identity") return Eigen::MatrixXd::Identity(L, L);
  std::ifstream in(source);
  if (!in) throw ConfigError("read_sigma: cannot open " + source);
  std::vector<std::vector<double>> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    const auto fields = detail::split_csv_line(t);
    std::vector<double> row;
    for (const auto& f : fields)
      row.push_back(detail::parse_double_strict(f, source + " line " + std::to_string(line_no)));
    rows.push_back(std::move(row));
  }
  if (static_cast<int>(rows.size()) != L)
    throw ConfigError("read_sigma: expected " + std::to_string(L) + " rows, got " +
                      std::to_string(rows.size()));
  Eigen::MatrixXd sigma(L, L);
  for (int i = 0; i < L; ++i) {
    if (static_cast<int>(rows[i].size()) != L)
      throw ConfigError("read_sigma: row " + std::to_string(i + 1) + " has " +
                        std::to_string(rows[i].size()) + " fields, expected " + std::to_string(L));
    for (int j = 0; j < L; ++j) sigma(i, j) = rows[i][j];
  }
  if ((sigma - sigma.transpose()).cwiseAbs().maxCoeff() > 1e-8)
    throw ConfigError("read_sigma: matrix is not symmetric");
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success)
    throw ConfigError("read_sigma: matrix is not positive definite");
  return sigma;
}

// ---------------------------------------------------------------------------
// Run configuration: flat key = value text, `#` comments. Unknown keys fail.

enum class FitMethod { kExact, kVb, kBoth };

struct RunConfig {
  FitMethod method = FitMethod::kBoth;
  std::string dataset;
  double nu2 = 1.0;
  std::string sigma_source = "identity";
  int n_samples = 10000;
  double eps = 1e-8;
  int max_sweeps = 1000;
  std::string moment_method = "auto";  // auto | analytic | mc
  double cdf_tol = 1e-8;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::vector<double> quantiles = {0.025, 0.25, 0.5, 0.75, 0.975};
  std::string output_dir = ".";
  std::string trunc_method = "auto";  // auto | rejection | gibbs
  std::string init = "halfnormal";    // halfnormal | ones
  bool save_draws = true;
  int L_override = 0;

  void validate() const {
    if (!(nu2 > 0.0)) throw ConfigError("config: nu2 must be positive");
    if (n_samples < 2) throw ConfigError("config: n_samples must be at least 2");
    if (!(eps > 0.0)) throw ConfigError("config: eps must be positive");
    if (max_sweeps < 1) throw ConfigError("config: max_sweeps must be positive");
    if (!(cdf_tol >= 1e-10)) throw ConfigError("config: cdf_tol must be at least 1e-10");
    for (double qv : quantiles)
      if (!(qv > 0.0 && qv < 1.0)) throw ConfigError("config: quantile levels must lie in (0,1)");
    if (moment_method != "auto" && moment_method != "analytic" && moment_method != "mc")
      throw ConfigError("config: moment_method must be auto, analytic or mc");
    if (trunc_method != "auto" && trunc_method != "rejection" && trunc_method != "gibbs")
      throw ConfigError("config: trunc_method must be auto, rejection or gibbs");
    if (init != "halfnormal" && init != "ones")
      throw ConfigError("config: init must be halfnormal or ones");
    if (L_override < 0 || L_override == 1) throw ConfigError("config: L must be at least 2");
  }
};

inline FitMethod parse_fit_method(const std::string& v) {
  if (v == "exact") return FitMethod::kExact;
  if (v == "vb") return FitMethod::kVb;
  if (v == "both") return FitMethod::kBoth;
  throw ConfigError("config: method must be exact, vb or both");
}

inline const char* fit_method_name(FitMethod m) {
  switch (m) {
    case FitMethod::kExact: return "exact";
    case FitMethod::kVb: return "vb";
    default: return "both";
  }
}

inline std::vector<double> parse_quantile_list(const std::string& v) {
  std::vector<double> out;
  const std::string t = detail::trim(v);
  if (t.empty()) return out;
  for (const auto& tok : detail::split_csv_line(t))
    out.push_back(detail::parse_double_strict(tok, "quantiles"));
  return out;
}

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: " + key + " must be true/false");
}

// Applies one key; shared by the file parser and command-line overrides so
// both surfaces accept exactly the same vocabulary.
inline void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "method") cfg.method = parse_fit_method(value);
  else if (key == "dataset") cfg.dataset = value;
  else if (key == "nu2") cfg.nu2 = detail::parse_double_strict(value, "config nu2");
  else if (key == "sigma_source") cfg.sigma_source = value;
  else if (key == "n_samples") cfg.n_samples = static_cast<int>(detail::parse_int_strict(value, "config n_samples"));
  else if (key == "eps") cfg.eps = detail::parse_double_strict(value, "config eps");
  else if (key == "max_sweeps") cfg.max_sweeps = static_cast<int>(detail::parse_int_strict(value, "config max_sweeps"));
  else if (key == "moment_method") cfg.moment_method = value;
  else if (key == "cdf_tol") cfg.cdf_tol = detail::parse_double_strict(value, "config cdf_tol");
  else if (key == "seed") {
    cfg.seed = static_cast<std::uint64_t>(detail::parse_int_strict(value, "config seed"));
    cfg.seed_set = true;
  } else if (key == "quantiles") cfg.quantiles = parse_quantile_list(value);
  else if (key == "output_dir") cfg.output_dir = value;
  else if (key == "trunc_method") cfg.trunc_method = value;
  else if (key == "init") cfg.init = value;
  else if (key == "save_draws") cfg.save_draws = parse_bool(value, "save_draws");
  else if (key == "L") cfg.L_override = static_cast<int>(detail::parse_int_strict(value, "config L"));
  else throw ConfigError("config: unknown key '" + key + "'");
}

inline RunConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  RunConfig cfg;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto pos = t.find('=');
    if (pos == std::string::npos)
      throw ConfigError("config: line " + std::to_string(line_no) + " is not key = value");
    apply_config_entry(cfg, detail::trim(t.substr(0, pos)), detail::trim(t.substr(pos + 1)));
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// Draw matrices: CSV with header b_1..b_q, one draw per row.

inline void write_draws_csv(const std::string& path, const Eigen::MatrixXd& draws) {
  std::ofstream out(path);
  if (!out) throw IoError("write_draws_csv: cannot open " + path);
  for (int j = 0; j < draws.cols(); ++j) out << (j ? "," : "") << "b_" << (j + 1);
  out << "\n";
  for (long i = 0; i < draws.rows(); ++i) {
    for (int j = 0; j < draws.cols(); ++j)
      out << (j ? "," : "") << detail::fmt_double(draws(i, j));
    out << "\n";
  }
}

inline Eigen::MatrixXd read_draws_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("read_draws_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("read_draws_csv: " + path + " is empty");
  const auto header = detail::split_csv_line(detail::trim(line));
  const int q = static_cast<int>(header.size());
  if (q < 1 || detail::trim(header[0]) != "b_1")
    throw ParseError("read_draws_csv: bad header in " + path);
  std::vector<double> flat;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    const auto fields = detail::split_csv_line(t);
    if (static_cast<int>(fields.size()) != q)
      throw ParseError("read_draws_csv: line " + std::to_string(line_no) + " has " +
                       std::to_string(fields.size()) + " fields, expected " + std::to_string(q));
    for (const auto& f : fields)
      flat.push_back(detail::parse_double_strict(f, path + " line " + std::to_string(line_no)));
  }
  if (flat.empty()) throw ParseError("read_draws_csv: " + path + " has no draws");
  const long n = static_cast<long>(flat.size()) / q;
  Eigen::MatrixXd out(n, q);
  for (long i = 0; i < n; ++i)
    for (int j = 0; j < q; ++j) out(i, j) = flat[static_cast<std::size_t>(i) * q + j];
  return out;
}

// ---------------------------------------------------------------------------
// Result record and directory layout.

struct ResultRecord {
  RunConfig config;
  int n = 0, p = 0, L = 0;
  Eigen::MatrixXd sigma;
  std::optional<PosteriorSummary> exact_summary;
  std::optional<PosteriorSummary> vb_summary;
  std::optional<Eigen::MatrixXd> exact_draws;
  std::optional<Eigen::MatrixXd> vb_draws;
  std::optional<double> log_evidence;
  double evidence_error = 0.0;
  nlohmann::json diagnostics = nlohmann::json::object();
  std::vector<std::pair<std::string, double>> timings;
};

inline void write_summary_csv(const std::string& path, const PosteriorSummary& s) {
  std::ofstream out(path);
  if (!out) throw IoError("write_summary_csv: cannot open " + path);
  out << "coord,mean,sd";
  for (double l : s.quantile_levels) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", l);
    out << ",q_" << buf;
  }
  out << "\n";
  for (int j = 0; j < s.mean.size(); ++j) {
    out << "b_" << (j + 1) << "," << detail::fmt_double(s.mean[j]) << ","
        << detail::fmt_double(s.sd[j]);
    for (std::size_t k = 0; k < s.quantile_levels.size(); ++k)
      out << "," << detail::fmt_double(s.quantiles(j, static_cast<long>(k)));
    out << "\n";
  }
}

inline nlohmann::json config_to_json(const RunConfig& c) {
  return nlohmann::json{{"method", fit_method_name(c.method)},
                        {"dataset", c.dataset},
                        {"nu2", c.nu2},
                        {"sigma_source", c.sigma_source},
                        {"n_samples", c.n_samples},
                        {"eps", c.eps},
                        {"max_sweeps", c.max_sweeps},
                        {"moment_method", c.moment_method},
                        {"cdf_tol", c.cdf_tol},
                        {"seed", c.seed},
                        {"quantiles", c.quantiles},
                        {"output_dir", c.output_dir},
                        {"trunc_method", c.trunc_method},
                        {"init", c.init},
                        {"save_draws", c.save_draws},
                        {"L", c.L_override}};
}

inline nlohmann::json summary_to_json(const PosteriorSummary& s) {
  nlohmann::json j;
  j["method"] = s.method;
  j["n_draws"] = s.n_draws;
  j["mean"] = std::vector<double>(s.mean.data(), s.mean.data() + s.mean.size());
  j["sd"] = std::vector<double>(s.sd.data(), s.sd.data() + s.sd.size());
  return j;
}

inline std::vector<std::string> write_results(const ResultRecord& rec, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("write_results: cannot create directory " + dir);
  std::vector<std::string> written;

  auto emit = [&](const std::string& name) {
    written.push_back((fs::path(dir) / name).string());
    return written.back();
  };

  if (rec.exact_summary) write_summary_csv(emit("summary_exact.csv"), *rec.exact_summary);
  if (rec.vb_summary) write_summary_csv(emit("summary_vb.csv"), *rec.vb_summary);
  if (rec.exact_draws) write_draws_csv(emit("draws_exact.csv"), *rec.exact_draws);
  if (rec.vb_draws) write_draws_csv(emit("draws_vb.csv"), *rec.vb_draws);

  if (rec.exact_summary && rec.vb_summary) {
    const auto& ex = *rec.exact_summary;
    const auto& vb = *rec.vb_summary;
    std::ofstream cmp(emit("comparison.csv"));
    cmp << "coord,mean_exact,mean_vb,diff,se_exact,diff_in_se\n";
    for (int j = 0; j < ex.mean.size(); ++j) {
      const double se = ex.sd[j] / std::sqrt(static_cast<double>(ex.n_draws));
      const double diff = vb.mean[j] - ex.mean[j];
      cmp << "b_" << (j + 1) << "," << detail::fmt_double(ex.mean[j]) << ","
          << detail::fmt_double(vb.mean[j]) << "," << detail::fmt_double(diff) << ","
          << detail::fmt_double(se) << "," << detail::fmt_double(se > 0 ? diff / se : 0.0) << "\n";
    }
  }

  nlohmann::json j;
  j["artifact_version"] = kArtifactVersion;
  j["config"] = config_to_json(rec.config);
  j["data"] = {{"n", rec.n}, {"p", rec.p}, {"L", rec.L}};
  std::vector<std::vector<double>> sig(rec.sigma.rows());
  for (int i = 0; i < rec.sigma.rows(); ++i)
    sig[i].assign(rec.sigma.row(i).begin(), rec.sigma.row(i).end());
  j["sigma"] = sig;
  if (rec.log_evidence)
    j["evidence"] = {{"log", *rec.log_evidence}, {"error", rec.evidence_error}};
  else
    j["evidence"] = nullptr;
  if (rec.exact_summary) j["summary_exact"] = summary_to_json(*rec.exact_summary);
  if (rec.vb_summary) j["summary_vb"] = summary_to_json(*rec.vb_summary);
  j["diagnostics"] = rec.diagnostics;
  nlohmann::json t = nlohmann::json::object();
  for (const auto& [phase, sec] : rec.timings) t[phase] = sec;
  j["timings"] = t;

  std::ofstream out(emit("result.json"));
  if (!out) throw IoError("write_results: cannot open result.json");
  out << j.dump(2) << "\n";
  return written;
}

// ---------------------------------------------------------------------------
// CAVI state file: versioned flat text for resumable runs.

inline void save_pfm_state(const std::string& path, const PfmState& state, double eps,
                           std::uint64_t seed) {
  std::ofstream out(path);
  if (!out) throw IoError("save_pfm_state: cannot open " + path);
  out << "mnp-pfm-state v1\n";
  out << "n=" << state.m.size() << " block=" << (state.m.empty() ? 0 : state.m[0].size()) << "\n";
  out << "sweeps=" << state.sweep_count << " converged=" << (state.converged ? 1 : 0)
      << " last_delta=" << detail::fmt_double(state.last_delta) << "\n";
  out << "eps=" << detail::fmt_double(eps) << " seed=" << seed << "\n";
  for (std::size_t i = 0; i < state.m.size(); ++i) {
    out << "m " << (i + 1);
    for (int k = 0; k < state.m[i].size(); ++k) out << " " << detail::fmt_double(state.m[i][k]);
    out << "\n";
    if (!state.mu.empty()) {
      out << "mu " << (i + 1);
      for (int k = 0; k < state.mu[i].size(); ++k) out << " " << detail::fmt_double(state.mu[i][k]);
      out << "\n";
    }
  }
}

struct PfmStateFile {
  PfmState state;
  double eps = 0.0;
  std::uint64_t seed = 0;
};

inline PfmStateFile load_pfm_state(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_pfm_state: cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || detail::trim(line) != "mnp-pfm-state v1")
    throw ParseError("load_pfm_state: unrecognized version header");

  auto next_fields = [&](const char* what) {
    if (!std::getline(in, line)) throw ParseError(std::string("load_pfm_state: missing ") + what);
    return line;
  };
  PfmStateFile out;
  long n = 0, block = 0;
  {
    std::istringstream ss(next_fields("dimensions"));
    std::string a, b;
    ss >> a >> b;
    n = detail::parse_int_strict(a.substr(a.find('=') + 1), "state n");
    block = detail::parse_int_strict(b.substr(b.find('=') + 1), "state block");
  }
  {
    std::istringstream ss(next_fields("progress"));
    std::string a, b, c;
    ss >> a >> b >> c;
    out.state.sweep_count = static_cast<int>(detail::parse_int_strict(a.substr(a.find('=') + 1), "sweeps"));
    out.state.converged = detail::parse_int_strict(b.substr(b.find('=') + 1), "converged") != 0;
    out.state.last_delta = detail::parse_double_strict(c.substr(c.find('=') + 1), "last_delta");
  }
  {
    std::istringstream ss(next_fields("eps/seed"));
    std::string a, b;
    ss >> a >> b;
    out.eps = detail::parse_double_strict(a.substr(a.find('=') + 1), "eps");
    out.seed = static_cast<std::uint64_t>(detail::parse_int_strict(b.substr(b.find('=') + 1), "seed"));
  }
  out.state.m.assign(n, Eigen::VectorXd::Zero(block));
  out.state.mu.assign(n, Eigen::VectorXd::Zero(block));
  bool any_mu = false;
  while (std::getline(in, line)) {
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    std::istringstream ss(t);
    std::string tag;
    long idx = 0;
    ss >> tag >> idx;
    if ((tag != "m" && tag != "mu") || idx < 1 || idx > n)
      throw ParseError("load_pfm_state: bad vector line '" + t + "'");
    Eigen::VectorXd v(block);
    for (long k = 0; k < block; ++k) {
      std::string tok;
      if (!(ss >> tok)) throw ParseError("load_pfm_state: short vector line");
      v[k] = detail::parse_double_strict(tok, "state vector");
    }
    if (tag == "m") out.state.m[idx - 1] = v;
    else {
      out.state.mu[idx - 1] = v;
      any_mu = true;
    }
  }
  if (!any_mu) out.state.mu.clear();
  return out;
}

}  // namespace mnp
