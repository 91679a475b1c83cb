#include "tmlecvx/io.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

#include <openssl/evp.h>

#include "tmlecvx/errors.hpp"

namespace tmle::io {

namespace {

[[noreturn]] void csv_error(const std::string& path, std::size_t line,
                            std::size_t col, const std::string& what) {
  std::ostringstream os;
  os << path << ": line " << line << ", column " << col << ": " << what;
  throw UsageError(os.str());
}

std::vector<std::string> split_row(const std::string& s) {
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
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;  // all with header.size() cells
};

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError(path + ": cannot open file");
  CsvTable t;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1) {
      t.header = split_row(line);
      if (t.header.size() < 2) csv_error(path, 1, 1, "header row too short");
      continue;
    }
    if (line.empty()) continue;
    auto cells = split_row(line);
    if (cells.size() != t.header.size())
      csv_error(path, lineno, cells.size(),
                "expected " + std::to_string(t.header.size()) + " cells, got " +
                    std::to_string(cells.size()));
    t.rows.push_back(std::move(cells));
  }
  if (t.header.empty()) throw UsageError(path + ": empty file");
  return t;
}

double parse_num(const std::string& path, std::size_t line, std::size_t col,
                 const std::string& cell) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(cell, &pos);
    if (pos != cell.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    csv_error(path, line, col, "not a number: '" + cell + "'");
  }
}

// Validates the header prefix x1..xd (or w1..wd) followed by `tail` names;
// returns d.
Eigen::Index check_header(const std::string& path,
                          const std::vector<std::string>& header,
                          const std::string& stem,
                          const std::vector<std::string>& tail) {
  if (header.size() <= tail.size())
    csv_error(path, 1, 1, "header row too short");
  const Eigen::Index d = static_cast<Eigen::Index>(header.size() - tail.size());
  for (Eigen::Index j = 0; j < d; ++j) {
    const std::string want = stem + std::to_string(j + 1);
    if (header[j] != want)
      csv_error(path, 1, j + 1, "expected column '" + want + "', got '" +
                                    header[j] + "'");
  }
  for (std::size_t j = 0; j < tail.size(); ++j) {
    if (header[d + j] != tail[j])
      csv_error(path, 1, d + j + 1, "expected column '" + tail[j] + "', got '" +
                                        header[d + j] + "'");
  }
  return d;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

missing_mean::MissingDataset read_missing_csv(const std::string& path) {
  const CsvTable t = read_csv(path);
  const Eigen::Index d = check_header(path, t.header, "x", {"m", "y"});
  const Eigen::Index n = static_cast<Eigen::Index>(t.rows.size());
  if (n == 0) throw UsageError(path + ": no data rows");
  missing_mean::MissingDataset out;
  out.x.resize(n, d);
  out.m.resize(n);
  out.y = Vec::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = t.rows[i];
    const std::size_t lineno = i + 2;
    for (Eigen::Index j = 0; j < d; ++j)
      out.x(i, j) = parse_num(path, lineno, j + 1, row[j]);
    const double m = parse_num(path, lineno, d + 1, row[d]);
    if (m != 0.0 && m != 1.0)
      csv_error(path, lineno, d + 1, "m must be 0 or 1");
    out.m[i] = static_cast<int>(m);
    const std::string& ycell = row[d + 1];
    if (out.m[i] == 1) {
      if (ycell.empty()) csv_error(path, lineno, d + 2, "y missing while m=1");
      out.y[i] = parse_num(path, lineno, d + 2, ycell);
    } else if (!ycell.empty()) {
      csv_error(path, lineno, d + 2, "y must be empty when m=0");
    }
  }
  out.validate();
  return out;
}

median_reg::XYDataset read_median_csv(const std::string& path) {
  const CsvTable t = read_csv(path);
  const Eigen::Index d = check_header(path, t.header, "x", {"y"});
  const Eigen::Index n = static_cast<Eigen::Index>(t.rows.size());
  if (n == 0) throw UsageError(path + ": no data rows");
  median_reg::XYDataset out;
  out.x.resize(n, d);
  out.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::size_t lineno = i + 2;
    for (Eigen::Index j = 0; j < d; ++j)
      out.x(i, j) = parse_num(path, lineno, j + 1, t.rows[i][j]);
    out.y[i] = parse_num(path, lineno, d + 1, t.rows[i][d]);
  }
  out.validate();
  return out;
}

shift_effect::ShiftDataset read_shift_csv(const std::string& path,
                                          double gamma, double a_min,
                                          double a_max) {
  const CsvTable t = read_csv(path);
  const Eigen::Index d = check_header(path, t.header, "w", {"a", "y"});
  const Eigen::Index n = static_cast<Eigen::Index>(t.rows.size());
  if (n == 0) throw UsageError(path + ": no data rows");
  shift_effect::ShiftDataset out;
  out.w.resize(n, d);
  out.a.resize(n);
  out.y.resize(n);
  out.gamma = gamma;
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::size_t lineno = i + 2;
    for (Eigen::Index j = 0; j < d; ++j)
      out.w(i, j) = parse_num(path, lineno, j + 1, t.rows[i][j]);
    out.a[i] = parse_num(path, lineno, d + 1, t.rows[i][d]);
    out.y[i] = parse_num(path, lineno, d + 2, t.rows[i][d + 1]);
  }
  out.a_min = std::isfinite(a_min) ? a_min : out.a.minCoeff();
  out.a_max = std::isfinite(a_max) ? a_max : out.a.maxCoeff();
  out.validate();
  return out;
}

void write_missing_csv(const std::string& path,
                       const missing_mean::MissingDataset& d) {
  std::ofstream out(path);
  if (!out) throw UsageError(path + ": cannot open for writing");
  for (Eigen::Index j = 0; j < d.x.cols(); ++j) out << "x" << (j + 1) << ",";
  out << "m,y\n";
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    for (Eigen::Index j = 0; j < d.x.cols(); ++j) out << fmt(d.x(i, j)) << ",";
    out << d.m[i] << ",";
    if (d.m[i] == 1) out << fmt(d.y[i]);
    out << "\n";
  }
}

void write_median_csv(const std::string& path,
                      const median_reg::XYDataset& d) {
  std::ofstream out(path);
  if (!out) throw UsageError(path + ": cannot open for writing");
  for (Eigen::Index j = 0; j < d.x.cols(); ++j) out << "x" << (j + 1) << ",";
  out << "y\n";
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    for (Eigen::Index j = 0; j < d.x.cols(); ++j) out << fmt(d.x(i, j)) << ",";
    out << fmt(d.y[i]) << "\n";
  }
}

void write_shift_csv(const std::string& path,
                     const shift_effect::ShiftDataset& d) {
  std::ofstream out(path);
  if (!out) throw UsageError(path + ": cannot open for writing");
  for (Eigen::Index j = 0; j < d.w.cols(); ++j) out << "w" << (j + 1) << ",";
  out << "a,y\n";
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    for (Eigen::Index j = 0; j < d.w.cols(); ++j) out << fmt(d.w(i, j)) << ",";
    out << fmt(d.a[i]) << "," << fmt(d.y[i]) << "\n";
  }
}

namespace {

json vec_to_json(const Vec& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

const char* stop_reason_name(StopReason r) {
  switch (r) {
    case StopReason::epsilon_small: return "epsilon_small";
    case StopReason::max_iter: return "max_iter";
    case StopReason::stalled: return "stalled";
  }
  return "unknown";
}

}  // namespace

json report_to_json(const EstimateReport& rep) {
  json j;
  j["psi_hat"] = vec_to_json(rep.psi_hat);
  j["ci_lower"] = vec_to_json(rep.ci_lower);
  j["ci_upper"] = vec_to_json(rep.ci_upper);
  json var = json::array();
  for (Eigen::Index i = 0; i < rep.variance_hat.rows(); ++i)
    var.push_back(vec_to_json(rep.variance_hat.row(i).transpose()));
  j["variance_hat"] = var;
  json trace;
  trace["converged"] = rep.trace.converged;
  trace["stop_reason"] = stop_reason_name(rep.trace.stop_reason);
  trace["n_iter"] = rep.trace.n_iter();
  json iters = json::array();
  for (const auto& it : rep.trace.iterations) {
    iters.push_back({{"epsilon_hat", vec_to_json(it.epsilon_hat)},
                     {"loglik", it.loglik},
                     {"mean_eif", vec_to_json(it.mean_eif)}});
  }
  trace["iterations"] = iters;
  j["trace"] = trace;
  return j;
}

json oracle_to_json(const simulate::OracleResult& res) {
  return json{{"value", vec_to_json(res.value)}, {"se", vec_to_json(res.se)}};
}

json study_to_json(const simulate::StudyResult& res) {
  json j;
  j["true_value"] = vec_to_json(res.true_value_used);
  if (std::isfinite(res.bound_used)) j["efficiency_bound"] = res.bound_used;
  j["n"] = res.config.n;
  j["replicates"] = res.config.replicates;
  j["seed"] = res.config.seed;
  j["wall_seconds"] = res.wall_seconds;
  json est = json::array();
  for (const auto& e : res.estimators) {
    json je;
    je["label"] = e.label;
    je["failures"] = e.failures;
    je["cell_unreliable"] = e.cell_unreliable;
    if (e.cell_unreliable)
      je["warning"] = "CellUnreliableWarning: more than 5% of replicates failed";
    je["mean_iterations"] = e.mean_iterations;
    if (e.mean.size() > 0) {
      je["mean"] = vec_to_json(e.mean);
      je["bias"] = vec_to_json(e.bias);
      je["percent_bias"] = vec_to_json(e.percent_bias);
      je["mse"] = vec_to_json(e.mse);
      je["sqrt_mse"] = vec_to_json(e.sqrt_mse);
      je["se_mean"] = vec_to_json(e.se_mean);
      je["se_percent_bias"] = vec_to_json(e.se_percent_bias);
    }
    if (std::isfinite(e.relative_efficiency)) {
      je["relative_efficiency"] = e.relative_efficiency;
      je["se_relative_efficiency"] = e.se_relative_efficiency;
    }
    json fails = json::array();
    for (const auto& msg : e.failure_messages) fails.push_back(msg);
    je["failure_messages"] = fails;
    est.push_back(je);
  }
  j["estimators"] = est;
  return j;
}

std::string study_to_csv(const simulate::StudyResult& res) {
  std::ostringstream os;
  os << "label,coordinate,mean,bias,percent_bias,mse,sqrt_mse,"
        "relative_efficiency,mean_iterations,failures,cell_unreliable\n";
  for (const auto& e : res.estimators) {
    const Eigen::Index dim = e.mean.size();
    if (dim == 0) {
      os << e.label << ",1,,,,,,," << e.mean_iterations << "," << e.failures
         << "," << (e.cell_unreliable ? 1 : 0) << "\n";
      continue;
    }
    for (Eigen::Index c = 0; c < dim; ++c) {
      os << e.label << "," << (c + 1) << "," << fmt(e.mean[c]) << ","
         << fmt(e.bias[c]) << "," << fmt(e.percent_bias[c]) << ","
         << fmt(e.mse[c]) << "," << fmt(e.sqrt_mse[c]) << ",";
      if (c == 0 && std::isfinite(e.relative_efficiency))
        os << fmt(e.relative_efficiency);
      os << "," << e.mean_iterations << "," << e.failures << ","
         << (e.cell_unreliable ? 1 : 0) << "\n";
    }
  }
  return os.str();
}

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError(path + ": cannot open for digest");
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream os;
  os << std::hex << std::setfill('0');
  for (unsigned int i = 0; i < len; ++i) os << std::setw(2) << int(md[i]);
  return os.str();
}

void RunManifest::add_output(const std::string& path) {
  outputs.emplace_back(path, sha256_file(path));
}

void RunManifest::write(const std::string& path) const {
  json j;
  j["command"] = command;
  j["config"] = config;
  if (seed_set) j["seed"] = seed;
  j["version"] = version;
  j["wall_seconds"] = wall_seconds;
  json outs = json::array();
  for (const auto& [p, digest] : outputs)
    outs.push_back({{"path", p}, {"sha256", digest}});
  j["outputs"] = outs;
  std::ofstream out(path);
  if (!out) throw UsageError(path + ": cannot open for writing");
  out << j.dump(2) << "\n";
}

}  // namespace tmle::io
