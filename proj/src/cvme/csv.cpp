#include "cvme/csv.hpp"

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "cvme/errors.hpp"

namespace cvme {

std::string format_double(double value) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc{}) throw IoError("failed to format a floating point value");
  return std::string(buf, ptr);
}

double parse_double(const std::string& text, const std::string& context) {
  double v = 0.0;
  const char* first = text.data();
  const char* last = first + text.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last)
    throw ParseError(context + ": not a number: '" + text + "'");
  return v;
}

long long parse_integer(const std::string& text, const std::string& context) {
  long long v = 0;
  const char* first = text.data();
  const char* last = first + text.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last)
    throw ParseError(context + ": not an integer: '" + text + "'");
  return v;
}

void write_text_atomic(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  fs::path target(path);
  fs::path dir = target.parent_path();
  fs::path tmp = (dir.empty() ? fs::path(".") : dir) /
                 (target.filename().string() + ".tmp." + std::to_string(::getpid()));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp);
    throw IoError("rename failed for " + target.string() + ": " + ec.message());
  }
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
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

int parse_binary(const std::string& text, const std::string& context) {
  if (text == "0") return 0;
  if (text == "1") return 1;
  throw ParseError(context + ": must be 0 or 1, got '" + text + "'");
}

}  // namespace

LoadedDataset read_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty file: " + path);
  auto header = split_csv_line(line);
  const std::vector<std::string> lead = {"y", "a_star", "s", "a"};
  if (header.size() < 5)
    throw ParseError("header must contain y,a_star,s,a and at least one covariate column");
  for (std::size_t i = 0; i < lead.size(); ++i)
    if (header[i] != lead[i])
      throw ParseError("header column " + std::to_string(i + 1) + " must be '" + lead[i] +
                       "', got '" + header[i] + "'");

  // Covariates run until the first reserved optional column name.
  const std::vector<std::string> reserved = {"kappa", "a_full", "y0", "y1", "kappa_true"};
  auto is_reserved = [&](const std::string& name) {
    for (const auto& r : reserved)
      if (r == name) return true;
    return false;
  };
  std::size_t col = 4;
  std::vector<std::string> x_names;
  while (col < header.size() && !is_reserved(header[col])) x_names.push_back(header[col++]);
  if (x_names.empty()) throw ParseError("no covariate columns between 'a' and optional columns");

  bool has_kappa = false;
  bool has_oracle = false;
  if (col < header.size() && header[col] == "kappa") {
    has_kappa = true;
    ++col;
  }
  if (col < header.size()) {
    const std::vector<std::string> tail = {"a_full", "y0", "y1", "kappa_true"};
    if (header.size() - col != tail.size())
      throw ParseError("unexpected trailing columns in header");
    for (std::size_t i = 0; i < tail.size(); ++i)
      if (header[col + i] != tail[i])
        throw ParseError("optional columns must be kappa,a_full,y0,y1,kappa_true in order; got '" +
                         header[col + i] + "'");
    has_oracle = true;
  }
  const std::size_t expected = header.size();

  std::vector<std::vector<std::string>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != expected)
      throw ParseError("line " + std::to_string(lineno) + ": expected " +
                       std::to_string(expected) + " fields, got " + std::to_string(fields.size()));
    rows.push_back(std::move(fields));
  }
  const auto n = static_cast<Eigen::Index>(rows.size());
  if (n < 1) throw ParseError("dataset has no rows");

  LoadedDataset out;
  out.has_oracle = has_oracle;
  TwoPhaseDataset& d = out.sample.data;
  d.y.resize(n);
  d.a_star.resize(n);
  d.s.resize(n);
  d.a.resize(n);
  d.x.resize(n, static_cast<Eigen::Index>(x_names.size()));
  d.x_names = x_names;
  if (has_kappa) d.kappa = VectorXd(n);
  if (has_oracle) {
    out.sample.a_full.resize(n);
    out.sample.y0.resize(n);
    out.sample.y1.resize(n);
    out.sample.kappa_true.resize(n);
  }

  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& f = rows[static_cast<std::size_t>(i)];
    const std::string ctx = "line " + std::to_string(i + 2);
    d.y[i] = parse_double(f[0], ctx + " (y)");
    d.a_star[i] = parse_binary(f[1], ctx + " (a_star)");
    d.s[i] = parse_binary(f[2], ctx + " (s)");
    if (d.s[i] == 1) {
      d.a[i] = parse_binary(f[3], ctx + " (a)");
    } else {
      if (!f[3].empty())
        throw ParseError(ctx + " (a): must be empty where s = 0, got '" + f[3] + "'");
      d.a[i] = -1;
    }
    std::size_t c = 4;
    for (Eigen::Index j = 0; j < d.x.cols(); ++j)
      d.x(i, j) = parse_double(f[c++], ctx + " (" + x_names[static_cast<std::size_t>(j)] + ")");
    if (has_kappa) {
      double k = parse_double(f[c++], ctx + " (kappa)");
      if (!(k > 0.0 && k <= 1.0)) throw ParseError(ctx + " (kappa): must lie in (0, 1]");
      (*d.kappa)[i] = k;
    }
    if (has_oracle) {
      out.sample.a_full[i] = parse_binary(f[c++], ctx + " (a_full)");
      out.sample.y0[i] = parse_double(f[c++], ctx + " (y0)");
      out.sample.y1[i] = parse_double(f[c++], ctx + " (y1)");
      out.sample.kappa_true[i] = parse_double(f[c++], ctx + " (kappa_true)");
    }
  }
  d.validate();
  return out;
}

std::string dataset_to_csv(const GeneratedSample& sample, bool include_oracle) {
  const TwoPhaseDataset& d = sample.data;
  if (include_oracle && sample.a_full.size() != d.n())
    throw IoError("generator columns requested but not present");
  std::string out = "y,a_star,s,a";
  for (const auto& name : d.x_names) out += "," + name;
  if (d.kappa) out += ",kappa";
  if (include_oracle) out += ",a_full,y0,y1,kappa_true";
  out += "\n";
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    out += format_double(d.y[i]);
    out += ",";
    out += std::to_string(d.a_star[i]);
    out += ",";
    out += std::to_string(d.s[i]);
    out += ",";
    if (d.s[i] == 1) out += std::to_string(d.a[i]);
    for (Eigen::Index j = 0; j < d.x.cols(); ++j) {
      out += ",";
      out += format_double(d.x(i, j));
    }
    if (d.kappa) {
      out += ",";
      out += format_double((*d.kappa)[i]);
    }
    if (include_oracle) {
      out += "," + std::to_string(sample.a_full[i]);
      out += "," + format_double(sample.y0[i]);
      out += "," + format_double(sample.y1[i]);
      out += "," + format_double(sample.kappa_true[i]);
    }
    out += "\n";
  }
  return out;
}

void write_dataset_csv(const GeneratedSample& sample, const std::string& path,
                       bool include_oracle) {
  write_text_atomic(path, dataset_to_csv(sample, include_oracle));
}

std::string results_to_csv(const std::vector<ResultRecord>& records) {
  std::string out = "estimator,estimate,se,ci_low,ci_high,diagnostics\n";
  for (const auto& r : records) {
    out += r.tag + "," + format_double(r.estimate) + "," + format_double(r.se) + "," +
           format_double(r.ci_low) + "," + format_double(r.ci_high) + ",";
    bool first = true;
    for (const auto& [k, v] : r.diagnostics) {
      if (!first) out += ";";
      out += k + "=" + format_double(v);
      first = false;
    }
    out += "\n";
  }
  return out;
}

std::string metrics_to_csv(const std::vector<MetricsRow>& rows) {
  std::string out =
      "sampling_mode,n,sensitivity,rho,estimator,replicates,failures,flagged,"
      "mean_estimate,percent_bias,coverage,rmse,mean_se,var_estimates,relative_efficiency,"
      "mc_se_percent_bias,mc_se_coverage,mc_se_rmse,mean_control_variate\n";
  for (const auto& r : rows) {
    out += std::string(sampling_mode_name(r.mode)) + "," + std::to_string(r.n) + "," +
           format_double(r.sensitivity) + "," + format_double(r.rho) + "," + r.estimator + "," +
           std::to_string(r.replicate_count) + "," + std::to_string(r.failures) + "," +
           (r.flagged ? "1" : "0") + "," + format_double(r.mean_estimate) + "," +
           format_double(r.percent_bias) + "," + format_double(r.coverage) + "," +
           format_double(r.rmse) + "," + format_double(r.mean_se) + "," +
           format_double(r.var_estimates) + "," + format_double(r.relative_efficiency) + "," +
           format_double(r.mc_se_percent_bias) + "," + format_double(r.mc_se_coverage) + "," +
           format_double(r.mc_se_rmse) + "," + format_double(r.mean_control_variate) + "\n";
  }
  return out;
}

}  // namespace cvme
