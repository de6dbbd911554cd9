#include "missbgm/data.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "missbgm/rng.hpp"
#include "missbgm/text_io.hpp"

namespace missbgm {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path);
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open for reading: " + path);
  return in;
}

}  // namespace

void Dataset::validate() const {
  if (x_obs.rows() != mask.rows() || x_obs.cols() != mask.cols()) {
    throw DataError("dataset: x_obs and mask shapes differ");
  }
  if (x_obs.rows() == 0 || x_obs.cols() == 0) {
    throw DataError("dataset: empty");
  }
  for (Eigen::Index i = 0; i < x_obs.rows(); ++i) {
    for (Eigen::Index j = 0; j < x_obs.cols(); ++j) {
      const bool observed = mask(i, j) == 1;
      if (observed == std::isnan(x_obs(i, j))) {
        throw DataError("dataset: mask and missing markers disagree at (" +
                        std::to_string(i) + "," + std::to_string(j) + ")");
      }
    }
  }
  for (Eigen::Index i = 0; i < mask.rows(); ++i) {
    if (mask.row(i).sum() == 0) {
      throw DataError("dataset: row " + std::to_string(i) +
                      " has no observed entry");
    }
  }
  for (Eigen::Index j = 0; j < mask.cols(); ++j) {
    if (mask.col(j).sum() == 0) {
      throw DataError("dataset: column " + std::to_string(j) +
                      " has no observed entry");
    }
  }
}

std::pair<Dataset, OracleParams> simulate_oracle(int n, int p, double rate,
                                                 std::uint64_t seed) {
  constexpr int kAnchors = 5;
  if (n <= 0 || p <= kAnchors) {
    throw DataError("simulate_oracle: need n > 0 and p > 5");
  }
  if (!(rate > 0.0 && rate < 1.0)) {
    throw DataError("simulate_oracle: rate must be in (0, 1)");
  }
  const int pt = p - kAnchors;

  OracleParams op;
  op.p_anchor = kAnchors;
  op.rate = rate;
  op.seed = seed;
  op.kappa = normal_quantile(1.0 - rate);

  Rng param_rng = Rng::substream(seed, "oracle_params");
  op.B.resize(kAnchors, pt);
  for (Eigen::Index j = 0; j < pt; ++j) {
    for (Eigen::Index i = 0; i < kAnchors; ++i) {
      op.B(i, j) = 0.4 * param_rng.normal();
    }
  }
  op.b.resize(pt);
  for (Eigen::Index j = 0; j < pt; ++j) op.b(j) = 0.3 * param_rng.normal();
  op.sigma.resize(pt);
  for (Eigen::Index j = 0; j < pt; ++j) {
    op.sigma(j) = 0.6 + 0.6 * param_rng.uniform();
  }

  Rng data_rng = Rng::substream(seed, "oracle_data");
  Dataset ds;
  Matrix full(n, p);
  ds.mask = Eigen::MatrixXi::Ones(n, p);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < kAnchors; ++k) full(i, k) = data_rng.normal();
    for (int l = 0; l < pt; ++l) {
      const double mu = full.row(i).head(kAnchors) * op.B.col(l) + op.b(l);
      const double e = data_rng.normal();
      full(i, kAnchors + l) = mu + op.sigma(l) * e;
      // Entries in the upper tail of their own conditional law are missing.
      if (e > op.kappa) ds.mask(i, kAnchors + l) = 0;
    }
  }
  ds.x_full = full;
  ds.x_obs = full;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j) {
      if (ds.mask(i, j) == 0) ds.x_obs(i, j) = kNaN;
    }
  }
  return {std::move(ds), std::move(op)};
}

OracleEntry oracle_entry(double mu, double sigma, double kappa, double alpha) {
  const double phi_k = normal_cdf(kappa);
  const double p_lo = phi_k + 0.5 * alpha * (1.0 - phi_k);
  const double p_hi = phi_k + (1.0 - 0.5 * alpha) * (1.0 - phi_k);
  OracleEntry e;
  e.lower = mu + sigma * normal_quantile(p_lo);
  e.upper = mu + sigma * normal_quantile(p_hi);
  e.width = e.upper - e.lower;
  e.mean = mu + sigma * upper_truncated_normal_mean(kappa);
  e.sd = sigma * std::sqrt(upper_truncated_normal_var(kappa));
  return e;
}

OracleConditional oracle_conditional(const Matrix& anchors,
                                     const OracleParams& params, double alpha) {
  if (anchors.cols() != params.p_anchor) {
    throw DataError("oracle_conditional: anchor width mismatch");
  }
  const Eigen::Index n = anchors.rows();
  const int pt = params.p_target();
  OracleConditional out;
  out.mean.resize(n, pt);
  out.sd.resize(n, pt);
  out.lower.resize(n, pt);
  out.upper.resize(n, pt);
  out.width.resize(n, pt);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int l = 0; l < pt; ++l) {
      const double mu = anchors.row(i) * params.B.col(l) + params.b(l);
      const OracleEntry e =
          oracle_entry(mu, params.sigma(l), params.kappa, alpha);
      out.mean(i, l) = e.mean;
      out.sd(i, l) = e.sd;
      out.lower(i, l) = e.lower;
      out.upper(i, l) = e.upper;
      out.width(i, l) = e.width;
    }
  }
  return out;
}

std::pair<Dataset, MaskSpec> inject_mnar_mask(const Matrix& x_full,
                                              double target_rate,
                                              std::uint64_t seed) {
  if (!(target_rate > 0.0 && target_rate < 1.0)) {
    throw DataError("inject_mnar_mask: target_rate must be in (0, 1)");
  }
  if (!x_full.allFinite()) {
    throw DataError("inject_mnar_mask: x_full must be complete");
  }
  const Eigen::Index n = x_full.rows();
  const Eigen::Index p = x_full.cols();

  MaskSpec spec;
  spec.target_rate = target_rate;
  Rng w_rng = Rng::substream(seed, "mnar_coupling");
  const double w_sd = 0.3 / std::sqrt(static_cast<double>(p));
  spec.W.resize(p, p);
  for (Eigen::Index j = 0; j < p; ++j) {
    for (Eigen::Index i = 0; i < p; ++i) {
      spec.W(i, j) = w_sd * w_rng.normal();
    }
  }

  // Self-masking score: the entry's own value plus a nonlinear summary of
  // the whole row. Larger scores make the entry more likely to be missing,
  // so P(observed) = sigmoid(beta0 - s).
  const Matrix scores = 0.6 * x_full + 0.4 * (x_full * spec.W).array().tanh().matrix();

  // Calibrate the intercept so the mean observation probability matches.
  const double target_obs = 1.0 - target_rate;
  auto mean_prob = [&](double beta0) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) {
      for (Eigen::Index i = 0; i < n; ++i) {
        s += stable_sigmoid(beta0 - scores(i, j));
      }
    }
    return s / static_cast<double>(n * p);
  };
  double lo = -40.0, hi = 40.0;
  for (int iter = 0; iter < 200; ++iter) {
    const double mid = 0.5 * (lo + hi);
    const double pm = mean_prob(mid);
    if (pm < target_obs) {
      lo = mid;
    } else {
      hi = mid;
    }
    if (hi - lo < 1e-13 || std::abs(pm - target_obs) < 1e-6) {
      lo = hi = mid;
      break;
    }
  }
  spec.beta0 = 0.5 * (lo + hi);

  Matrix prob(n, p);
  for (Eigen::Index j = 0; j < p; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) {
      prob(i, j) = stable_sigmoid(spec.beta0 - scores(i, j));
    }
  }

  Rng draw_rng = Rng::substream(seed, "mnar_draw");
  Eigen::MatrixXi mask(n, p);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) {
      mask(i, j) = draw_rng.uniform() < prob(i, j) ? 1 : 0;
    }
  }

  // Repair pass: no empty rows, then no empty columns (flips only add
  // observations, so the column pass cannot re-empty a row).
  for (Eigen::Index i = 0; i < n; ++i) {
    if (mask.row(i).sum() > 0) continue;
    Eigen::Index best = 0;
    prob.row(i).maxCoeff(&best);
    mask(i, best) = 1;
  }
  for (Eigen::Index j = 0; j < p; ++j) {
    if (mask.col(j).sum() > 0) continue;
    Eigen::Index best = 0;
    prob.col(j).maxCoeff(&best);
    mask(best, j) = 1;
  }

  Dataset ds;
  ds.mask = mask;
  ds.x_full = x_full;
  ds.x_obs = x_full;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) {
      if (mask(i, j) == 0) ds.x_obs(i, j) = kNaN;
    }
  }
  return {std::move(ds), std::move(spec)};
}

Scaler fit_scaler(const Matrix& x_obs) {
  const Eigen::Index p = x_obs.cols();
  Scaler s;
  s.mean.resize(p);
  s.std.resize(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    double sum = 0.0;
    long count = 0;
    for (Eigen::Index i = 0; i < x_obs.rows(); ++i) {
      if (!std::isnan(x_obs(i, j))) {
        sum += x_obs(i, j);
        ++count;
      }
    }
    if (count == 0) {
      throw DataError("fit_scaler: column " + std::to_string(j) +
                      " has no observed entry");
    }
    const double mean = sum / count;
    double ss = 0.0;
    for (Eigen::Index i = 0; i < x_obs.rows(); ++i) {
      if (!std::isnan(x_obs(i, j))) {
        const double d = x_obs(i, j) - mean;
        ss += d * d;
      }
    }
    const double sd = std::sqrt(ss / count);
    if (!(sd > 0.0)) {
      throw DataError("fit_scaler: column " + std::to_string(j) +
                      " is constant");
    }
    s.mean(j) = mean;
    s.std(j) = sd;
  }
  return s;
}

Matrix apply_scaler(const Matrix& x, const Scaler& s) {
  if (s.identity()) return x;
  Matrix out = x;
  out.rowwise() -= s.mean;
  out.array().rowwise() /= s.std.array();
  return out;
}

Matrix invert_scaler(const Matrix& x, const Scaler& s) {
  if (s.identity()) return x;
  Matrix out = x;
  out.array().rowwise() *= s.std.array();
  out.rowwise() += s.mean;
  return out;
}

namespace {

Matrix load_csv_impl(const std::string& path, bool header) {
  std::ifstream in = open_in(path);
  std::vector<std::vector<double>> rows;
  std::string line;
  long lineno = 0;
  long blank_at = -1;
  Eigen::Index width = -1;
  while (std::getline(in, line)) {
    ++lineno;
    if (header && lineno == 1) continue;
    const std::string_view sv = trim(line);
    if (sv.empty()) {
      if (!rows.empty() && blank_at < 0) blank_at = lineno;
      continue;
    }
    if (blank_at >= 0) {
      throw DataError(path + ": blank line " + std::to_string(blank_at) +
                      " inside the table");
    }
    const auto fields = split(sv, ',');
    std::vector<double> row;
    row.reserve(fields.size());
    for (std::size_t j = 0; j < fields.size(); ++j) {
      const std::string_view cell = trim(fields[j]);
      if (cell.empty()) {
        row.push_back(kNaN);
        continue;
      }
      double v;
      if (!parse_double(cell, v)) {
        throw DataError(path + ": non-numeric cell at row " +
                        std::to_string(lineno) + ", column " +
                        std::to_string(j + 1));
      }
      row.push_back(v);
    }
    if (width < 0) {
      width = static_cast<Eigen::Index>(row.size());
    } else if (static_cast<Eigen::Index>(row.size()) != width) {
      throw DataError(path + ": ragged row " + std::to_string(lineno) +
                      " (expected " + std::to_string(width) + " fields, got " +
                      std::to_string(row.size()) + ")");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DataError(path + ": empty table");
  Matrix m(static_cast<Eigen::Index>(rows.size()), width);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < width; ++j) m(i, j) = rows[i][j];
  }
  return m;
}

}  // namespace

Matrix load_matrix_csv(const std::string& path, bool header) {
  return load_csv_impl(path, header);
}

void save_matrix_csv(const Matrix& m, const std::string& path, bool header) {
  std::ofstream out = open_out(path);
  if (header) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j > 0) out << ',';
      out << 'c' << j;
    }
    out << '\n';
  }
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j > 0) out << ',';
      if (!std::isnan(m(i, j))) out << format_double(m(i, j));
    }
    out << '\n';
  }
}

Eigen::MatrixXi load_mask_csv(const std::string& path, bool header) {
  const Matrix m = load_csv_impl(path, header);
  Eigen::MatrixXi mask(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (m(i, j) != 0.0 && m(i, j) != 1.0) {
        throw DataError(path + ": mask cell at row " + std::to_string(i + 1) +
                        ", column " + std::to_string(j + 1) +
                        " is not 0 or 1");
      }
      mask(i, j) = static_cast<int>(m(i, j));
    }
  }
  return mask;
}

void save_mask_csv(const Eigen::MatrixXi& mask, const std::string& path) {
  std::ofstream out = open_out(path);
  for (Eigen::Index i = 0; i < mask.rows(); ++i) {
    for (Eigen::Index j = 0; j < mask.cols(); ++j) {
      if (j > 0) out << ',';
      out << mask(i, j);
    }
    out << '\n';
  }
}

Dataset dataset_from_csv(const std::string& x_obs_path,
                         const std::string& mask_path, bool header) {
  Dataset ds;
  ds.x_obs = load_matrix_csv(x_obs_path, header);
  if (mask_path.empty()) {
    ds.mask.resize(ds.x_obs.rows(), ds.x_obs.cols());
    for (Eigen::Index i = 0; i < ds.x_obs.rows(); ++i) {
      for (Eigen::Index j = 0; j < ds.x_obs.cols(); ++j) {
        ds.mask(i, j) = std::isnan(ds.x_obs(i, j)) ? 0 : 1;
      }
    }
    return ds;
  }
  ds.mask = load_mask_csv(mask_path, header);
  if (ds.mask.rows() != ds.x_obs.rows() || ds.mask.cols() != ds.x_obs.cols()) {
    throw DataError("mask shape does not match x_obs");
  }
  // The explicit mask takes precedence: masked-out values are dropped,
  // but an entry the mask claims observed must actually carry a value.
  for (Eigen::Index i = 0; i < ds.x_obs.rows(); ++i) {
    for (Eigen::Index j = 0; j < ds.x_obs.cols(); ++j) {
      if (ds.mask(i, j) == 0) {
        ds.x_obs(i, j) = kNaN;
      } else if (std::isnan(ds.x_obs(i, j))) {
        throw DataError("mask marks (" + std::to_string(i) + "," +
                        std::to_string(j) + ") observed but x_obs is missing");
      }
    }
  }
  return ds;
}

void save_oracle_params(const OracleParams& params, const std::string& path) {
  std::ofstream out = open_out(path);
  out << "missbgm-oracle v1\n";
  out << "seed " << params.seed << '\n';
  out << "rate " << format_double(params.rate) << '\n';
  out << "kappa " << format_double(params.kappa) << '\n';
  out << "p_anchor " << params.p_anchor << '\n';
  out << "p_target " << params.p_target() << '\n';
  out << "B\n";
  for (Eigen::Index i = 0; i < params.B.rows(); ++i) {
    for (Eigen::Index j = 0; j < params.B.cols(); ++j) {
      if (j > 0) out << ' ';
      out << format_double(params.B(i, j));
    }
    out << '\n';
  }
  out << "b\n";
  for (Eigen::Index j = 0; j < params.b.size(); ++j) {
    if (j > 0) out << ' ';
    out << format_double(params.b(j));
  }
  out << "\nsigma\n";
  for (Eigen::Index j = 0; j < params.sigma.size(); ++j) {
    if (j > 0) out << ' ';
    out << format_double(params.sigma(j));
  }
  out << '\n';
}

namespace {

std::vector<double> parse_row(const std::string& line, const std::string& path) {
  std::vector<double> out;
  for (std::string_view cell : split(trim(line), ' ')) {
    if (cell.empty()) continue;
    double v;
    if (!parse_double(cell, v)) {
      throw DataError(path + ": bad numeric field '" + std::string(cell) + "'");
    }
    out.push_back(v);
  }
  return out;
}

}  // namespace

OracleParams load_oracle_params(const std::string& path) {
  std::ifstream in = open_in(path);
  std::string line;
  std::getline(in, line);
  if (trim(line) != "missbgm-oracle v1") {
    throw DataError(path + ": not an oracle params file");
  }
  OracleParams op;
  int p_target = 0;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    if (key == "seed") {
      ss >> op.seed;
    } else if (key == "rate") {
      ss >> op.rate;
    } else if (key == "kappa") {
      ss >> op.kappa;
    } else if (key == "p_anchor") {
      ss >> op.p_anchor;
    } else if (key == "p_target") {
      ss >> p_target;
    } else if (key == "B") {
      op.B.resize(op.p_anchor, p_target);
      for (int i = 0; i < op.p_anchor; ++i) {
        if (!std::getline(in, line)) throw DataError(path + ": truncated B");
        const auto row = parse_row(line, path);
        if (static_cast<int>(row.size()) != p_target) {
          throw DataError(path + ": bad B row width");
        }
        for (int j = 0; j < p_target; ++j) op.B(i, j) = row[j];
      }
    } else if (key == "b") {
      if (!std::getline(in, line)) throw DataError(path + ": truncated b");
      const auto row = parse_row(line, path);
      op.b = Eigen::Map<const Eigen::RowVectorXd>(row.data(), row.size());
    } else if (key == "sigma") {
      if (!std::getline(in, line)) throw DataError(path + ": truncated sigma");
      const auto row = parse_row(line, path);
      op.sigma = Eigen::Map<const Eigen::RowVectorXd>(row.data(), row.size());
    }
  }
  if (op.B.size() == 0 || op.b.size() == 0 || op.sigma.size() == 0) {
    throw DataError(path + ": incomplete oracle params");
  }
  return op;
}

}  // namespace missbgm
