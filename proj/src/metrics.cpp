#include "missbgm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "missbgm/text_io.hpp"

namespace missbgm {

std::string EvalReport::to_kv() const {
  std::ostringstream out;
  out << "rmse_missing = " << format_double(rmse_missing) << '\n'
      << "sd_rmse = " << format_double(sd_rmse) << '\n'
      << "avg_interval_width = " << format_double(avg_interval_width) << '\n'
      << "pcc = " << format_double(pcc) << '\n'
      << "scc = " << format_double(scc) << '\n'
      << "coverage = " << format_double(coverage) << '\n'
      << "n_missing_entries = " << n_missing_entries << '\n';
  return out.str();
}

std::string EvalReport::csv_header() {
  return "rmse_missing,sd_rmse,avg_interval_width,pcc,scc,coverage,"
         "n_missing_entries";
}

std::string EvalReport::to_csv_row() const {
  std::ostringstream out;
  out << format_double(rmse_missing) << ',' << format_double(sd_rmse) << ','
      << format_double(avg_interval_width) << ',' << format_double(pcc) << ','
      << format_double(scc) << ',' << format_double(coverage) << ','
      << n_missing_entries;
  return out.str();
}

double rmse_missing(const Matrix& imputed, const Matrix& truth,
                    const Eigen::MatrixXi& mask) {
  if (imputed.rows() != truth.rows() || imputed.cols() != truth.cols() ||
      mask.rows() != truth.rows() || mask.cols() != truth.cols()) {
    throw DataError("rmse_missing: shape mismatch");
  }
  double ss = 0.0;
  long count = 0;
  for (Eigen::Index i = 0; i < truth.rows(); ++i) {
    for (Eigen::Index j = 0; j < truth.cols(); ++j) {
      if (mask(i, j) == 0) {
        const double d = imputed(i, j) - truth(i, j);
        ss += d * d;
        ++count;
      }
    }
  }
  if (count == 0) throw DataError("rmse_missing: no missing entries");
  return std::sqrt(ss / count);
}

double sd_rmse(const VectorXd& estimated, const VectorXd& oracle) {
  if (estimated.size() != oracle.size()) {
    throw DataError("sd_rmse: misaligned vectors");
  }
  if (estimated.size() == 0) throw DataError("sd_rmse: empty vectors");
  return std::sqrt((estimated - oracle).squaredNorm() / estimated.size());
}

double pearson(const VectorXd& a, const VectorXd& b) {
  if (a.size() != b.size()) throw DataError("pearson: misaligned vectors");
  if (a.size() < 2) throw DataError("pearson: need length >= 2");
  const double ma = a.mean();
  const double mb = b.mean();
  const VectorXd da = a.array() - ma;
  const VectorXd db = b.array() - mb;
  const double va = da.squaredNorm();
  const double vb = db.squaredNorm();
  if (va == 0.0 || vb == 0.0) throw DataError("pearson: zero variance");
  return da.dot(db) / std::sqrt(va * vb);
}

namespace {

// Average ranks, ties shared.
VectorXd average_ranks(const VectorXd& v) {
  const Eigen::Index n = v.size();
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::sort(order.begin(), order.end(),
            [&](Eigen::Index i, Eigen::Index j) { return v(i) < v(j); });
  VectorXd ranks(n);
  Eigen::Index i = 0;
  while (i < n) {
    Eigen::Index j = i;
    while (j + 1 < n && v(order[j + 1]) == v(order[i])) ++j;
    const double shared = 0.5 * static_cast<double>(i + j) + 1.0;
    for (Eigen::Index k = i; k <= j; ++k) ranks(order[k]) = shared;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(const VectorXd& a, const VectorXd& b) {
  if (a.size() != b.size()) throw DataError("spearman: misaligned vectors");
  if (a.size() < 2) throw DataError("spearman: need length >= 2");
  return pearson(average_ranks(a), average_ranks(b));
}

IntervalMetrics interval_metrics(
    const std::vector<std::pair<int, int>>& entries, const VectorXd& lower,
    const VectorXd& upper, const Matrix& truth,
    const VectorXd* oracle_widths) {
  const Eigen::Index m = static_cast<Eigen::Index>(entries.size());
  if (lower.size() != m || upper.size() != m) {
    throw DataError("interval_metrics: misaligned interval vectors");
  }
  IntervalMetrics out;
  if (m == 0) return out;
  double width_sum = 0.0;
  long covered = 0;
  VectorXd widths(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    const double t = truth(entries[k].first, entries[k].second);
    widths(k) = upper(k) - lower(k);
    width_sum += widths(k);
    if (t >= lower(k) && t <= upper(k)) ++covered;
  }
  out.avg_width = width_sum / m;
  out.coverage = static_cast<double>(covered) / m;
  if (oracle_widths != nullptr) {
    if (oracle_widths->size() != m) {
      throw DataError("interval_metrics: misaligned oracle widths");
    }
    out.width_pcc = pearson(widths, *oracle_widths);
    out.width_scc = spearman(widths, *oracle_widths);
  }
  return out;
}

Matrix mean_impute(const Dataset& ds) {
  Matrix out = ds.x_obs;
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    double sum = 0.0;
    long count = 0;
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      if (ds.mask(i, j) == 1) {
        sum += out(i, j);
        ++count;
      }
    }
    if (count == 0) {
      throw DataError("mean_impute: column " + std::to_string(j) +
                      " has no observed entry");
    }
    const double mean = sum / count;
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      if (ds.mask(i, j) == 0) out(i, j) = mean;
    }
  }
  return out;
}

}  // namespace missbgm
