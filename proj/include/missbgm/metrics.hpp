#ifndef MISSBGM_METRICS_HPP
#define MISSBGM_METRICS_HPP

#include <string>
#include <utility>
#include <vector>

#include "missbgm/data.hpp"

namespace missbgm {

using Eigen::VectorXd;

// Flat evaluation summary. Fields without an input stay NaN.
struct EvalReport {
  double rmse_missing = std::nan("");
  double sd_rmse = std::nan("");
  double avg_interval_width = std::nan("");
  double pcc = std::nan("");
  double scc = std::nan("");
  double coverage = std::nan("");
  long n_missing_entries = 0;

  std::string to_kv() const;
  static std::string csv_header();
  std::string to_csv_row() const;
};

// RMSE over the entries with mask == 0. Throws DataError when shapes differ
// or no entry is missing.
double rmse_missing(const Matrix& imputed, const Matrix& truth,
                    const Eigen::MatrixXi& mask);

// RMSE between two aligned per-entry standard-deviation vectors.
double sd_rmse(const VectorXd& estimated, const VectorXd& oracle);

double pearson(const VectorXd& a, const VectorXd& b);
// Average-rank Spearman; equals pearson on the rank transforms.
double spearman(const VectorXd& a, const VectorXd& b);

struct IntervalMetrics {
  double avg_width = std::nan("");
  double coverage = std::nan("");
  double width_pcc = std::nan("");
  double width_scc = std::nan("");
};

// entries lists the (row, col) of each interval; truth supplies the value
// covered (closed intervals). Width correlations are computed only when
// oracle_widths is non-null.
IntervalMetrics interval_metrics(
    const std::vector<std::pair<int, int>>& entries, const VectorXd& lower,
    const VectorXd& upper, const Matrix& truth,
    const VectorXd* oracle_widths = nullptr);

// Column-observed-mean fill; the simplest baseline.
Matrix mean_impute(const Dataset& ds);

}  // namespace missbgm

#endif  // MISSBGM_METRICS_HPP
