#ifndef MISSBGM_DATA_HPP
#define MISSBGM_DATA_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <utility>

#include "missbgm/normal.hpp"
#include "missbgm/tape.hpp"

namespace missbgm {

// Invalid or inconsistent data (CSV parse failures, constant columns, ...).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Per-feature standardization statistics. Empty vectors mean identity.
struct Scaler {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd std;
  bool identity() const { return mean.size() == 0; }
};

// Tabular dataset with quiet-NaN missing markers and a 0/1 observation
// mask (1 = observed). x_full, when present, is evaluation-only ground
// truth.
struct Dataset {
  Matrix x_obs;
  Eigen::MatrixXi mask;
  std::optional<Matrix> x_full;
  Scaler scaler;

  int n() const { return static_cast<int>(x_obs.rows()); }
  int p() const { return static_cast<int>(x_obs.cols()); }
  long n_missing() const { return x_obs.size() - mask.cast<long>().sum(); }

  // Checks marker/mask agreement and that every row and column has at
  // least one observed entry. Throws DataError.
  void validate() const;

  // mask as a double matrix, for arithmetic with the objectives.
  Matrix mask_double() const { return mask.cast<double>(); }
};

// Global parameters of the synthetic self-masked benchmark. Target
// column l (0-based within the target block) has conditional law
// N(B^T x_anchor + b_l, sigma_l^2) and is masked iff the draw exceeds its
// conditional mean plus sigma_l * kappa.
struct OracleParams {
  Matrix B;                // p_anchor x p_target loadings
  Eigen::RowVectorXd b;    // p_target intercepts
  Eigen::RowVectorXd sigma;  // p_target noise scales, in [0.6, 1.2]
  double kappa = 0.0;      // Phi^{-1}(1 - rate)
  double rate = 0.0;
  int p_anchor = 5;
  std::uint64_t seed = 0;

  int p_target() const { return static_cast<int>(b.size()); }
};

// Calibrated logistic self-masking mechanism for external tables.
struct MaskSpec {
  Matrix W;  // p x p coupling, entries N(0, 0.3^2 / p)
  double beta0 = 0.0;
  double target_rate = 0.0;
};

// Draws (B, b, sigma) once from the seed, generates n samples with the
// anchors always observed, and masks target entries in the upper tail of
// their own conditional law. Throws DataError on p <= p_anchor or
// rate outside (0,1).
std::pair<Dataset, OracleParams> simulate_oracle(int n, int p, double rate,
                                                 std::uint64_t seed);

// Closed-form conditional law of one missing entry (lower-truncated
// Gaussian above mu + sigma * kappa).
struct OracleEntry {
  double mean = 0.0;
  double sd = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double width = 0.0;
};
OracleEntry oracle_entry(double mu, double sigma, double kappa, double alpha);

// Entrywise oracle summaries for all target columns given anchor rows.
struct OracleConditional {
  Matrix mean, sd, lower, upper, width;  // n x p_target each
};
OracleConditional oracle_conditional(const Matrix& anchors,
                                     const OracleParams& params, double alpha);

// Self-masked logistic MNAR injection with the intercept calibrated by
// bisection to the target rate, then a repair pass that flips the
// highest-probability masked entry of any empty row or column.
std::pair<Dataset, MaskSpec> inject_mnar_mask(const Matrix& x_full,
                                              double target_rate,
                                              std::uint64_t seed);

// Standardization over observed entries only (population denominator).
// Throws DataError naming any constant column. Missing markers pass
// through both maps unchanged.
Scaler fit_scaler(const Matrix& x_obs);
Matrix apply_scaler(const Matrix& x, const Scaler& s);
Matrix invert_scaler(const Matrix& x, const Scaler& s);

// CSV I/O. Empty cells and "NaN" (any case) are missing markers; values
// are written in shortest round-trip form, missing entries as empty cells.
Matrix load_matrix_csv(const std::string& path, bool header = false);
void save_matrix_csv(const Matrix& m, const std::string& path,
                     bool header = false);
Eigen::MatrixXi load_mask_csv(const std::string& path, bool header = false);
void save_mask_csv(const Eigen::MatrixXi& mask, const std::string& path);

// Builds a Dataset from x_obs (and an optional mask file, which takes
// precedence over marker inference: entries it masks out are dropped).
Dataset dataset_from_csv(const std::string& x_obs_path,
                         const std::string& mask_path = "",
                         bool header = false);

void save_oracle_params(const OracleParams& params, const std::string& path);
OracleParams load_oracle_params(const std::string& path);

}  // namespace missbgm

#endif  // MISSBGM_DATA_HPP
