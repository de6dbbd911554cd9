#ifndef MISSBGM_INFERENCE_HPP
#define MISSBGM_INFERENCE_HPP

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <utility>
#include <vector>

#include "missbgm/data.hpp"
#include "missbgm/objectives.hpp"

namespace missbgm {

struct HmcConfig {
  int n_mcmc = 1000;    // retained draws after burn-in
  int burn_in = 1000;
  double step_size = 0.1;  // initial leapfrog step size
  int n_leapfrog = 5;
  double target_accept = 0.75;
  double adapt_fraction = 0.5;  // fraction of burn-in with active adaptation
  double alpha = 0.05;
  std::uint64_t seed = 42;
  int threads = 0;  // 0 = hardware concurrency; results are thread-count
                    // independent (per-sample chains, per-sample streams)
  bool bnn_redraw_per_draw = true;

  void validate() const;  // throws ConfigError
};

// Fixed global model the sampler conditions on. When the variational nets
// are present and redraw is enabled, (theta, phi) are redrawn from them for
// each retained draw, per sample, from that sample's stream.
struct HmcModel {
  const GeneratorNet* gen = nullptr;
  const MissingnessNet* miss = nullptr;
  double beta = 0.01;
  const BnnGenerator* bnn_gen = nullptr;
  const BnnMissingness* bnn_miss = nullptr;
};

struct ChainStats {
  long z_accepted_post = 0;  // accepted / attempted after the adaptation
  long z_attempts_post = 0;  // window closes
  long x_accepted_post = 0;
  long x_attempts_post = 0;
  std::vector<double> final_step_z;  // per processed sample
  std::vector<double> final_step_x;

  double z_accept_rate() const {
    return z_attempts_post > 0
               ? static_cast<double>(z_accepted_post) / z_attempts_post
               : 0.0;
  }
  double x_accept_rate() const {
    return x_attempts_post > 0
               ? static_cast<double>(x_accepted_post) / x_attempts_post
               : 0.0;
  }
};

struct PosteriorDraws {
  // Missing entries of the processed rows, row-major over the matrix;
  // xmis_draws row k holds the S draws of entries[k].
  std::vector<std::pair<int, int>> entries;
  Matrix xmis_draws;            // entries.size() x S
  std::vector<Matrix> z_draws;  // S matrices, processed-rows x d
  Matrix base_x;                // start state, observed coordinates fixed
  Eigen::MatrixXi mask;
  std::vector<int> rows;  // processed row indices
  int S = 0;
  ChainStats stats;

  // Completed matrix for draw s; observed coordinates are identical across
  // draws by construction.
  Matrix draw(int s) const;
};

struct PredictionIntervals {
  std::vector<std::pair<int, int>> entries;
  Eigen::VectorXd lower, upper;
  double alpha = 0.05;
  Eigen::VectorXd width() const { return upper - lower; }
};

// One HMC step with identity mass and full momentum refresh; exposed so
// tests can drive single kernels. target returns log density and fills the
// gradient. q, lp, grad hold the current state and are updated on accept.
// A non-finite proposal Hamiltonian rejects with accept_prob 0.
struct HmcStepResult {
  bool accepted = false;
  double accept_prob = 0.0;
  double h0 = 0.0;
  double h1 = 0.0;
};
using LogDensityGrad = std::function<double(const Matrix& q, Matrix* grad)>;
HmcStepResult hmc_step(Matrix& q, double& lp, Matrix& grad,
                       const LogDensityGrad& target, double eps, int n_leapfrog,
                       Rng& rng);

// Dual-averaging step-size adaptation (gamma 0.05, t0 10, kappa 0.75,
// mu = log(10 eps0)).
struct DualAveraging {
  double mu = 0.0;
  double log_eps = 0.0;
  double log_eps_bar = 0.0;
  double h_bar = 0.0;
  long t = 0;

  void init(double eps0);
  void update(double accept_prob, double target);
  double eps() const;
  double eps_frozen() const;
};

// Per-sample HMC-within-Gibbs from a warm start (Z0, X0): each sweep runs
// one HMC step on z_i, then one on x_{i,mis} with the fresh z_i. Chains are
// independent across samples with substreams keyed by the global row index,
// so a subset re-run reproduces the full-run chains bit for bit. rows
// selects a subset (default: all). chain_log, when set, receives one line
// per sweep and block: "sweep <s> block <z|x> step <mean eps> accept <frac>".
PosteriorDraws hmc_within_gibbs(const Matrix& Z0, const Matrix& X0,
                                const Dataset& ds, const HmcModel& model,
                                const HmcConfig& cfg,
                                std::ostream* chain_log = nullptr,
                                const std::vector<int>* rows = nullptr);

// Posterior mean matrix and, when with_intervals, empirical prediction
// intervals per missing entry (linear interpolation between order
// statistics at position q(S-1)+1). Throws std::invalid_argument when
// intervals are requested with S < 2.
std::pair<Matrix, PredictionIntervals> posterior_summaries(
    const PosteriorDraws& draws, double alpha, bool with_intervals = true);

// Per-entry sample standard deviation over draws ((S-1) denominator),
// aligned with draws.entries.
Eigen::VectorXd posterior_entry_sd(const PosteriorDraws& draws);

}  // namespace missbgm

#endif  // MISSBGM_INFERENCE_HPP
