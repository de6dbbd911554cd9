#ifndef MISSBGM_TRAIN_HPP
#define MISSBGM_TRAIN_HPP

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include "missbgm/data.hpp"
#include "missbgm/objectives.hpp"

namespace missbgm {

struct EgmConfig {
  bool enabled = true;
  int n_iter = 1500;
  std::vector<int> e_units{120, 120, 120, 120, 120};
  std::vector<int> dz_units{64, 32, 8};
  std::vector<int> dx_units{64, 32, 8};
};

struct TrainConfig {
  int z_dim = 5;
  int epochs = 200;
  int batch_size = 16;
  double beta = 0.01;
  std::vector<int> g_units{120, 120, 120, 120, 120};
  std::vector<int> missingness_units{64, 64};
  double lr_theta = 0.005;
  double lr_phi = 0.005;
  double lr_z = 0.002;
  double lr_x = 0.002;
  int n_inner_steps = 3;
  bool use_bnn = false;
  double kl_weight = 5e-5;
  int test_epochs = 30;
  EgmConfig egm;
  double grad_clip = 5.0;
  std::uint64_t seed = 42;
  double var_floor = 1e-4;
  double weight_decay = 1e-4;
  double prior_scale = 1.0;
  int elbo_samples = 1;

  void validate() const;  // throws ConfigError
};

// Adam with bias correction; moments per parameter block.
struct AdamState {
  std::vector<Matrix> m, v;
  long t = 0;
  void init(const std::vector<Matrix*>& params);
};

void adam_step(Matrix& param, const Matrix& grad, Matrix& m, Matrix& v, long t,
               double lr);
// One step over aligned blocks; increments state.t.
void adam_step_blocks(const std::vector<Matrix*>& params,
                      const std::vector<Matrix>& grads, AdamState& state,
                      double lr);
// Row-sliced step into global (P, M, V) arrays; rows[k] receives grads row k
// with bias-correction count t (all rows in a batch share one count).
void adam_step_rows(Matrix& P, Matrix& M, Matrix& V,
                    const std::vector<int>& rows, const Matrix& grads, long t,
                    double lr);

// Rescales g to L2 norm <= max_norm.
void clip_l2(Matrix& g, double max_norm);

// KNN fill with five nearest neighbors: distances over co-observed
// coordinates rescaled by sqrt(p / #co-observed); donors must observe the
// target feature; falls back to the column observed mean.
Matrix knn_impute_init(const Dataset& ds);

struct EgmReport {
  double cycle_before = 0.0;
  double cycle_after = 0.0;
};

// Adversarial encoder/generator warm start on a filled matrix. Returns the
// pretrained generator (variance head left at init) and Z0 = e(X); the
// encoder itself is discarded. Throws NumericError with the iteration index
// if a loss diverges.
std::pair<GeneratorNet, Matrix> egm_pretrain(const Matrix& x_filled,
                                             const TrainConfig& cfg, Rng& rng,
                                             EgmReport* report = nullptr);

struct EpochLog {
  int epoch = 0;
  double loss_z = 0.0;
  double loss_xmis = 0.0;
  double elbo_theta = 0.0;
  double elbo_phi = 0.0;
  double seconds = 0.0;
};

struct TrainState {
  GeneratorNet gen;    // deterministic net, or posterior means under BNN
  MissingnessNet miss;
  std::optional<BnnGenerator> bnn_gen;
  std::optional<BnnMissingness> bnn_miss;
  Matrix Z;  // n x d
  Matrix X;  // n x p completed; observed coordinates equal the input
  std::vector<EpochLog> epoch_log;
};

// Alternating stochastic optimization: warm start, then per epoch and
// mini-batch K inner refinements of (Z, X_mis) followed by one ascent step
// each on the theta- and phi-ELBOs. The terminal X is the MAP-style point
// imputation. If log is non-null, one line per epoch is written.
TrainState fit(const Dataset& ds, const TrainConfig& cfg,
               std::ostream* log = nullptr);

struct MapResult {
  Matrix Z;
  Matrix X;
  std::vector<double> loss_curve;  // epoch means of the missing-value loss
};

// Test-time MAP refinement: the inner (Z, X_mis) steps only, global
// parameters fixed, from a KNN-filled start.
MapResult map_refine(const Dataset& ds, const GeneratorNet& gen,
                     const MissingnessNet& miss, const TrainConfig& cfg,
                     int test_epochs);

}  // namespace missbgm

#endif  // MISSBGM_TRAIN_HPP
