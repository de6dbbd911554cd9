#ifndef MISSBGM_NETS_HPP
#define MISSBGM_NETS_HPP

#include <optional>
#include <utility>
#include <vector>

#include "missbgm/rng.hpp"
#include "missbgm/tape.hpp"

namespace missbgm {

constexpr double kLeakySlope = 0.2;

enum class Activation { kLeakyRelu, kTanh, kIdentity };

// Biases are stored as 1 x out matrices so every trainable block is a
// Matrix and optimizer state can be kept uniform.
struct DenseLayer {
  Matrix W;  // in x out
  Matrix b;  // 1 x out
  Activation act = Activation::kIdentity;
};

struct Mlp {
  std::vector<DenseLayer> layers;
};

// Two-headed generator: trunk -> (mean, variance) with softplus + floor on
// the variance head, so variances stay >= var_floor for any input.
struct GeneratorNet {
  Mlp trunk;
  DenseLayer mean_head;
  DenseLayer var_head;
  double var_floor = 1e-4;
};

struct MissingnessNet {
  Mlp trunk;
  DenseLayer logit_head;
};

// Mean-field Gaussian posterior over one dense layer; scale = softplus(raw).
struct VariationalDense {
  Matrix w_mean, w_raw;
  Matrix b_mean, b_raw;  // 1 x out
  Activation act = Activation::kIdentity;
  double prior_scale = 1.0;
};

struct BnnGenerator {
  std::vector<VariationalDense> trunk;
  VariationalDense mean_head;
  VariationalDense var_head;
  double var_floor = 1e-4;
};

struct BnnMissingness {
  std::vector<VariationalDense> trunk;
  VariationalDense logit_head;
};

Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng);

// Uniform +-sqrt(6/(fan_in+fan_out)) weights, zero bias.
DenseLayer init_dense(int in, int out, Activation act, Rng& rng);
VariationalDense init_variational(int in, int out, Activation act,
                                  double prior_scale, Rng& rng);

GeneratorNet make_generator(int z_dim, int p, const std::vector<int>& units,
                            double var_floor, Rng& rng);
MissingnessNet make_missingness(int p, const std::vector<int>& units,
                                Rng& rng);
Mlp make_mlp(int in, const std::vector<int>& hidden, int out, Rng& rng);
BnnGenerator make_bnn_generator(int z_dim, int p, const std::vector<int>& units,
                                double var_floor, double prior_scale, Rng& rng);
BnnMissingness make_bnn_missingness(int p, const std::vector<int>& units,
                                    double prior_scale, Rng& rng);

// Plain forward passes. Rows are processed independently so a batched call
// is exactly equal, coordinatewise, to the per-sample calls. Throws
// NumericError naming the layer on non-finite outputs.
Matrix dense_forward(const Matrix& x, const DenseLayer& layer);
Matrix mlp_forward(const Matrix& x, const Mlp& net);
std::pair<Matrix, Matrix> generator_forward(const Matrix& z,
                                            const GeneratorNet& gen);
Matrix missingness_forward(const Matrix& x, const MissingnessNet& net);

// Tape forwards. param_ids lists the tape leaves of every weight block in
// the same order as params_of(), so callers can read off gradients.
int dense_on_tape(Tape& t, int x, int w, int b, Activation act);

// Full stack on a tape. With param_ids == nullptr the weights enter as
// constants (gradients still flow through them to the input).
int mlp_on_tape(Tape& t, int x, const Mlp& net,
                std::vector<int>* param_ids = nullptr);

struct GenOnTape {
  int mean = -1;
  int var = -1;
  std::vector<int> param_ids;
};
GenOnTape generator_on_tape(Tape& t, int z, const GeneratorNet& gen);

struct MissOnTape {
  int logits = -1;
  std::vector<int> param_ids;
};
MissOnTape missingness_on_tape(Tape& t, int x, const MissingnessNet& net);

// Reparameterized forward for the variational nets: weights are
// mean + softplus(raw) .* eps with eps drawn once per call. kl is the tape
// node of KL(q || prior) summed over all blocks, or -1 when with_kl is
// false (tau = 0 paths must not touch the KL, which is unbounded for
// degenerate scales).
struct BnnGenOnTape {
  int mean = -1;
  int var = -1;
  int kl = -1;
  std::vector<int> param_ids;  // w_mean, w_raw, b_mean, b_raw per layer
};
BnnGenOnTape bnn_generator_on_tape(Tape& t, int z, const BnnGenerator& gen,
                                   Rng& rng, bool with_kl);

struct BnnMissOnTape {
  int logits = -1;
  int kl = -1;
  std::vector<int> param_ids;
};
BnnMissOnTape bnn_missingness_on_tape(Tape& t, int x, const BnnMissingness& net,
                                      Rng& rng, bool with_kl);

// One posterior draw of a layer / net, plus closed-form KL to the prior.
DenseLayer bnn_sample(const VariationalDense& layer, Rng& rng);
double bnn_kl(const VariationalDense& layer);
GeneratorNet bnn_sample(const BnnGenerator& gen, Rng& rng);
MissingnessNet bnn_sample(const BnnMissingness& net, Rng& rng);
double bnn_kl(const BnnGenerator& gen);
double bnn_kl(const BnnMissingness& net);

// Posterior means only (scales ignored).
GeneratorNet bnn_mean_net(const BnnGenerator& gen);
MissingnessNet bnn_mean_net(const BnnMissingness& net);

// Trainable blocks in a fixed order (trunk W,b ... then heads).
std::vector<Matrix*> params_of(Mlp& net);
std::vector<Matrix*> params_of(GeneratorNet& gen);
std::vector<Matrix*> params_of(MissingnessNet& net);
std::vector<Matrix*> params_of(BnnGenerator& gen);
std::vector<Matrix*> params_of(BnnMissingness& net);
std::vector<const Matrix*> params_of(const GeneratorNet& gen);
std::vector<const Matrix*> params_of(const MissingnessNet& net);

double squared_param_norm(const std::vector<Matrix*>& params);
double squared_param_norm(const std::vector<const Matrix*>& params);

}  // namespace missbgm

#endif  // MISSBGM_NETS_HPP
