#ifndef MISSBGM_OBJECTIVES_HPP
#define MISSBGM_OBJECTIVES_HPP

#include <vector>

#include "missbgm/nets.hpp"

namespace missbgm {

struct TemperConfig {
  double beta = 0.01;  // weight of the mask log-likelihood in the
                       // missing-value objective
  double tau = 5e-5;   // KL weight of the variational weight posteriors
};

// Latent objective: mean over the batch of
//   [ 0.5 ||z_i||^2 + sum_j ( (x_ij - mu_j)^2 / (2 sigma_j^2)
//                             + 0.5 log sigma_j^2 ) ] / p.
// Throws NumericError on a non-finite value.
double loss_z(const Matrix& Z, const Matrix& X, const GeneratorNet& gen);
Matrix loss_z_grad(const Matrix& Z, const Matrix& X, const GeneratorNet& gen,
                   double* value = nullptr);

// Missing-value objective: the Gaussian term of loss_z (no latent prior)
// plus beta times the Bernoulli cross-entropy of the mask given the
// completed row, normalized the same way. R is a 0/1 matrix (1 = observed)
// and X the completed batch; the gradient is zero at observed coordinates.
double loss_xmis(const Matrix& X, const Matrix& R, const Matrix& Z,
                 const GeneratorNet& gen, const MissingnessNet& miss,
                 double beta);
Matrix loss_xmis_grad(const Matrix& X, const Matrix& R, const Matrix& Z,
                      const GeneratorNet& gen, const MissingnessNet& miss,
                      double beta, double* value = nullptr);

struct ElboValue {
  double value = 0.0;    // loglik - penalty, to be maximized
  double loglik = 0.0;   // mean log-likelihood per entry (incl. Gaussian const)
  double penalty = 0.0;  // L2 weight decay, or tau * KL on the BNN path
};

ElboValue elbo_theta(const Matrix& X, const Matrix& Z, const GeneratorNet& gen,
                     double weight_decay);
// grads (if non-null) are filled with d(elbo)/d(block) aligned with
// params_of(gen); ascent direction.
ElboValue elbo_theta_grad(const Matrix& X, const Matrix& Z,
                          const GeneratorNet& gen, double weight_decay,
                          std::vector<Matrix>* grads);

ElboValue elbo_phi(const Matrix& X, const Matrix& R, const MissingnessNet& miss,
                   double weight_decay);
ElboValue elbo_phi_grad(const Matrix& X, const Matrix& R,
                        const MissingnessNet& miss, double weight_decay,
                        std::vector<Matrix>* grads);

// Single-sample (or n_samples-averaged) reparameterized ELBOs for the
// variational nets. tau == 0 skips the KL entirely.
ElboValue elbo_theta_bnn(const Matrix& X, const Matrix& Z,
                         const BnnGenerator& gen, double tau, Rng& rng,
                         std::vector<Matrix>* grads = nullptr,
                         int n_samples = 1);
ElboValue elbo_phi_bnn(const Matrix& X, const Matrix& R,
                       const BnnMissingness& miss, double tau, Rng& rng,
                       std::vector<Matrix>* grads = nullptr,
                       int n_samples = 1);

// Per-sample HMC targets (single rows, 1 x d / 1 x p). These are the exact
// negatives of the per-sample, unnormalized objectives above, so chains
// sample the same posterior the optimizer climbs. The *_grad forms use a
// hand-rolled backward pass and never throw on non-finite values (callers
// reject such proposals); they are cross-checked against the tape and
// finite differences in the test suite.
double hmc_logdensity_z(const Matrix& z, const Matrix& x,
                        const GeneratorNet& gen);
double hmc_logdensity_z_grad(const Matrix& z, const Matrix& x,
                             const GeneratorNet& gen, Matrix* grad);

double hmc_logdensity_xmis(const Matrix& x, const Matrix& r, const Matrix& z,
                           const GeneratorNet& gen, const MissingnessNet& miss,
                           double beta);
double hmc_logdensity_xmis_grad(const Matrix& x, const Matrix& r,
                                const Matrix& z, const GeneratorNet& gen,
                                const MissingnessNet& miss, double beta,
                                Matrix* grad);
// Variant with the generator head values precomputed; the x-chain holds z
// fixed, so mean/var stay constant across leapfrog steps.
double hmc_logdensity_xmis_grad_cached(const Matrix& x, const Matrix& r,
                                       const Matrix& mean, const Matrix& var,
                                       const MissingnessNet& miss, double beta,
                                       Matrix* grad);

// Single-row generator heads without the finite-output checks of
// generator_forward (sampler-internal use).
void generator_heads(const Matrix& z, const GeneratorNet& gen, Matrix* mean,
                     Matrix* var);

}  // namespace missbgm

#endif  // MISSBGM_OBJECTIVES_HPP
