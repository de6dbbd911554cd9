#include "missbgm/objectives.hpp"

#include <cmath>
#include <string>

#include "missbgm/errors.hpp"

namespace missbgm {

namespace {

constexpr double kLogTwoPi = 1.8378770664093454836;

double checked(double v, const char* what) {
  if (!std::isfinite(v)) {
    throw NumericError(std::string(what) + ": non-finite value");
  }
  return v;
}

// sum_ij of (x - mu)^2 / (2 var) + 0.5 log var, as a tape node.
int gaussian_term_on_tape(Tape& t, int x, int mean, int var) {
  const int quad = t.div(t.square(t.sub(x, mean)), t.scale(var, 2.0));
  const int logvar = t.scale(t.log(var), 0.5);
  return t.sum(t.add(quad, logvar));
}

// sum_ij of the Bernoulli cross-entropy of mask R given logits f:
//   -[ r log sig(f) + (1 - r) log(1 - sig(f)) ]
// via the softplus identities, which stay finite for any logit.
int bce_term_on_tape(Tape& t, int logits, const Matrix& R) {
  const int obs = t.mul(t.constant(R), t.softplus(t.scale(logits, -1.0)));
  const int mis =
      t.mul(t.constant(Matrix::Ones(R.rows(), R.cols()) - R), t.softplus(logits));
  return t.sum(t.add(obs, mis));
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

}  // namespace

namespace {

// Shared builder so value-only and gradient calls see identical arithmetic.
struct LossZTape {
  Tape t;
  int z = -1;
  int out = -1;
};

void build_loss_z(LossZTape& lt, const Matrix& Z, const Matrix& X,
                  const GeneratorNet& gen) {
  lt.z = lt.t.input(Z);
  const GenOnTape g = generator_on_tape(lt.t, lt.z, gen);
  const int gauss = gaussian_term_on_tape(lt.t, lt.t.constant(X), g.mean, g.var);
  const int prior = lt.t.scale(lt.t.sum(lt.t.square(lt.z)), 0.5);
  const double norm = 1.0 / (static_cast<double>(Z.rows()) * X.cols());
  lt.out = lt.t.scale(lt.t.add(prior, gauss), norm);
}

}  // namespace

double loss_z(const Matrix& Z, const Matrix& X, const GeneratorNet& gen) {
  LossZTape lt;
  build_loss_z(lt, Z, X, gen);
  return checked(lt.t.value(lt.out)(0, 0), "loss_z");
}

Matrix loss_z_grad(const Matrix& Z, const Matrix& X, const GeneratorNet& gen,
                   double* value) {
  LossZTape lt;
  build_loss_z(lt, Z, X, gen);
  const double v = checked(lt.t.value(lt.out)(0, 0), "loss_z");
  if (value != nullptr) *value = v;
  lt.t.backward(lt.out);
  return lt.t.grad(lt.z);
}

Matrix loss_xmis_grad(const Matrix& X, const Matrix& R, const Matrix& Z,
                      const GeneratorNet& gen, const MissingnessNet& miss,
                      double beta, double* value) {
  Tape t;
  const int x_free = t.input(X);
  // x = R .* x_obs + (1 - R) .* x_free; equal to X in value, and the mask
  // factor routes the gradient into missing coordinates only.
  const Matrix ones = Matrix::Ones(R.rows(), R.cols());
  const int x = t.add(t.constant(R.cwiseProduct(X)),
                      t.mul(t.constant(ones - R), x_free));
  const GenOnTape g = generator_on_tape(t, t.constant(Z), gen);
  const int gauss = gaussian_term_on_tape(t, x, g.mean, g.var);
  int total = gauss;
  if (beta != 0.0) {
    const MissOnTape m = missingness_on_tape(t, x, miss);
    total = t.add(gauss, t.scale(bce_term_on_tape(t, m.logits, R), beta));
  }
  const double norm = 1.0 / (static_cast<double>(X.rows()) * X.cols());
  const int out = t.scale(total, norm);
  const double v = checked(t.value(out)(0, 0), "loss_xmis");
  if (value != nullptr) *value = v;
  t.backward(out);
  return t.grad(x_free);
}

double loss_xmis(const Matrix& X, const Matrix& R, const Matrix& Z,
                 const GeneratorNet& gen, const MissingnessNet& miss,
                 double beta) {
  double v = 0.0;
  loss_xmis_grad(X, R, Z, gen, miss, beta, &v);
  return v;
}

ElboValue elbo_theta_grad(const Matrix& X, const Matrix& Z,
                          const GeneratorNet& gen, double weight_decay,
                          std::vector<Matrix>* grads) {
  Tape t;
  const GenOnTape g = generator_on_tape(t, t.constant(Z), gen);
  const int gauss = gaussian_term_on_tape(t, t.constant(X), g.mean, g.var);
  const double norm = 1.0 / (static_cast<double>(X.rows()) * X.cols());
  const int loglik = t.add_scalar(t.scale(gauss, -norm), -0.5 * kLogTwoPi);

  ElboValue e;
  e.loglik = checked(t.value(loglik)(0, 0), "elbo_theta");
  const std::vector<const Matrix*> blocks = params_of(gen);
  e.penalty = weight_decay * squared_param_norm(blocks);
  e.value = e.loglik - e.penalty;

  if (grads != nullptr) {
    t.backward(loglik);
    grads->clear();
    for (std::size_t k = 0; k < g.param_ids.size(); ++k) {
      grads->push_back(t.grad(g.param_ids[k]) -
                       2.0 * weight_decay * (*blocks[k]));
    }
  }
  return e;
}

ElboValue elbo_theta(const Matrix& X, const Matrix& Z, const GeneratorNet& gen,
                     double weight_decay) {
  return elbo_theta_grad(X, Z, gen, weight_decay, nullptr);
}

ElboValue elbo_phi_grad(const Matrix& X, const Matrix& R,
                        const MissingnessNet& miss, double weight_decay,
                        std::vector<Matrix>* grads) {
  Tape t;
  const MissOnTape m = missingness_on_tape(t, t.constant(X), miss);
  const int bce = bce_term_on_tape(t, m.logits, R);
  const double norm = 1.0 / (static_cast<double>(X.rows()) * X.cols());
  const int loglik = t.scale(bce, -norm);

  ElboValue e;
  e.loglik = checked(t.value(loglik)(0, 0), "elbo_phi");
  const std::vector<const Matrix*> blocks = params_of(miss);
  e.penalty = weight_decay * squared_param_norm(blocks);
  e.value = e.loglik - e.penalty;

  if (grads != nullptr) {
    t.backward(loglik);
    grads->clear();
    for (std::size_t k = 0; k < m.param_ids.size(); ++k) {
      grads->push_back(t.grad(m.param_ids[k]) -
                       2.0 * weight_decay * (*blocks[k]));
    }
  }
  return e;
}

ElboValue elbo_phi(const Matrix& X, const Matrix& R, const MissingnessNet& miss,
                   double weight_decay) {
  return elbo_phi_grad(X, R, miss, weight_decay, nullptr);
}

ElboValue elbo_theta_bnn(const Matrix& X, const Matrix& Z,
                         const BnnGenerator& gen, double tau, Rng& rng,
                         std::vector<Matrix>* grads, int n_samples) {
  ElboValue total;
  const double norm = 1.0 / (static_cast<double>(X.rows()) * X.cols());
  if (grads != nullptr) grads->clear();
  for (int s = 0; s < n_samples; ++s) {
    Tape t;
    const BnnGenOnTape g =
        bnn_generator_on_tape(t, t.constant(Z), gen, rng, tau != 0.0);
    const int gauss = gaussian_term_on_tape(t, t.constant(X), g.mean, g.var);
    int loglik = t.add_scalar(t.scale(gauss, -norm), -0.5 * kLogTwoPi);
    int out = loglik;
    double kl = 0.0;
    if (tau != 0.0) {
      out = t.sub(loglik, t.scale(g.kl, tau));
      kl = t.value(g.kl)(0, 0);
    }
    total.loglik += checked(t.value(loglik)(0, 0), "elbo_theta_bnn");
    total.penalty += tau * kl;
    if (grads != nullptr) {
      t.backward(out);
      if (grads->empty()) {
        for (int id : g.param_ids) grads->push_back(t.grad(id));
      } else {
        for (std::size_t k = 0; k < g.param_ids.size(); ++k) {
          (*grads)[k] += t.grad(g.param_ids[k]);
        }
      }
    }
  }
  total.loglik /= n_samples;
  total.penalty /= n_samples;
  total.value = total.loglik - total.penalty;
  if (grads != nullptr && n_samples > 1) {
    for (Matrix& gmat : *grads) gmat /= static_cast<double>(n_samples);
  }
  return total;
}

ElboValue elbo_phi_bnn(const Matrix& X, const Matrix& R,
                       const BnnMissingness& miss, double tau, Rng& rng,
                       std::vector<Matrix>* grads, int n_samples) {
  ElboValue total;
  const double norm = 1.0 / (static_cast<double>(X.rows()) * X.cols());
  if (grads != nullptr) grads->clear();
  for (int s = 0; s < n_samples; ++s) {
    Tape t;
    const BnnMissOnTape m =
        bnn_missingness_on_tape(t, t.constant(X), miss, rng, tau != 0.0);
    const int loglik = t.scale(bce_term_on_tape(t, m.logits, R), -norm);
    int out = loglik;
    double kl = 0.0;
    if (tau != 0.0) {
      out = t.sub(loglik, t.scale(m.kl, tau));
      kl = t.value(m.kl)(0, 0);
    }
    total.loglik += checked(t.value(loglik)(0, 0), "elbo_phi_bnn");
    total.penalty += tau * kl;
    if (grads != nullptr) {
      t.backward(out);
      if (grads->empty()) {
        for (int id : m.param_ids) grads->push_back(t.grad(id));
      } else {
        for (std::size_t k = 0; k < m.param_ids.size(); ++k) {
          (*grads)[k] += t.grad(m.param_ids[k]);
        }
      }
    }
  }
  total.loglik /= n_samples;
  total.penalty /= n_samples;
  total.value = total.loglik - total.penalty;
  if (grads != nullptr && n_samples > 1) {
    for (Matrix& gmat : *grads) gmat /= static_cast<double>(n_samples);
  }
  return total;
}

namespace {

// Forward pass of the generator on a single row, keeping what the manual
// backward pass needs. Does not throw on non-finite values; HMC rejects
// such states instead.
struct GenCache {
  std::vector<Matrix> inputs;  // input to each trunk layer
  std::vector<Matrix> pre;     // pre-activation of each trunk layer
  Matrix h;                    // trunk output
  Matrix mean;
  Matrix s;  // pre-softplus variance head
  Matrix var;
};

void gen_forward_cached(const Matrix& z, const GeneratorNet& gen,
                        GenCache& c) {
  Matrix h = z;
  c.inputs.clear();
  c.pre.clear();
  for (const DenseLayer& layer : gen.trunk.layers) {
    c.inputs.push_back(h);
    Matrix a = h * layer.W + layer.b;
    c.pre.push_back(a);
    h = a.unaryExpr([](double x) { return x > 0.0 ? x : kLeakySlope * x; });
  }
  c.h = h;
  c.mean = h * gen.mean_head.W + gen.mean_head.b;
  c.s = h * gen.var_head.W + gen.var_head.b;
  c.var = c.s.unaryExpr([floor = gen.var_floor](double x) {
    return stable_softplus(x) + floor;
  });
}

// Pushes head adjoints back through the trunk to the generator input.
Matrix gen_backward_to_input(const GeneratorNet& gen, const GenCache& c,
                             const Matrix& dmean, const Matrix& dvar) {
  const Matrix ds =
      dvar.cwiseProduct(c.s.unaryExpr([](double x) { return stable_sigmoid(x); }));
  Matrix delta = dmean * gen.mean_head.W.transpose() +
                 ds * gen.var_head.W.transpose();
  for (int l = static_cast<int>(gen.trunk.layers.size()) - 1; l >= 0; --l) {
    delta = delta.cwiseProduct(c.pre[l].unaryExpr(
        [](double x) { return x > 0.0 ? 1.0 : kLeakySlope; }));
    delta = delta * gen.trunk.layers[l].W.transpose();
  }
  return delta;
}

struct MissCache {
  std::vector<Matrix> pre;
  Matrix logits;
};

void miss_forward_cached(const Matrix& x, const MissingnessNet& miss,
                         MissCache& c) {
  Matrix h = x;
  c.pre.clear();
  for (const DenseLayer& layer : miss.trunk.layers) {
    Matrix a = h * layer.W + layer.b;
    c.pre.push_back(a);
    h = a.unaryExpr([](double v) { return v > 0.0 ? v : kLeakySlope * v; });
  }
  c.logits = h * miss.logit_head.W + miss.logit_head.b;
}

Matrix miss_backward_to_input(const MissingnessNet& miss, const MissCache& c,
                              const Matrix& dlogits) {
  Matrix delta = dlogits * miss.logit_head.W.transpose();
  for (int l = static_cast<int>(miss.trunk.layers.size()) - 1; l >= 0; --l) {
    delta = delta.cwiseProduct(c.pre[l].unaryExpr(
        [](double x) { return x > 0.0 ? 1.0 : kLeakySlope; }));
    delta = delta * miss.trunk.layers[l].W.transpose();
  }
  return delta;
}

double gaussian_logdensity(const Matrix& x, const Matrix& mean,
                           const Matrix& var) {
  double lp = 0.0;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double r = x(0, j) - mean(0, j);
    lp -= r * r / (2.0 * var(0, j)) + 0.5 * std::log(var(0, j));
  }
  return lp;
}

double mask_logdensity(const Matrix& logits, const Matrix& r) {
  // r log sig(f) + (1-r) log(1 - sig(f)) via softplus.
  double lp = 0.0;
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const double f = logits(0, j);
    lp -= r(0, j) * stable_softplus(-f) + (1.0 - r(0, j)) * stable_softplus(f);
  }
  return lp;
}

}  // namespace

double hmc_logdensity_z(const Matrix& z, const Matrix& x,
                        const GeneratorNet& gen) {
  return hmc_logdensity_z_grad(z, x, gen, nullptr);
}

double hmc_logdensity_z_grad(const Matrix& z, const Matrix& x,
                             const GeneratorNet& gen, Matrix* grad) {
  GenCache c;
  gen_forward_cached(z, gen, c);
  const double lp = -0.5 * z.squaredNorm() + gaussian_logdensity(x, c.mean, c.var);
  if (grad != nullptr) {
    const Matrix resid = x - c.mean;
    const Matrix dmean = resid.cwiseQuotient(c.var);
    const Matrix dvar =
        (resid.array().square() / (2.0 * c.var.array().square()) -
         0.5 / c.var.array())
            .matrix();
    *grad = gen_backward_to_input(gen, c, dmean, dvar) - z;
  }
  return lp;
}

double hmc_logdensity_xmis_grad_cached(const Matrix& x, const Matrix& r,
                                       const Matrix& mean, const Matrix& var,
                                       const MissingnessNet& miss, double beta,
                                       Matrix* grad) {
  double lp = gaussian_logdensity(x, mean, var);
  Matrix dx;
  if (grad != nullptr) {
    dx = (mean - x).cwiseQuotient(var);
  }
  if (beta != 0.0) {
    MissCache c;
    miss_forward_cached(x, miss, c);
    lp += beta * mask_logdensity(c.logits, r);
    if (grad != nullptr) {
      Matrix dlogits(1, c.logits.cols());
      for (Eigen::Index j = 0; j < c.logits.cols(); ++j) {
        dlogits(0, j) = beta * (r(0, j) - stable_sigmoid(c.logits(0, j)));
      }
      dx += miss_backward_to_input(miss, c, dlogits);
    }
  }
  if (grad != nullptr) {
    // Only the missing coordinates are free.
    *grad = dx.cwiseProduct(Matrix::Ones(1, r.cols()) - r);
  }
  return lp;
}

double hmc_logdensity_xmis_grad(const Matrix& x, const Matrix& r,
                                const Matrix& z, const GeneratorNet& gen,
                                const MissingnessNet& miss, double beta,
                                Matrix* grad) {
  GenCache c;
  gen_forward_cached(z, gen, c);
  return hmc_logdensity_xmis_grad_cached(x, r, c.mean, c.var, miss, beta, grad);
}

double hmc_logdensity_xmis(const Matrix& x, const Matrix& r, const Matrix& z,
                           const GeneratorNet& gen, const MissingnessNet& miss,
                           double beta) {
  return hmc_logdensity_xmis_grad(x, r, z, gen, miss, beta, nullptr);
}

void generator_heads(const Matrix& z, const GeneratorNet& gen, Matrix* mean,
                     Matrix* var) {
  GenCache c;
  gen_forward_cached(z, gen, c);
  if (mean != nullptr) *mean = std::move(c.mean);
  if (var != nullptr) *var = std::move(c.var);
}

}  // namespace missbgm
