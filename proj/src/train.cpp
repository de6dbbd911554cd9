#include "missbgm/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>

#include "missbgm/errors.hpp"
#include "missbgm/text_io.hpp"

namespace missbgm {

namespace {
constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;
}  // namespace

void TrainConfig::validate() const {
  if (z_dim < 1) throw ConfigError("z_dim must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (n_inner_steps < 1) throw ConfigError("n_inner_steps must be >= 1");
  if (!(beta >= 0.0)) throw ConfigError("beta must be >= 0");
  if (!(kl_weight >= 0.0)) throw ConfigError("kl_weight must be >= 0");
  if (!(lr_theta > 0.0 && lr_phi > 0.0 && lr_z > 0.0 && lr_x > 0.0)) {
    throw ConfigError("learning rates must be > 0");
  }
  if (!(grad_clip > 0.0)) throw ConfigError("grad_clip must be > 0");
  if (!(var_floor > 0.0)) throw ConfigError("var_floor must be > 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (!(prior_scale > 0.0)) throw ConfigError("prior_scale must be > 0");
  if (elbo_samples < 1) throw ConfigError("elbo_samples must be >= 1");
  if (test_epochs < 0) throw ConfigError("test_epochs must be >= 0");
  if (egm.n_iter < 0) throw ConfigError("egm_init.n_iter must be >= 0");
  if (g_units.empty()) throw ConfigError("g_units must not be empty");
  for (int u : g_units) {
    if (u < 1) throw ConfigError("g_units entries must be >= 1");
  }
  for (int u : missingness_units) {
    if (u < 1) throw ConfigError("missingness_units entries must be >= 1");
  }
}

void AdamState::init(const std::vector<Matrix*>& params) {
  m.clear();
  v.clear();
  t = 0;
  for (const Matrix* p : params) {
    m.push_back(Matrix::Zero(p->rows(), p->cols()));
    v.push_back(Matrix::Zero(p->rows(), p->cols()));
  }
}

void adam_step(Matrix& param, const Matrix& grad, Matrix& m, Matrix& v, long t,
               double lr) {
  m = kAdamBeta1 * m + (1.0 - kAdamBeta1) * grad;
  v = kAdamBeta2 * v + (1.0 - kAdamBeta2) * grad.cwiseProduct(grad);
  const double mc = 1.0 - std::pow(kAdamBeta1, static_cast<double>(t));
  const double vc = 1.0 - std::pow(kAdamBeta2, static_cast<double>(t));
  param.array() -= lr * (m.array() / mc) /
                   ((v.array() / vc).sqrt() + kAdamEps);
}

void adam_step_blocks(const std::vector<Matrix*>& params,
                      const std::vector<Matrix>& grads, AdamState& state,
                      double lr) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw ConfigError("adam_step_blocks: block count mismatch");
  }
  ++state.t;
  for (std::size_t k = 0; k < params.size(); ++k) {
    adam_step(*params[k], grads[k], state.m[k], state.v[k], state.t, lr);
  }
}

void adam_step_rows(Matrix& P, Matrix& M, Matrix& V,
                    const std::vector<int>& rows, const Matrix& grads, long t,
                    double lr) {
  const double mc = 1.0 - std::pow(kAdamBeta1, static_cast<double>(t));
  const double vc = 1.0 - std::pow(kAdamBeta2, static_cast<double>(t));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const int r = rows[k];
    M.row(r) = kAdamBeta1 * M.row(r) + (1.0 - kAdamBeta1) * grads.row(k);
    V.row(r) = kAdamBeta2 * V.row(r) +
               (1.0 - kAdamBeta2) * grads.row(k).cwiseProduct(grads.row(k));
    P.row(r).array() -= lr * (M.row(r).array() / mc) /
                        ((V.row(r).array() / vc).sqrt() + kAdamEps);
  }
}

void clip_l2(Matrix& g, double max_norm) {
  const double n = g.norm();
  if (n > max_norm) g *= max_norm / n;
}

Matrix knn_impute_init(const Dataset& ds) {
  if (ds.x_obs.size() == 0) throw DataError("knn_impute_init: empty dataset");
  const int n = ds.n();
  const int p = ds.p();
  constexpr int kNeighbors = 5;

  // Column observed means as the last-resort fill.
  Eigen::RowVectorXd col_mean(p);
  for (int j = 0; j < p; ++j) {
    double sum = 0.0;
    long count = 0;
    for (int i = 0; i < n; ++i) {
      if (ds.mask(i, j) == 1) {
        sum += ds.x_obs(i, j);
        ++count;
      }
    }
    if (count == 0) {
      throw DataError("knn_impute_init: column " + std::to_string(j) +
                      " has no observed entry");
    }
    col_mean(j) = sum / count;
  }

  Matrix X = ds.x_obs;
  std::vector<double> dist(n);
  std::vector<int> co(n);
  std::vector<int> order(n);

  for (int i = 0; i < n; ++i) {
    bool any_missing = false;
    for (int j = 0; j < p; ++j) {
      if (ds.mask(i, j) == 0) {
        any_missing = true;
        break;
      }
    }
    if (!any_missing) continue;

    for (int t = 0; t < n; ++t) {
      double ss = 0.0;
      int c = 0;
      for (int j = 0; j < p; ++j) {
        if (ds.mask(i, j) == 1 && ds.mask(t, j) == 1) {
          const double d = ds.x_obs(i, j) - ds.x_obs(t, j);
          ss += d * d;
          ++c;
        }
      }
      co[t] = c;
      dist[t] = c > 0 ? std::sqrt(ss * static_cast<double>(p) / c)
                      : std::numeric_limits<double>::infinity();
    }
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (dist[a] != dist[b]) return dist[a] < dist[b];
      return a < b;
    });

    for (int j = 0; j < p; ++j) {
      if (ds.mask(i, j) == 1) continue;
      double sum = 0.0;
      int taken = 0;
      for (int t : order) {
        if (t == i || co[t] == 0 || ds.mask(t, j) == 0) continue;
        sum += ds.x_obs(t, j);
        if (++taken == kNeighbors) break;
      }
      X(i, j) = taken > 0 ? sum / taken : col_mean(j);
    }
  }
  return X;
}

namespace {

// Mean Bernoulli cross-entropy of labels Y against logits, on a tape.
int bce_mean_on_tape(Tape& t, int logits, const Matrix& Y) {
  const int pos = t.mul(t.constant(Y), t.softplus(t.scale(logits, -1.0)));
  const int neg = t.mul(t.constant(Matrix::Ones(Y.rows(), Y.cols()) - Y),
                        t.softplus(logits));
  return t.mean(t.add(pos, neg));
}

double checked_iter(double v, const char* what, int iter) {
  if (!std::isfinite(v)) {
    throw NumericError(std::string("egm_pretrain: non-finite ") + what +
                       " at iteration " + std::to_string(iter));
  }
  return v;
}

double cycle_loss_plain(const Matrix& x, const Mlp& encoder,
                        const GeneratorNet& gen) {
  const Matrix z = mlp_forward(x, encoder);
  const Matrix rec = generator_forward(z, gen).first;
  return (rec - x).squaredNorm() / static_cast<double>(x.size());
}

}  // namespace

std::pair<GeneratorNet, Matrix> egm_pretrain(const Matrix& x_filled,
                                             const TrainConfig& cfg, Rng& rng,
                                             EgmReport* report) {
  const int n = static_cast<int>(x_filled.rows());
  const int p = static_cast<int>(x_filled.cols());
  const int d = cfg.z_dim;
  const int B = std::min(cfg.batch_size, n);

  GeneratorNet gen = make_generator(d, p, cfg.g_units, cfg.var_floor, rng);
  Mlp encoder = make_mlp(p, cfg.egm.e_units, d, rng);
  Mlp disc_z = make_mlp(d, cfg.egm.dz_units, 1, rng);
  Mlp disc_x = make_mlp(p, cfg.egm.dx_units, 1, rng);

  AdamState adam_ge, adam_dz, adam_dx;
  std::vector<Matrix*> ge_params = params_of(encoder);
  {
    const std::vector<Matrix*> gp = params_of(gen);
    ge_params.insert(ge_params.end(), gp.begin(), gp.end());
  }
  adam_ge.init(ge_params);
  adam_dz.init(params_of(disc_z));
  adam_dx.init(params_of(disc_x));

  if (report != nullptr) {
    report->cycle_before = cycle_loss_plain(x_filled, encoder, gen);
  }

  Matrix labels(2 * B, 1);
  labels.topRows(B).setOnes();
  labels.bottomRows(B).setZero();

  for (int iter = 0; iter < cfg.egm.n_iter; ++iter) {
    Matrix xb(B, p);
    for (int k = 0; k < B; ++k) {
      xb.row(k) = x_filled.row(static_cast<int>(rng.uniform_int(n)));
    }
    const Matrix z_prior = normal_matrix(B, d, rng);

    // Latent discriminator: prior draws vs encoder outputs.
    {
      const Matrix ez = mlp_forward(xb, encoder);
      Matrix stacked(2 * B, d);
      stacked << z_prior, ez;
      Tape t;
      std::vector<int> ids;
      const int logits = mlp_on_tape(t, t.constant(stacked), disc_z, &ids);
      const int loss = bce_mean_on_tape(t, logits, labels);
      checked_iter(t.value(loss)(0, 0), "latent discriminator loss", iter);
      t.backward(loss);
      std::vector<Matrix> grads;
      for (int id : ids) grads.push_back(t.grad(id));
      adam_step_blocks(params_of(disc_z), grads, adam_dz, cfg.lr_theta);
    }

    // Data discriminator: data rows vs generator means at prior draws.
    {
      const Matrix gz = generator_forward(z_prior, gen).first;
      Matrix stacked(2 * B, p);
      stacked << xb, gz;
      Tape t;
      std::vector<int> ids;
      const int logits = mlp_on_tape(t, t.constant(stacked), disc_x, &ids);
      const int loss = bce_mean_on_tape(t, logits, labels);
      checked_iter(t.value(loss)(0, 0), "data discriminator loss", iter);
      t.backward(loss);
      std::vector<Matrix> grads;
      for (int id : ids) grads.push_back(t.grad(id));
      adam_step_blocks(params_of(disc_x), grads, adam_dx, cfg.lr_theta);
    }

    // Encoder + generator: cycle consistency plus the non-saturating
    // adversarial terms (fool both discriminators).
    {
      Tape t;
      std::vector<int> e_ids;
      const int x_in = t.constant(xb);
      const int z_e = mlp_on_tape(t, x_in, encoder, &e_ids);

      const int z_both = t.vconcat(z_e, t.constant(z_prior));
      GenOnTape g = generator_on_tape(t, z_both, gen);
      const int x_rec = t.slice(g.mean, 0, 0, B, p);
      const int x_fake = t.slice(g.mean, B, 0, B, p);

      const int cycle = t.mean(t.square(t.sub(x_rec, x_in)));
      const int logit_e = mlp_on_tape(t, z_e, disc_z, nullptr);
      const int adv_z = t.mean(t.softplus(t.scale(logit_e, -1.0)));
      const int logit_fake = mlp_on_tape(t, x_fake, disc_x, nullptr);
      const int adv_x = t.mean(t.softplus(t.scale(logit_fake, -1.0)));
      const int loss = t.add(cycle, t.add(adv_z, adv_x));
      checked_iter(t.value(loss)(0, 0), "encoder-generator loss", iter);
      t.backward(loss);

      std::vector<Matrix> grads;
      for (int id : e_ids) grads.push_back(t.grad(id));
      for (int id : g.param_ids) grads.push_back(t.grad(id));
      adam_step_blocks(ge_params, grads, adam_ge, cfg.lr_theta);
    }
  }

  if (report != nullptr) {
    report->cycle_after = cycle_loss_plain(x_filled, encoder, gen);
  }
  Matrix Z0 = mlp_forward(x_filled, encoder);
  return {std::move(gen), std::move(Z0)};
}

namespace {

struct EpochAccum {
  double loss_z_sum = 0.0;
  long loss_z_count = 0;
  double loss_x_sum = 0.0;
  long loss_x_count = 0;
  double elbo_t_sum = 0.0;
  double elbo_p_sum = 0.0;
  long elbo_count = 0;
};

void write_log_line(std::ostream* log, const EpochLog& e) {
  if (log == nullptr) return;
  (*log) << "epoch " << e.epoch << " loss_z " << format_double(e.loss_z)
         << " loss_xmis " << format_double(e.loss_xmis) << " elbo_theta "
         << format_double(e.elbo_theta) << " elbo_phi "
         << format_double(e.elbo_phi) << " wall_s " << format_double(e.seconds)
         << '\n';
  log->flush();
}

}  // namespace

TrainState fit(const Dataset& ds, const TrainConfig& cfg, std::ostream* log) {
  cfg.validate();
  ds.validate();
  const int n = ds.n();
  const int p = ds.p();
  const int d = cfg.z_dim;
  const int K = cfg.n_inner_steps;

  Rng rng_init = Rng::substream(cfg.seed, "init");
  Rng rng_shuffle = Rng::substream(cfg.seed, "shuffle");
  Rng rng_bnn = Rng::substream(cfg.seed, "bnn");
  Rng rng_egm = Rng::substream(cfg.seed, "egm");

  TrainState state;
  state.X = knn_impute_init(ds);

  if (cfg.egm.enabled && cfg.egm.n_iter > 0) {
    auto [gen, z0] = egm_pretrain(state.X, cfg, rng_egm);
    state.gen = std::move(gen);
    state.Z = std::move(z0);
  } else {
    state.gen = make_generator(d, p, cfg.g_units, cfg.var_floor, rng_init);
    state.Z = normal_matrix(n, d, rng_init);
  }
  state.miss = make_missingness(p, cfg.missingness_units, rng_init);

  // BNN variant: posterior means start at the deterministic initialization.
  GeneratorNet sampled_gen;
  MissingnessNet sampled_miss;
  if (cfg.use_bnn) {
    BnnGenerator bg =
        make_bnn_generator(d, p, cfg.g_units, cfg.var_floor, cfg.prior_scale,
                           rng_init);
    for (std::size_t l = 0; l < bg.trunk.size(); ++l) {
      bg.trunk[l].w_mean = state.gen.trunk.layers[l].W;
      bg.trunk[l].b_mean = state.gen.trunk.layers[l].b;
    }
    bg.mean_head.w_mean = state.gen.mean_head.W;
    bg.mean_head.b_mean = state.gen.mean_head.b;
    bg.var_head.w_mean = state.gen.var_head.W;
    bg.var_head.b_mean = state.gen.var_head.b;
    state.bnn_gen = std::move(bg);

    BnnMissingness bm = make_bnn_missingness(p, cfg.missingness_units,
                                             cfg.prior_scale, rng_init);
    for (std::size_t l = 0; l < bm.trunk.size(); ++l) {
      bm.trunk[l].w_mean = state.miss.trunk.layers[l].W;
      bm.trunk[l].b_mean = state.miss.trunk.layers[l].b;
    }
    bm.logit_head.w_mean = state.miss.logit_head.W;
    bm.logit_head.b_mean = state.miss.logit_head.b;
    state.bnn_miss = std::move(bm);

    sampled_gen = bnn_sample(*state.bnn_gen, rng_bnn);
    sampled_miss = bnn_sample(*state.bnn_miss, rng_bnn);
  }

  AdamState adam_theta, adam_phi;
  std::vector<Matrix*> theta_params =
      cfg.use_bnn ? params_of(*state.bnn_gen) : params_of(state.gen);
  std::vector<Matrix*> phi_params =
      cfg.use_bnn ? params_of(*state.bnn_miss) : params_of(state.miss);
  adam_theta.init(theta_params);
  adam_phi.init(phi_params);

  Matrix Mz = Matrix::Zero(n, d), Vz = Matrix::Zero(n, d);
  Matrix Mx = Matrix::Zero(n, p), Vx = Matrix::Zero(n, p);
  const Matrix R = ds.mask_double();

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t_start = std::chrono::steady_clock::now();
    EpochAccum acc;
    shuffle_indices(order, rng_shuffle);

    for (int start = 0; start < n; start += cfg.batch_size) {
      const int bsize = std::min(cfg.batch_size, n - start);
      std::vector<int> rows(order.begin() + start,
                            order.begin() + start + bsize);
      Matrix Zb(bsize, d), Xb(bsize, p), Rb(bsize, p);
      for (int k = 0; k < bsize; ++k) {
        Zb.row(k) = state.Z.row(rows[k]);
        Xb.row(k) = state.X.row(rows[k]);
        Rb.row(k) = R.row(rows[k]);
      }
      const GeneratorNet& gen_cur = cfg.use_bnn ? sampled_gen : state.gen;
      const MissingnessNet& miss_cur = cfg.use_bnn ? sampled_miss : state.miss;

      for (int k = 1; k <= K; ++k) {
        const long t_inner = static_cast<long>(epoch - 1) * K + k;
        double vz = 0.0;
        Matrix gz;
        try {
          gz = loss_z_grad(Zb, Xb, gen_cur, &vz);
        } catch (const NumericError& e) {
          throw NumericError(std::string(e.what()) + " (epoch " +
                             std::to_string(epoch) + ", batch " +
                             std::to_string(start / cfg.batch_size) + ")");
        }
        clip_l2(gz, cfg.grad_clip);
        adam_step_rows(state.Z, Mz, Vz, rows, gz, t_inner, cfg.lr_z);
        for (int r = 0; r < bsize; ++r) Zb.row(r) = state.Z.row(rows[r]);
        acc.loss_z_sum += vz;
        ++acc.loss_z_count;

        double vx = 0.0;
        Matrix gx;
        try {
          gx = loss_xmis_grad(Xb, Rb, Zb, gen_cur, miss_cur, cfg.beta, &vx);
        } catch (const NumericError& e) {
          throw NumericError(std::string(e.what()) + " (epoch " +
                             std::to_string(epoch) + ", batch " +
                             std::to_string(start / cfg.batch_size) + ")");
        }
        clip_l2(gx, cfg.grad_clip);
        adam_step_rows(state.X, Mx, Vx, rows, gx, t_inner, cfg.lr_x);
        // Observed coordinates are projected back to their input values.
        for (int r = 0; r < bsize; ++r) {
          const int i = rows[r];
          for (int j = 0; j < p; ++j) {
            if (ds.mask(i, j) == 1) state.X(i, j) = ds.x_obs(i, j);
          }
          Xb.row(r) = state.X.row(i);
        }
        acc.loss_x_sum += vx;
        ++acc.loss_x_count;
      }

      std::vector<Matrix> grads;
      ElboValue et, ep;
      if (cfg.use_bnn) {
        et = elbo_theta_bnn(Xb, Zb, *state.bnn_gen, cfg.kl_weight, rng_bnn,
                            &grads, cfg.elbo_samples);
      } else {
        et = elbo_theta_grad(Xb, Zb, state.gen, cfg.weight_decay, &grads);
      }
      for (Matrix& g : grads) g = -g;  // ascend
      adam_step_blocks(theta_params, grads, adam_theta, cfg.lr_theta);

      if (cfg.use_bnn) {
        ep = elbo_phi_bnn(Xb, Rb, *state.bnn_miss, cfg.kl_weight, rng_bnn,
                          &grads, cfg.elbo_samples);
      } else {
        ep = elbo_phi_grad(Xb, Rb, state.miss, cfg.weight_decay, &grads);
      }
      for (Matrix& g : grads) g = -g;
      adam_step_blocks(phi_params, grads, adam_phi, cfg.lr_phi);

      if (cfg.use_bnn) {
        sampled_gen = bnn_sample(*state.bnn_gen, rng_bnn);
        sampled_miss = bnn_sample(*state.bnn_miss, rng_bnn);
      }
      acc.elbo_t_sum += et.value;
      acc.elbo_p_sum += ep.value;
      ++acc.elbo_count;
    }

    EpochLog e;
    e.epoch = epoch;
    e.loss_z = acc.loss_z_sum / std::max(acc.loss_z_count, 1L);
    e.loss_xmis = acc.loss_x_sum / std::max(acc.loss_x_count, 1L);
    e.elbo_theta = acc.elbo_t_sum / std::max(acc.elbo_count, 1L);
    e.elbo_phi = acc.elbo_p_sum / std::max(acc.elbo_count, 1L);
    e.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                              t_start)
                    .count();
    state.epoch_log.push_back(e);
    write_log_line(log, e);
  }

  if (cfg.use_bnn) {
    state.gen = bnn_mean_net(*state.bnn_gen);
    state.miss = bnn_mean_net(*state.bnn_miss);
  }
  return state;
}

MapResult map_refine(const Dataset& ds, const GeneratorNet& gen,
                     const MissingnessNet& miss, const TrainConfig& cfg,
                     int test_epochs) {
  cfg.validate();
  ds.validate();
  const int n = ds.n();
  const int p = ds.p();
  const int d = static_cast<int>(gen.trunk.layers.empty()
                                     ? gen.mean_head.W.rows()
                                     : gen.trunk.layers.front().W.rows());
  if (static_cast<int>(gen.mean_head.W.cols()) != p) {
    throw DataError("map_refine: model expects " +
                    std::to_string(gen.mean_head.W.cols()) +
                    " features, data has " + std::to_string(p));
  }

  Rng rng_init = Rng::substream(cfg.seed, "test_init");
  Rng rng_shuffle = Rng::substream(cfg.seed, "test_shuffle");

  MapResult res;
  res.X = knn_impute_init(ds);
  res.Z = normal_matrix(n, d, rng_init);

  Matrix Mz = Matrix::Zero(n, d), Vz = Matrix::Zero(n, d);
  Matrix Mx = Matrix::Zero(n, p), Vx = Matrix::Zero(n, p);
  const Matrix R = ds.mask_double();
  const int K = cfg.n_inner_steps;

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= test_epochs; ++epoch) {
    shuffle_indices(order, rng_shuffle);
    double loss_sum = 0.0;
    long loss_count = 0;
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int bsize = std::min(cfg.batch_size, n - start);
      std::vector<int> rows(order.begin() + start,
                            order.begin() + start + bsize);
      Matrix Zb(bsize, d), Xb(bsize, p), Rb(bsize, p);
      for (int k = 0; k < bsize; ++k) {
        Zb.row(k) = res.Z.row(rows[k]);
        Xb.row(k) = res.X.row(rows[k]);
        Rb.row(k) = R.row(rows[k]);
      }
      for (int k = 1; k <= K; ++k) {
        const long t_inner = static_cast<long>(epoch - 1) * K + k;
        double vz = 0.0;
        Matrix gz = loss_z_grad(Zb, Xb, gen, &vz);
        clip_l2(gz, cfg.grad_clip);
        adam_step_rows(res.Z, Mz, Vz, rows, gz, t_inner, cfg.lr_z);
        for (int r = 0; r < bsize; ++r) Zb.row(r) = res.Z.row(rows[r]);

        double vx = 0.0;
        Matrix gx = loss_xmis_grad(Xb, Rb, Zb, gen, miss, cfg.beta, &vx);
        clip_l2(gx, cfg.grad_clip);
        adam_step_rows(res.X, Mx, Vx, rows, gx, t_inner, cfg.lr_x);
        for (int r = 0; r < bsize; ++r) {
          const int i = rows[r];
          for (int j = 0; j < p; ++j) {
            if (ds.mask(i, j) == 1) res.X(i, j) = ds.x_obs(i, j);
          }
          Xb.row(r) = res.X.row(i);
        }
        loss_sum += vx;
        ++loss_count;
      }
    }
    res.loss_curve.push_back(loss_sum / std::max(loss_count, 1L));
  }
  return res;
}

}  // namespace missbgm
