#include "missbgm/inference.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <ostream>
#include <thread>

#include "missbgm/errors.hpp"
#include "missbgm/text_io.hpp"

namespace missbgm {

void HmcConfig::validate() const {
  if (n_mcmc < 1) throw ConfigError("posterior.n_mcmc must be >= 1");
  if (burn_in < 0) throw ConfigError("posterior.burn_in must be >= 0");
  if (!(step_size > 0.0)) throw ConfigError("posterior.step_size must be > 0");
  if (n_leapfrog < 1) throw ConfigError("posterior.n_leapfrog must be >= 1");
  if (!(target_accept > 0.0 && target_accept < 1.0)) {
    throw ConfigError("posterior.target_accept must be in (0, 1)");
  }
  if (!(adapt_fraction >= 0.0 && adapt_fraction <= 1.0)) {
    throw ConfigError("posterior.adapt_fraction must be in [0, 1]");
  }
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw ConfigError("posterior.alpha must be in (0, 1)");
  }
  if (threads < 0) throw ConfigError("threads must be >= 0");
}

void DualAveraging::init(double eps0) {
  mu = std::log(10.0 * eps0);
  log_eps = std::log(eps0);
  log_eps_bar = std::log(eps0);
  h_bar = 0.0;
  t = 0;
}

void DualAveraging::update(double accept_prob, double target) {
  ++t;
  const double frac = 1.0 / (static_cast<double>(t) + 10.0);
  h_bar = (1.0 - frac) * h_bar + frac * (target - accept_prob);
  log_eps = mu - std::sqrt(static_cast<double>(t)) / 0.05 * h_bar;
  const double w = std::pow(static_cast<double>(t), -0.75);
  log_eps_bar = w * log_eps + (1.0 - w) * log_eps_bar;
}

double DualAveraging::eps() const { return std::exp(log_eps); }
double DualAveraging::eps_frozen() const { return std::exp(log_eps_bar); }

HmcStepResult hmc_step(Matrix& q, double& lp, Matrix& grad,
                       const LogDensityGrad& target, double eps, int n_leapfrog,
                       Rng& rng) {
  HmcStepResult res;
  Matrix rho = normal_matrix(q.rows(), q.cols(), rng);
  res.h0 = -lp + 0.5 * rho.squaredNorm();

  Matrix q1 = q;
  Matrix g1 = grad;
  rho += 0.5 * eps * g1;
  for (int l = 1; l <= n_leapfrog; ++l) {
    q1 += eps * rho;
    const double lp1 = target(q1, &g1);
    if (!std::isfinite(lp1) || !g1.allFinite()) {
      // Doomed trajectory: reject, consuming the accept draw so the
      // per-sample stream does not depend on where the blow-up happened.
      (void)rng.uniform();
      res.h1 = std::numeric_limits<double>::quiet_NaN();
      return res;
    }
    if (l < n_leapfrog) {
      rho += eps * g1;
    } else {
      rho += 0.5 * eps * g1;
      res.h1 = -lp1 + 0.5 * rho.squaredNorm();
      const double u = rng.uniform();
      if (std::isfinite(res.h1)) {
        res.accept_prob = std::min(1.0, std::exp(res.h0 - res.h1));
        if (u < res.accept_prob) {
          res.accepted = true;
          q = std::move(q1);
          lp = lp1;
          grad = std::move(g1);
        }
      }
    }
  }
  return res;
}

namespace {

struct SweepRecord {
  float step_z = 0.0f;
  float step_x = 0.0f;
  signed char acc_z = -1;  // -1 = no attempt
  signed char acc_x = -1;
};

struct ChainCounters {
  long z_acc = 0, z_att = 0, x_acc = 0, x_att = 0;
  double final_step_z = 0.0, final_step_x = 0.0;
};

}  // namespace

Matrix PosteriorDraws::draw(int s) const {
  Matrix out = base_x;
  for (std::size_t k = 0; k < entries.size(); ++k) {
    out(entries[k].first, entries[k].second) = xmis_draws(k, s);
  }
  return out;
}

PosteriorDraws hmc_within_gibbs(const Matrix& Z0, const Matrix& X0,
                                const Dataset& ds, const HmcModel& model,
                                const HmcConfig& cfg, std::ostream* chain_log,
                                const std::vector<int>* rows_subset) {
  cfg.validate();
  if (model.gen == nullptr || model.miss == nullptr) {
    throw ConfigError("hmc_within_gibbs: model nets not set");
  }
  const int n = ds.n();
  const int p = ds.p();
  if (Z0.rows() != n || X0.rows() != n || X0.cols() != p) {
    throw DataError("hmc_within_gibbs: warm-start shapes do not match data");
  }

  std::vector<int> rows;
  if (rows_subset != nullptr) {
    rows = *rows_subset;
  } else {
    rows.resize(n);
    for (int i = 0; i < n; ++i) rows[i] = i;
  }
  const int n_proc = static_cast<int>(rows.size());
  const int S = cfg.n_mcmc;
  const int total_sweeps = cfg.burn_in + S;
  const long adapt_until =
      static_cast<long>(cfg.burn_in * cfg.adapt_fraction);

  PosteriorDraws out;
  out.rows = rows;
  out.mask = ds.mask;
  out.S = S;
  out.base_x = X0;
  // Observed coordinates come verbatim from the data.
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j) {
      if (ds.mask(i, j) == 1) out.base_x(i, j) = ds.x_obs(i, j);
    }
  }

  // Missing entries of the processed rows, row-major; each row owns a
  // contiguous block of entry slots.
  std::vector<int> entry_offset(n_proc + 1, 0);
  for (int k = 0; k < n_proc; ++k) {
    int m = 0;
    for (int j = 0; j < p; ++j) {
      if (ds.mask(rows[k], j) == 0) ++m;
    }
    entry_offset[k + 1] = entry_offset[k] + m;
  }
  const int n_entries = entry_offset[n_proc];
  out.entries.resize(n_entries);
  for (int k = 0; k < n_proc; ++k) {
    int slot = entry_offset[k];
    for (int j = 0; j < p; ++j) {
      if (ds.mask(rows[k], j) == 0) out.entries[slot++] = {rows[k], j};
    }
  }
  out.xmis_draws.resize(n_entries, S);
  out.z_draws.assign(S, Matrix(n_proc, Z0.cols()));

  std::vector<ChainCounters> counters(n_proc);
  std::vector<SweepRecord> sweep_log;
  if (chain_log != nullptr) {
    sweep_log.resize(static_cast<std::size_t>(n_proc) * total_sweeps);
  }

  const bool use_bnn = model.bnn_gen != nullptr && model.bnn_miss != nullptr;

  auto run_chain = [&](int k) {
    const int row = rows[k];
    Rng rng = Rng::substream(cfg.seed, "chain", static_cast<std::uint64_t>(row));
    Rng bnn_rng =
        Rng::substream(cfg.seed, "chain_bnn", static_cast<std::uint64_t>(row));

    std::vector<int> mcols;
    for (int j = 0; j < p; ++j) {
      if (ds.mask(row, j) == 0) mcols.push_back(j);
    }
    const int m = static_cast<int>(mcols.size());

    Matrix z = Z0.row(row);
    Matrix x = out.base_x.row(row);
    Matrix r(1, p);
    for (int j = 0; j < p; ++j) r(0, j) = ds.mask(row, j);

    GeneratorNet sampled_gen;
    MissingnessNet sampled_miss;
    const GeneratorNet* gen = model.gen;
    const MissingnessNet* miss = model.miss;
    if (use_bnn) {
      sampled_gen = bnn_sample(*model.bnn_gen, bnn_rng);
      sampled_miss = bnn_sample(*model.bnn_miss, bnn_rng);
      gen = &sampled_gen;
      miss = &sampled_miss;
    }

    DualAveraging da_z, da_x;
    da_z.init(cfg.step_size);
    da_x.init(cfg.step_size);
    double eps_z = cfg.step_size;
    double eps_x = cfg.step_size;

    ChainCounters& cc = counters[k];

    for (int sweep = 1; sweep <= total_sweeps; ++sweep) {
      const bool adapting = sweep <= adapt_until;
      if (use_bnn && cfg.bnn_redraw_per_draw && sweep > cfg.burn_in) {
        sampled_gen = bnn_sample(*model.bnn_gen, bnn_rng);
        sampled_miss = bnn_sample(*model.bnn_miss, bnn_rng);
      }

      // (a) latent block
      auto z_target = [&](const Matrix& q, Matrix* g) {
        return hmc_logdensity_z_grad(q, x, *gen, g);
      };
      Matrix gz;
      double lpz = z_target(z, &gz);
      if (!std::isfinite(lpz)) {
        throw NumericError("hmc_within_gibbs: non-finite target at the "
                           "start state of row " +
                           std::to_string(row));
      }
      const HmcStepResult rz =
          hmc_step(z, lpz, gz, z_target, eps_z, cfg.n_leapfrog, rng);
      if (adapting) {
        da_z.update(rz.accept_prob, cfg.target_accept);
        eps_z = sweep == adapt_until ? da_z.eps_frozen() : da_z.eps();
      } else {
        ++cc.z_att;
        if (rz.accepted) ++cc.z_acc;
      }

      // (b) missing-value block with the just-updated z
      HmcStepResult rx;
      if (m > 0) {
        Matrix mean, var;
        generator_heads(z, *gen, &mean, &var);
        Matrix xfull = x;
        auto x_target = [&](const Matrix& q, Matrix* g) {
          for (int c = 0; c < m; ++c) xfull(0, mcols[c]) = q(0, c);
          Matrix gfull;
          const double lp = hmc_logdensity_xmis_grad_cached(
              xfull, r, mean, var, *miss, model.beta,
              g != nullptr ? &gfull : nullptr);
          if (g != nullptr) {
            g->resize(1, m);
            for (int c = 0; c < m; ++c) (*g)(0, c) = gfull(0, mcols[c]);
          }
          return lp;
        };
        Matrix qx(1, m);
        for (int c = 0; c < m; ++c) qx(0, c) = x(0, mcols[c]);
        Matrix gx;
        double lpx = x_target(qx, &gx);
        if (!std::isfinite(lpx)) {
          throw NumericError("hmc_within_gibbs: non-finite target at the "
                             "start state of row " +
                             std::to_string(row));
        }
        rx = hmc_step(qx, lpx, gx, x_target, eps_x, cfg.n_leapfrog, rng);
        for (int c = 0; c < m; ++c) x(0, mcols[c]) = qx(0, c);
        if (adapting) {
          da_x.update(rx.accept_prob, cfg.target_accept);
          eps_x = sweep == adapt_until ? da_x.eps_frozen() : da_x.eps();
        } else {
          ++cc.x_att;
          if (rx.accepted) ++cc.x_acc;
        }
      }

      if (chain_log != nullptr) {
        SweepRecord& rec =
            sweep_log[static_cast<std::size_t>(k) * total_sweeps + sweep - 1];
        rec.step_z = static_cast<float>(eps_z);
        rec.acc_z = rz.accepted ? 1 : 0;
        if (m > 0) {
          rec.step_x = static_cast<float>(eps_x);
          rec.acc_x = rx.accepted ? 1 : 0;
        }
      }

      if (sweep > cfg.burn_in) {
        const int s = sweep - cfg.burn_in - 1;
        out.z_draws[s].row(k) = z;
        for (int c = 0; c < m; ++c) {
          out.xmis_draws(entry_offset[k] + c, s) = x(0, mcols[c]);
        }
      }
    }
    cc.final_step_z = eps_z;
    cc.final_step_x = m > 0 ? eps_x : 0.0;
  };

  int nthreads = cfg.threads > 0
                     ? cfg.threads
                     : static_cast<int>(std::thread::hardware_concurrency());
  nthreads = std::max(1, std::min(nthreads, n_proc));

  if (nthreads == 1) {
    for (int k = 0; k < n_proc; ++k) run_chain(k);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(nthreads);
    for (int w = 0; w < nthreads; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (int k = w; k < n_proc; k += nthreads) run_chain(k);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (std::thread& th : pool) th.join();
    for (const std::exception_ptr& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  for (const ChainCounters& cc : counters) {
    out.stats.z_accepted_post += cc.z_acc;
    out.stats.z_attempts_post += cc.z_att;
    out.stats.x_accepted_post += cc.x_acc;
    out.stats.x_attempts_post += cc.x_att;
    out.stats.final_step_z.push_back(cc.final_step_z);
    out.stats.final_step_x.push_back(cc.final_step_x);
  }

  if (chain_log != nullptr) {
    for (int sweep = 1; sweep <= total_sweeps; ++sweep) {
      double step_z_sum = 0.0, step_x_sum = 0.0;
      long z_n = 0, z_acc = 0, x_n = 0, x_acc = 0;
      for (int k = 0; k < n_proc; ++k) {
        const SweepRecord& rec =
            sweep_log[static_cast<std::size_t>(k) * total_sweeps + sweep - 1];
        step_z_sum += rec.step_z;
        ++z_n;
        if (rec.acc_z == 1) ++z_acc;
        if (rec.acc_x >= 0) {
          step_x_sum += rec.step_x;
          ++x_n;
          if (rec.acc_x == 1) ++x_acc;
        }
      }
      (*chain_log) << "sweep " << sweep << " block z step "
                   << format_double(z_n > 0 ? step_z_sum / z_n : 0.0)
                   << " accept "
                   << format_double(z_n > 0 ? static_cast<double>(z_acc) / z_n
                                            : 0.0)
                   << '\n';
      if (x_n > 0) {
        (*chain_log) << "sweep " << sweep << " block x step "
                     << format_double(step_x_sum / x_n) << " accept "
                     << format_double(static_cast<double>(x_acc) / x_n)
                     << '\n';
      }
    }
  }
  return out;
}

namespace {

double quantile_sorted(const std::vector<double>& v, double q) {
  const double h = q * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(h);
  if (lo + 1 >= v.size()) return v.back();
  const double w = h - static_cast<double>(lo);
  return v[lo] + w * (v[lo + 1] - v[lo]);
}

}  // namespace

std::pair<Matrix, PredictionIntervals> posterior_summaries(
    const PosteriorDraws& draws, double alpha, bool with_intervals) {
  if (draws.S < 1) throw std::invalid_argument("posterior_summaries: S < 1");
  if (with_intervals && draws.S < 2) {
    throw std::invalid_argument(
        "posterior_summaries: intervals need at least 2 draws");
  }
  Matrix point = draws.base_x;
  PredictionIntervals pi;
  pi.alpha = alpha;
  pi.entries = draws.entries;
  const Eigen::Index m = static_cast<Eigen::Index>(draws.entries.size());
  pi.lower.resize(with_intervals ? m : 0);
  pi.upper.resize(with_intervals ? m : 0);

  std::vector<double> buf(draws.S);
  for (Eigen::Index k = 0; k < m; ++k) {
    point(draws.entries[k].first, draws.entries[k].second) =
        draws.xmis_draws.row(k).mean();
    if (with_intervals) {
      for (int s = 0; s < draws.S; ++s) buf[s] = draws.xmis_draws(k, s);
      std::sort(buf.begin(), buf.end());
      pi.lower(k) = quantile_sorted(buf, 0.5 * alpha);
      pi.upper(k) = quantile_sorted(buf, 1.0 - 0.5 * alpha);
    }
  }
  return {std::move(point), std::move(pi)};
}

Eigen::VectorXd posterior_entry_sd(const PosteriorDraws& draws) {
  if (draws.S < 2) {
    throw std::invalid_argument("posterior_entry_sd: need at least 2 draws");
  }
  const Eigen::Index m = static_cast<Eigen::Index>(draws.entries.size());
  Eigen::VectorXd sd(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    const double mean = draws.xmis_draws.row(k).mean();
    const double ss = (draws.xmis_draws.row(k).array() - mean).square().sum();
    sd(k) = std::sqrt(ss / (draws.S - 1));
  }
  return sd;
}

}  // namespace missbgm
