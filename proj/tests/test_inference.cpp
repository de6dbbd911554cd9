#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "missbgm/inference.hpp"
#include "missbgm/errors.hpp"
#include "missbgm/train.hpp"
#include "test_util.hpp"

using namespace missbgm;

namespace {

// Generator whose heads ignore z: mean 0, variance exactly 1. The z-target
// then reduces to the standard normal prior.
GeneratorNet constant_standard_gaussian(int d, int p) {
  Rng rng(0);
  GeneratorNet g = make_generator(d, p, {4}, 1e-4, rng);
  for (Matrix* m : params_of(g)) m->setZero();
  g.var_head.b.setConstant(std::log(std::expm1(1.0 - g.var_floor)));
  return g;
}

MissingnessNet flat_missnet(int p) {
  Rng rng(0);
  MissingnessNet f = make_missingness(p, {}, rng);
  for (Matrix* m : params_of(f)) m->setZero();
  return f;
}

}  // namespace

TEST_CASE("leapfrog energy error on a quadratic target is O(eps^2)") {
  // standard Gaussian target; eps = 1e-4, L = 5
  auto target = [](const Matrix& q, Matrix* grad) {
    if (grad != nullptr) *grad = -q;
    return -0.5 * q.squaredNorm();
  };
  Rng rng(3);
  Matrix q = normal_matrix(1, 5, rng);
  Matrix g;
  double lp = target(q, &g);
  const HmcStepResult res = hmc_step(q, lp, g, target, 1e-4, 5, rng);
  CHECK(std::abs(res.h1 - res.h0) < 1e-6);
}

TEST_CASE("dual averaging drives acceptance toward the target") {
  auto target = [](const Matrix& q, Matrix* grad) {
    if (grad != nullptr) *grad = -q;
    return -0.5 * q.squaredNorm();
  };
  Rng rng(5);
  Matrix q = normal_matrix(1, 5, rng);
  Matrix g;
  double lp = target(q, &g);
  DualAveraging da;
  da.init(1.9);  // deliberately coarse start
  double eps = 1.9;
  for (int t = 1; t <= 300; ++t) {
    const HmcStepResult r = hmc_step(q, lp, g, target, eps, 5, rng);
    da.update(r.accept_prob, 0.75);
    eps = da.eps();
  }
  eps = da.eps_frozen();
  long acc = 0;
  const int trials = 400;
  for (int t = 0; t < trials; ++t) {
    if (hmc_step(q, lp, g, target, eps, 5, rng).accepted) ++acc;
  }
  const double rate = static_cast<double>(acc) / trials;
  CHECK(rate > 0.55);
  CHECK(rate < 0.95);
}

TEST_CASE("z-chain samples the prior when the generator is constant") {
  const int d = 5, p = 4, n = 40;
  const GeneratorNet gen = constant_standard_gaussian(d, p);
  const MissingnessNet miss = flat_missnet(p);

  Dataset ds;
  Rng rng(7);
  ds.x_obs = normal_matrix(n, p, rng);
  ds.mask = Eigen::MatrixXi::Ones(n, p);  // no missing entries: z-chain only

  HmcModel model;
  model.gen = &gen;
  model.miss = &miss;
  model.beta = 0.01;

  HmcConfig cfg;
  cfg.n_mcmc = 2000;
  cfg.burn_in = 200;
  cfg.seed = 42;
  cfg.threads = 2;

  const Matrix Z0 = Matrix::Zero(n, d);
  const PosteriorDraws draws =
      hmc_within_gibbs(Z0, ds.x_obs, ds, model, cfg);
  REQUIRE(draws.S == 2000);
  CHECK(draws.entries.empty());

  // pool a few chains; each coordinate should match N(0,1)
  for (int k : {0, 7, 23}) {
    for (int c = 0; c < d; ++c) {
      std::vector<double> chain(draws.S);
      for (int s = 0; s < draws.S; ++s) chain[s] = draws.z_draws[s](k, c);
      const double ess = test::effective_sample_size(chain);
      const double mean = test::mean_of(chain);
      const double var = test::var_of(chain);
      const double se = std::sqrt(var / ess);
      CHECK(std::abs(mean) < 3.0 * se + 1e-12);
      CHECK(var == doctest::Approx(1.0).epsilon(0.15));
    }
  }
  // post-adaptation acceptance in a healthy band
  CHECK(draws.stats.z_accept_rate() > 0.6);
  CHECK(draws.stats.z_accept_rate() < 0.95);
}

TEST_CASE("conjugate linear-Gaussian instance: chain mean matches the "
          "analytic conditional mean") {
  // generator linear in z (empty trunk), beta = 0: conditionally Gaussian.
  const int d = 2, p = 6, n = 12;
  Rng rng(19);
  GeneratorNet gen = make_generator(d, p, {}, 1e-4, rng);
  const double sig2 = 0.49;
  gen.var_head.W.setZero();
  gen.var_head.b.setConstant(std::log(std::expm1(sig2 - gen.var_floor)));
  const MissingnessNet miss = flat_missnet(p);

  const Matrix W = gen.mean_head.W;  // d x p
  const Matrix bias = gen.mean_head.b;

  Dataset ds;
  ds.x_obs.resize(n, p);
  ds.mask.resize(n, p);
  Rng gen_rng(23);
  for (int i = 0; i < n; ++i) {
    const Matrix z = normal_matrix(1, d, gen_rng);
    const Matrix x = z * W + bias + std::sqrt(sig2) * normal_matrix(1, p, gen_rng);
    ds.x_obs.row(i) = x;
    for (int j = 0; j < p; ++j) ds.mask(i, j) = j < 4 ? 1 : 0;  // last 2 missing
    ds.x_obs(i, 4) = std::nan("");
    ds.x_obs(i, 5) = std::nan("");
  }

  HmcModel model;
  model.gen = &gen;
  model.miss = &miss;
  model.beta = 0.0;

  HmcConfig cfg;
  cfg.n_mcmc = 4000;
  cfg.burn_in = 400;
  cfg.seed = 11;
  cfg.threads = 2;

  Matrix X0 = ds.x_obs;
  for (int i = 0; i < n; ++i) {
    X0(i, 4) = 0.0;
    X0(i, 5) = 0.0;
  }
  const PosteriorDraws draws =
      hmc_within_gibbs(Matrix::Zero(n, d), X0, ds, model, cfg);

  // Analytic posterior: z | x_obs ~ N(S Wo Do^{-1} (x_obs - b_o), S),
  // S = (I + Wo Do^{-1} Wo^T)^{-1}; x_mis | z ~ N(z Wm + b_m, sig2).
  const Matrix Wo = W.leftCols(4);  // d x 4
  const Matrix Wm = W.rightCols(2);
  Matrix S_inv = Matrix::Identity(d, d) + Wo * Wo.transpose() / sig2;
  const Matrix S = S_inv.inverse();
  for (int i : {0, 5, 11}) {
    Eigen::VectorXd resid(4);
    for (int j = 0; j < 4; ++j) resid(j) = ds.x_obs(i, j) - bias(0, j);
    const Eigen::VectorXd z_mean = S * (Wo * resid) / sig2;
    const Eigen::RowVectorXd x_mean =
        (z_mean.transpose() * Wm) + bias.rightCols(2);
    for (int c = 0; c < 2; ++c) {
      // locate the entry slot for (i, 4 + c)
      int slot = -1;
      for (std::size_t k = 0; k < draws.entries.size(); ++k) {
        if (draws.entries[k].first == i && draws.entries[k].second == 4 + c) {
          slot = static_cast<int>(k);
          break;
        }
      }
      REQUIRE(slot >= 0);
      std::vector<double> chain(draws.S);
      for (int s = 0; s < draws.S; ++s) chain[s] = draws.xmis_draws(slot, s);
      const double ess = test::effective_sample_size(chain);
      const double se = std::sqrt(test::var_of(chain) / ess);
      CHECK(std::abs(test::mean_of(chain) - x_mean(c)) < 3.0 * se + 1e-9);
    }
  }
}

TEST_CASE("per-sample chains: subset re-run reproduces the full run") {
  auto [ds, op] = simulate_oracle(30, 8, 0.4, 3);
  TrainConfig tcfg;
  tcfg.z_dim = 3;
  tcfg.epochs = 2;
  tcfg.g_units = {8};
  tcfg.missingness_units = {6};
  tcfg.egm.enabled = false;
  tcfg.seed = 5;
  const TrainState st = fit(ds, tcfg);

  HmcModel model;
  model.gen = &st.gen;
  model.miss = &st.miss;
  model.beta = tcfg.beta;

  HmcConfig cfg;
  cfg.n_mcmc = 50;
  cfg.burn_in = 30;
  cfg.seed = 17;
  cfg.threads = 2;

  const PosteriorDraws full = hmc_within_gibbs(st.Z, st.X, ds, model, cfg);

  const std::vector<int> subset = {7};
  const PosteriorDraws solo =
      hmc_within_gibbs(st.Z, st.X, ds, model, cfg, nullptr, &subset);
  REQUIRE(solo.entries.size() > 0);

  // align entries of row 7 in the full run
  for (std::size_t k = 0; k < solo.entries.size(); ++k) {
    int full_slot = -1;
    for (std::size_t q = 0; q < full.entries.size(); ++q) {
      if (full.entries[q] == solo.entries[k]) {
        full_slot = static_cast<int>(q);
        break;
      }
    }
    REQUIRE(full_slot >= 0);
    for (int s = 0; s < cfg.n_mcmc; ++s) {
      CHECK(solo.xmis_draws(k, s) == full.xmis_draws(full_slot, s));
    }
  }
}

TEST_CASE("serial and parallel runs agree bitwise") {
  auto [ds, op] = simulate_oracle(24, 8, 0.4, 9);
  TrainConfig tcfg;
  tcfg.z_dim = 3;
  tcfg.epochs = 1;
  tcfg.g_units = {8};
  tcfg.missingness_units = {6};
  tcfg.egm.enabled = false;
  const TrainState st = fit(ds, tcfg);

  HmcModel model;
  model.gen = &st.gen;
  model.miss = &st.miss;
  model.beta = tcfg.beta;

  HmcConfig cfg;
  cfg.n_mcmc = 40;
  cfg.burn_in = 20;
  cfg.seed = 4;

  cfg.threads = 1;
  const PosteriorDraws serial = hmc_within_gibbs(st.Z, st.X, ds, model, cfg);
  cfg.threads = 2;
  const PosteriorDraws parallel = hmc_within_gibbs(st.Z, st.X, ds, model, cfg);
  CHECK((serial.xmis_draws - parallel.xmis_draws).cwiseAbs().maxCoeff() ==
        0.0);
  for (int s = 0; s < serial.S; ++s) {
    CHECK((serial.z_draws[s] - parallel.z_draws[s]).cwiseAbs().maxCoeff() ==
          0.0);
  }
}

TEST_CASE("observed coordinates are identical in every draw; chain log "
          "freezes after adaptation") {
  auto [ds, op] = simulate_oracle(20, 8, 0.5, 21);
  TrainConfig tcfg;
  tcfg.z_dim = 3;
  tcfg.epochs = 1;
  tcfg.g_units = {8};
  tcfg.missingness_units = {6};
  tcfg.egm.enabled = false;
  const TrainState st = fit(ds, tcfg);

  HmcModel model;
  model.gen = &st.gen;
  model.miss = &st.miss;
  model.beta = tcfg.beta;

  HmcConfig cfg;
  cfg.n_mcmc = 30;
  cfg.burn_in = 40;
  cfg.adapt_fraction = 0.5;
  cfg.seed = 2;
  cfg.threads = 2;

  std::ostringstream chain_log;
  const PosteriorDraws draws =
      hmc_within_gibbs(st.Z, st.X, ds, model, cfg, &chain_log);

  for (int s = 0; s < draws.S; ++s) {
    const Matrix x = draws.draw(s);
    for (int i = 0; i < ds.n(); ++i) {
      for (int j = 0; j < ds.p(); ++j) {
        if (ds.mask(i, j) == 1) CHECK(x(i, j) == ds.x_obs(i, j));
      }
    }
  }

  // parse the chain log: mean step sizes must be constant after the
  // adaptation window (sweep > 20)
  std::istringstream in(chain_log.str());
  std::string tok, block;
  int sweep;
  double step, acc;
  double frozen_z = -1.0, frozen_x = -1.0;
  while (in >> tok >> sweep >> tok >> block >> tok >> step >> tok >> acc) {
    if (sweep <= 20) continue;
    double& frozen = block == "z" ? frozen_z : frozen_x;
    if (frozen < 0.0) {
      frozen = step;
    } else {
      CHECK(step == frozen);
    }
  }
  CHECK(frozen_z > 0.0);
  CHECK(frozen_x > 0.0);
}

TEST_CASE("posterior summaries: means, quantile rule, errors") {
  PosteriorDraws draws;
  draws.S = 100;
  draws.entries = {{0, 1}};
  draws.rows = {0};
  draws.mask = Eigen::MatrixXi::Ones(1, 2);
  draws.mask(0, 1) = 0;
  draws.base_x = Matrix::Zero(1, 2);
  draws.xmis_draws.resize(1, 100);
  for (int s = 0; s < 100; ++s) draws.xmis_draws(0, s) = 100 - s;  // {1..100}
  draws.z_draws.assign(100, Matrix::Zero(1, 1));

  const auto [point, pi] = posterior_summaries(draws, 0.05);
  CHECK(point(0, 1) == doctest::Approx(50.5));
  CHECK(pi.lower(0) == doctest::Approx(3.475).epsilon(1e-12));
  CHECK(pi.upper(0) == doctest::Approx(97.525).epsilon(1e-12));
  CHECK(pi.width()(0) == doctest::Approx(94.05));

  // identical draws -> zero width at that value
  draws.xmis_draws.setConstant(2.5);
  const auto [point2, pi2] = posterior_summaries(draws, 0.05);
  CHECK(point2(0, 1) == 2.5);
  CHECK(pi2.lower(0) == 2.5);
  CHECK(pi2.upper(0) == 2.5);

  // two draws {-1, 1}: mean 0
  draws.S = 2;
  draws.xmis_draws.resize(1, 2);
  draws.xmis_draws << -1.0, 1.0;
  const auto [point3, pi3] = posterior_summaries(draws, 0.5);
  CHECK(point3(0, 1) == 0.0);

  // a single draw cannot produce intervals
  draws.S = 1;
  draws.xmis_draws.resize(1, 1);
  CHECK_THROWS_AS(posterior_summaries(draws, 0.05, true),
                  std::invalid_argument);
  const auto [point4, pi4] = posterior_summaries(draws, 0.05, false);
  CHECK(point4(0, 1) == draws.xmis_draws(0, 0));
}

TEST_CASE("variational model: per-draw weight redraws are deterministic "
          "and flag-controlled") {
  auto [ds, op] = simulate_oracle(16, 8, 0.4, 31);
  TrainConfig tcfg;
  tcfg.z_dim = 2;
  tcfg.epochs = 2;
  tcfg.g_units = {6};
  tcfg.missingness_units = {5};
  tcfg.egm.enabled = false;
  tcfg.use_bnn = true;
  const TrainState st = fit(ds, tcfg);
  REQUIRE(st.bnn_gen.has_value());

  HmcModel model;
  model.gen = &st.gen;
  model.miss = &st.miss;
  model.beta = tcfg.beta;
  model.bnn_gen = &*st.bnn_gen;
  model.bnn_miss = &*st.bnn_miss;

  HmcConfig cfg;
  cfg.n_mcmc = 25;
  cfg.burn_in = 20;
  cfg.seed = 6;
  cfg.threads = 2;

  const PosteriorDraws a = hmc_within_gibbs(st.Z, st.X, ds, model, cfg);
  const PosteriorDraws b = hmc_within_gibbs(st.Z, st.X, ds, model, cfg);
  CHECK((a.xmis_draws - b.xmis_draws).cwiseAbs().maxCoeff() == 0.0);

  cfg.bnn_redraw_per_draw = false;
  const PosteriorDraws fixed = hmc_within_gibbs(st.Z, st.X, ds, model, cfg);
  CHECK((a.xmis_draws - fixed.xmis_draws).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("hmc config validation") {
  HmcConfig cfg;
  cfg.n_mcmc = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = HmcConfig{};
  cfg.target_accept = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = HmcConfig{};
  cfg.step_size = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
