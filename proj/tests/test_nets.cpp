#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "missbgm/checkpoint.hpp"
#include "missbgm/errors.hpp"
#include "missbgm/nets.hpp"
#include "test_util.hpp"

using namespace missbgm;

namespace {

GeneratorNet zero_generator(int d, int p, const std::vector<int>& units,
                            double var_floor) {
  Rng rng(0);
  GeneratorNet g = make_generator(d, p, units, var_floor, rng);
  for (Matrix* m : params_of(g)) m->setZero();
  return g;
}

}  // namespace

TEST_CASE("zero generator: mean 0, variance softplus(0) + floor") {
  const GeneratorNet g = zero_generator(3, 4, {8, 8}, 1e-4);
  const Matrix z = Matrix::Ones(2, 3);
  const auto [mean, var] = generator_forward(z, g);
  CHECK(mean.cwiseAbs().maxCoeff() == 0.0);
  const double expect = std::log(2.0) + 1e-4;
  for (int i = 0; i < var.size(); ++i) {
    CHECK(var(i) == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("identity-like single-unit net reproduces its input mean") {
  Rng rng(1);
  GeneratorNet g = make_generator(1, 1, {1}, 1e-4, rng);
  for (Matrix* m : params_of(g)) m->setZero();
  g.trunk.layers[0].W(0, 0) = 1.0;  // leaky-relu passes positives unchanged
  g.mean_head.W(0, 0) = 1.0;
  const auto [mean, var] = generator_forward(Matrix::Ones(1, 1), g);
  CHECK(mean(0, 0) == doctest::Approx(1.0));
}

TEST_CASE("batched forward equals per-sample forward exactly") {
  Rng rng(5);
  const GeneratorNet g = make_generator(4, 6, {9, 7}, 1e-4, rng);
  const MissingnessNet f = make_missingness(6, {5, 5}, rng);
  const Matrix Z = normal_matrix(3, 4, rng);
  const auto [mean_b, var_b] = generator_forward(Z, g);
  const Matrix X = normal_matrix(3, 6, rng);
  const Matrix logits_b = missingness_forward(X, f);
  for (int i = 0; i < 3; ++i) {
    const auto [mean_1, var_1] = generator_forward(Z.row(i), g);
    CHECK((mean_b.row(i) - mean_1).cwiseAbs().maxCoeff() == 0.0);
    CHECK((var_b.row(i) - var_1).cwiseAbs().maxCoeff() == 0.0);
    const Matrix logits_1 = missingness_forward(X.row(i), f);
    CHECK((logits_b.row(i) - logits_1).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("batch permutation equivariance") {
  Rng rng(6);
  const GeneratorNet g = make_generator(3, 5, {7}, 1e-4, rng);
  Matrix Z = normal_matrix(4, 3, rng);
  const auto [mean, var] = generator_forward(Z, g);
  Matrix Zp(4, 3);
  const int perm[4] = {2, 0, 3, 1};
  for (int i = 0; i < 4; ++i) Zp.row(i) = Z.row(perm[i]);
  const auto [mean_p, var_p] = generator_forward(Zp, g);
  for (int i = 0; i < 4; ++i) {
    CHECK((mean_p.row(i) - mean.row(perm[i])).cwiseAbs().maxCoeff() == 0.0);
    CHECK((var_p.row(i) - var.row(perm[i])).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("zero missingness net gives logit 0, probability one half") {
  Rng rng(2);
  MissingnessNet f = make_missingness(3, {4}, rng);
  for (Matrix* m : params_of(f)) m->setZero();
  const Matrix logits = missingness_forward(normal_matrix(2, 3, rng), f);
  CHECK(logits.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("single identity layer: logits equal the input") {
  Rng rng(3);
  MissingnessNet f = make_missingness(3, {}, rng);
  f.logit_head.W = Matrix::Identity(3, 3);
  f.logit_head.b.setZero();
  const Matrix x = normal_matrix(5, 3, rng);
  CHECK((missingness_forward(x, f) - x).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("variance is floored for random nets and inputs") {
  Rng rng(8);
  for (int rep = 0; rep < 1000; ++rep) {
    GeneratorNet g = make_generator(2, 3, {4}, 1e-4, rng);
    for (Matrix* m : params_of(g)) *m *= 5.0 * rng.uniform();
    const auto [mean, var] = generator_forward(normal_matrix(1, 2, rng), g);
    CHECK(var.minCoeff() >= 1e-4);
  }
}

TEST_CASE("non-finite parameters are reported with the layer") {
  Rng rng(4);
  GeneratorNet g = make_generator(2, 3, {4, 4}, 1e-4, rng);
  g.trunk.layers[1].W(0, 0) = std::numeric_limits<double>::infinity();
  try {
    generator_forward(Matrix::Ones(1, 2), g);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("layer 1") != std::string::npos);
  }
}

TEST_CASE("variational layer: KL closed forms") {
  const double raw_at = std::log(std::expm1(1.0));  // softplus(raw) = 1

  VariationalDense v;
  v.w_mean = Matrix::Zero(1, 1);
  v.w_raw = Matrix::Constant(1, 1, raw_at);
  v.b_mean = Matrix::Zero(1, 0);
  v.b_raw = Matrix::Zero(1, 0);
  v.prior_scale = 1.0;

  // mu = 0, sigma = prior: identical Gaussians
  CHECK(bnn_kl(v) == doctest::Approx(0.0).epsilon(1e-12));
  // mu = 1, sigma = 1, prior 1: KL = 0.5
  v.w_mean(0, 0) = 1.0;
  CHECK(bnn_kl(v) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("KL matches a Monte Carlo estimate within 1%") {
  // KL(q || pi) = E_q[log q - log pi] estimated from 1e6 draws of q.
  const double mu = 0.7, sigma = 0.6, prior = 1.3;
  VariationalDense v;
  v.w_mean = Matrix::Constant(1, 1, mu);
  v.w_raw = Matrix::Constant(1, 1, std::log(std::expm1(sigma)));
  v.b_mean = Matrix::Zero(1, 0);
  v.b_raw = Matrix::Zero(1, 0);
  v.prior_scale = prior;
  const double closed = bnn_kl(v);

  Rng rng(99);
  double acc = 0.0;
  const long n = 1000000;
  for (long i = 0; i < n; ++i) {
    const double w = mu + sigma * rng.normal();
    const double log_q =
        -0.5 * (w - mu) * (w - mu) / (sigma * sigma) - std::log(sigma);
    const double log_pi = -0.5 * w * w / (prior * prior) - std::log(prior);
    acc += log_q - log_pi;
  }
  CHECK(acc / n == doctest::Approx(closed).epsilon(0.01));
}

TEST_CASE("mean weights reproduce the deterministic net exactly") {
  Rng rng(12);
  const BnnGenerator bg = make_bnn_generator(3, 5, {6, 6}, 1e-4, 1.0, rng);
  const GeneratorNet mean_net = bnn_mean_net(bg);
  // Degenerate scales: softplus(-800) underflows to exactly 0.
  BnnGenerator degenerate = bg;
  for (VariationalDense& layer : degenerate.trunk) {
    layer.w_raw.setConstant(-800.0);
    layer.b_raw.setConstant(-800.0);
  }
  degenerate.mean_head.w_raw.setConstant(-800.0);
  degenerate.mean_head.b_raw.setConstant(-800.0);
  degenerate.var_head.w_raw.setConstant(-800.0);
  degenerate.var_head.b_raw.setConstant(-800.0);
  Rng sample_rng(13);
  const GeneratorNet sampled = bnn_sample(degenerate, sample_rng);
  const Matrix z = normal_matrix(4, 3, rng);
  const auto [m1, v1] = generator_forward(z, mean_net);
  const auto [m2, v2] = generator_forward(z, sampled);
  CHECK((m1 - m2).cwiseAbs().maxCoeff() == 0.0);
  CHECK((v1 - v2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  Rng rng(21);
  Checkpoint ck;
  ck.gen = make_generator(4, 7, {9, 8}, 1e-4, rng);
  ck.miss = make_missingness(7, {5}, rng);
  ck.scaler.mean = Eigen::RowVectorXd::Random(7);
  ck.scaler.std = (Eigen::RowVectorXd::Random(7).array().abs() + 0.5).matrix();
  ck.beta = 0.01;
  ck.z_dim = 4;
  ck.bnn_gen = make_bnn_generator(4, 7, {9, 8}, 1e-4, 1.0, rng);
  ck.bnn_miss = make_bnn_missingness(7, {5}, 1.0, rng);

  const std::string path =
      (std::filesystem::temp_directory_path() / "missbgm_ck_test.txt")
          .string();
  save_checkpoint(ck, path);
  const Checkpoint back = load_checkpoint(path);
  std::remove(path.c_str());

  CHECK(back.z_dim == ck.z_dim);
  CHECK(back.beta == ck.beta);
  CHECK((back.scaler.mean - ck.scaler.mean).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.scaler.std - ck.scaler.std).cwiseAbs().maxCoeff() == 0.0);
  const auto orig_params = params_of(ck.gen);
  GeneratorNet back_gen = back.gen;
  const auto back_params = params_of(back_gen);
  REQUIRE(orig_params.size() == back_params.size());
  for (std::size_t k = 0; k < orig_params.size(); ++k) {
    CHECK((*orig_params[k] - *back_params[k]).cwiseAbs().maxCoeff() == 0.0);
  }
  REQUIRE(back.bnn_gen.has_value());
  BnnGenerator bg_orig = *ck.bnn_gen;
  BnnGenerator bg_back = *back.bnn_gen;
  const auto vo = params_of(bg_orig);
  const auto vb = params_of(bg_back);
  REQUIRE(vo.size() == vb.size());
  for (std::size_t k = 0; k < vo.size(); ++k) {
    CHECK((*vo[k] - *vb[k]).cwiseAbs().maxCoeff() == 0.0);
  }
}
