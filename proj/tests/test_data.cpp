#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "missbgm/data.hpp"
#include "missbgm/rng.hpp"
#include "test_util.hpp"

using namespace missbgm;

namespace {

std::string temp_file(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("simulate_oracle: shape errors") {
  CHECK_THROWS_AS(simulate_oracle(10, 5, 0.5, 1), DataError);
  CHECK_THROWS_AS(simulate_oracle(10, 20, 0.0, 1), DataError);
  CHECK_THROWS_AS(simulate_oracle(10, 20, 1.0, 1), DataError);
}

TEST_CASE("simulate_oracle: anchors observed, per-column rate near target") {
  const auto [ds, op] = simulate_oracle(10000, 20, 0.4, 7);
  for (int j = 0; j < op.p_anchor; ++j) {
    CHECK(ds.mask.col(j).sum() == 10000);
  }
  for (int j = op.p_anchor; j < 20; ++j) {
    const double missing =
        1.0 - ds.mask.col(j).sum() / 10000.0;
    CHECK(missing == doctest::Approx(0.4).epsilon(0.05));
    CHECK(std::abs(missing - 0.4) < 0.02);
  }
  ds.validate();
}

TEST_CASE("simulate_oracle: observed residuals follow the lower-truncated law") {
  const double rate = 0.5;
  const auto [ds, op] = simulate_oracle(20000, 12, rate, 11);
  // residual mean over observed target entries should match
  // -phi(kappa)/Phi(kappa) within 3 standard errors
  std::vector<double> resid;
  const Matrix& full = *ds.x_full;
  for (int i = 0; i < ds.n(); ++i) {
    for (int l = 0; l < op.p_target(); ++l) {
      const int j = op.p_anchor + l;
      if (ds.mask(i, j) == 1) {
        const double mu =
            full.row(i).head(op.p_anchor) * op.B.col(l) + op.b(l);
        resid.push_back((full(i, j) - mu) / op.sigma(l));
      }
    }
  }
  const double expect = -normal_pdf(op.kappa) / normal_cdf(op.kappa);
  const double se =
      std::sqrt(test::var_of(resid) / static_cast<double>(resid.size()));
  CHECK(std::abs(test::mean_of(resid) - expect) < 3.0 * se);
}

TEST_CASE("simulate_oracle: bitwise reproducible; seeds change params") {
  const auto [d1, p1] = simulate_oracle(50, 10, 0.3, 42);
  const auto [d2, p2] = simulate_oracle(50, 10, 0.3, 42);
  CHECK((d1.x_full.value() - d2.x_full.value()).cwiseAbs().maxCoeff() == 0.0);
  CHECK((d1.mask - d2.mask).cwiseAbs().maxCoeff() == 0);
  CHECK((p1.B - p2.B).cwiseAbs().maxCoeff() == 0.0);
  const auto [d3, p3] = simulate_oracle(50, 10, 0.3, 43);
  CHECK((p1.B - p3.B).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("oracle_entry: untruncated limit and kappa = 0 closed forms") {
  // rate -> 1 means kappa -> -inf: interval approaches the plain Gaussian
  {
    const double kappa = normal_quantile(1.0 - 0.99999);
    const OracleEntry e = oracle_entry(2.0, 1.5, kappa, 0.05);
    CHECK(std::abs(e.lower - (2.0 + 1.5 * normal_quantile(0.025))) < 0.01);
    CHECK(std::abs(e.upper - (2.0 + 1.5 * normal_quantile(0.975))) < 0.01);
  }
  // rate = 0.5: kappa = 0, p_lo = 0.5125, p_hi = 0.9875
  {
    const OracleEntry e = oracle_entry(0.0, 1.0, 0.0, 0.05);
    CHECK(e.lower ==
          doctest::Approx(test::quantile_by_bisection(0.5125)).epsilon(1e-9));
    CHECK(e.upper ==
          doctest::Approx(test::quantile_by_bisection(0.9875)).epsilon(1e-9));
    CHECK(e.lower == doctest::Approx(0.0313).epsilon(1e-2));
    CHECK(e.upper == doctest::Approx(2.2414).epsilon(1e-3));
    CHECK(e.mean == doctest::Approx(0.797885).epsilon(1e-5));
  }
}

TEST_CASE("oracle mean for kappa 0 against rejection sampling") {
  Rng rng(5);
  std::vector<double> kept;
  while (kept.size() < 300000) {
    const double e = rng.normal();
    if (e > 0.0) kept.push_back(e);
  }
  const OracleEntry e = oracle_entry(0.0, 1.0, 0.0, 0.05);
  CHECK(test::mean_of(kept) == doctest::Approx(e.mean).epsilon(3e-3));
  CHECK(std::sqrt(test::var_of(kept)) == doctest::Approx(e.sd).epsilon(1e-2));
}

TEST_CASE("oracle interval coverage of true missing values is 1 - alpha") {
  const auto [ds, op] = simulate_oracle(20000, 50, 0.5, 123);
  const Matrix& full = *ds.x_full;
  const Matrix anchors = full.leftCols(op.p_anchor);
  const OracleConditional oc = oracle_conditional(anchors, op, 0.05);
  long covered = 0, total = 0;
  for (int i = 0; i < ds.n(); ++i) {
    for (int l = 0; l < op.p_target(); ++l) {
      const int j = op.p_anchor + l;
      if (ds.mask(i, j) == 0) {
        ++total;
        const double t = full(i, j);
        if (t >= oc.lower(i, l) && t <= oc.upper(i, l)) ++covered;
      }
    }
  }
  const double coverage = static_cast<double>(covered) / total;
  CHECK(std::abs(coverage - 0.95) < 0.01);
}

TEST_CASE("inject_mnar_mask: calibration, degenerate scores, direction") {
  // degenerate: all-zero table -> every probability is 1 - rate exactly
  {
    const Matrix zeros = Matrix::Zero(2000, 10);
    const auto [ds, spec] = inject_mnar_mask(zeros, 0.3, 5);
    const double sig_beta0 = 1.0 / (1.0 + std::exp(-spec.beta0));
    CHECK(sig_beta0 == doctest::Approx(0.7).epsilon(1e-4));
  }
  // calibration and repair on a standardized Gaussian table
  {
    Rng rng(9);
    Matrix x(5000, 50);
    for (int i = 0; i < x.size(); ++i) x(i) = rng.normal();
    const auto [ds, spec] = inject_mnar_mask(x, 0.2, 17);
    const double missing_frac =
        1.0 - ds.mask.cast<double>().sum() / static_cast<double>(x.size());
    CHECK(std::abs(missing_frac - 0.2) < 0.005);
    ds.validate();  // no empty rows or columns

    // self-masking direction: masked entries have higher values
    double mean_obs = 0.0, mean_mis = 0.0;
    long n_obs = 0, n_mis = 0;
    for (int i = 0; i < x.rows(); ++i) {
      for (int j = 0; j < x.cols(); ++j) {
        if (ds.mask(i, j) == 1) {
          mean_obs += x(i, j);
          ++n_obs;
        } else {
          mean_mis += x(i, j);
          ++n_mis;
        }
      }
    }
    CHECK(mean_mis / n_mis > mean_obs / n_obs + 0.2);
  }
  CHECK_THROWS_AS(inject_mnar_mask(Matrix::Zero(5, 5), 0.0, 1), DataError);
  CHECK_THROWS_AS(inject_mnar_mask(Matrix::Zero(5, 5), 1.0, 1), DataError);
}

TEST_CASE("inject_mnar_mask: repair flips at most n + p entries") {
  Rng rng(13);
  Matrix x(40, 8);
  for (int i = 0; i < x.size(); ++i) x(i) = rng.normal();
  // extreme rate so that empty rows/columns actually occur
  const auto [ds, spec] = inject_mnar_mask(x, 0.9, 3);
  ds.validate();
  // count entries where mask=1 but the Bernoulli draw would have been 0:
  // bounded by construction; verify via the observation count lower bound.
  long observed = ds.mask.cast<long>().sum();
  CHECK(observed <= static_cast<long>(0.1 * x.size() + x.rows() + x.cols() +
                                      4 * std::sqrt(0.09 * x.size())));
}

TEST_CASE("standardization over observed entries only") {
  Matrix x(3, 2);
  x << 0.0, 5.0, 2.0, std::nan(""), std::nan(""), 7.0;
  const Scaler s = fit_scaler(x);
  // column 0: observed {0, 2} -> mean 1, population std 1
  CHECK(s.mean(0) == doctest::Approx(1.0));
  CHECK(s.std(0) == doctest::Approx(1.0));
  const Matrix xs = apply_scaler(x, s);
  CHECK(xs(0, 0) == doctest::Approx(-1.0));
  CHECK(xs(1, 0) == doctest::Approx(1.0));
  CHECK(std::isnan(xs(1, 1)));  // marker passes through
  CHECK(std::isnan(xs(2, 0)));
  const Matrix back = invert_scaler(xs, s);
  CHECK(std::abs(back(0, 1) - 5.0) < 1e-12);
  CHECK(std::abs(back(1, 0) - 2.0) < 1e-12);
  CHECK(std::isnan(back(1, 1)));
}

TEST_CASE("constant column raises an error naming the column") {
  Matrix x(3, 2);
  x << 1.0, 7.0, 1.0, 8.0, 1.0, 9.0;
  try {
    fit_scaler(x);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("column 0") != std::string::npos);
  }
}

TEST_CASE("csv: markers, masks, round trip, precedence, errors") {
  const std::string path = temp_file("missbgm_test.csv");
  {
    std::ofstream out(path);
    out << "1.0,,3.0\n0.25,nan,NaN\n";
  }
  const Dataset ds = dataset_from_csv(path);
  CHECK(ds.mask(0, 0) == 1);
  CHECK(ds.mask(0, 1) == 0);
  CHECK(ds.mask(0, 2) == 1);
  CHECK(ds.mask(1, 1) == 0);
  CHECK(ds.mask(1, 2) == 0);
  CHECK(ds.x_obs(1, 0) == 0.25);

  // round trip preserves values bit-exactly and masks exactly
  Rng rng(3);
  Matrix m(7, 4);
  for (int i = 0; i < m.size(); ++i) {
    m(i) = rng.normal() * std::pow(10.0, static_cast<int>(rng.uniform_int(7)) - 3);
  }
  m(3, 2) = std::nan("");
  save_matrix_csv(m, path);
  const Matrix back = load_matrix_csv(path);
  REQUIRE(back.rows() == m.rows());
  for (int i = 0; i < m.rows(); ++i) {
    for (int j = 0; j < m.cols(); ++j) {
      if (std::isnan(m(i, j))) {
        CHECK(std::isnan(back(i, j)));
      } else {
        CHECK(back(i, j) == m(i, j));  // bitwise
      }
    }
  }

  // a separate mask overrides marker inference
  const std::string mask_path = temp_file("missbgm_test_mask.csv");
  {
    std::ofstream out(path);
    out << "1.0,2.0\n3.0,4.0\n";
    std::ofstream mout(mask_path);
    mout << "1,0\n1,1\n";
  }
  const Dataset ds2 = dataset_from_csv(path, mask_path);
  CHECK(ds2.mask(0, 1) == 0);
  CHECK(std::isnan(ds2.x_obs(0, 1)));
  CHECK(ds2.x_obs(1, 1) == 4.0);

  // ragged and non-numeric errors carry the location
  {
    std::ofstream out(path);
    out << "1.0,2.0\n3.0\n";
  }
  try {
    load_matrix_csv(path);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("row 2") != std::string::npos);
  }
  {
    std::ofstream out(path);
    out << "1.0,abc\n";
  }
  try {
    load_matrix_csv(path);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("column 2") != std::string::npos);
  }
  // an interior blank line is an error, a trailing one is fine
  {
    std::ofstream out(path);
    out << "1.0,2.0\n\n3.0,4.0\n";
  }
  CHECK_THROWS_AS(load_matrix_csv(path), DataError);
  {
    std::ofstream out(path);
    out << "1.0,2.0\n3.0,4.0\n\n";
  }
  CHECK(load_matrix_csv(path).rows() == 2);
  std::remove(path.c_str());
  std::remove(mask_path.c_str());
}

TEST_CASE("oracle params dump round trip") {
  const auto [ds, op] = simulate_oracle(10, 12, 0.4, 99);
  const std::string path = temp_file("missbgm_oracle.txt");
  save_oracle_params(op, path);
  const OracleParams back = load_oracle_params(path);
  std::remove(path.c_str());
  CHECK(back.seed == op.seed);
  CHECK(back.rate == op.rate);
  CHECK(back.kappa == op.kappa);
  CHECK(back.p_anchor == op.p_anchor);
  CHECK((back.B - op.B).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.b - op.b).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.sigma - op.sigma).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("dataset validation catches inconsistencies") {
  Dataset ds;
  ds.x_obs = Matrix::Ones(2, 2);
  ds.mask = Eigen::MatrixXi::Ones(2, 2);
  ds.validate();
  ds.mask(0, 0) = 0;  // mask says missing but value present
  CHECK_THROWS_AS(ds.validate(), DataError);
  ds.x_obs(0, 0) = std::nan("");
  ds.validate();
  ds.mask(0, 1) = 0;
  ds.mask(1, 1) = 0;  // empty column
  ds.x_obs(0, 1) = std::nan("");
  ds.x_obs(1, 1) = std::nan("");
  CHECK_THROWS_AS(ds.validate(), DataError);
}
