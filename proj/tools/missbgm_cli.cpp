// Command-line front end: simulate | fit | impute | evaluate | bench.
//
// Exit codes: 0 success, 1 I/O or data error, 2 invalid configuration or
// usage, 3 numeric blow-up during optimization or sampling.

#include <CLI11.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "missbgm/checkpoint.hpp"
#include "missbgm/config.hpp"
#include "missbgm/errors.hpp"
#include "missbgm/metrics.hpp"
#include "missbgm/text_io.hpp"

namespace fs = std::filesystem;
using namespace missbgm;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir = ".";
  std::string dump_config_path;
  bool quiet = false;
  std::vector<std::pair<std::string, std::string>> overrides;
};

void attach_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path,
                  "flat 'key = value' config file");
  cmd->add_option("--out", opts.out_dir, "output directory");
  cmd->add_flag("--quiet", opts.quiet, "suppress progress output");
  cmd->add_option("--dump-config", opts.dump_config_path,
                  "write the resolved configuration to this path");
  for (const std::string& key : config_keys()) {
    cmd->add_option_function<std::string>(
            "--" + key,
            [&opts, key](const std::string& v) {
              opts.overrides.emplace_back(key, v);
            },
            "override config key " + key)
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  }
}

// flag > file > default
RunConfig resolve_config(const CommonOpts& opts) {
  RunConfig cfg;
  if (!opts.config_path.empty()) load_config_file(cfg, opts.config_path);
  for (const auto& [key, value] : opts.overrides) {
    apply_config_value(cfg, key, value);
  }
  cfg.validate();
  if (!opts.dump_config_path.empty()) {
    std::ofstream out(opts.dump_config_path);
    if (!out) throw DataError("cannot write " + opts.dump_config_path);
    out << dump_config(cfg);
  }
  return cfg;
}

std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create output directory: " + dir);
}

void note(const CommonOpts& opts, const std::string& msg) {
  if (!opts.quiet) std::cout << msg << std::endl;
}

int cmd_simulate(const CommonOpts& opts, int n, int p, double rate) {
  const RunConfig cfg = resolve_config(opts);
  ensure_dir(opts.out_dir);
  auto [ds, op] = simulate_oracle(n, p, rate, cfg.train.seed);
  save_matrix_csv(ds.x_obs, join(opts.out_dir, "x_obs.csv"));
  save_mask_csv(ds.mask, join(opts.out_dir, "mask.csv"));
  save_matrix_csv(*ds.x_full, join(opts.out_dir, "x_full.csv"));
  save_oracle_params(op, join(opts.out_dir, "oracle_params.txt"));
  note(opts, "simulate: wrote x_obs.csv, mask.csv, x_full.csv, "
             "oracle_params.txt to " + opts.out_dir);
  return 0;
}

int cmd_fit(const CommonOpts& opts, const std::string& x_obs_path,
            const std::string& mask_path) {
  const RunConfig cfg = resolve_config(opts);
  ensure_dir(opts.out_dir);
  Dataset ds = dataset_from_csv(x_obs_path, mask_path, cfg.header);
  ds.validate();
  Scaler scaler;
  if (cfg.standardize) {
    scaler = fit_scaler(ds.x_obs);
    ds.x_obs = apply_scaler(ds.x_obs, scaler);
    ds.scaler = scaler;
  }

  std::ofstream log(join(opts.out_dir, "train_log.txt"));
  if (!log) throw DataError("cannot write train_log.txt");
  note(opts, "fit: training on " + std::to_string(ds.n()) + " x " +
                 std::to_string(ds.p()) + " (seed " +
                 std::to_string(cfg.train.seed) + ")");
  const TrainState state = fit(ds, cfg.train, &log);

  Checkpoint ck;
  ck.gen = state.gen;
  ck.miss = state.miss;
  ck.bnn_gen = state.bnn_gen;
  ck.bnn_miss = state.bnn_miss;
  ck.scaler = scaler;
  ck.beta = cfg.train.beta;
  ck.z_dim = cfg.train.z_dim;
  save_checkpoint(ck, join(opts.out_dir, "checkpoint.txt"));
  save_matrix_csv(invert_scaler(state.X, scaler),
                  join(opts.out_dir, "x_map_imputed.csv"));
  note(opts, "fit: wrote checkpoint.txt, x_map_imputed.csv, train_log.txt");
  return 0;
}

int cmd_impute(const CommonOpts& opts, const std::string& checkpoint_path,
               const std::string& x_obs_path, const std::string& mask_path) {
  const RunConfig cfg = resolve_config(opts);
  ensure_dir(opts.out_dir);
  const Checkpoint ck = load_checkpoint(checkpoint_path);
  Dataset ds = dataset_from_csv(x_obs_path, mask_path, cfg.header);
  ds.validate();
  if (ds.p() != static_cast<int>(ck.gen.mean_head.W.cols())) {
    throw DataError("impute: checkpoint expects " +
                    std::to_string(ck.gen.mean_head.W.cols()) +
                    " features, data has " + std::to_string(ds.p()));
  }
  ds.x_obs = apply_scaler(ds.x_obs, ck.scaler);

  TrainConfig tcfg = cfg.train;
  tcfg.beta = ck.beta;  // the sampler keeps the training temperature
  tcfg.z_dim = ck.z_dim;
  note(opts, "impute: MAP refinement (" + std::to_string(tcfg.test_epochs) +
                 " epochs)");
  const MapResult mr = map_refine(ds, ck.gen, ck.miss, tcfg, tcfg.test_epochs);

  HmcModel model;
  model.gen = &ck.gen;
  model.miss = &ck.miss;
  model.beta = ck.beta;
  if (ck.bnn_gen.has_value()) {
    model.bnn_gen = &*ck.bnn_gen;
    model.bnn_miss = &*ck.bnn_miss;
  }
  std::ofstream chain_log(join(opts.out_dir, "chain_log.txt"));
  note(opts, "impute: sampling " + std::to_string(cfg.hmc.n_mcmc) +
                 " draws after " + std::to_string(cfg.hmc.burn_in) +
                 " burn-in sweeps");
  const PosteriorDraws draws =
      hmc_within_gibbs(mr.Z, mr.X, ds, model, cfg.hmc, &chain_log);

  const bool with_intervals = cfg.hmc.n_mcmc >= 2;
  const auto [point, pi] = posterior_summaries(draws, cfg.hmc.alpha,
                                               with_intervals);
  save_matrix_csv(invert_scaler(point, ck.scaler),
                  join(opts.out_dir, "posterior_mean.csv"));

  auto destd = [&](int col, double v) {
    return ck.scaler.identity() ? v
                                : v * ck.scaler.std(col) + ck.scaler.mean(col);
  };
  if (with_intervals) {
    std::ofstream out(join(opts.out_dir, "intervals.csv"));
    for (std::size_t k = 0; k < pi.entries.size(); ++k) {
      const auto [i, j] = pi.entries[k];
      out << i << ',' << j << ',' << format_double(destd(j, pi.lower(k)))
          << ',' << format_double(destd(j, pi.upper(k))) << '\n';
    }
    const Eigen::VectorXd sd = posterior_entry_sd(draws);
    std::ofstream sd_out(join(opts.out_dir, "posterior_sd.csv"));
    for (std::size_t k = 0; k < draws.entries.size(); ++k) {
      const auto [i, j] = draws.entries[k];
      const double scale = ck.scaler.identity() ? 1.0 : ck.scaler.std(j);
      sd_out << i << ',' << j << ',' << format_double(sd(k) * scale) << '\n';
    }
  }
  note(opts, "impute: wrote posterior_mean.csv" +
                 std::string(with_intervals
                                 ? ", intervals.csv, posterior_sd.csv"
                                 : " (single draw: no intervals)") +
                 ", chain_log.txt");
  return 0;
}

int cmd_evaluate(const CommonOpts& opts, const std::string& imputed_path,
                 const std::string& truth_path, const std::string& mask_path,
                 const std::string& intervals_path, const std::string& sd_path,
                 const std::string& oracle_path) {
  const RunConfig cfg = resolve_config(opts);
  ensure_dir(opts.out_dir);
  const Matrix imputed = load_matrix_csv(imputed_path, cfg.header);
  const Matrix truth = load_matrix_csv(truth_path, cfg.header);
  const Eigen::MatrixXi mask = load_mask_csv(mask_path, cfg.header);

  EvalReport report;
  report.rmse_missing = rmse_missing(imputed, truth, mask);
  report.n_missing_entries = mask.size() - mask.cast<long>().sum();

  const bool have_oracle = !oracle_path.empty();
  OracleParams op;
  if (have_oracle) op = load_oracle_params(oracle_path);

  if (!intervals_path.empty()) {
    const Matrix iv = load_matrix_csv(intervals_path);
    if (iv.cols() != 4) {
      throw DataError("intervals file must have columns row,col,lower,upper");
    }
    const Eigen::Index m = iv.rows();
    std::vector<std::pair<int, int>> entries(m);
    Eigen::VectorXd lower(m), upper(m);
    for (Eigen::Index k = 0; k < m; ++k) {
      entries[k] = {static_cast<int>(iv(k, 0)), static_cast<int>(iv(k, 1))};
      lower(k) = iv(k, 2);
      upper(k) = iv(k, 3);
    }
    Eigen::VectorXd oracle_widths;
    if (have_oracle) {
      oracle_widths.resize(m);
      for (Eigen::Index k = 0; k < m; ++k) {
        const auto [i, j] = entries[k];
        if (j < op.p_anchor) {
          throw DataError("evaluate: interval entry in an anchor column");
        }
        const int l = j - op.p_anchor;
        const double mu =
            truth.row(i).head(op.p_anchor) * op.B.col(l) + op.b(l);
        oracle_widths(k) =
            oracle_entry(mu, op.sigma(l), op.kappa, cfg.hmc.alpha).width;
      }
    }
    const IntervalMetrics im = interval_metrics(
        entries, lower, upper, truth, have_oracle ? &oracle_widths : nullptr);
    report.avg_interval_width = im.avg_width;
    report.coverage = im.coverage;
    report.pcc = im.width_pcc;
    report.scc = im.width_scc;
  }

  if (!sd_path.empty() && have_oracle) {
    const Matrix sd = load_matrix_csv(sd_path);
    if (sd.cols() != 3) {
      throw DataError("sd file must have columns row,col,sd");
    }
    const Eigen::Index m = sd.rows();
    Eigen::VectorXd est(m), oracle_sd(m);
    for (Eigen::Index k = 0; k < m; ++k) {
      const int i = static_cast<int>(sd(k, 0));
      const int j = static_cast<int>(sd(k, 1));
      const int l = j - op.p_anchor;
      const double mu = truth.row(i).head(op.p_anchor) * op.B.col(l) + op.b(l);
      est(k) = sd(k, 2);
      oracle_sd(k) = oracle_entry(mu, op.sigma(l), op.kappa, cfg.hmc.alpha).sd;
    }
    report.sd_rmse = sd_rmse(est, oracle_sd);
  }

  {
    std::ofstream out(join(opts.out_dir, "report.txt"));
    out << report.to_kv();
  }
  {
    std::ofstream out(join(opts.out_dir, "report.csv"));
    out << EvalReport::csv_header() << '\n' << report.to_csv_row() << '\n';
  }
  note(opts, "evaluate:\n" + report.to_kv());
  return 0;
}

int cmd_bench(const CommonOpts& opts) {
  const RunConfig cfg = resolve_config(opts);
  ensure_dir(opts.out_dir);
  std::ofstream out(join(opts.out_dir, "bench.csv"));
  if (!out) throw DataError("cannot write bench.csv");
  out << "n,rate,beta,n_seeds,map_rmse_mean,map_rmse_sd,mean_rmse_mean,"
         "mean_rmse_sd\n";

  auto mean_sd = [](const std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    const double sd =
        v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
    return std::make_pair(mean, sd);
  };

  for (int n : cfg.bench.n_list) {
    for (double rate : cfg.bench.rate_list) {
      for (double beta : cfg.bench.beta_list) {
        std::vector<double> map_rmse, mean_rmse;
        for (int k = 0; k < cfg.bench.n_seeds; ++k) {
          const std::uint64_t seed = cfg.train.seed + k;
          auto [ds, op] = simulate_oracle(n, cfg.bench.p, rate, seed);
          TrainConfig tc = cfg.train;
          tc.beta = beta;
          tc.seed = seed;
          note(opts, "bench: n=" + std::to_string(n) + " rate=" +
                         format_double(rate) + " beta=" + format_double(beta) +
                         " seed=" + std::to_string(seed));
          const TrainState st = fit(ds, tc, nullptr);
          map_rmse.push_back(rmse_missing(st.X, *ds.x_full, ds.mask));
          mean_rmse.push_back(
              rmse_missing(mean_impute(ds), *ds.x_full, ds.mask));
        }
        const auto [mm, ms] = mean_sd(map_rmse);
        const auto [bm, bs] = mean_sd(mean_rmse);
        out << n << ',' << format_double(rate) << ',' << format_double(beta)
            << ',' << cfg.bench.n_seeds << ',' << format_double(mm) << ','
            << format_double(ms) << ',' << format_double(bm) << ','
            << format_double(bs) << '\n';
        out.flush();
      }
    }
  }
  note(opts, "bench: wrote bench.csv");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "missbgm: joint generative modeling of tabular data and a "
      "non-ignorable missingness mechanism, with posterior imputation"};
  app.require_subcommand(1);

  CommonOpts sim_opts, fit_opts, imp_opts, eval_opts, bench_opts;

  auto* sim = app.add_subcommand("simulate",
                                 "generate the synthetic self-masked "
                                 "benchmark with closed-form oracle");
  int sim_n = 500, sim_p = 50;
  double sim_rate = 0.5;
  sim->add_option("--n", sim_n, "number of samples");
  sim->add_option("--p", sim_p, "number of features (first 5 are anchors)");
  sim->add_option("--rate", sim_rate, "target missing rate on target columns");
  attach_common(sim, sim_opts);

  auto* fitc = app.add_subcommand("fit", "train the model on an incomplete "
                                         "table; writes checkpoint and MAP "
                                         "imputation");
  std::string fit_x, fit_mask;
  fitc->add_option("--x-obs", fit_x, "incomplete table CSV")->required();
  fitc->add_option("--mask", fit_mask, "0/1 observation mask CSV (optional)");
  attach_common(fitc, fit_opts);

  auto* imp = app.add_subcommand("impute", "posterior sampling from a "
                                           "checkpoint; writes posterior "
                                           "mean and intervals");
  std::string imp_ck, imp_x, imp_mask;
  imp->add_option("--checkpoint", imp_ck, "checkpoint file")->required();
  imp->add_option("--x-obs", imp_x, "incomplete table CSV")->required();
  imp->add_option("--mask", imp_mask, "0/1 observation mask CSV (optional)");
  attach_common(imp, imp_opts);

  auto* ev = app.add_subcommand("evaluate", "score imputations (and "
                                            "intervals) against ground truth");
  std::string ev_imp, ev_truth, ev_mask, ev_int, ev_sd, ev_oracle;
  ev->add_option("--imputed", ev_imp, "imputed table CSV")->required();
  ev->add_option("--truth", ev_truth, "ground-truth table CSV")->required();
  ev->add_option("--mask", ev_mask, "0/1 observation mask CSV")->required();
  ev->add_option("--intervals", ev_int, "intervals CSV (row,col,lower,upper)");
  ev->add_option("--sd", ev_sd, "posterior sd CSV (row,col,sd)");
  ev->add_option("--oracle", ev_oracle, "oracle params dump for UQ metrics");
  attach_common(ev, eval_opts);

  auto* bench = app.add_subcommand("bench", "run the (n, rate, beta) grid "
                                            "and tabulate RMSE vs the mean "
                                            "baseline");
  attach_common(bench, bench_opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << '\n';
    return 2;
  }

  try {
    if (sim->parsed()) return cmd_simulate(sim_opts, sim_n, sim_p, sim_rate);
    if (fitc->parsed()) return cmd_fit(fit_opts, fit_x, fit_mask);
    if (imp->parsed()) return cmd_impute(imp_opts, imp_ck, imp_x, imp_mask);
    if (ev->parsed()) {
      return cmd_evaluate(eval_opts, ev_imp, ev_truth, ev_mask, ev_int, ev_sd,
                          ev_oracle);
    }
    if (bench->parsed()) return cmd_bench(bench_opts);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
