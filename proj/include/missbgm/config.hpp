#ifndef MISSBGM_CONFIG_HPP
#define MISSBGM_CONFIG_HPP

#include <string>
#include <vector>

#include "missbgm/inference.hpp"
#include "missbgm/train.hpp"

namespace missbgm {

struct BenchConfig {
  std::vector<int> n_list{500};
  std::vector<double> rate_list{0.5};
  std::vector<double> beta_list{0.01};
  int n_seeds = 3;
  int p = 50;
};

// Full resolved configuration: training + posterior + bench grid plus the
// I/O toggles. Defaults are the documented hyperparameter defaults.
// Precedence: command-line flag > config file > default.
struct RunConfig {
  TrainConfig train;
  HmcConfig hmc;
  BenchConfig bench;
  bool standardize = true;  // fit: standardize inputs on the training scaler
  bool header = false;      // input CSVs carry a header row

  void validate() const;
};

// One "key = value" assignment; throws ConfigError on unknown keys or
// unparsable values. Lists are comma separated, optionally bracketed.
void apply_config_value(RunConfig& cfg, const std::string& key,
                        const std::string& value);

// Flat key = value file with '#' comments and dotted keys.
void load_config_file(RunConfig& cfg, const std::string& path);

// All known keys in canonical order.
const std::vector<std::string>& config_keys();

// Fully resolved "key = value" dump, one line per key, canonical order.
std::string dump_config(const RunConfig& cfg);

}  // namespace missbgm

#endif  // MISSBGM_CONFIG_HPP
