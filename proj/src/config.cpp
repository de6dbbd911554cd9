#include "missbgm/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>

#include "missbgm/errors.hpp"
#include "missbgm/text_io.hpp"

namespace missbgm {

namespace {

double to_double(const std::string& key, const std::string& v) {
  double out;
  if (!parse_double(trim(v), out)) {
    throw ConfigError(key + ": cannot parse '" + v + "' as a number");
  }
  return out;
}

long long to_int(const std::string& key, const std::string& v) {
  long long out;
  if (!parse_long(trim(v), out)) {
    throw ConfigError(key + ": cannot parse '" + v + "' as an integer");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  const std::string_view t = trim(v);
  if (t == "true" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "no") return false;
  throw ConfigError(key + ": cannot parse '" + v + "' as a boolean");
}

std::string strip_brackets(const std::string& v) {
  std::string_view t = trim(v);
  if (!t.empty() && t.front() == '[') t.remove_prefix(1);
  if (!t.empty() && t.back() == ']') t.remove_suffix(1);
  return std::string(t);
}

std::vector<int> to_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  for (std::string_view cell : split(strip_brackets(v), ',')) {
    const std::string_view c = trim(cell);
    if (c.empty()) continue;
    out.push_back(static_cast<int>(to_int(key, std::string(c))));
  }
  return out;
}

std::vector<double> to_double_list(const std::string& key,
                                   const std::string& v) {
  std::vector<double> out;
  for (std::string_view cell : split(strip_brackets(v), ',')) {
    const std::string_view c = trim(cell);
    if (c.empty()) continue;
    out.push_back(to_double(key, std::string(c)));
  }
  return out;
}

std::string int_list_str(const std::vector<int>& v) {
  std::ostringstream out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i > 0) out << ',';
    out << v[i];
  }
  return out.str();
}

std::string double_list_str(const std::vector<double>& v) {
  std::ostringstream out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i > 0) out << ',';
    out << format_double(v[i]);
  }
  return out.str();
}

struct KeyEntry {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<KeyEntry>& key_table() {
  static const std::vector<KeyEntry> table = [] {
    std::vector<KeyEntry> t;
    auto add = [&t](const std::string& key,
                    std::function<void(RunConfig&, const std::string&)> set,
                    std::function<std::string(const RunConfig&)> get) {
      t.push_back({key, std::move(set), std::move(get)});
    };

    add("z_dim",
        [](RunConfig& c, const std::string& v) {
          c.train.z_dim = static_cast<int>(to_int("z_dim", v));
        },
        [](const RunConfig& c) { return std::to_string(c.train.z_dim); });
    add("epochs",
        [](RunConfig& c, const std::string& v) {
          c.train.epochs = static_cast<int>(to_int("epochs", v));
        },
        [](const RunConfig& c) { return std::to_string(c.train.epochs); });
    add("batch_size",
        [](RunConfig& c, const std::string& v) {
          c.train.batch_size = static_cast<int>(to_int("batch_size", v));
        },
        [](const RunConfig& c) { return std::to_string(c.train.batch_size); });
    add("beta",
        [](RunConfig& c, const std::string& v) {
          c.train.beta = to_double("beta", v);
        },
        [](const RunConfig& c) { return format_double(c.train.beta); });
    add("g_units",
        [](RunConfig& c, const std::string& v) {
          c.train.g_units = to_int_list("g_units", v);
        },
        [](const RunConfig& c) { return int_list_str(c.train.g_units); });
    add("missingness_units",
        [](RunConfig& c, const std::string& v) {
          c.train.missingness_units = to_int_list("missingness_units", v);
        },
        [](const RunConfig& c) {
          return int_list_str(c.train.missingness_units);
        });
    add("lr_theta",
        [](RunConfig& c, const std::string& v) {
          c.train.lr_theta = to_double("lr_theta", v);
        },
        [](const RunConfig& c) { return format_double(c.train.lr_theta); });
    add("lr_phi",
        [](RunConfig& c, const std::string& v) {
          c.train.lr_phi = to_double("lr_phi", v);
        },
        [](const RunConfig& c) { return format_double(c.train.lr_phi); });
    add("lr_z",
        [](RunConfig& c, const std::string& v) {
          c.train.lr_z = to_double("lr_z", v);
        },
        [](const RunConfig& c) { return format_double(c.train.lr_z); });
    add("lr_x",
        [](RunConfig& c, const std::string& v) {
          c.train.lr_x = to_double("lr_x", v);
        },
        [](const RunConfig& c) { return format_double(c.train.lr_x); });
    add("n_inner_steps",
        [](RunConfig& c, const std::string& v) {
          c.train.n_inner_steps = static_cast<int>(to_int("n_inner_steps", v));
        },
        [](const RunConfig& c) {
          return std::to_string(c.train.n_inner_steps);
        });
    add("use_bnn",
        [](RunConfig& c, const std::string& v) {
          c.train.use_bnn = to_bool("use_bnn", v);
        },
        [](const RunConfig& c) {
          return c.train.use_bnn ? std::string("true") : std::string("false");
        });
    add("kl_weight",
        [](RunConfig& c, const std::string& v) {
          c.train.kl_weight = to_double("kl_weight", v);
        },
        [](const RunConfig& c) { return format_double(c.train.kl_weight); });
    add("test_epochs",
        [](RunConfig& c, const std::string& v) {
          c.train.test_epochs = static_cast<int>(to_int("test_epochs", v));
        },
        [](const RunConfig& c) { return std::to_string(c.train.test_epochs); });
    add("egm_init.enabled",
        [](RunConfig& c, const std::string& v) {
          c.train.egm.enabled = to_bool("egm_init.enabled", v);
        },
        [](const RunConfig& c) {
          return c.train.egm.enabled ? std::string("true")
                                     : std::string("false");
        });
    add("egm_init.n_iter",
        [](RunConfig& c, const std::string& v) {
          c.train.egm.n_iter = static_cast<int>(to_int("egm_init.n_iter", v));
        },
        [](const RunConfig& c) { return std::to_string(c.train.egm.n_iter); });
    add("egm_init.e_units",
        [](RunConfig& c, const std::string& v) {
          c.train.egm.e_units = to_int_list("egm_init.e_units", v);
        },
        [](const RunConfig& c) { return int_list_str(c.train.egm.e_units); });
    add("egm_init.dz_units",
        [](RunConfig& c, const std::string& v) {
          c.train.egm.dz_units = to_int_list("egm_init.dz_units", v);
        },
        [](const RunConfig& c) { return int_list_str(c.train.egm.dz_units); });
    add("egm_init.dx_units",
        [](RunConfig& c, const std::string& v) {
          c.train.egm.dx_units = to_int_list("egm_init.dx_units", v);
        },
        [](const RunConfig& c) { return int_list_str(c.train.egm.dx_units); });
    add("grad_clip",
        [](RunConfig& c, const std::string& v) {
          c.train.grad_clip = to_double("grad_clip", v);
        },
        [](const RunConfig& c) { return format_double(c.train.grad_clip); });
    add("var_floor",
        [](RunConfig& c, const std::string& v) {
          c.train.var_floor = to_double("var_floor", v);
        },
        [](const RunConfig& c) { return format_double(c.train.var_floor); });
    add("weight_decay",
        [](RunConfig& c, const std::string& v) {
          c.train.weight_decay = to_double("weight_decay", v);
        },
        [](const RunConfig& c) {
          return format_double(c.train.weight_decay);
        });
    add("prior_scale",
        [](RunConfig& c, const std::string& v) {
          c.train.prior_scale = to_double("prior_scale", v);
        },
        [](const RunConfig& c) { return format_double(c.train.prior_scale); });
    add("elbo_samples",
        [](RunConfig& c, const std::string& v) {
          c.train.elbo_samples = static_cast<int>(to_int("elbo_samples", v));
        },
        [](const RunConfig& c) {
          return std::to_string(c.train.elbo_samples);
        });
    add("seed",
        [](RunConfig& c, const std::string& v) {
          const long long s = to_int("seed", v);
          c.train.seed = static_cast<std::uint64_t>(s);
          c.hmc.seed = static_cast<std::uint64_t>(s);
        },
        [](const RunConfig& c) { return std::to_string(c.train.seed); });
    add("threads",
        [](RunConfig& c, const std::string& v) {
          c.hmc.threads = static_cast<int>(to_int("threads", v));
        },
        [](const RunConfig& c) { return std::to_string(c.hmc.threads); });
    add("standardize",
        [](RunConfig& c, const std::string& v) {
          c.standardize = to_bool("standardize", v);
        },
        [](const RunConfig& c) {
          return c.standardize ? std::string("true") : std::string("false");
        });
    add("header",
        [](RunConfig& c, const std::string& v) {
          c.header = to_bool("header", v);
        },
        [](const RunConfig& c) {
          return c.header ? std::string("true") : std::string("false");
        });
    add("posterior.alpha",
        [](RunConfig& c, const std::string& v) {
          c.hmc.alpha = to_double("posterior.alpha", v);
        },
        [](const RunConfig& c) { return format_double(c.hmc.alpha); });
    add("posterior.n_mcmc",
        [](RunConfig& c, const std::string& v) {
          c.hmc.n_mcmc = static_cast<int>(to_int("posterior.n_mcmc", v));
        },
        [](const RunConfig& c) { return std::to_string(c.hmc.n_mcmc); });
    add("posterior.burn_in",
        [](RunConfig& c, const std::string& v) {
          c.hmc.burn_in = static_cast<int>(to_int("posterior.burn_in", v));
        },
        [](const RunConfig& c) { return std::to_string(c.hmc.burn_in); });
    add("posterior.step_size",
        [](RunConfig& c, const std::string& v) {
          c.hmc.step_size = to_double("posterior.step_size", v);
        },
        [](const RunConfig& c) { return format_double(c.hmc.step_size); });
    add("posterior.n_leapfrog",
        [](RunConfig& c, const std::string& v) {
          c.hmc.n_leapfrog =
              static_cast<int>(to_int("posterior.n_leapfrog", v));
        },
        [](const RunConfig& c) { return std::to_string(c.hmc.n_leapfrog); });
    add("posterior.target_accept",
        [](RunConfig& c, const std::string& v) {
          c.hmc.target_accept = to_double("posterior.target_accept", v);
        },
        [](const RunConfig& c) {
          return format_double(c.hmc.target_accept);
        });
    add("posterior.adapt_fraction",
        [](RunConfig& c, const std::string& v) {
          c.hmc.adapt_fraction = to_double("posterior.adapt_fraction", v);
        },
        [](const RunConfig& c) {
          return format_double(c.hmc.adapt_fraction);
        });
    add("posterior.bnn_redraw_per_draw",
        [](RunConfig& c, const std::string& v) {
          c.hmc.bnn_redraw_per_draw =
              to_bool("posterior.bnn_redraw_per_draw", v);
        },
        [](const RunConfig& c) {
          return c.hmc.bnn_redraw_per_draw ? std::string("true")
                                           : std::string("false");
        });
    add("bench.n_list",
        [](RunConfig& c, const std::string& v) {
          c.bench.n_list = to_int_list("bench.n_list", v);
        },
        [](const RunConfig& c) { return int_list_str(c.bench.n_list); });
    add("bench.rate_list",
        [](RunConfig& c, const std::string& v) {
          c.bench.rate_list = to_double_list("bench.rate_list", v);
        },
        [](const RunConfig& c) { return double_list_str(c.bench.rate_list); });
    add("bench.beta_list",
        [](RunConfig& c, const std::string& v) {
          c.bench.beta_list = to_double_list("bench.beta_list", v);
        },
        [](const RunConfig& c) { return double_list_str(c.bench.beta_list); });
    add("bench.n_seeds",
        [](RunConfig& c, const std::string& v) {
          c.bench.n_seeds = static_cast<int>(to_int("bench.n_seeds", v));
        },
        [](const RunConfig& c) { return std::to_string(c.bench.n_seeds); });
    add("bench.p",
        [](RunConfig& c, const std::string& v) {
          c.bench.p = static_cast<int>(to_int("bench.p", v));
        },
        [](const RunConfig& c) { return std::to_string(c.bench.p); });
    return t;
  }();
  return table;
}

}  // namespace

void RunConfig::validate() const {
  train.validate();
  hmc.validate();
  if (bench.n_seeds < 1) throw ConfigError("bench.n_seeds must be >= 1");
  if (bench.p <= 5) throw ConfigError("bench.p must be > 5");
  for (double r : bench.rate_list) {
    if (!(r > 0.0 && r < 1.0)) {
      throw ConfigError("bench.rate_list entries must be in (0, 1)");
    }
  }
}

void apply_config_value(RunConfig& cfg, const std::string& key,
                        const std::string& value) {
  for (const KeyEntry& entry : key_table()) {
    if (entry.key == key) {
      entry.set(cfg, value);
      return;
    }
  }
  throw ConfigError("unknown config key: " + key);
}

void load_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string_view sv = trim(line);
    if (sv.empty()) continue;
    const std::size_t eq = sv.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(path + ":" + std::to_string(lineno) +
                        ": expected 'key = value'");
    }
    const std::string key(trim(sv.substr(0, eq)));
    const std::string value(trim(sv.substr(eq + 1)));
    apply_config_value(cfg, key, value);
  }
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const KeyEntry& entry : key_table()) k.push_back(entry.key);
    return k;
  }();
  return keys;
}

std::string dump_config(const RunConfig& cfg) {
  std::ostringstream out;
  for (const KeyEntry& entry : key_table()) {
    out << entry.key << " = " << entry.get(cfg) << '\n';
  }
  return out.str();
}

}  // namespace missbgm
