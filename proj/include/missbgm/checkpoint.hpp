#ifndef MISSBGM_CHECKPOINT_HPP
#define MISSBGM_CHECKPOINT_HPP

#include <optional>
#include <string>

#include "missbgm/data.hpp"
#include "missbgm/nets.hpp"

namespace missbgm {

// Everything impute needs to rebuild the fitted model: both nets (plus the
// variational families when trained with them), the training scaler, and
// the temperature the model was trained with. Stored as versioned text
// with shortest round-trip floats, so save/load is bit-exact.
struct Checkpoint {
  GeneratorNet gen;
  MissingnessNet miss;
  std::optional<BnnGenerator> bnn_gen;
  std::optional<BnnMissingness> bnn_miss;
  Scaler scaler;
  double beta = 0.01;
  int z_dim = 5;
};

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace missbgm

#endif  // MISSBGM_CHECKPOINT_HPP
