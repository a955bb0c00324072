#pragma once

// Shared fixtures: tiny datasets and model configs for unit tests.

#include "cammac/dataset_io.hpp"
#include "cammac/model.hpp"
#include "cammac/scenegen.hpp"

namespace cammac::testutil {

inline GenConfig tiny_gen(std::uint64_t seed, int dialogs, int turns = 3) {
  GenConfig cfg;
  cfg.grid_h = cfg.grid_w = 3;
  cfg.min_objects = 2;
  cfg.max_objects = 4;
  cfg.turns = turns;
  cfg.dialogs = dialogs;
  cfg.seed = seed;
  return cfg;
}

inline Dataset tiny_dataset(std::uint64_t seed, int dialogs, int turns = 3) {
  GenConfig cfg = tiny_gen(seed, dialogs, turns);
  return make_dataset(cfg, generate_dataset(cfg));
}

template <typename T>
struct ModelFixture {
  ModelConfig cfg;
  ParamStoreT<T> params;

  ModelFixture(const Dataset& ds, ModelFlags flags, int d = 16, int p = 2, std::uint64_t seed = 9) {
    cfg = ModelConfig::from_dataset(ds, flags, d, p);
    params = make_param_store<T>(cfg);
    init_params(params, cfg, seed);
  }
};

}  // namespace cammac::testutil
