#pragma once

#include <filesystem>
#include <vector>

#include "dfr/config.hpp"
#include "dfr/data_synth.hpp"
#include "test_util.hpp"

namespace dfr::test {

// Procedural clean corpus plus a single-degradation dataset over `kinds`.
inline std::filesystem::path make_dataset(const std::filesystem::path& dir, const std::vector<DegradationKind>& kinds,
                                          int per_kind, int clean_count, uint64_t seed, int side = 64,
                                          double test_fraction = 0.2) {
  generate_clean_corpus(dir / "clean", clean_count, side, seed);
  DatasetRecipe recipe;
  recipe.side = side;
  recipe.test_fraction = test_fraction;
  for (auto k : kinds) recipe.per_kind[k] = per_kind;
  return build_dataset(dir / "clean", recipe, dir / "data", seed).manifest;
}

// Small widths that keep unit-test training runs to seconds.
inline RunConfig tiny_config(const std::filesystem::path& work_dir) {
  RunConfig cfg;
  cfg.dims.d_e = 16;
  cfg.dims.d_s = 24;
  cfg.dims.d_d = 12;
  cfg.encoder.widths = {8, 8, 16};
  cfg.encoder.epochs = 2;
  cfg.encoder.batch_size = 16;
  cfg.vae.channels = {8, 16, 16};
  cfg.vae.epochs = 2;
  cfg.vae.batch_size = 8;
  cfg.unet.channels = {16, 16};
  cfg.unet.heads = 2;
  cfg.control.widths = {8, 8, 16};
  cfg.stage1.epochs = 1;
  cfg.stage1.batch_size = 8;
  cfg.stage1.lr = 1e-3;
  cfg.stage2.epochs = 1;
  cfg.stage2.batch_size = 4;
  cfg.stage2.lr = 1e-3;
  cfg.stage2.disc_lr = 1e-3;
  cfg.sampler.steps = 4;
  cfg.paths.work_dir = work_dir.string();
  return cfg;
}

}  // namespace dfr::test
