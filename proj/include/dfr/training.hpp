#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "dfr/checkpoint.hpp"
#include "dfr/config.hpp"
#include "dfr/data_synth.hpp"
#include "dfr/models.hpp"

namespace dfr {

// One optimizer step's loss values as float32 scalars, in the order they are combined.
struct LedgerEntry {
  std::string stage;
  int64_t epoch = 0;
  int64_t step = 0;
  std::vector<std::pair<std::string, float>> components;  // first component has weight 1
  std::vector<float> weights;                            // one per component
  float total = 0.0f;
};

// Recomputes the weighted sum in float32 in the same order as training: ((c0 + w1*c1) + w2*c2) ...
float ledger_recompute(const LedgerEntry& entry);
bool ledger_exact(const LedgerEntry& entry);

struct LossLedger {
  std::vector<LedgerEntry> entries;
  void write_jsonl(const std::filesystem::path& path) const;
  static LossLedger read_jsonl(const std::filesystem::path& path);
  std::string digest() const;
  // Mean of each component and of the total per epoch.
  std::vector<std::map<std::string, double>> epoch_means() const;
};

struct Stage1Batch {
  torch::Tensor lq, hq, labels, p_clip, z0, t, eps;
};

struct Stage1Losses {
  torch::Tensor diff, deg, rec, total;
};

// L = L_diff + l_deg_weight * L_deg + l_rec_weight * L_rec. A zero weight keeps the term in the
// value but detaches it from the graph. The reconstruction weight is forced to 0 when the
// control decoder is disabled.
Stage1Losses stage1_loss(Models& models, const Stage1Batch& batch, const NoiseSchedule& schedule);
double effective_rec_weight(const RunConfig& cfg);

struct Stage1Result {
  Models models;
  LossLedger ledger;
  Checkpoint checkpoint;
};

// Loads the encoder and VAE checkpoints named by cfg (missing ones fail with the stage order).
Stage1Result train_stage1(const RunConfig& cfg);
Stage1Result train_stage1(const RunConfig& cfg, const EncoderBundle& encoder, const Vae& vae,
                          const std::vector<LoadedSample>& train_samples);

struct Stage2Losses {
  DecoderLosses decoder;
};

struct Stage2Result {
  Models models;
  LossLedger ledger;
  Checkpoint checkpoint;
  std::map<std::string, uint64_t> hashes_before;
  std::map<std::string, uint64_t> hashes_after;
};

// Component name -> parameter hash for everything except decoder and discriminator.
std::map<std::string, uint64_t> frozen_hashes(const Models& models);

// Requires a checkpoint with stage "stage1" (or "vae" when allow_vae_only is set).
Stage2Result train_stage2(const RunConfig& cfg, const Checkpoint& stage1, bool allow_vae_only = false);
Stage2Result train_stage2(const RunConfig& cfg, const Checkpoint& stage1, const std::vector<LoadedSample>& train_samples,
                          bool allow_vae_only = false);

}  // namespace dfr
