#pragma once

#include <cstdint>
#include <vector>

#include <torch/torch.h>

#include "dfr/backbone.hpp"
#include "dfr/checkpoint.hpp"
#include "dfr/config.hpp"
#include "dfr/control.hpp"
#include "dfr/embeddings.hpp"
#include "dfr/prompt_processor.hpp"
#include "dfr/restorer_decoder.hpp"
#include "dfr/unet.hpp"
#include "dfr/vae.hpp"

namespace dfr {

PromptDims prompt_dims(const RunConfig& cfg);
UNetOptions unet_options(const RunConfig& cfg);
ControlModuleOptions control_options(const RunConfig& cfg);
RefinedDecoderOptions refined_decoder_options(const RunConfig& cfg);

// Every network of the restoration chain. Components that a stage has not produced yet are
// null handles; using one raises ProviderNotLoaded naming it.
struct Models {
  RunConfig cfg;
  EncoderBundle encoder;
  Vae vae{nullptr};
  PromptProcessor prompt{nullptr};
  UNet unet{nullptr};
  ControlModule control{nullptr};
  RefinedDecoder decoder{nullptr};
  PatchDiscriminator disc{nullptr};

  // Fresh prompt processor, U-Net and control module (control copies the U-Net encoder path).
  void init_stage1(uint64_t seed);
  // Refined decoder initialized from the VAE decoder plus a fresh discriminator.
  void init_stage2(uint64_t seed);
  void eval();
  void require(const char* component) const;
};

// Writes every non-null component under its prefix, plus the config snapshot.
void export_models(Checkpoint& ckpt, const Models& models);
// Rebuilds every component present in the checkpoint from its config snapshot.
Models models_from_checkpoint(const Checkpoint& ckpt);

struct Prompts {
  torch::Tensor p_clip;  // [B, d_e]
  torch::Tensor p_s;     // [B, d_s]
  torch::Tensor p_d;     // [B, d_d]
};

Prompts compute_prompts(Models& models, const torch::Tensor& images);

// Reverse diffusion for a batch of LQ images. With use_control = false the denoiser runs
// without residuals (the control-free reference).
torch::Tensor sample_latents(Models& models, const torch::Tensor& lq, const Prompts& prompts, int64_t steps,
                             uint64_t seed, bool use_control = true, const Sampler& sampler = DdimSampler{});

struct RestoreOutput {
  torch::Tensor restored;  // [B, 3, H, W] in [0,1]
  torch::Tensor latent;    // sampled z0_hat
};

// encode -> prompt branches -> control encode -> sample -> decode (refined, or plain VAE decode).
RestoreOutput restore(Models& models, const torch::Tensor& lq, int64_t steps, uint64_t seed, bool plain_decoder);

}  // namespace dfr
