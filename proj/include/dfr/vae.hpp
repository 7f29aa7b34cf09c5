#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include <torch/torch.h>

#include "dfr/checkpoint.hpp"
#include "dfr/config.hpp"
#include "dfr/image.hpp"
#include "dfr/nn_blocks.hpp"

namespace dfr {

struct VaeOptions {
  std::vector<int64_t> channels{32, 64, 128};  // widths at full, 1/2 and 1/4 resolution
  int64_t latent_channels = 4;
};

inline constexpr int kNumTaps = 3;
inline constexpr int64_t kLatentFactor = 4;
// Input sides must be multiples of factor * 2^(taps - 1).
inline constexpr int64_t kVaeDivisor = kLatentFactor * (1 << (kNumTaps - 1));

// Intermediate encoder features, fine to coarse: z1 at full, z2 at 1/2, z3 at 1/4 resolution.
using EncoderTaps = std::array<torch::Tensor, kNumTaps>;

struct Encoded {
  torch::Tensor mean;    // [B, C_z, H/4, W/4]
  torch::Tensor logvar;
  EncoderTaps taps;
};

class VaeEncoderImpl : public torch::nn::Module {
 public:
  explicit VaeEncoderImpl(const VaeOptions& options);
  // x: images in [0,1], [B, 3, H, W].
  Encoded forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d conv_in_{nullptr};
  std::array<nn::ResBlock, kNumTaps> blocks_{nullptr, nullptr, nullptr};
  std::array<torch::nn::Conv2d, kNumTaps - 1> downs_{nullptr, nullptr};
  torch::nn::GroupNorm norm_out_{nullptr};
  torch::nn::Conv2d conv_out_{nullptr};
};
TORCH_MODULE(VaeEncoder);

// Called at each decoder level (2 = coarsest, 0 = full resolution) with that level's features;
// returns the features to continue with.
using DecoderHook = std::function<torch::Tensor(int level, const torch::Tensor& h)>;

class LatentDecoderImpl : public torch::nn::Module {
 public:
  explicit LatentDecoderImpl(const VaeOptions& options);
  // Raw output in [0,1] image space (unclamped).
  torch::Tensor forward(const torch::Tensor& z);
  torch::Tensor forward_with(const torch::Tensor& z, const DecoderHook& hook);
  const VaeOptions& options() const { return options_; }

 private:
  VaeOptions options_;
  torch::nn::Conv2d conv_in_{nullptr};
  nn::ResBlock mid_{nullptr};
  std::array<nn::ResBlock, kNumTaps> blocks_{nullptr, nullptr, nullptr};
  std::array<nn::Upsample, kNumTaps - 1> ups_{nullptr, nullptr};
  torch::nn::GroupNorm norm_out_{nullptr};
  torch::nn::Conv2d conv_out_{nullptr};
};
TORCH_MODULE(LatentDecoder);

class VaeImpl : public torch::nn::Module {
 public:
  explicit VaeImpl(const VaeOptions& options);
  VaeEncoder encoder{nullptr};
  LatentDecoder decoder{nullptr};
  const VaeOptions& options() const { return options_; }

 private:
  VaeOptions options_;
};
TORCH_MODULE(Vae);

VaeOptions vae_options(const RunConfig& cfg);

// Throws ValidationError naming the required divisor.
void check_vae_input(const torch::Tensor& images);

struct LatentWithTaps {
  torch::Tensor latent;
  EncoderTaps taps;
};

// Deterministic: posterior mean, no sampling.
LatentWithTaps vae_encode(VaeImpl& vae, const torch::Tensor& images);
// Clamped to [0,1]; throws ValidationError when z does not match the configured channels.
torch::Tensor vae_decode(VaeImpl& vae, const torch::Tensor& z);

struct VaeTrainResult {
  Vae vae{nullptr};
  std::vector<double> epoch_losses;
  double heldout_psnr = 0.0;
  int64_t epochs_run = 0;
  bool exit_criterion_met = false;
  Checkpoint checkpoint;
};

// Pixel L2 plus KL (weight cfg.vae.kl_weight) on the distinct clean images referenced by the
// manifest. Stops when the held-out reconstruction PSNR reaches cfg.vae.target_psnr or after
// cfg.vae.epochs.
VaeTrainResult pretrain_autoencoder(const std::filesystem::path& manifest, const RunConfig& cfg);

void export_vae(Checkpoint& ckpt, const VaeImpl& vae);
Vae vae_from_checkpoint(const Checkpoint& ckpt);

}  // namespace dfr
