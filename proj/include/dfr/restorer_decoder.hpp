#pragma once

#include <cstdint>

#include <torch/torch.h>

#include "dfr/embeddings.hpp"
#include "dfr/nn_blocks.hpp"
#include "dfr/vae.hpp"

namespace dfr {

// z_hat = Z(ResBlock(gate(conv3x3(concat(z, z_lq))))) + z, where Z is a zero-initialized 1x1
// convolution, so a fresh block is the identity on z.
class RefinementBlockImpl : public torch::nn::Module {
 public:
  RefinementBlockImpl(int64_t channels, int64_t tap_channels, int64_t d_d);
  torch::Tensor forward(const torch::Tensor& z, const torch::Tensor& z_lq, const torch::Tensor& p_d);

  torch::nn::Conv2d fuse{nullptr};
  nn::ChannelGate gate{nullptr};
  nn::ResBlock body{nullptr};
  torch::nn::Conv2d out{nullptr};

 private:
  int64_t channels_;
  int64_t tap_channels_;
};
TORCH_MODULE(RefinementBlock);

struct RefinedDecoderOptions {
  VaeOptions vae;
  int64_t d_d = 256;
  bool drb_enabled = true;
};

// The VAE decoder plus one refinement block per encoder tap, matched by resolution. With
// drb_enabled = false it is a plain decoder that can still be fine-tuned.
class RefinedDecoderImpl : public torch::nn::Module {
 public:
  explicit RefinedDecoderImpl(const RefinedDecoderOptions& options);
  // Raw output in [0,1] image space (unclamped).
  torch::Tensor forward(const torch::Tensor& z, const EncoderTaps& taps, const torch::Tensor& p_d);
  // Copies the base decoder weights from a pretrained VAE decoder.
  void load_base(LatentDecoderImpl& source);

  LatentDecoder base{nullptr};
  torch::nn::ModuleList drbs{nullptr};
  const RefinedDecoderOptions& options() const { return options_; }

 private:
  RefinedDecoderOptions options_;
};
TORCH_MODULE(RefinedDecoder);

// Clamped to [0,1]. Missing taps are rejected when refinement blocks are enabled.
torch::Tensor decode_refined(RefinedDecoderImpl& decoder, const torch::Tensor& z0_hat, const EncoderTaps& taps_lq,
                             const torch::Tensor& p_d);

// Four 4x4 convolutions (stride 2, 2, 1, 1) with LeakyReLU(0.2); 34-pixel receptive field.
class PatchDiscriminatorImpl : public torch::nn::Module {
 public:
  explicit PatchDiscriminatorImpl(int64_t base_channels = 32);
  torch::Tensor forward(const torch::Tensor& images);
  static constexpr int64_t kReceptiveField = 34;

 private:
  torch::nn::Conv2d c1_{nullptr}, c2_{nullptr}, c3_{nullptr}, c4_{nullptr};
};
TORCH_MODULE(PatchDiscriminator);

struct DecoderLossWeights {
  double per = 0.1;
  double adv = 0.001;
};

struct DecoderLosses {
  torch::Tensor gen;    // pixel MSE
  torch::Tensor per;    // mean over extractor layers of feature MSE
  torch::Tensor adv;    // softplus(-D(i_gen)), nonsaturating
  torch::Tensor total;  // gen + w.per * per + w.adv * adv
};

torch::Tensor perceptual_loss(VisionEncoder& extractor, const torch::Tensor& a, const torch::Tensor& b);

DecoderLosses decoder_losses(const torch::Tensor& i_gen, const torch::Tensor& i_gt, PatchDiscriminatorImpl& disc,
                             VisionEncoder& extractor, const DecoderLossWeights& weights = {});

// Hinge loss for the discriminator update.
torch::Tensor discriminator_loss(PatchDiscriminatorImpl& disc, const torch::Tensor& real, const torch::Tensor& fake);

}  // namespace dfr
