#pragma once

#include <cstdint>
#include <vector>

#include <torch/torch.h>

#include "dfr/nn_blocks.hpp"
#include "dfr/unet.hpp"

namespace dfr {

// F_hat = ResBlock(ResBlock(F) * sigmoid(Linear(p_d))). With the gate disabled the product
// is skipped, which is the "without modulation" ablation.
class DegradationModulationBlockImpl : public torch::nn::Module {
 public:
  DegradationModulationBlockImpl(int64_t channels, int64_t d_d, bool gate_enabled = true);
  torch::Tensor forward(const torch::Tensor& features, const torch::Tensor& p_d);
  // Channel gate values f_i in (0,1), [B, C].
  torch::Tensor gate_values(const torch::Tensor& p_d);

  nn::ResBlock first{nullptr};
  nn::ChannelGate gate{nullptr};
  nn::ResBlock second{nullptr};

 private:
  int64_t channels_;
};
TORCH_MODULE(DegradationModulationBlock);

struct ControlOptions {
  std::vector<int64_t> widths{64, 128, 256};
  int64_t out_channels = 32;  // width of the U-Net's first scale
  int64_t d_d = 256;
  bool dmb_enabled = true;
};

// I_LQ -> cond at latent resolution through four modulated blocks with two stride-2 steps.
class ControlEncoderImpl : public torch::nn::Module {
 public:
  explicit ControlEncoderImpl(const ControlOptions& options);
  torch::Tensor forward(const torch::Tensor& images, const torch::Tensor& p_d);

 private:
  torch::nn::Conv2d conv_in_{nullptr};
  torch::nn::ModuleList dmbs_{nullptr};
  torch::nn::Conv2d down0_{nullptr}, down1_{nullptr}, proj_{nullptr};
};
TORCH_MODULE(ControlEncoder);

// Training-only head reconstructing the image from cond with four residual blocks.
class ControlDecoderImpl : public torch::nn::Module {
 public:
  explicit ControlDecoderImpl(const ControlOptions& options);
  // Raw output in [0,1] image space (unclamped).
  torch::Tensor forward(const torch::Tensor& cond);

 private:
  int64_t in_channels_;
  nn::ResBlock rb0_{nullptr}, rb1_{nullptr}, rb2_{nullptr}, rb3_{nullptr};
  nn::Upsample up0_{nullptr}, up1_{nullptr};
  torch::nn::GroupNorm norm_out_{nullptr};
  torch::nn::Conv2d conv_out_{nullptr};
};
TORCH_MODULE(ControlDecoder);

// Trainable copy of the U-Net encoder path. cond is added after conv_in; each scale emits one
// residual through a zero-initialized 1x1 convolution.
class ControlNetworkImpl : public torch::nn::Module {
 public:
  ControlNetworkImpl(const UNetOptions& unet_options, bool use_timestep, bool use_context);
  std::vector<torch::Tensor> forward(const torch::Tensor& z_t, const torch::Tensor& t, const torch::Tensor& context,
                                     const torch::Tensor& cond);
  // Copies matching encoder-path and timestep-embedding weights from the denoiser.
  void copy_from(UNetImpl& unet);

  nn::TimestepEmbedding time_embed{nullptr};
  EncoderPath path{nullptr};
  torch::nn::ModuleList zero_convs{nullptr};

 private:
  UNetOptions options_;
  bool use_timestep_;
  bool use_context_;
};
TORCH_MODULE(ControlNetwork);

struct ControlModuleOptions {
  ControlOptions encoder;
  UNetOptions unet;
  bool use_timestep = true;
  bool use_context = true;
};

class ControlModuleImpl : public torch::nn::Module {
 public:
  explicit ControlModuleImpl(const ControlModuleOptions& options);
  ControlEncoder encoder{nullptr};
  ControlDecoder decoder{nullptr};
  ControlNetwork network{nullptr};
  const ControlModuleOptions& options() const { return options_; }

 private:
  ControlModuleOptions options_;
};
TORCH_MODULE(ControlModule);

torch::Tensor control_encode(ControlModuleImpl& control, const torch::Tensor& images, const torch::Tensor& p_d);
// Clamped to [0,1].
torch::Tensor control_decode(ControlModuleImpl& control, const torch::Tensor& cond);
std::vector<torch::Tensor> control_residuals(ControlModuleImpl& control, const torch::Tensor& z_t,
                                             const torch::Tensor& t, const torch::Tensor& context,
                                             const torch::Tensor& cond);
// Mean squared error between I_CD and I_GT.
torch::Tensor recon_loss(const torch::Tensor& i_cd, const torch::Tensor& i_gt);

}  // namespace dfr
