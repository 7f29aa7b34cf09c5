#pragma once

#include <cstdint>
#include <vector>

#include <torch/torch.h>

#include "dfr/nn_blocks.hpp"

namespace dfr {

struct UNetOptions {
  int64_t latent_channels = 4;
  std::vector<int64_t> channels{32, 64};  // one entry per scale
  int64_t context_dim = 768;              // must equal d_s
  int64_t heads = 4;
  bool attention = true;
};

struct PathOutput {
  std::vector<torch::Tensor> skips;  // one per scale, fine to coarse
  torch::Tensor h;                   // input to the middle block
};

// conv_in followed, per scale, by a ResBlock (+ cross-attention) and a stride-2 downsampling
// between scales. Shared by the denoiser and its control copy.
class EncoderPathImpl : public torch::nn::Module {
 public:
  EncoderPathImpl(const UNetOptions& options, int64_t temb_dim);
  // cond (optional) is added to the conv_in output; temb / context may be undefined.
  PathOutput forward(const torch::Tensor& z, const torch::Tensor& temb, const torch::Tensor& context,
                     const torch::Tensor& cond = {});

 private:
  UNetOptions options_;
  torch::nn::Conv2d conv_in_{nullptr};
  torch::nn::ModuleList blocks_{nullptr};
  torch::nn::ModuleList attns_{nullptr};
  torch::nn::ModuleList downs_{nullptr};
};
TORCH_MODULE(EncoderPath);

// Noise predictor eps_theta(z_t, t, P_S) with optional per-scale control residuals that are
// added to the skip features where they join the decoder.
class UNetImpl : public torch::nn::Module {
 public:
  explicit UNetImpl(const UNetOptions& options);

  // z_t: [B, C_z, h, w]; t: [B] integer steps; context: [B, d_s] or [B, L, d_s].
  torch::Tensor forward(const torch::Tensor& z_t, const torch::Tensor& t, const torch::Tensor& context,
                        const std::vector<torch::Tensor>& control = {});

  const UNetOptions& options() const { return options_; }
  // Shapes of the skip junctions for a latent of the given spatial size.
  std::vector<std::vector<int64_t>> residual_shapes(int64_t batch, int64_t h, int64_t w) const;
  // Throws ValidationError when the context width differs from d_s.
  torch::Tensor prepare_context(const torch::Tensor& context) const;

  nn::TimestepEmbedding time_embed{nullptr};
  EncoderPath encoder_path{nullptr};

 private:
  UNetOptions options_;
  nn::ResBlock mid1_{nullptr};
  nn::CrossAttention mid_attn_{nullptr};
  nn::ResBlock mid2_{nullptr};
  torch::nn::ModuleList up_blocks_{nullptr};
  torch::nn::ModuleList up_attns_{nullptr};
  torch::nn::ModuleList ups_{nullptr};
  torch::nn::GroupNorm norm_out_{nullptr};
  torch::nn::Conv2d conv_out_{nullptr};
};
TORCH_MODULE(UNet);

}  // namespace dfr
