#pragma once

#include <cstdint>
#include <vector>

#include <torch/torch.h>

namespace dfr::nn {

// Largest group count <= 8 that divides the channel count.
int64_t group_count(int64_t channels);

// GroupNorm -> SiLU -> 3x3 conv, twice, with optional timestep injection and a 1x1 skip
// projection when the channel count changes.
class ResBlockImpl : public torch::nn::Module {
 public:
  ResBlockImpl(int64_t in_channels, int64_t out_channels, int64_t temb_dim = 0);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& temb = {});

 private:
  torch::nn::GroupNorm norm1_{nullptr}, norm2_{nullptr};
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
  torch::nn::Linear temb_proj_{nullptr};
  torch::nn::Conv2d skip_{nullptr};
};
TORCH_MODULE(ResBlock);

// 1x1 convolution with weight and bias initialized to exactly zero.
torch::nn::Conv2d zero_conv(int64_t in_channels, int64_t out_channels);

// Per-channel modulation vector sigmoid(Linear(p_d)), shape [B, C]. When disabled the gate
// is the constant 1 and the linear layer is not created.
class ChannelGateImpl : public torch::nn::Module {
 public:
  ChannelGateImpl(int64_t embed_dim, int64_t channels, bool enabled = true);
  torch::Tensor forward(const torch::Tensor& p_d);
  // Multiplies [B, C, H, W] features channel-wise by the gate.
  torch::Tensor apply(const torch::Tensor& features, const torch::Tensor& p_d);
  bool enabled() const { return enabled_; }
  int64_t embed_dim() const { return embed_dim_; }
  torch::nn::Linear& linear() { return linear_; }

 private:
  int64_t embed_dim_;
  int64_t channels_;
  bool enabled_;
  torch::nn::Linear linear_{nullptr};
};
TORCH_MODULE(ChannelGate);

// Residual multi-head cross-attention from spatial features to a context token sequence.
class CrossAttentionImpl : public torch::nn::Module {
 public:
  CrossAttentionImpl(int64_t channels, int64_t context_dim, int64_t heads);
  // x: [B, C, H, W]; context: [B, L, D].
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& context);

 private:
  int64_t heads_;
  torch::nn::GroupNorm norm_{nullptr};
  torch::nn::Linear to_q_{nullptr}, to_k_{nullptr}, to_v_{nullptr}, to_out_{nullptr};
};
TORCH_MODULE(CrossAttention);

// Sinusoidal features of integer timesteps, [B] -> [B, dim].
torch::Tensor sinusoidal_embedding(const torch::Tensor& t, int64_t dim);

// Sinusoidal embedding followed by a two-layer projection to 4 * base_dim.
class TimestepEmbeddingImpl : public torch::nn::Module {
 public:
  explicit TimestepEmbeddingImpl(int64_t base_dim);
  torch::Tensor forward(const torch::Tensor& t);
  int64_t out_dim() const { return 4 * base_dim_; }

 private:
  int64_t base_dim_;
  torch::nn::Linear fc1_{nullptr}, fc2_{nullptr};
};
TORCH_MODULE(TimestepEmbedding);

// Nearest-neighbour 2x upsampling followed by a 3x3 conv.
class UpsampleImpl : public torch::nn::Module {
 public:
  UpsampleImpl(int64_t in_channels, int64_t out_channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d conv_{nullptr};
};
TORCH_MODULE(Upsample);

torch::nn::Conv2d conv3x3(int64_t in_channels, int64_t out_channels, int64_t stride = 1);

// Mean squared error over all elements; throws ValidationError on shape mismatch.
torch::Tensor mse(const torch::Tensor& a, const torch::Tensor& b, const char* what);

int64_t parameter_count(const torch::nn::Module& module);

}  // namespace dfr::nn
