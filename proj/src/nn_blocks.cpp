#include "dfr/nn_blocks.hpp"

#include <cmath>
#include <sstream>

#include "dfr/error.hpp"

namespace F = torch::nn::functional;

namespace dfr::nn {

int64_t group_count(int64_t channels) {
  for (int64_t g = 8; g > 1; --g) {
    if (channels % g == 0) return g;
  }
  return 1;
}

torch::nn::Conv2d conv3x3(int64_t in_channels, int64_t out_channels, int64_t stride) {
  return torch::nn::Conv2d(
      torch::nn::Conv2dOptions(in_channels, out_channels, 3).stride(stride).padding(1));
}

torch::nn::Conv2d zero_conv(int64_t in_channels, int64_t out_channels) {
  torch::nn::Conv2d conv(torch::nn::Conv2dOptions(in_channels, out_channels, 1));
  torch::NoGradGuard guard;
  conv->weight.zero_();
  conv->bias.zero_();
  return conv;
}

ResBlockImpl::ResBlockImpl(int64_t in_channels, int64_t out_channels, int64_t temb_dim) {
  norm1_ = register_module("norm1", torch::nn::GroupNorm(group_count(in_channels), in_channels));
  conv1_ = register_module("conv1", conv3x3(in_channels, out_channels));
  if (temb_dim > 0) {
    temb_proj_ = register_module("temb_proj", torch::nn::Linear(temb_dim, out_channels));
  }
  norm2_ = register_module("norm2", torch::nn::GroupNorm(group_count(out_channels), out_channels));
  conv2_ = register_module("conv2", conv3x3(out_channels, out_channels));
  if (in_channels != out_channels) {
    skip_ = register_module("skip", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, out_channels, 1)));
  }
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& temb) {
  auto h = conv1_(F::silu(norm1_(x)));
  if (temb_proj_ && temb.defined()) {
    h = h + temb_proj_(F::silu(temb)).unsqueeze(-1).unsqueeze(-1);
  }
  h = conv2_(F::silu(norm2_(h)));
  return (skip_ ? skip_(x) : x) + h;
}

ChannelGateImpl::ChannelGateImpl(int64_t embed_dim, int64_t channels, bool enabled)
    : embed_dim_(embed_dim), channels_(channels), enabled_(enabled) {
  if (enabled_) linear_ = register_module("linear", torch::nn::Linear(embed_dim, channels));
}

torch::Tensor ChannelGateImpl::forward(const torch::Tensor& p_d) {
  if (p_d.dim() != 2 || p_d.size(1) != embed_dim_) {
    std::ostringstream os;
    os << "degradation embedding must be [B, " << embed_dim_ << "], got " << p_d.sizes();
    throw ValidationError(os.str());
  }
  if (!enabled_) return torch::ones({p_d.size(0), channels_}, p_d.options());
  return torch::sigmoid(linear_(p_d));
}

torch::Tensor ChannelGateImpl::apply(const torch::Tensor& features, const torch::Tensor& p_d) {
  if (!enabled_) {
    forward(p_d);  // shape validation only
    return features;
  }
  return features * forward(p_d).unsqueeze(-1).unsqueeze(-1);
}

CrossAttentionImpl::CrossAttentionImpl(int64_t channels, int64_t context_dim, int64_t heads)
    : heads_(heads) {
  if (channels % heads != 0) throw ValidationError("attention channels must divide by head count");
  norm_ = register_module("norm", torch::nn::GroupNorm(group_count(channels), channels));
  to_q_ = register_module("to_q", torch::nn::Linear(torch::nn::LinearOptions(channels, channels).bias(false)));
  to_k_ = register_module("to_k", torch::nn::Linear(torch::nn::LinearOptions(context_dim, channels).bias(false)));
  to_v_ = register_module("to_v", torch::nn::Linear(torch::nn::LinearOptions(context_dim, channels).bias(false)));
  to_out_ = register_module("to_out", torch::nn::Linear(channels, channels));
}

torch::Tensor CrossAttentionImpl::forward(const torch::Tensor& x, const torch::Tensor& context) {
  const auto b = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  const auto d = c / heads_;
  auto tokens = norm_(x).flatten(2).transpose(1, 2);  // [B, HW, C]
  auto q = to_q_(tokens).view({b, h * w, heads_, d}).transpose(1, 2);
  auto k = to_k_(context).view({b, -1, heads_, d}).transpose(1, 2);
  auto v = to_v_(context).view({b, -1, heads_, d}).transpose(1, 2);
  auto attn = torch::softmax(torch::matmul(q, k.transpose(-1, -2)) / std::sqrt(static_cast<double>(d)), -1);
  auto out = torch::matmul(attn, v).transpose(1, 2).reshape({b, h * w, c});
  out = to_out_(out).transpose(1, 2).reshape({b, c, h, w});
  return x + out;
}

torch::Tensor sinusoidal_embedding(const torch::Tensor& t, int64_t dim) {
  const int64_t half = dim / 2;
  auto freqs = torch::exp(-std::log(10000.0) *
                          torch::arange(half, torch::TensorOptions().dtype(torch::kFloat64)) / half);
  auto args = t.to(torch::kFloat64).unsqueeze(1) * freqs.unsqueeze(0);
  auto emb = torch::cat({torch::cos(args), torch::sin(args)}, 1);
  if (dim % 2) emb = torch::cat({emb, torch::zeros({t.size(0), 1}, emb.options())}, 1);
  return emb;
}

TimestepEmbeddingImpl::TimestepEmbeddingImpl(int64_t base_dim) : base_dim_(base_dim) {
  fc1_ = register_module("fc1", torch::nn::Linear(base_dim, 4 * base_dim));
  fc2_ = register_module("fc2", torch::nn::Linear(4 * base_dim, 4 * base_dim));
}

torch::Tensor TimestepEmbeddingImpl::forward(const torch::Tensor& t) {
  auto emb = sinusoidal_embedding(t, base_dim_).to(fc1_->weight.dtype());
  return fc2_(F::silu(fc1_(emb)));
}

UpsampleImpl::UpsampleImpl(int64_t in_channels, int64_t out_channels) {
  conv_ = register_module("conv", conv3x3(in_channels, out_channels));
}

torch::Tensor UpsampleImpl::forward(const torch::Tensor& x) {
  return conv_(F::interpolate(x, F::InterpolateFuncOptions()
                                     .scale_factor(std::vector<double>{2.0, 2.0})
                                     .mode(torch::kNearest)));
}

torch::Tensor mse(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (a.sizes() != b.sizes()) {
    std::ostringstream os;
    os << what << ": shape mismatch " << a.sizes() << " vs " << b.sizes();
    throw ValidationError(os.str());
  }
  return (a - b).pow(2).mean();
}

int64_t parameter_count(const torch::nn::Module& module) {
  int64_t n = 0;
  for (const auto& p : module.parameters()) n += p.numel();
  return n;
}

}  // namespace dfr::nn
