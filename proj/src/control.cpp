#include "dfr/control.hpp"

#include <sstream>

#include "dfr/error.hpp"

namespace F = torch::nn::functional;

namespace dfr {

DegradationModulationBlockImpl::DegradationModulationBlockImpl(int64_t channels, int64_t d_d, bool gate_enabled)
    : channels_(channels) {
  first = register_module("first", nn::ResBlock(channels, channels));
  gate = register_module("gate", nn::ChannelGate(d_d, channels, gate_enabled));
  second = register_module("second", nn::ResBlock(channels, channels));
}

torch::Tensor DegradationModulationBlockImpl::gate_values(const torch::Tensor& p_d) { return gate(p_d); }

torch::Tensor DegradationModulationBlockImpl::forward(const torch::Tensor& features, const torch::Tensor& p_d) {
  if (features.dim() != 4 || features.size(1) != channels_) {
    std::ostringstream os;
    os << "modulation block expects " << channels_ << " channels, got " << features.sizes();
    throw ValidationError(os.str());
  }
  return second(gate->apply(first(features), p_d));
}

ControlEncoderImpl::ControlEncoderImpl(const ControlOptions& o) {
  const auto& w = o.widths;
  if (w.size() != 3) throw ValidationError("control encoder needs 3 widths");
  conv_in_ = register_module("conv_in", nn::conv3x3(3, w[0]));
  down0_ = register_module("down0", nn::conv3x3(w[0], w[1], 2));
  down1_ = register_module("down1", nn::conv3x3(w[1], w[2], 2));
  proj_ = register_module("proj", nn::conv3x3(w[2], o.out_channels));
  dmbs_ = register_module("dmbs", torch::nn::ModuleList());
  for (int64_t c : {w[0], w[1], w[2], o.out_channels}) {
    dmbs_->push_back(DegradationModulationBlock(c, o.d_d, o.dmb_enabled));
  }
}

torch::Tensor ControlEncoderImpl::forward(const torch::Tensor& images, const torch::Tensor& p_d) {
  auto dmb = [&](int i, const torch::Tensor& h) { return dmbs_[i]->as<DegradationModulationBlock>()->forward(h, p_d); };
  auto h = dmb(0, conv_in_(images * 2.0 - 1.0));
  h = dmb(1, down0_(h));
  h = dmb(2, down1_(h));
  return dmb(3, proj_(h));
}

ControlDecoderImpl::ControlDecoderImpl(const ControlOptions& o) : in_channels_(o.out_channels) {
  const auto& w = o.widths;
  rb0_ = register_module("rb0", nn::ResBlock(o.out_channels, w[2]));
  up0_ = register_module("up0", nn::Upsample(w[2], w[1]));
  rb1_ = register_module("rb1", nn::ResBlock(w[1], w[1]));
  up1_ = register_module("up1", nn::Upsample(w[1], w[0]));
  rb2_ = register_module("rb2", nn::ResBlock(w[0], w[0]));
  rb3_ = register_module("rb3", nn::ResBlock(w[0], w[0]));
  norm_out_ = register_module("norm_out", torch::nn::GroupNorm(nn::group_count(w[0]), w[0]));
  conv_out_ = register_module("conv_out", nn::conv3x3(w[0], 3));
}

torch::Tensor ControlDecoderImpl::forward(const torch::Tensor& cond) {
  if (cond.dim() != 4 || cond.size(1) != in_channels_) {
    std::ostringstream os;
    os << "control decoder expects [B, " << in_channels_ << ", h, w], got " << cond.sizes();
    throw ValidationError(os.str());
  }
  auto h = up0_(rb0_(cond));
  h = up1_(rb1_(h));
  h = rb3_(rb2_(h));
  return conv_out_(F::silu(norm_out_(h))) * 0.5 + 0.5;
}

ControlNetworkImpl::ControlNetworkImpl(const UNetOptions& unet_options, bool use_timestep, bool use_context)
    : options_(unet_options), use_timestep_(use_timestep), use_context_(use_context) {
  int64_t temb_dim = 0;
  if (use_timestep_) {
    time_embed = register_module("time_embed", nn::TimestepEmbedding(options_.channels[0]));
    temb_dim = time_embed->out_dim();
  }
  UNetOptions path_options = options_;
  path_options.attention = use_context_;
  path = register_module("path", EncoderPath(path_options, temb_dim));
  zero_convs = register_module("zero_convs", torch::nn::ModuleList());
  for (int64_t c : options_.channels) zero_convs->push_back(nn::zero_conv(c, c));
}

std::vector<torch::Tensor> ControlNetworkImpl::forward(const torch::Tensor& z_t, const torch::Tensor& t,
                                                       const torch::Tensor& context, const torch::Tensor& cond) {
  if (!cond.defined()) throw ValidationError("control network needs a condition tensor");
  const auto temb = use_timestep_ ? time_embed(t) : torch::Tensor();
  torch::Tensor ctx;
  if (use_context_) ctx = context.dim() == 2 ? context.unsqueeze(1) : context;
  auto out = path(z_t, temb, ctx, cond);
  std::vector<torch::Tensor> residuals;
  for (std::size_t l = 0; l < out.skips.size(); ++l) {
    residuals.push_back(zero_convs[l]->as<torch::nn::Conv2d>()->forward(out.skips[l]));
  }
  return residuals;
}

void ControlNetworkImpl::copy_from(UNetImpl& unet) {
  torch::NoGradGuard guard;
  auto copy = [](torch::nn::Module& dst, torch::nn::Module& src) {
    auto src_params = src.named_parameters(true);
    for (auto& item : dst.named_parameters(true)) {
      const auto* match = src_params.find(item.key());
      if (match && match->sizes() == item.value().sizes()) item.value().copy_(*match);
    }
  };
  if (use_timestep_) copy(*time_embed, *unet.time_embed);
  copy(*path, *unet.encoder_path);
}

ControlModuleImpl::ControlModuleImpl(const ControlModuleOptions& options) : options_(options) {
  encoder = register_module("encoder", ControlEncoder(options.encoder));
  decoder = register_module("decoder", ControlDecoder(options.encoder));
  network = register_module("network", ControlNetwork(options.unet, options.use_timestep, options.use_context));
}

torch::Tensor control_encode(ControlModuleImpl& control, const torch::Tensor& images, const torch::Tensor& p_d) {
  if (images.dim() != 4 || images.size(1) != 3 || images.size(2) % 4 || images.size(3) % 4) {
    std::ostringstream os;
    os << "control input must be [B, 3, H, W] with sides divisible by 4, got " << images.sizes();
    throw ValidationError(os.str());
  }
  return control.encoder(images, p_d);
}

torch::Tensor control_decode(ControlModuleImpl& control, const torch::Tensor& cond) {
  return control.decoder(cond).clamp(0.0, 1.0);
}

std::vector<torch::Tensor> control_residuals(ControlModuleImpl& control, const torch::Tensor& z_t,
                                             const torch::Tensor& t, const torch::Tensor& context,
                                             const torch::Tensor& cond) {
  return control.network(z_t, t, context, cond);
}

torch::Tensor recon_loss(const torch::Tensor& i_cd, const torch::Tensor& i_gt) {
  return nn::mse(i_cd, i_gt, "reconstruction loss");
}

}  // namespace dfr
