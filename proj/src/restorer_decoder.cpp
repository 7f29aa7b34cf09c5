#include "dfr/restorer_decoder.hpp"

#include <sstream>

#include "dfr/error.hpp"

namespace F = torch::nn::functional;

namespace dfr {

RefinementBlockImpl::RefinementBlockImpl(int64_t channels, int64_t tap_channels, int64_t d_d)
    : channels_(channels), tap_channels_(tap_channels) {
  fuse = register_module("fuse", nn::conv3x3(channels + tap_channels, channels));
  gate = register_module("gate", nn::ChannelGate(d_d, channels));
  body = register_module("body", nn::ResBlock(channels, channels));
  out = register_module("out", nn::zero_conv(channels, channels));
}

torch::Tensor RefinementBlockImpl::forward(const torch::Tensor& z, const torch::Tensor& z_lq, const torch::Tensor& p_d) {
  if (!z_lq.defined() || z.dim() != 4 || z_lq.dim() != 4 || z.size(0) != z_lq.size(0) || z.size(1) != channels_ ||
      z_lq.size(1) != tap_channels_ || z.size(2) != z_lq.size(2) || z.size(3) != z_lq.size(3)) {
    std::ostringstream os;
    os << "refinement block: decoder features " << z.sizes() << " and encoder tap "
       << (z_lq.defined() ? z_lq.sizes() : torch::IntArrayRef{}) << " are not aligned (expected " << channels_
       << " and " << tap_channels_ << " channels at equal resolution)";
    throw ValidationError(os.str());
  }
  return out(body(gate->apply(fuse(torch::cat(std::vector<torch::Tensor>{z, z_lq}, 1)), p_d))) + z;
}

RefinedDecoderImpl::RefinedDecoderImpl(const RefinedDecoderOptions& options) : options_(options) {
  base = register_module("base", LatentDecoder(options.vae));
  drbs = register_module("drbs", torch::nn::ModuleList());
  if (options.drb_enabled) {
    for (int l = 0; l < kNumTaps; ++l) {
      const int64_t c = options.vae.channels[l];
      drbs->push_back(RefinementBlock(c, c, options.d_d));
    }
  }
}

torch::Tensor RefinedDecoderImpl::forward(const torch::Tensor& z, const EncoderTaps& taps, const torch::Tensor& p_d) {
  if (!options_.drb_enabled) return base(z);
  for (int l = 0; l < kNumTaps; ++l) {
    if (!taps[l].defined()) throw ValidationError("refined decoder: encoder tap z" + std::to_string(l + 1) + " is missing");
  }
  return base->forward_with(z, [&](int level, const torch::Tensor& h) {
    return drbs[level]->as<RefinementBlock>()->forward(h, taps[level], p_d);
  });
}

void RefinedDecoderImpl::load_base(LatentDecoderImpl& source) {
  torch::NoGradGuard guard;
  auto src = source.named_parameters(true);
  for (auto& item : base->named_parameters(true)) {
    const auto* match = src.find(item.key());
    if (!match || match->sizes() != item.value().sizes()) {
      throw ValidationError("base decoder shape mismatch at " + item.key());
    }
    item.value().copy_(*match);
  }
}

torch::Tensor decode_refined(RefinedDecoderImpl& decoder, const torch::Tensor& z0_hat, const EncoderTaps& taps_lq,
                             const torch::Tensor& p_d) {
  return decoder.forward(z0_hat, taps_lq, p_d).clamp(0.0, 1.0);
}

PatchDiscriminatorImpl::PatchDiscriminatorImpl(int64_t c) {
  auto conv = [](int64_t in, int64_t out, int64_t stride) {
    return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 4).stride(stride).padding(1));
  };
  c1_ = register_module("c1", conv(3, c, 2));
  c2_ = register_module("c2", conv(c, 2 * c, 2));
  c3_ = register_module("c3", conv(2 * c, 4 * c, 1));
  c4_ = register_module("c4", conv(4 * c, 1, 1));
}

torch::Tensor PatchDiscriminatorImpl::forward(const torch::Tensor& images) {
  const auto act = F::LeakyReLUFuncOptions().negative_slope(0.2);
  auto h = F::leaky_relu(c1_(images * 2.0 - 1.0), act);
  h = F::leaky_relu(c2_(h), act);
  h = F::leaky_relu(c3_(h), act);
  return c4_(h);
}

torch::Tensor perceptual_loss(VisionEncoder& extractor, const torch::Tensor& a, const torch::Tensor& b) {
  if (a.sizes() != b.sizes()) throw ValidationError("perceptual loss: image shapes differ");
  const auto fa = extractor.features(a);
  const auto fb = extractor.features(b);
  auto total = torch::zeros({}, a.options());
  for (std::size_t i = 0; i < fa.size(); ++i) total = total + (fa[i] - fb[i]).pow(2).mean();
  return total / static_cast<double>(fa.size());
}

DecoderLosses decoder_losses(const torch::Tensor& i_gen, const torch::Tensor& i_gt, PatchDiscriminatorImpl& disc,
                             VisionEncoder& extractor, const DecoderLossWeights& weights) {
  DecoderLosses l;
  l.gen = nn::mse(i_gen, i_gt, "decoder loss");
  l.per = perceptual_loss(extractor, i_gen, i_gt);
  l.adv = F::softplus(-disc.forward(i_gen)).mean();
  l.total = l.gen + weights.per * l.per + weights.adv * l.adv;
  return l;
}

torch::Tensor discriminator_loss(PatchDiscriminatorImpl& disc, const torch::Tensor& real, const torch::Tensor& fake) {
  return torch::relu(1.0 - disc.forward(real)).mean() + torch::relu(1.0 + disc.forward(fake)).mean();
}

}  // namespace dfr
