#include "dfr/unet.hpp"

#include <sstream>

#include "dfr/error.hpp"

namespace F = torch::nn::functional;

namespace dfr {

EncoderPathImpl::EncoderPathImpl(const UNetOptions& o, int64_t temb_dim) : options_(o) {
  const auto& c = o.channels;
  conv_in_ = register_module("conv_in", nn::conv3x3(o.latent_channels, c[0]));
  blocks_ = register_module("blocks", torch::nn::ModuleList());
  attns_ = register_module("attns", torch::nn::ModuleList());
  downs_ = register_module("downs", torch::nn::ModuleList());
  int64_t prev = c[0];
  for (std::size_t l = 0; l < c.size(); ++l) {
    blocks_->push_back(nn::ResBlock(prev, c[l], temb_dim));
    if (o.attention) attns_->push_back(nn::CrossAttention(c[l], o.context_dim, o.heads));
    if (l + 1 < c.size()) downs_->push_back(nn::conv3x3(c[l], c[l], 2));
    prev = c[l];
  }
}

PathOutput EncoderPathImpl::forward(const torch::Tensor& z, const torch::Tensor& temb,
                                    const torch::Tensor& context, const torch::Tensor& cond) {
  PathOutput out;
  auto h = conv_in_(z);
  if (cond.defined()) {
    if (cond.sizes() != h.sizes()) {
      std::ostringstream os;
      os << "control condition shape " << cond.sizes() << " does not match " << h.sizes();
      throw ValidationError(os.str());
    }
    h = h + cond;
  }
  const auto n = options_.channels.size();
  for (std::size_t l = 0; l < n; ++l) {
    h = blocks_[l]->as<nn::ResBlock>()->forward(h, temb);
    if (options_.attention && context.defined()) h = attns_[l]->as<nn::CrossAttention>()->forward(h, context);
    out.skips.push_back(h);
    if (l + 1 < n) h = downs_[l]->as<torch::nn::Conv2d>()->forward(h);
  }
  out.h = h;
  return out;
}

UNetImpl::UNetImpl(const UNetOptions& o) : options_(o) {
  const auto& c = o.channels;
  if (c.size() < 2) throw ValidationError("U-Net needs at least 2 scales");
  time_embed = register_module("time_embed", nn::TimestepEmbedding(c[0]));
  const int64_t temb = time_embed->out_dim();
  encoder_path = register_module("encoder_path", EncoderPath(o, temb));
  const int64_t top = c.back();
  mid1_ = register_module("mid1", nn::ResBlock(top, top, temb));
  mid_attn_ = register_module("mid_attn", nn::CrossAttention(top, o.context_dim, o.heads));
  mid2_ = register_module("mid2", nn::ResBlock(top, top, temb));
  up_blocks_ = register_module("up_blocks", torch::nn::ModuleList());
  up_attns_ = register_module("up_attns", torch::nn::ModuleList());
  ups_ = register_module("ups", torch::nn::ModuleList());
  int64_t prev = top;
  for (int l = static_cast<int>(c.size()) - 1; l >= 0; --l) {
    up_blocks_->push_back(nn::ResBlock(prev + c[l], c[l], temb));
    if (o.attention) up_attns_->push_back(nn::CrossAttention(c[l], o.context_dim, o.heads));
    if (l > 0) ups_->push_back(nn::Upsample(c[l], c[l]));
    prev = c[l];
  }
  norm_out_ = register_module("norm_out", torch::nn::GroupNorm(nn::group_count(c[0]), c[0]));
  conv_out_ = register_module("conv_out", nn::conv3x3(c[0], o.latent_channels));
}

torch::Tensor UNetImpl::prepare_context(const torch::Tensor& context) const {
  if (!context.defined()) throw ValidationError("U-Net context (P_S) is required");
  auto ctx = context.dim() == 2 ? context.unsqueeze(1) : context;
  if (ctx.dim() != 3 || ctx.size(2) != options_.context_dim) {
    std::ostringstream os;
    os << "context dim " << (ctx.dim() >= 1 ? ctx.size(-1) : 0) << " does not match d_s = " << options_.context_dim;
    throw ValidationError(os.str());
  }
  return ctx;
}

std::vector<std::vector<int64_t>> UNetImpl::residual_shapes(int64_t batch, int64_t h, int64_t w) const {
  std::vector<std::vector<int64_t>> shapes;
  for (std::size_t l = 0; l < options_.channels.size(); ++l) {
    shapes.push_back({batch, options_.channels[l], h >> l, w >> l});
  }
  return shapes;
}

torch::Tensor UNetImpl::forward(const torch::Tensor& z_t, const torch::Tensor& t, const torch::Tensor& context,
                                const std::vector<torch::Tensor>& control) {
  const auto& c = options_.channels;
  const int64_t reach = int64_t{1} << (c.size() - 1);
  if (z_t.dim() != 4 || z_t.size(1) != options_.latent_channels || z_t.size(2) % reach || z_t.size(3) % reach) {
    std::ostringstream os;
    os << "latent shape " << z_t.sizes() << " is incompatible with the U-Net (C_z = " << options_.latent_channels
       << ", sides divisible by " << reach << ")";
    throw ValidationError(os.str());
  }
  const auto ctx = prepare_context(context);
  if (!control.empty()) {
    const auto shapes = residual_shapes(z_t.size(0), z_t.size(2), z_t.size(3));
    if (control.size() != shapes.size()) {
      throw ValidationError("expected " + std::to_string(shapes.size()) + " control residuals, got " +
                            std::to_string(control.size()));
    }
    for (std::size_t l = 0; l < shapes.size(); ++l) {
      if (control[l].sizes() != torch::IntArrayRef(shapes[l])) {
        std::ostringstream os;
        os << "control residual " << l << " has shape " << control[l].sizes() << ", expected " << torch::IntArrayRef(shapes[l]);
        throw ValidationError(os.str());
      }
    }
  }
  const auto temb = time_embed(t);
  auto path = encoder_path(z_t, temb, ctx);
  auto h = mid2_(mid_attn_(mid1_(path.h, temb), ctx), temb);
  std::size_t k = 0;
  for (int l = static_cast<int>(c.size()) - 1; l >= 0; --l, ++k) {
    auto skip = path.skips[l];
    if (!control.empty()) skip = skip + control[l];
    h = up_blocks_[k]->as<nn::ResBlock>()->forward(torch::cat(std::vector<torch::Tensor>{h, skip}, 1), temb);
    if (options_.attention) h = up_attns_[k]->as<nn::CrossAttention>()->forward(h, ctx);
    if (l > 0) h = ups_[k]->as<nn::Upsample>()->forward(h);
  }
  return conv_out_(F::silu(norm_out_(h)));
}

}  // namespace dfr
