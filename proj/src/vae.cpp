#include "dfr/vae.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

#include "dfr/data_synth.hpp"
#include "dfr/error.hpp"
#include "dfr/hash.hpp"
#include "dfr/log.hpp"
#include "dfr/png_io.hpp"
#include "dfr/rng.hpp"
#include "dfr/tensor_image.hpp"

namespace F = torch::nn::functional;

namespace dfr {

VaeEncoderImpl::VaeEncoderImpl(const VaeOptions& o) {
  const auto& c = o.channels;
  conv_in_ = register_module("conv_in", nn::conv3x3(3, c[0]));
  for (int l = 0; l < kNumTaps; ++l) {
    blocks_[l] = register_module("block" + std::to_string(l), nn::ResBlock(c[l], c[l]));
    if (l + 1 < kNumTaps) {
      downs_[l] = register_module("down" + std::to_string(l), nn::conv3x3(c[l], c[l + 1], 2));
    }
  }
  norm_out_ = register_module("norm_out", torch::nn::GroupNorm(nn::group_count(c[2]), c[2]));
  conv_out_ = register_module("conv_out", nn::conv3x3(c[2], 2 * o.latent_channels));
}

Encoded VaeEncoderImpl::forward(const torch::Tensor& x) {
  Encoded out;
  auto h = conv_in_(x * 2.0 - 1.0);
  for (int l = 0; l < kNumTaps; ++l) {
    h = blocks_[l](h);
    out.taps[l] = h;
    if (l + 1 < kNumTaps) h = downs_[l](h);
  }
  auto stats = conv_out_(F::silu(norm_out_(h)));
  auto parts = stats.chunk(2, 1);
  out.mean = parts[0];
  out.logvar = parts[1].clamp(-30.0, 20.0);
  return out;
}

LatentDecoderImpl::LatentDecoderImpl(const VaeOptions& o) : options_(o) {
  const auto& c = o.channels;
  conv_in_ = register_module("conv_in", nn::conv3x3(o.latent_channels, c[2]));
  mid_ = register_module("mid", nn::ResBlock(c[2], c[2]));
  for (int l = kNumTaps - 1; l >= 0; --l) {
    blocks_[l] = register_module("block" + std::to_string(l), nn::ResBlock(c[l], c[l]));
    if (l > 0) ups_[l - 1] = register_module("up" + std::to_string(l), nn::Upsample(c[l], c[l - 1]));
  }
  norm_out_ = register_module("norm_out", torch::nn::GroupNorm(nn::group_count(c[0]), c[0]));
  conv_out_ = register_module("conv_out", nn::conv3x3(c[0], 3));
}

torch::Tensor LatentDecoderImpl::forward(const torch::Tensor& z) { return forward_with(z, nullptr); }

torch::Tensor LatentDecoderImpl::forward_with(const torch::Tensor& z, const DecoderHook& hook) {
  if (z.dim() != 4 || z.size(1) != options_.latent_channels) {
    std::ostringstream os;
    os << "latent must be [B, " << options_.latent_channels << ", h, w], got " << z.sizes();
    throw ValidationError(os.str());
  }
  auto h = mid_(conv_in_(z));
  for (int l = kNumTaps - 1; l >= 0; --l) {
    h = blocks_[l](h);
    if (hook) h = hook(l, h);
    if (l > 0) h = ups_[l - 1](h);
  }
  return conv_out_(F::silu(norm_out_(h))) * 0.5 + 0.5;
}

VaeImpl::VaeImpl(const VaeOptions& options) : options_(options) {
  if (options.channels.size() != kNumTaps) throw ValidationError("VAE needs exactly 3 channel widths");
  encoder = register_module("encoder", VaeEncoder(options));
  decoder = register_module("decoder", LatentDecoder(options));
}

VaeOptions vae_options(const RunConfig& cfg) {
  VaeOptions o;
  o.channels = cfg.vae.channels;
  o.latent_channels = cfg.dims.latent_channels;
  return o;
}

void check_vae_input(const torch::Tensor& images) {
  if (images.dim() != 4 || images.size(1) != 3) {
    std::ostringstream os;
    os << "VAE input must be [B, 3, H, W], got " << images.sizes();
    throw ValidationError(os.str());
  }
  if (images.size(2) % kVaeDivisor != 0 || images.size(3) % kVaeDivisor != 0) {
    std::ostringstream os;
    os << "image side " << images.size(2) << "x" << images.size(3) << " must be divisible by " << kVaeDivisor;
    throw ValidationError(os.str());
  }
}

LatentWithTaps vae_encode(VaeImpl& vae, const torch::Tensor& images) {
  check_vae_input(images);
  auto enc = vae.encoder(images);
  return {enc.mean, enc.taps};
}

torch::Tensor vae_decode(VaeImpl& vae, const torch::Tensor& z) { return vae.decoder(z).clamp(0.0, 1.0); }

namespace {

torch::Tensor hq_batch(const std::vector<LoadedSample>& samples) {
  std::set<std::string> seen;
  std::vector<Image> images;
  for (const auto& s : samples) {
    // Augmented copies carry their own transformed HQ image, so dedupe on pixel content.
    const auto key = hex64(fnv1a64(s.hq.data().data(), s.hq.data().size() * sizeof(double)));
    if (seen.insert(key).second) images.push_back(s.hq);
  }
  return images_to_batch(images);
}

double batch_psnr(const torch::Tensor& a, const torch::Tensor& b) {
  auto mse = (a - b).pow(2).mean({1, 2, 3}).clamp_min(1e-10);
  return (10.0 * torch::log10(1.0 / mse)).mean().item<double>();
}

}  // namespace

VaeTrainResult pretrain_autoencoder(const std::filesystem::path& manifest, const RunConfig& cfg) {
  const auto train_samples = load_samples(manifest, Split::train);
  auto test_samples = load_samples(manifest, Split::test);
  if (train_samples.empty()) throw ValidationError("manifest " + manifest.string() + " has no training records");
  const auto train_x = hq_batch(train_samples);
  const auto test_x = test_samples.empty() ? train_x : hq_batch(test_samples);
  check_vae_input(train_x);

  torch::manual_seed(cfg.seed);
  VaeTrainResult result;
  result.vae = Vae(vae_options(cfg));
  auto& vae = result.vae;
  torch::optim::Adam opt(vae->parameters(), torch::optim::AdamOptions(cfg.vae.lr));
  Rng rng(derive_seed(cfg.seed, 0xAE));
  const int64_t n = train_x.size(0);
  const int64_t bs = std::min<int64_t>(cfg.vae.batch_size, n);
  std::vector<int64_t> order(n);
  for (int64_t epoch = 0; epoch < cfg.vae.epochs; ++epoch) {
    // Cosine decay from lr towards lr / 20 over the epoch budget.
    const double progress = static_cast<double>(epoch) / static_cast<double>(cfg.vae.epochs);
    const double lr = cfg.vae.lr * (0.05 + 0.95 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
    for (auto& group : opt.param_groups()) static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
    vae->train();
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng.engine());
    double total = 0.0;
    int64_t batches = 0;
    for (int64_t start = 0; start < n; start += bs) {
      const int64_t end = std::min(n, start + bs);
      auto idx = torch::tensor(std::vector<int64_t>(order.begin() + start, order.begin() + end));
      auto x = train_x.index_select(0, idx);
      if (rng.uniform() < 0.5) x = x.flip({3});
      auto enc = vae->encoder(x);
      auto z = enc.mean + torch::exp(0.5 * enc.logvar) * torch::randn_like(enc.mean);
      auto recon = vae->decoder(z);
      auto l2 = (recon - x).pow(2).mean();
      auto kl = 0.5 * (enc.mean.pow(2) + enc.logvar.exp() - 1.0 - enc.logvar).mean();
      auto loss = l2 + cfg.vae.kl_weight * kl;
      opt.zero_grad();
      loss.backward();
      opt.step();
      total += loss.item<double>();
      ++batches;
    }
    result.epoch_losses.push_back(total / static_cast<double>(batches));
    result.epochs_run = epoch + 1;
    vae->eval();
    {
      torch::NoGradGuard guard;
      result.heldout_psnr = batch_psnr(vae_decode(*vae, vae_encode(*vae, test_x).latent), test_x);
    }
    log::info("vae_epoch", {{"epoch", log::str(epoch + 1)},
                            {"loss", log::str(result.epoch_losses.back())},
                            {"heldout_psnr", log::str(result.heldout_psnr)}});
    if (result.heldout_psnr >= cfg.vae.target_psnr) {
      result.exit_criterion_met = true;
      break;
    }
  }
  vae->eval();
  if (!result.exit_criterion_met) {
    log::warn("vae_exit_criterion_missed", {{"heldout_psnr", log::str(result.heldout_psnr)},
                                            {"target", log::str(cfg.vae.target_psnr)}});
  }
  auto& meta = result.checkpoint.meta;
  meta["stage"] = "vae";
  meta["epoch"] = result.epochs_run;
  meta["seed"] = cfg.seed;
  meta["loss_history"] = result.epoch_losses;
  meta["heldout_psnr"] = result.heldout_psnr;
  meta["exit_criterion_met"] = result.exit_criterion_met;
  export_vae(result.checkpoint, *vae);
  return result;
}

void export_vae(Checkpoint& ckpt, const VaeImpl& vae) {
  export_module(ckpt, "vae", vae);
  ckpt.meta["vae"] = {{"channels", vae.options().channels},
                      {"latent_channels", vae.options().latent_channels},
                      {"factor", kLatentFactor},
                      {"latent_scale", 1.0}};
}

Vae vae_from_checkpoint(const Checkpoint& ckpt) {
  if (!ckpt.meta.contains("vae") || !ckpt.has_prefix("vae")) {
    throw RuntimeFailure("checkpoint has no VAE weights (run pretrain-vae first)");
  }
  VaeOptions o;
  o.channels = ckpt.meta["vae"].at("channels").get<std::vector<int64_t>>();
  o.latent_channels = ckpt.meta["vae"].at("latent_channels").get<int64_t>();
  Vae vae(o);
  import_module(ckpt, "vae", *vae);
  vae->eval();
  return vae;
}

}  // namespace dfr
