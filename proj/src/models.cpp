#include "dfr/models.hpp"

#include "dfr/error.hpp"

namespace dfr {

PromptDims prompt_dims(const RunConfig& cfg) {
  return {cfg.dims.d_e, cfg.dims.d_s, cfg.dims.d_d, cfg.dims.num_kinds};
}

UNetOptions unet_options(const RunConfig& cfg) {
  UNetOptions o;
  o.latent_channels = cfg.dims.latent_channels;
  o.channels = cfg.unet.channels;
  o.context_dim = cfg.dims.d_s;
  o.heads = cfg.unet.heads;
  return o;
}

ControlModuleOptions control_options(const RunConfig& cfg) {
  ControlModuleOptions o;
  o.encoder.widths = cfg.control.widths;
  o.encoder.out_channels = cfg.unet.channels.front();
  o.encoder.d_d = cfg.dims.d_d;
  o.encoder.dmb_enabled = cfg.control.dmb_enabled;
  o.unet = unet_options(cfg);
  o.use_timestep = cfg.control.use_timestep;
  o.use_context = cfg.control.use_context;
  return o;
}

RefinedDecoderOptions refined_decoder_options(const RunConfig& cfg) {
  RefinedDecoderOptions o;
  o.vae = vae_options(cfg);
  o.d_d = cfg.dims.d_d;
  o.drb_enabled = cfg.stage2.drb_enabled;
  return o;
}

void Models::init_stage1(uint64_t seed) {
  torch::manual_seed(seed);
  prompt = PromptProcessor(prompt_dims(cfg));
  unet = UNet(unet_options(cfg));
  control = ControlModule(control_options(cfg));
  control->network->copy_from(*unet);
}

void Models::init_stage2(uint64_t seed) {
  require("vae");
  torch::manual_seed(seed);
  decoder = RefinedDecoder(refined_decoder_options(cfg));
  decoder->load_base(*vae->decoder);
  disc = PatchDiscriminator(32);
}

void Models::eval() {
  if (encoder.encoder) encoder.encoder->eval();
  if (vae) vae->eval();
  if (prompt) prompt->eval();
  if (unet) unet->eval();
  if (control) control->eval();
  if (decoder) decoder->eval();
  if (disc) disc->eval();
}

void Models::require(const char* component) const {
  const std::string c = component;
  const bool ok = (c == "vision_encoder" && encoder.encoder && encoder.encoder->loaded()) || (c == "vae" && vae) ||
                  (c == "prompt_processor" && prompt) || (c == "unet" && unet) || (c == "control" && control) ||
                  (c == "decoder" && decoder) || (c == "discriminator" && disc);
  if (!ok) throw ProviderNotLoaded(c);
}

void export_models(Checkpoint& ckpt, const Models& m) {
  ckpt.meta["config"] = config_to_json(m.cfg);
  if (m.encoder.encoder) export_encoder(ckpt, m.encoder);
  if (m.vae) export_vae(ckpt, *m.vae);
  if (m.prompt) export_module(ckpt, "prompt_processor", *m.prompt);
  if (m.unet) export_module(ckpt, "unet", *m.unet);
  if (m.control) export_module(ckpt, "control", *m.control);
  if (m.decoder) export_module(ckpt, "decoder", *m.decoder);
  if (m.disc) export_module(ckpt, "discriminator", *m.disc);
  ckpt.meta["prompt_dims"] = {{"d_e", m.cfg.dims.d_e}, {"d_s", m.cfg.dims.d_s}, {"d_d", m.cfg.dims.d_d},
                              {"num_kinds", m.cfg.dims.num_kinds}};
}

Models models_from_checkpoint(const Checkpoint& ckpt) {
  if (!ckpt.meta.contains("config")) throw RuntimeFailure("checkpoint has no config snapshot");
  Models m;
  m.cfg = config_from_json(ckpt.meta.at("config"));
  if (ckpt.has_prefix("vision_encoder")) m.encoder = encoder_from_checkpoint(ckpt);
  if (ckpt.has_prefix("vae")) m.vae = vae_from_checkpoint(ckpt);
  if (ckpt.has_prefix("prompt_processor")) {
    m.prompt = PromptProcessor(prompt_dims(m.cfg));
    import_module(ckpt, "prompt_processor", *m.prompt);
  }
  if (ckpt.has_prefix("unet")) {
    m.unet = UNet(unet_options(m.cfg));
    import_module(ckpt, "unet", *m.unet);
  }
  if (ckpt.has_prefix("control")) {
    m.control = ControlModule(control_options(m.cfg));
    import_module(ckpt, "control", *m.control);
  }
  if (ckpt.has_prefix("decoder")) {
    m.decoder = RefinedDecoder(refined_decoder_options(m.cfg));
    import_module(ckpt, "decoder", *m.decoder);
  }
  if (ckpt.has_prefix("discriminator")) {
    m.disc = PatchDiscriminator(32);
    import_module(ckpt, "discriminator", *m.disc);
  }
  m.eval();
  return m;
}

Prompts compute_prompts(Models& m, const torch::Tensor& images) {
  m.require("vision_encoder");
  m.require("prompt_processor");
  Prompts p;
  p.p_clip = m.encoder.encoder->encode(images);
  p.p_s = m.prompt->semantic(p.p_clip);
  p.p_d = m.prompt->degradation(p.p_clip);
  return p;
}

torch::Tensor sample_latents(Models& m, const torch::Tensor& lq, const Prompts& prompts, int64_t steps,
                             uint64_t seed, bool use_control, const Sampler& sampler) {
  m.require("unet");
  if (m.cfg.vae.latent_scale <= 0) throw ValidationError("vae.latent_scale is unresolved; it is fixed by stage-1 training");
  if (use_control) m.require("control");
  check_vae_input(lq);
  const auto schedule = NoiseSchedule::from_config(m.cfg.schedule);
  const int64_t b = lq.size(0);
  const int64_t side_h = lq.size(2) / kLatentFactor;
  const int64_t side_w = lq.size(3) / kLatentFactor;
  auto z_T = initial_noise({b, m.cfg.dims.latent_channels, side_h, side_w}, seed, lq.scalar_type());
  torch::Tensor cond;
  if (use_control) cond = control_encode(*m.control, lq, prompts.p_d);
  NoisePredictor predictor = [&](const torch::Tensor& z_t, int64_t t) {
    auto tt = torch::full({b}, t, torch::kInt64);
    std::vector<torch::Tensor> residuals;
    if (use_control) residuals = control_residuals(*m.control, z_t, tt, prompts.p_s, cond);
    return predict_noise(*m.unet, z_t, tt, prompts.p_s, residuals);
  };
  return sampler.run(predictor, z_T, schedule, steps);
}

RestoreOutput restore(Models& m, const torch::Tensor& lq, int64_t steps, uint64_t seed, bool plain_decoder) {
  torch::NoGradGuard guard;
  m.require("vae");
  const auto prompts = compute_prompts(m, lq);
  RestoreOutput out;
  out.latent = sample_latents(m, lq, prompts, steps, seed);
  const auto z = out.latent / m.cfg.vae.latent_scale;
  if (plain_decoder) {
    out.restored = vae_decode(*m.vae, z);
  } else {
    m.require("decoder");
    const auto taps = vae_encode(*m.vae, lq).taps;
    out.restored = decode_refined(*m.decoder, z, taps, prompts.p_d);
  }
  return out;
}

}  // namespace dfr
