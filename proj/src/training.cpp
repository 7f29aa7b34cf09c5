#include "dfr/training.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include <ATen/CPUGeneratorImpl.h>

#include "dfr/error.hpp"
#include "dfr/hash.hpp"
#include "dfr/log.hpp"
#include "dfr/rng.hpp"
#include "dfr/tensor_image.hpp"

namespace dfr {

float ledger_recompute(const LedgerEntry& e) {
  if (e.components.empty()) return 0.0f;
  float acc = e.components[0].second;
  for (std::size_t i = 1; i < e.components.size(); ++i) {
    const float term = e.weights[i] * e.components[i].second;
    acc = acc + term;
  }
  return acc;
}

bool ledger_exact(const LedgerEntry& e) { return ledger_recompute(e) == e.total; }

void LossLedger::write_jsonl(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw RuntimeFailure("cannot write loss ledger " + path.string());
  for (const auto& e : entries) {
    nlohmann::ordered_json j;
    j["stage"] = e.stage;
    j["epoch"] = e.epoch;
    j["step"] = e.step;
    nlohmann::ordered_json comps = nlohmann::ordered_json::object();
    for (const auto& [name, v] : e.components) comps[name] = v;
    j["components"] = comps;
    j["weights"] = e.weights;
    j["total"] = e.total;
    out << j.dump() << "\n";
  }
}

LossLedger LossLedger::read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw RuntimeFailure("cannot read loss ledger " + path.string());
  LossLedger ledger;
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    const auto j = nlohmann::ordered_json::parse(line);
    LedgerEntry e;
    e.stage = j.at("stage").get<std::string>();
    e.epoch = j.at("epoch").get<int64_t>();
    e.step = j.at("step").get<int64_t>();
    for (const auto& [name, v] : j.at("components").items()) e.components.emplace_back(name, v.get<float>());
    e.weights = j.at("weights").get<std::vector<float>>();
    e.total = j.at("total").get<float>();
    ledger.entries.push_back(std::move(e));
  }
  return ledger;
}

std::string LossLedger::digest() const {
  uint64_t h = kFnvOffset;
  for (const auto& e : entries) {
    for (const auto& [name, v] : e.components) {
      h = fnv1a64(name, h);
      h = fnv1a64(&v, sizeof v, h);
    }
    h = fnv1a64(&e.total, sizeof e.total, h);
  }
  return hex64(h);
}

std::vector<std::map<std::string, double>> LossLedger::epoch_means() const {
  std::vector<std::map<std::string, double>> out;
  std::vector<int64_t> counts;
  for (const auto& e : entries) {
    if (e.epoch >= static_cast<int64_t>(out.size())) {
      out.resize(e.epoch + 1);
      counts.resize(e.epoch + 1, 0);
    }
    for (const auto& [name, v] : e.components) out[e.epoch][name] += v;
    out[e.epoch]["total"] += e.total;
    ++counts[e.epoch];
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (auto& [name, v] : out[i]) v /= static_cast<double>(std::max<int64_t>(counts[i], 1));
  }
  return out;
}

namespace {

LedgerEntry make_entry(const std::string& stage, int64_t epoch, int64_t step,
                       std::vector<std::pair<std::string, torch::Tensor>> comps, std::vector<double> weights,
                       const torch::Tensor& total) {
  LedgerEntry e;
  e.stage = stage;
  e.epoch = epoch;
  e.step = step;
  for (auto& [name, t] : comps) e.components.emplace_back(name, t.detach().item<float>());
  for (double w : weights) e.weights.push_back(static_cast<float>(w));
  e.total = total.detach().item<float>();
  return e;
}

void clip_and_step(torch::optim::Optimizer& opt, const std::vector<torch::Tensor>& params, double clip) {
  if (clip > 0) torch::nn::utils::clip_grad_norm_(params, clip);
  opt.step();
}

std::vector<torch::Tensor> gather_params(std::initializer_list<torch::nn::Module*> modules) {
  std::vector<torch::Tensor> out;
  for (auto* m : modules) {
    if (!m) continue;
    for (auto& p : m->parameters()) out.push_back(p);
  }
  return out;
}

void set_trainable(torch::nn::Module& m, bool trainable) {
  for (auto& p : m.parameters()) p.set_requires_grad(trainable);
}

torch::Tensor batched_encode(VisionEncoder& enc, const torch::Tensor& images) {
  torch::NoGradGuard guard;
  std::vector<torch::Tensor> parts;
  for (int64_t s = 0; s < images.size(0); s += 64) {
    parts.push_back(enc.encode(images.slice(0, s, std::min(images.size(0), s + 64))));
  }
  return torch::cat(parts);
}

torch::Tensor batched_latents(VaeImpl& vae, const torch::Tensor& images) {
  torch::NoGradGuard guard;
  std::vector<torch::Tensor> parts;
  for (int64_t s = 0; s < images.size(0); s += 32) {
    parts.push_back(vae_encode(vae, images.slice(0, s, std::min(images.size(0), s + 32))).latent);
  }
  return torch::cat(parts);
}

struct TensorSet {
  torch::Tensor lq, hq, labels;
};

TensorSet to_tensors(const std::vector<LoadedSample>& samples, bool require_labels) {
  if (samples.empty()) throw ValidationError("no training samples");
  std::vector<Image> lq, hq;
  std::vector<int64_t> labels;
  for (const auto& s : samples) {
    if (require_labels && s.label < 0) continue;
    lq.push_back(s.lq);
    hq.push_back(s.hq);
    labels.push_back(s.label);
  }
  if (lq.empty()) throw ValidationError("no single-degradation training samples");
  return {images_to_batch(lq), images_to_batch(hq), torch::tensor(labels, torch::kInt64)};
}

std::vector<int64_t> shuffled(int64_t n, Rng& rng) {
  std::vector<int64_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng.engine());
  return order;
}

template <typename Holder>
torch::nn::Module* raw(Holder& h) {
  return h ? h.get() : nullptr;
}

std::vector<torch::nn::Module*> frozen_modules(Models& m) {
  return {raw(m.encoder.encoder), raw(m.vae), raw(m.prompt), raw(m.unet), raw(m.control)};
}

}  // namespace

double effective_rec_weight(const RunConfig& cfg) {
  return cfg.control.control_decoder_enabled ? cfg.loss.l_rec_weight : 0.0;
}

Stage1Losses stage1_loss(Models& m, const Stage1Batch& b, const NoiseSchedule& schedule) {
  Stage1Losses l;
  const auto p_s = m.prompt->semantic(b.p_clip);
  const auto p_d = m.prompt->degradation(b.p_clip);
  const auto cond = control_encode(*m.control, b.lq, p_d);
  const auto z_t = forward_diffuse(b.z0, b.t, b.eps, schedule);
  const auto residuals = control_residuals(*m.control, z_t, b.t, p_s, cond);
  const auto eps_hat = predict_noise(*m.unet, z_t, b.t, p_s, residuals);
  l.diff = diffusion_loss(b.eps, eps_hat);
  l.deg = deg_guidance_loss(*m.prompt, p_d, b.labels);
  l.rec = recon_loss(m.control->decoder(cond), b.hq);
  const double w_deg = m.cfg.loss.l_deg_weight;
  const double w_rec = effective_rec_weight(m.cfg);
  const auto deg_term = w_deg > 0 ? l.deg : l.deg.detach();
  const auto rec_term = w_rec > 0 ? l.rec : l.rec.detach();
  l.total = l.diff + w_deg * deg_term + w_rec * rec_term;
  return l;
}

Stage1Result train_stage1(const RunConfig& cfg) {
  const auto enc_path = cfg.encoder_path();
  const auto vae_path = cfg.vae_path();
  if (!std::filesystem::exists(enc_path / "params.bin")) {
    throw RuntimeFailure("stage 1 needs the encoder checkpoint at " + enc_path.string() +
                         "; run train-encoder before train-stage1");
  }
  if (!std::filesystem::exists(vae_path / "params.bin")) {
    throw RuntimeFailure("stage 1 needs the VAE checkpoint at " + vae_path.string() +
                         "; run pretrain-vae before train-stage1");
  }
  const auto encoder = encoder_from_checkpoint(load_checkpoint(enc_path));
  const auto vae = vae_from_checkpoint(load_checkpoint(vae_path));
  const auto samples = load_samples(cfg.manifest_path(), Split::train, /*single_only=*/true);
  return train_stage1(cfg, encoder, vae, samples);
}

Stage1Result train_stage1(const RunConfig& cfg, const EncoderBundle& encoder, const Vae& vae,
                          const std::vector<LoadedSample>& train_samples) {
  cfg.validate();
  Stage1Result result;
  Models& m = result.models;
  m.cfg = cfg;
  m.encoder = encoder;
  m.vae = vae;
  m.require("vision_encoder");
  m.require("vae");
  m.init_stage1(cfg.seed);
  set_trainable(*m.encoder.encoder, false);
  set_trainable(*m.vae, false);
  m.encoder.encoder->eval();
  m.vae->eval();

  const auto data = to_tensors(train_samples, /*require_labels=*/true);
  const auto p_clip_all = batched_encode(*m.encoder.encoder, data.lq);
  const auto latents = batched_latents(*m.vae, data.hq);
  // A zero scale is resolved here, once, so every later stage reads it from the snapshot.
  if (m.cfg.vae.latent_scale == 0.0) m.cfg.vae.latent_scale = 1.0 / latents.std().item<double>();
  const auto z0_all = latents * m.cfg.vae.latent_scale;
  const auto schedule = NoiseSchedule::from_config(cfg.schedule);

  set_trainable(*m.unet, !cfg.unet.frozen);
  auto params = gather_params({m.prompt.get(), m.control.get(), cfg.unet.frozen ? nullptr : m.unet.get()});
  torch::optim::AdamW opt(params, torch::optim::AdamWOptions(cfg.stage1.lr).weight_decay(cfg.stage1.weight_decay));

  Rng rng(derive_seed(cfg.seed, 0x5A1));
  auto gen = at::make_generator<at::CPUGeneratorImpl>(derive_seed(cfg.seed, 0x5A2));
  const int64_t n = data.lq.size(0);
  const int64_t bs = std::min<int64_t>(cfg.stage1.batch_size, n);
  int64_t step = 0;
  m.prompt->train();
  m.control->train();
  m.unet->train();
  for (int64_t epoch = 0; epoch < cfg.stage1.epochs; ++epoch) {
    const auto order = shuffled(n, rng);
    for (int64_t start = 0; start < n; start += bs) {
      const int64_t end = std::min(n, start + bs);
      auto idx = torch::tensor(std::vector<int64_t>(order.begin() + start, order.begin() + end));
      Stage1Batch b;
      b.lq = data.lq.index_select(0, idx);
      b.hq = data.hq.index_select(0, idx);
      b.labels = data.labels.index_select(0, idx);
      b.p_clip = p_clip_all.index_select(0, idx);
      b.z0 = z0_all.index_select(0, idx);
      std::vector<int64_t> ts(end - start);
      for (auto& t : ts) t = rng.integer(1, schedule.steps());
      b.t = torch::tensor(ts, torch::kInt64);
      b.eps = torch::randn(b.z0.sizes(), gen, b.z0.options());
      const auto l = stage1_loss(m, b, schedule);
      opt.zero_grad();
      l.total.backward();
      clip_and_step(opt, params, cfg.stage1.grad_clip);
      result.ledger.entries.push_back(make_entry("stage1", epoch, step++,
                                                 {{"l_diff", l.diff}, {"l_deg", l.deg}, {"l_rec", l.rec}},
                                                 {1.0, cfg.loss.l_deg_weight, effective_rec_weight(cfg)}, l.total));
    }
    const auto means = result.ledger.epoch_means();
    if (static_cast<int64_t>(means.size()) > epoch) {
      const auto& e = means[epoch];
      log::info("stage1_epoch", {{"epoch", log::str(epoch + 1)},
                                 {"total", log::str(e.at("total"))},
                                 {"l_diff", log::str(e.at("l_diff"))},
                                 {"l_deg", log::str(e.at("l_deg"))},
                                 {"l_rec", log::str(e.at("l_rec"))}});
    }
  }
  m.eval();
  set_trainable(*m.encoder.encoder, true);
  set_trainable(*m.vae, true);
  set_trainable(*m.unet, true);

  auto& meta = result.checkpoint.meta;
  meta["stage"] = "stage1";
  meta["epoch"] = cfg.stage1.epochs;
  meta["seed"] = cfg.seed;
  meta["loss_history_digest"] = result.ledger.digest();
  meta["optimizer"] = {{"name", "adamw"},
                       {"lr", cfg.stage1.lr},
                       {"batch_size", cfg.stage1.batch_size},
                       {"weight_decay", cfg.stage1.weight_decay},
                       {"grad_clip", cfg.stage1.grad_clip}};
  meta["frozen"] = cfg.frozen.stage1;
  export_models(result.checkpoint, m);
  return result;
}

std::map<std::string, uint64_t> frozen_hashes(const Models& m) {
  std::map<std::string, uint64_t> h;
  if (m.encoder.encoder) h["vision_encoder"] = module_hash(*m.encoder.encoder);
  if (m.vae) h["vae"] = module_hash(*m.vae);
  if (m.prompt) h["prompt_processor"] = module_hash(*m.prompt);
  if (m.unet) h["unet"] = module_hash(*m.unet);
  if (m.control) h["control"] = module_hash(*m.control);
  if (m.encoder.bank.prototypes.defined()) {
    h["bank"] = tensor_map_hash({{"prototypes", m.encoder.bank.prototypes}});
  }
  return h;
}

Stage2Result train_stage2(const RunConfig& cfg, const Checkpoint& stage1, bool allow_vae_only) {
  const auto samples = load_samples(cfg.manifest_path(), Split::train, /*single_only=*/true);
  return train_stage2(cfg, stage1, samples, allow_vae_only);
}

Stage2Result train_stage2(const RunConfig& cfg, const Checkpoint& stage1, const std::vector<LoadedSample>& train_samples,
                          bool allow_vae_only) {
  const auto stage = stage1.stage();
  if (!(stage == "stage1" || (allow_vae_only && stage == "vae"))) {
    throw ValidationError("stage 2 needs a stage-1 checkpoint, got stage '" + stage + "'" +
                          (stage == "vae" ? " (pass the VAE-only flag to start from the autoencoder alone)" : ""));
  }
  Stage2Result result;
  Models& m = result.models;
  if (stage == "stage1") {
    m = models_from_checkpoint(stage1);
  } else {
    m.vae = vae_from_checkpoint(stage1);
    m.encoder = load_encoder_provider(cfg.encoder_path());
  }
  const auto arch = m.cfg;
  m.cfg = cfg;
  if (stage == "stage1") {
    // Shapes come from the checkpoint; training settings from the current run.
    m.cfg.dims = arch.dims;
    m.cfg.vae = arch.vae;
    m.cfg.unet = arch.unet;
    m.cfg.control = arch.control;
    m.cfg.encoder = arch.encoder;
    m.cfg.schedule = arch.schedule;
  }
  m.require("vision_encoder");
  m.init_stage2(cfg.seed);
  result.hashes_before = frozen_hashes(m);

  for (auto* mod : frozen_modules(m)) {
    if (mod) {
      set_trainable(*mod, false);
      mod->eval();
    }
  }

  const auto data = to_tensors(train_samples, /*require_labels=*/false);
  torch::Tensor p_d_all;
  if (m.prompt) {
    torch::NoGradGuard guard;
    p_d_all = m.prompt->degradation(batched_encode(*m.encoder.encoder, data.lq));
  } else {
    p_d_all = torch::zeros({data.lq.size(0), m.cfg.dims.d_d});
  }

  auto dec_params = m.decoder->parameters();
  auto disc_params = m.disc->parameters();
  torch::optim::AdamW opt_g(dec_params, torch::optim::AdamWOptions(cfg.stage2.lr).weight_decay(cfg.stage2.weight_decay));
  torch::optim::AdamW opt_d(disc_params,
                            torch::optim::AdamWOptions(cfg.stage2.disc_lr).weight_decay(cfg.stage2.weight_decay));
  const DecoderLossWeights weights{cfg.loss.per_weight, cfg.loss.adv_weight};

  Rng rng(derive_seed(cfg.seed, 0x5B1));
  const int64_t n = data.lq.size(0);
  const int64_t bs = std::min<int64_t>(cfg.stage2.batch_size, n);
  int64_t step = 0;
  m.decoder->train();
  m.disc->train();
  for (int64_t epoch = 0; epoch < cfg.stage2.epochs; ++epoch) {
    const auto order = shuffled(n, rng);
    for (int64_t start = 0; start < n; start += bs) {
      const int64_t end = std::min(n, start + bs);
      auto idx = torch::tensor(std::vector<int64_t>(order.begin() + start, order.begin() + end));
      const auto lq = data.lq.index_select(0, idx);
      const auto hq = data.hq.index_select(0, idx);
      const auto p_d = p_d_all.index_select(0, idx);
      torch::Tensor z0;
      EncoderTaps taps;
      {
        torch::NoGradGuard guard;
        z0 = vae_encode(*m.vae, hq).latent;
        taps = vae_encode(*m.vae, lq).taps;
      }
      const auto i_gen = m.decoder->forward(z0, taps, p_d);
      const auto l = decoder_losses(i_gen, hq, *m.disc, *m.encoder.encoder, weights);
      opt_g.zero_grad();
      l.total.backward();
      clip_and_step(opt_g, dec_params, cfg.stage2.grad_clip);

      opt_d.zero_grad();
      const auto d_loss = discriminator_loss(*m.disc, hq, i_gen.detach());
      d_loss.backward();
      clip_and_step(opt_d, disc_params, cfg.stage2.grad_clip);

      result.ledger.entries.push_back(make_entry("stage2", epoch, step++,
                                                 {{"l_gen", l.gen}, {"l_per", l.per}, {"l_adv", l.adv}},
                                                 {1.0, weights.per, weights.adv}, l.total));
    }
    const auto means = result.ledger.epoch_means();
    if (static_cast<int64_t>(means.size()) > epoch) {
      const auto& e = means[epoch];
      log::info("stage2_epoch", {{"epoch", log::str(epoch + 1)},
                                 {"total", log::str(e.at("total"))},
                                 {"l_gen", log::str(e.at("l_gen"))},
                                 {"l_per", log::str(e.at("l_per"))},
                                 {"l_adv", log::str(e.at("l_adv"))}});
    }
  }
  m.eval();
  for (auto* mod : frozen_modules(m)) {
    if (mod) set_trainable(*mod, true);
  }
  result.hashes_after = frozen_hashes(m);
  if (result.hashes_after != result.hashes_before) {
    throw RuntimeFailure("stage 2 modified a frozen component");
  }

  auto& meta = result.checkpoint.meta;
  meta["stage"] = "stage2";
  meta["epoch"] = cfg.stage2.epochs;
  meta["seed"] = cfg.seed;
  meta["loss_history_digest"] = result.ledger.digest();
  meta["optimizer"] = {{"name", "adamw"},
                       {"lr", cfg.stage2.lr},
                       {"disc_lr", cfg.stage2.disc_lr},
                       {"batch_size", cfg.stage2.batch_size},
                       {"weight_decay", cfg.stage2.weight_decay},
                       {"grad_clip", cfg.stage2.grad_clip}};
  meta["frozen"] = cfg.frozen.stage2;
  export_models(result.checkpoint, m);
  return result;
}

}  // namespace dfr
