// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and exits nonzero when
// any criterion fails. DFR_ACCEPT_ONLY=1,4,8 restricts the run to the listed criteria.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include <ATen/CPUGeneratorImpl.h>

#include "dfr/cli.hpp"
#include "dfr/data_synth.hpp"
#include "dfr/evalkit.hpp"
#include "dfr/log.hpp"
#include "dfr/nn_blocks.hpp"
#include "dfr/png_io.hpp"
#include "dfr/rng.hpp"
#include "dfr/tensor_image.hpp"
#include "dfr/training.hpp"
#include "gradcheck.hpp"
#include "test_util.hpp"

using namespace dfr;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

std::string sci(double v) {
  std::ostringstream os;
  os << std::scientific << std::setprecision(2) << v;
  return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void note(const std::string& what, std::chrono::steady_clock::time_point t0) {
  std::cout << "    . " << what << " (" << fmt(seconds_since(t0), 1) << " s)" << std::endl;
}

RunConfig toy_config() { return load_config(DFR_TOY_CONFIG); }

const fs::path& work_root() {
  static const fs::path root = [] {
    fs::path p = DFR_ACCEPT_DIR;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return root;
}

// ---------------------------------------------------------------------------------------------
// Shared artifacts, built on first use.

// Eight single-degradation kinds at 64x64 for recognition and separability.
struct RecognitionSet {
  RunConfig cfg;
  fs::path manifest;
  EncoderBundle encoder;
  Models stage1;
  std::vector<LoadedSample> test;
};

// Noise + blur for the end-to-end restoration pipeline.
struct RestorationSet {
  RunConfig cfg;
  fs::path manifest;
  Stage1Result stage1;
  Stage2Result stage2;
  std::vector<LoadedSample> test;
};

RecognitionSet& recognition() {
  static std::optional<RecognitionSet> set;
  if (set) return *set;
  set.emplace();
  auto& r = *set;
  auto t0 = std::chrono::steady_clock::now();
  r.cfg = toy_config();
  const fs::path dir = work_root() / "recognition";
  r.cfg.paths.work_dir = dir.string();
  generate_clean_corpus(dir / "clean", 200, 64, derive_seed(r.cfg.seed, 0xA));
  DatasetRecipe recipe;
  recipe.side = 64;
  recipe.test_fraction = 0.2;
  for (auto k : kAllKinds) recipe.per_kind[k] = 65;
  r.manifest = build_dataset(dir / "clean", recipe, dir / "data", r.cfg.seed).manifest;
  r.cfg.paths.manifest = r.manifest.string();
  note("8-kind dataset synthesized", t0);

  auto enc = train_toy_encoder(r.manifest, r.cfg);
  save_checkpoint(enc.checkpoint, r.cfg.encoder_path());
  r.encoder = enc.bundle;
  note("encoder trained", t0);

  // The VAE only supplies z0 targets here; a short pretraining run is enough.
  auto vae_cfg = r.cfg;
  vae_cfg.vae.epochs = 8;
  auto vae = pretrain_autoencoder(r.manifest, vae_cfg);
  save_checkpoint(vae.checkpoint, r.cfg.vae_path());
  note("autoencoder pretrained", t0);

  auto s1_cfg = r.cfg;
  s1_cfg.stage1.epochs = 8;
  auto s1 = train_stage1(s1_cfg, r.encoder, vae.vae, load_samples(r.manifest, Split::train, true));
  r.stage1 = s1.models;
  note("stage 1 trained on the 8-kind set", t0);
  r.test = load_samples(r.manifest, Split::test, true);
  return r;
}

RestorationSet& restoration() {
  static std::optional<RestorationSet> set;
  if (set) return *set;
  auto& rec = recognition();  // reuses the recognition encoder as the frozen image encoder
  set.emplace();
  auto& r = *set;
  auto t0 = std::chrono::steady_clock::now();
  r.cfg = toy_config();
  const fs::path dir = work_root() / "restoration";
  r.cfg.paths.work_dir = dir.string();
  r.cfg.paths.encoder_ckpt = rec.cfg.encoder_path().string();
  const auto recipe = recipe_from_json(r.cfg.data.recipe);
  generate_clean_corpus(dir / "clean", static_cast<int>(r.cfg.data.generate_clean), recipe.side,
                        derive_seed(r.cfg.seed, 0xB));
  r.manifest = build_dataset(dir / "clean", recipe, dir / "data", r.cfg.seed).manifest;
  r.cfg.paths.manifest = r.manifest.string();
  {
    std::ofstream cfg_out(dir / "config.json");
    cfg_out << config_to_json(r.cfg).dump(2) << "\n";
  }
  note("noise+blur dataset synthesized", t0);

  auto vae = pretrain_autoencoder(r.manifest, r.cfg);
  save_checkpoint(vae.checkpoint, r.cfg.vae_path());
  note("autoencoder pretrained, held-out PSNR " + fmt(vae.heldout_psnr, 2) + " dB after " +
           std::to_string(vae.epochs_run) + " epochs",
       t0);

  const auto train = load_samples(r.manifest, Split::train, true);
  r.stage1 = train_stage1(r.cfg, rec.encoder, vae.vae, train);
  save_checkpoint(r.stage1.checkpoint, r.cfg.stage1_path());
  r.stage1.ledger.write_jsonl(r.cfg.stage1_path() / "ledger.jsonl");
  note("stage 1 trained", t0);

  r.stage2 = train_stage2(r.cfg, r.stage1.checkpoint, train);
  save_checkpoint(r.stage2.checkpoint, r.cfg.stage2_path());
  r.stage2.ledger.write_jsonl(r.cfg.stage2_path() / "ledger.jsonl");
  note("stage 2 trained", t0);
  r.test = load_samples(r.manifest, Split::test, true);
  return r;
}

// Fresh, untrained chain for the initialization properties.
Models fresh_models(uint64_t seed) {
  Models m;
  m.cfg = toy_config();
  m.cfg.vae.latent_scale = 1.0;  // nothing has been trained to estimate it from
  torch::manual_seed(seed);
  m.vae = Vae(vae_options(m.cfg));
  m.init_stage1(seed);
  m.init_stage2(seed + 1);
  m.eval();
  return m;
}

// ---------------------------------------------------------------------------------------------
// Criteria

Outcome zero_control_transparency() {
  Models m = fresh_models(11);
  torch::NoGradGuard guard;
  const auto schedule = NoiseSchedule::from_config(m.cfg.schedule);
  auto gen = at::make_generator<at::CPUGeneratorImpl>(3);
  int identical = 0;
  for (int i = 0; i < 10; ++i) {
    auto lq = torch::rand({2, 3, 64, 64}, gen);
    auto p_clip = torch::nn::functional::normalize(torch::randn({2, m.cfg.dims.d_e}, gen),
                                                   torch::nn::functional::NormalizeFuncOptions().dim(1));
    auto p_s = m.prompt->semantic(p_clip);
    auto p_d = m.prompt->degradation(p_clip);
    auto z_t = torch::randn({2, m.cfg.dims.latent_channels, 16, 16}, gen);
    auto t = torch::randint(1, schedule.steps() + 1, {2}, gen, torch::kInt64);
    auto cond = control_encode(*m.control, lq, p_d);
    auto res = control_residuals(*m.control, z_t, t, p_s, cond);
    identical += torch::equal(predict_noise(*m.unet, z_t, t, p_s, res), predict_noise(*m.unet, z_t, t, p_s));
  }
  // Full 20-step sampling with and without the control branch.
  auto lq = torch::rand({2, 3, 64, 64}, gen);
  Prompts prompts;
  prompts.p_clip = torch::randn({2, m.cfg.dims.d_e}, gen);
  prompts.p_s = m.prompt->semantic(prompts.p_clip);
  prompts.p_d = m.prompt->degradation(prompts.p_clip);
  const auto with = sample_latents(m, lq, prompts, 20, 5, true);
  const auto without = sample_latents(m, lq, prompts, 20, 5, false);
  const bool sampled_equal = torch::equal(with, without);
  return {identical == 10 && sampled_equal,
          std::to_string(identical) + "/10 noise predictions bit-identical, 20-step samples " +
              (sampled_equal ? "bit-identical" : "differ")};
}

Outcome drb_zero_init_identity() {
  Models m = fresh_models(12);
  torch::NoGradGuard guard;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(4);
  int identical = 0;
  for (int i = 0; i < 10; ++i) {
    auto z = torch::randn({1, m.cfg.dims.latent_channels, 16, 16}, gen);
    auto taps = vae_encode(*m.vae, torch::rand({1, 3, 64, 64}, gen)).taps;
    auto p_d = torch::randn({1, m.cfg.dims.d_d}, gen);
    identical += torch::equal(decode_refined(*m.decoder, z, taps, p_d), vae_decode(*m.vae, z));
  }
  return {identical == 10, std::to_string(identical) + "/10 latents decode bit-identically"};
}

Outcome gradient_suite() {
  constexpr double tol = 1e-4;
  std::vector<std::pair<std::string, test::GradCheckResult>> results;
  auto record = [&](const std::string& name, const test::GradCheckResult& r) { results.emplace_back(name, r); };
  torch::manual_seed(31);
  auto f64 = torch::kFloat64;

  {
    PromptProcessor pp(PromptDims{8, 12, 6, 4});
    pp->to(f64);
    auto x = torch::randn({4, 8}, f64);
    auto w_s = torch::randn({4, 12}, f64);
    auto w_d = torch::randn({4, 6}, f64);
    auto labels = torch::tensor({0, 1, 2, 3}, torch::kInt64);
    record("B_s", test::grad_check(test::named(*pp->semantic_branch()), [&] { return (pp->semantic(x) * w_s).sum(); }));
    record("B_d", test::grad_check(test::named(*pp->degradation_branch()),
                                   [&] { return (pp->degradation(x) * w_d).sum(); }));
    record("C", test::grad_check(test::named(*pp->classifier()),
                                 [&] { return deg_guidance_loss(*pp, pp->degradation(x), labels); }));
  }
  {
    DegradationModulationBlock dmb(4, 3);
    dmb->to(f64);
    auto f = torch::randn({2, 4, 4, 4}, f64);
    auto p = torch::randn({2, 3}, f64);
    auto w = torch::randn({2, 4, 4, 4}, f64);
    record("DMB", test::grad_check(test::named(*dmb), [&] { return (dmb->forward(f, p) * w).sum(); }));
  }
  {
    RefinementBlock drb(4, 3, 3);
    drb->to(f64);
    {
      torch::NoGradGuard guard;
      for (auto& p : drb->out->parameters()) p.normal_(0.0, 0.5);
    }
    auto z = torch::randn({2, 4, 4, 4}, f64);
    auto zl = torch::randn({2, 3, 4, 4}, f64);
    auto p = torch::randn({2, 3}, f64);
    auto w = torch::randn({2, 4, 4, 4}, f64);
    record("DRB", test::grad_check(test::named(*drb), [&] { return (drb->forward(z, zl, p) * w).sum(); }));
  }
  {
    // Zero-initialized: the weight gradient is nonzero even though the output starts at zero.
    auto zc = nn::zero_conv(5, 3);
    zc->to(f64);
    auto x = torch::randn({2, 5, 3, 3}, f64);
    auto w = torch::randn({2, 3, 3, 3}, f64);
    record("zero conv", test::grad_check(test::named(*zc), [&] { return (zc(x) * w).sum(); }));
  }
  {
    Models m;
    m.cfg.dims.d_e = 4;
    m.cfg.dims.d_s = 6;
    m.cfg.dims.d_d = 4;
    m.cfg.dims.latent_channels = 2;
    m.cfg.dims.num_kinds = 3;
    m.cfg.unet.channels = {4, 4};
    m.cfg.unet.heads = 1;
    m.cfg.control.widths = {2, 4, 4};
    m.init_stage1(32);
    m.prompt->to(f64);
    m.unet->to(f64);
    m.control->to(f64);
    {
      torch::NoGradGuard guard;
      for (auto& p : m.control->network->zero_convs->parameters()) p.normal_(0.0, 0.5);
    }
    const int64_t count =
        nn::parameter_count(*m.prompt) + nn::parameter_count(*m.unet) + nn::parameter_count(*m.control);
    if (count > 10000) return {false, "composite toy model has " + std::to_string(count) + " parameters"};
    Stage1Batch b;
    b.lq = torch::rand({2, 3, 16, 16}, f64);
    b.hq = torch::rand({2, 3, 16, 16}, f64);
    b.labels = torch::tensor({0, 2}, torch::kInt64);
    b.p_clip = torch::randn({2, 4}, f64);
    b.z0 = torch::randn({2, 2, 4, 4}, f64);
    b.t = torch::tensor({17, 640}, torch::kInt64);
    b.eps = torch::randn({2, 2, 4, 4}, f64);
    const auto schedule = NoiseSchedule::from_config(m.cfg.schedule);
    auto params = test::named(*m.prompt, "prompt.");
    for (auto& p : test::named(*m.unet, "unet.")) params.push_back(p);
    for (auto& p : test::named(*m.control, "control.")) params.push_back(p);
    record("stage-1 loss (" + std::to_string(count) + " params)",
           test::grad_check(params, [&] { return stage1_loss(m, b, schedule).total; }, 2));
  }
  bool pass = true;
  std::ostringstream os;
  for (const auto& [name, r] : results) {
    const bool ok = r.max_rel_error <= tol && r.checked > 0;
    pass = pass && ok;
    os << (os.tellp() > 0 ? ", " : "") << name << " " << sci(r.max_rel_error);
    if (!ok) os << " [worst: " << r.worst << "]";
  }
  return {pass, "max rel error: " + os.str() + " (tol 1e-4)"};
}

Outcome sampler_recovery() {
  NoiseSchedule s(1000, 1e-4, 2e-2);
  auto gen = at::make_generator<at::CPUGeneratorImpl>(8);
  auto z0 = torch::randn({4, 4, 16, 16}, gen, torch::kFloat64);
  auto zT = initial_noise({4, 4, 16, 16}, 9, torch::kFloat64);
  NoisePredictor oracle = [&](const torch::Tensor& z_t, int64_t t) {
    const double ab = s.alpha_bar(t);
    return (z_t - std::sqrt(ab) * z0) / std::sqrt(1.0 - ab);
  };
  const auto out = DdimSampler{}.run(oracle, zT, s, 20);
  const double err = (out - z0).abs().max().item<double>();
  return {err <= 1e-3, "max |z0_hat - z0| = " + sci(err) + " (tol 1e-3)"};
}

Outcome degradation_recognition() {
  auto& r = recognition();
  const double sim_acc = similarity_accuracy(r.encoder, r.test);
  const double cls_acc = classifier_accuracy(r.stage1, r.test);
  return {sim_acc >= 0.90 && cls_acc >= 0.95, "similarity argmax accuracy " + fmt(sim_acc, 3) +
                                                  " (>= 0.90), classifier accuracy " + fmt(cls_acc, 3) +
                                                  " (>= 0.95) on " + std::to_string(r.test.size()) +
                                                  " held-out images"};
}

Outcome separability() {
  auto& r = recognition();
  const auto s = embedding_separability(r.test, r.stage1);
  return {s.silhouette_pd > s.silhouette_clip, "silhouette P_D " + fmt(s.silhouette_pd) + " vs P_CLIP " +
                                                   fmt(s.silhouette_clip) + " over " + std::to_string(s.samples) +
                                                   " test images"};
}

Outcome end_to_end_restoration() {
  auto& r = restoration();
  Models& m = r.stage2.models;
  m.eval();
  torch::NoGradGuard guard;
  std::map<std::string, std::array<double, 3>> sums;  // lq, refined, plain
  std::map<std::string, int> counts;
  const std::size_t chunk = 16;
  for (std::size_t s = 0, c = 0; s < r.test.size(); s += chunk, ++c) {
    const std::size_t e = std::min(r.test.size(), s + chunk);
    std::vector<Image> lq_imgs;
    for (std::size_t i = s; i < e; ++i) lq_imgs.push_back(r.test[i].lq);
    const auto lq = images_to_batch(lq_imgs);
    const auto prompts = compute_prompts(m, lq);
    const auto z = sample_latents(m, lq, prompts, m.cfg.sampler.steps, derive_seed(m.cfg.seed, c)) /
                   m.cfg.vae.latent_scale;
    const auto refined = batch_to_images(decode_refined(*m.decoder, z, vae_encode(*m.vae, lq).taps, prompts.p_d));
    const auto plain = batch_to_images(vae_decode(*m.vae, z));
    for (std::size_t i = s; i < e; ++i) {
      const auto& sample = r.test[i];
      auto& acc = sums[sample.task];
      acc[0] += psnr(quantize8(sample.lq), sample.hq);
      acc[1] += psnr(quantize8(refined[i - s]), sample.hq);
      acc[2] += psnr(quantize8(plain[i - s]), sample.hq);
      ++counts[sample.task];
    }
  }
  bool pass = !sums.empty();
  std::ostringstream os;
  for (const auto& [task, acc] : sums) {
    const double n = counts[task];
    const double lq = acc[0] / n, refined = acc[1] / n, plain = acc[2] / n;
    pass = pass && refined - lq >= 2.0 && refined >= plain;
    os << (os.tellp() > 0 ? "; " : "") << task << " (" << counts[task] << "): lq " << fmt(lq, 2) << ", restored "
       << fmt(refined, 2) << " (" << (refined - lq >= 0 ? "+" : "") << fmt(refined - lq, 2) << " dB), plain decoder "
       << fmt(plain, 2);
  }
  return {pass, os.str()};
}

Outcome synthesis_calibration() {
  std::ostringstream os;
  bool pass = true;
  // Noise: mid-gray avoids clipping, so the residual std is the injected sigma.
  const Image gray(128, 128, 0.5);
  DegradationSpec noise{DegradationKind::noise, {{"sigma", 25.0 / 255.0}}, 0};
  const Image noisy = apply_degradation(gray, noise, 7);
  double sq = 0.0;
  for (std::size_t i = 0; i < noisy.size(); ++i) sq += std::pow(noisy.data()[i] - 0.5, 2);
  const double std_dev = std::sqrt(sq / static_cast<double>(noisy.size()));
  const double rel = std::abs(std_dev / (25.0 / 255.0) - 1.0);
  pass = pass && rel <= 0.05;
  os << "noise std off by " << fmt(100 * rel, 2) << "%";

  const Image clean = generate_clean_image(64, 3);
  auto mse = [](const Image& a, const Image& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::pow(a.data()[i] - b.data()[i], 2);
    return s / static_cast<double>(a.size());
  };
  const double e10 = mse(jpeg_roundtrip(clean, 10), clean);
  const double e90 = mse(jpeg_roundtrip(clean, 90), clean);
  pass = pass && e10 > e90;
  os << "; jpeg mse q10 " << sci(e10) << " > q90 " << sci(e90);

  const double t = haze_transmission(1.2);
  const Image back = haze_invert(haze_synthesize(clean, t, 0.85), t, 0.85);
  double worst = 0.0;
  for (std::size_t i = 0; i < back.size(); ++i) worst = std::max(worst, std::abs(back.data()[i] - clean.data()[i]));
  pass = pass && worst <= 1e-6;
  os << "; haze inversion max err " << sci(worst);

  const std::vector<DegradationSpec> chain = {{DegradationKind::blur, {}, 0},
                                              {DegradationKind::noise, {}, 0},
                                              {DegradationKind::jpeg, {{"quality", 40}}, 0}};
  const Image composed = compose_mixture(clean, chain, 21);
  Image sequential = clean;
  for (std::size_t i = 0; i < chain.size(); ++i) sequential = apply_degradation(sequential, chain[i], derive_seed(21, i));
  const bool equal = composed == sequential;
  pass = pass && equal;
  os << "; mixture " << (equal ? "bit-equals" : "differs from") << " sequential application";
  return {pass, os.str()};
}

Outcome ledger_exactness() {
  auto& r = restoration();
  auto check = [](const LossLedger& ledger, const std::vector<float>& weights, std::size_t& exact) {
    bool ok = !ledger.entries.empty();
    for (const auto& e : ledger.entries) {
      ok = ok && e.weights == weights;
      if (ledger_exact(e)) ++exact;
    }
    return ok && exact == ledger.entries.size();
  };
  std::size_t exact1 = 0, exact2 = 0;
  const auto s1 = LossLedger::read_jsonl(r.cfg.stage1_path() / "ledger.jsonl");
  const auto s2 = LossLedger::read_jsonl(r.cfg.stage2_path() / "ledger.jsonl");
  const bool ok1 = check(s1, {1.0f, 1.0f, 1.0f}, exact1);
  const bool ok2 = check(s2, {1.0f, 0.1f, 0.001f}, exact2);
  const bool same = s1.digest() == r.stage1.ledger.digest() && s2.digest() == r.stage2.ledger.digest();
  return {ok1 && ok2 && same, "stage 1: " + std::to_string(exact1) + "/" + std::to_string(s1.entries.size()) +
                                  " steps exact (weights 1,1,1); stage 2: " + std::to_string(exact2) + "/" +
                                  std::to_string(s2.entries.size()) + " steps exact (weights 1,0.1,0.001)"};
}

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = test::slurp(e.path());
  }
  return files;
}

Outcome determinism_and_persistence() {
  auto& r = restoration();
  const fs::path dir = work_root() / "determinism";
  const std::string cfg = (work_root() / "restoration" / "config.json").string();
  std::ostringstream sink, errs;
  auto cli = [&](std::vector<std::string> args) {
    args.insert(args.end(), {"--config", cfg, "-q"});
    const int code = cli::run(args, sink, errs);
    if (code != 0) throw std::runtime_error("dfr " + args[0] + " exited " + std::to_string(code) + ": " + errs.str());
  };
  std::ostringstream os;

  cli({"synth", "--out-dir", (dir / "synth_a").string()});
  cli({"synth", "--out-dir", (dir / "synth_b").string()});
  const auto a = tree_bytes(dir / "synth_a");
  const bool synth_same = a == tree_bytes(dir / "synth_b") && !a.empty();
  os << "synth " << a.size() << " files " << (synth_same ? "identical" : "DIFFER");

  const auto lq_path = r.manifest.parent_path() / read_manifest(r.manifest).back().lq_path;
  cli({"restore", "--input", lq_path.string(), "--output", (dir / "restore_a.png").string()});
  cli({"restore", "--input", lq_path.string(), "--output", (dir / "restore_b.png").string()});
  const bool restore_same = test::slurp(dir / "restore_a.png") == test::slurp(dir / "restore_b.png");
  os << "; restore " << (restore_same ? "identical" : "DIFFERS");

  cli({"eval", "--limit", "8", "--out-dir", (dir / "eval_a").string()});
  cli({"eval", "--limit", "8", "--out-dir", (dir / "eval_b").string()});
  const auto ea = tree_bytes(dir / "eval_a");
  const bool eval_same = ea == tree_bytes(dir / "eval_b") && ea.size() >= 12;
  os << "; eval " << ea.size() << " files " << (eval_same ? "identical" : "DIFFER");

  // Probe outputs survive a save / load / save cycle of the encoder checkpoint.
  const fs::path enc_a = r.cfg.encoder_path();
  const fs::path enc_b = dir / "encoder_copy.ckpt";
  save_checkpoint(load_checkpoint(enc_a), enc_b);
  const bool params_same = test::slurp(enc_a / "params.bin") == test::slurp(enc_b / "params.bin");
  std::ostringstream probe_a, probe_b;
  errs.str("");
  const int ca = cli::run({"probe", "--input", lq_path.string(), "--bank", enc_a.string(), "-q"}, probe_a, errs);
  const int cb = cli::run({"probe", "--input", lq_path.string(), "--bank", enc_b.string(), "-q"}, probe_b, errs);
  auto original = recognition().encoder;
  auto reloaded = load_encoder_provider(enc_b);
  const Image img = read_png(lq_path);
  const bool scores_same =
      degradation_similarity(*original.encoder, img, original.bank) == degradation_similarity(*reloaded.encoder, img, reloaded.bank);
  const bool probe_same = ca == 0 && cb == 0 && probe_a.str() == probe_b.str() && !probe_a.str().empty();
  os << "; checkpoint round trip " << (params_same && probe_same && scores_same ? "preserves" : "CHANGES")
     << " probe output";

  // Restoring from a reloaded stage-2 checkpoint matches the in-memory model.
  auto models = models_from_checkpoint(load_checkpoint(r.cfg.stage2_path()));
  auto batch = image_to_tensor(img).unsqueeze(0);
  const bool model_same = torch::equal(restore(models, batch, 4, 1, false).restored,
                                       restore(r.stage2.models, batch, 4, 1, false).restored);
  os << "; reloaded model " << (model_same ? "restores identically" : "DIFFERS");
  return {synth_same && restore_same && eval_same && params_same && probe_same && scores_same && model_same, os.str()};
}

}  // namespace

int main() {
  log::set_level(log::Level::warn);
  std::set<int> only;
  if (const char* env = std::getenv("DFR_ACCEPT_ONLY")) {
    std::stringstream ss(env);
    for (std::string item; std::getline(ss, item, ',');) only.insert(std::stoi(item));
  }
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"zero-control transparency", zero_control_transparency},
      {"refinement-block zero-init identity", drb_zero_init_identity},
      {"gradient suite", gradient_suite},
      {"sampler recovery oracle", sampler_recovery},
      {"degradation recognition", degradation_recognition},
      {"prompt separability", separability},
      {"end-to-end toy restoration", end_to_end_restoration},
      {"degradation-synthesis calibration", synthesis_calibration},
      {"loss-ledger exactness", ledger_exactness},
      {"determinism and persistence", determinism_and_persistence},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  [" << id << "] " << criteria[i].first << " ("
              << fmt(seconds_since(t0), 1) << " s): " << o.detail << std::endl;
  }
  std::cout << (failures == 0 ? "all acceptance criteria passed" : std::to_string(failures) + " criteria failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
