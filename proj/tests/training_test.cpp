#include <fstream>

#include <gtest/gtest.h>

#include "dfr/checkpoint.hpp"
#include "dfr/error.hpp"
#include "dfr/tensor_image.hpp"
#include "dfr/training.hpp"
#include "fixtures.hpp"

using namespace dfr;

namespace {

// Encoder and VAE trained once on a two-kind set and reused by every stage test.
struct Prereqs {
  std::filesystem::path dir;
  RunConfig cfg;
  EncoderBundle encoder;
  Vae vae{nullptr};
  std::vector<LoadedSample> train;
};

const Prereqs& prereqs() {
  static const Prereqs p = [] {
    Prereqs r;
    r.dir = test::scratch_dir("training_prereqs");
    const auto manifest =
        test::make_dataset(r.dir, {DegradationKind::noise, DegradationKind::low_light}, 10, 10, 21, 32);
    r.cfg = test::tiny_config(r.dir);
    r.cfg.dims.image_side = 32;
    r.cfg.paths.manifest = manifest.string();
    auto enc = train_toy_encoder(manifest, r.cfg);
    save_checkpoint(enc.checkpoint, r.cfg.encoder_path());
    r.encoder = enc.bundle;
    auto vae = pretrain_autoencoder(manifest, r.cfg);
    save_checkpoint(vae.checkpoint, r.cfg.vae_path());
    r.vae = vae.vae;
    r.train = load_samples(manifest, Split::train, true);
    return r;
  }();
  return p;
}

}  // namespace

TEST(Config, DefaultsValidateAndRoundTrip) {
  RunConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_EQ(cfg.dims.d_s, 768);
  EXPECT_EQ(cfg.dims.d_d, 256);
  EXPECT_EQ(cfg.stage1.epochs, 100);
  EXPECT_EQ(cfg.stage2.epochs, 25);
  EXPECT_DOUBLE_EQ(cfg.stage1.lr, 1e-5);
  const auto back = config_from_json(config_to_json(cfg));
  EXPECT_EQ(config_digest(back), config_digest(cfg));
}

TEST(Config, UnknownKeysAndWrongTypesNameTheField) {
  auto j = nlohmann::json(config_to_json(RunConfig{}));
  j["stage1"]["learning_rate"] = 1.0;
  try {
    config_from_json(j);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("stage1.learning_rate"), std::string::npos) << e.what();
  }
  auto k = nlohmann::json(config_to_json(RunConfig{}));
  k["dims"]["d_s"] = "wide";
  try {
    config_from_json(k);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("dims.d_s"), std::string::npos) << e.what();
  }
  auto free_form = nlohmann::json(config_to_json(RunConfig{}));
  free_form["data"]["recipe"] = {{"per_kind", {{"noise", 3}}}};
  EXPECT_NO_THROW(config_from_json(free_form));
}

TEST(Config, OverridesApplyAndValidate) {
  RunConfig cfg;
  apply_override(cfg, "stage1.lr=0.5");
  apply_override(cfg, "unet.channels=[16,32]");
  apply_override(cfg, "paths.work_dir=runs/x");
  EXPECT_DOUBLE_EQ(cfg.stage1.lr, 0.5);
  EXPECT_EQ(cfg.unet.channels, (std::vector<int64_t>{16, 32}));
  EXPECT_EQ(cfg.stage1_path(), std::filesystem::path("runs/x/stage1.ckpt"));
  EXPECT_THROW(apply_override(cfg, "stage1.nope=1"), ValidationError);
  EXPECT_THROW(apply_override(cfg, "dims.d_d=768"), ValidationError);  // equals d_s
  EXPECT_THROW(apply_override(cfg, "no_equals"), ValidationError);
  EXPECT_DOUBLE_EQ(cfg.stage1.lr, 0.5);
}

TEST(Config, LoadsCommentedJsonFile) {
  const auto dir = test::scratch_dir("config_file");
  std::ofstream(dir / "c.json") << "{\n  // smaller run\n  \"seed\": 7,\n  \"sampler\": {\"steps\": 5}\n}\n";
  const auto cfg = load_config(dir / "c.json");
  EXPECT_EQ(cfg.seed, 7u);
  EXPECT_EQ(cfg.sampler.steps, 5);
  EXPECT_THROW(load_config(dir / "absent.json"), RuntimeFailure);
}

TEST(Checkpoint, SaveIsByteStableAndLoadIsExact) {
  const auto dir = test::scratch_dir("ckpt_stable");
  Checkpoint c;
  c.params["a.weight"] = torch::randn({3, 4});
  c.params["b.steps"] = torch::arange(5, torch::kInt64);
  c.params["c.double"] = torch::randn({2}, torch::kFloat64);
  c.meta["stage"] = "vae";
  save_checkpoint(c, dir / "one");
  save_checkpoint(c, dir / "two");
  EXPECT_EQ(test::slurp(dir / "one" / "params.bin"), test::slurp(dir / "two" / "params.bin"));
  const auto back = load_checkpoint(dir / "one");
  EXPECT_EQ(back.stage(), "vae");
  ASSERT_EQ(back.params.size(), 3u);
  for (const auto& [k, v] : c.params) EXPECT_TRUE(torch::equal(back.params.at(k), v)) << k;
  EXPECT_EQ(tensor_map_hash(back.params), tensor_map_hash(c.params));
}

TEST(Checkpoint, DiagnosesMissingCorruptAndVersionMismatch) {
  const auto dir = test::scratch_dir("ckpt_bad");
  EXPECT_THROW(load_checkpoint(dir / "missing"), RuntimeFailure);

  Checkpoint c;
  c.params["w"] = torch::ones({16});
  save_checkpoint(c, dir / "corrupt");
  {
    std::fstream f(dir / "corrupt" / "params.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(-12, std::ios::end);
    f.put('\x7f');
  }
  try {
    load_checkpoint(dir / "corrupt");
    FAIL();
  } catch (const RuntimeFailure& e) {
    EXPECT_NE(std::string(e.what()).find("integrity"), std::string::npos) << e.what();
  }

  save_checkpoint(c, dir / "truncated");
  std::filesystem::resize_file(dir / "truncated" / "params.bin", 20);
  EXPECT_THROW(load_checkpoint(dir / "truncated"), RuntimeFailure);

  save_checkpoint(c, dir / "future");
  {
    std::fstream f(dir / "future" / "params.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8);
    const uint32_t v = kCheckpointVersion + 1;
    f.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  try {
    load_checkpoint(dir / "future");
    FAIL();
  } catch (const RuntimeFailure& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find(std::to_string(kCheckpointVersion + 1)), std::string::npos) << msg;
    EXPECT_NE(msg.find(std::to_string(kCheckpointVersion)), std::string::npos) << msg;
  }
}

TEST(Checkpoint, ModuleRoundTripIsStrict) {
  torch::manual_seed(1);
  torch::nn::Linear a(3, 2), b(3, 2), c(4, 2);
  Checkpoint ck;
  export_module(ck, "lin", *a);
  import_module(ck, "lin", *b);
  EXPECT_EQ(module_hash(*a), module_hash(*b));
  EXPECT_THROW(import_module(ck, "lin", *c), std::exception);
  EXPECT_THROW(import_module(ck, "other", *b), std::exception);
}

TEST(Ledger, RecomputeFollowsTrainingOrder) {
  LedgerEntry e;
  e.components = {{"a", 0.1f}, {"b", 0.2f}, {"c", 0.3f}};
  e.weights = {1.0f, 0.5f, 0.25f};
  e.total = (0.1f + 0.5f * 0.2f) + 0.25f * 0.3f;
  EXPECT_TRUE(ledger_exact(e));
  e.total = std::nextafter(e.total, 1.0f);
  EXPECT_FALSE(ledger_exact(e));
}

TEST(Stage1, MissingPrerequisitesNameTheOrder) {
  const auto dir = test::scratch_dir("stage1_missing");
  auto cfg = test::tiny_config(dir);
  try {
    train_stage1(cfg);
    FAIL();
  } catch (const RuntimeFailure& e) {
    EXPECT_NE(std::string(e.what()).find("train-encoder before train-stage1"), std::string::npos) << e.what();
  }
}

TEST(Stage1, DeterministicLedgerExactAndRoundTrip) {
  const auto& p = prereqs();
  auto a = train_stage1(p.cfg);
  auto b = train_stage1(p.cfg, p.encoder, p.vae, p.train);
  ASSERT_FALSE(a.ledger.entries.empty());
  EXPECT_EQ(a.ledger.digest(), b.ledger.digest());
  EXPECT_EQ(tensor_map_hash(a.checkpoint.params), tensor_map_hash(b.checkpoint.params));
  for (const auto& e : a.ledger.entries) {
    EXPECT_TRUE(ledger_exact(e)) << "step " << e.step;
    EXPECT_EQ(e.components.size(), 3u);
    EXPECT_EQ(e.components[0].first, "l_diff");
  }
  EXPECT_EQ(a.checkpoint.stage(), "stage1");
  EXPECT_EQ(a.checkpoint.meta.at("loss_history_digest"), a.ledger.digest());

  const auto dir = test::scratch_dir("stage1_ledger");
  a.ledger.write_jsonl(dir / "ledger.jsonl");
  const auto back = LossLedger::read_jsonl(dir / "ledger.jsonl");
  EXPECT_EQ(back.digest(), a.ledger.digest());
  for (const auto& e : back.entries) EXPECT_TRUE(ledger_exact(e));

  save_checkpoint(a.checkpoint, dir / "s1.ckpt");
  auto reloaded = models_from_checkpoint(load_checkpoint(dir / "s1.ckpt"));
  EXPECT_EQ(frozen_hashes(reloaded), frozen_hashes(a.models));
}

TEST(Stage1, ZeroGuidanceWeightLeavesClassifierUntouched) {
  const auto& p = prereqs();
  auto cfg = p.cfg;
  cfg.loss.l_deg_weight = 0.0;
  auto r = train_stage1(cfg, p.encoder, p.vae, p.train);
  Models fresh;
  fresh.cfg = cfg;
  fresh.init_stage1(cfg.seed);
  EXPECT_EQ(module_hash(*r.models.prompt->classifier()), module_hash(*fresh.prompt->classifier()));
  EXPECT_NE(module_hash(*r.models.prompt->degradation_branch()), module_hash(*fresh.prompt->degradation_branch()));
  for (const auto& e : r.ledger.entries) {
    EXPECT_EQ(e.weights[1], 0.0f);
    EXPECT_GT(e.components[1].second, 0.0f);  // still reported
    EXPECT_TRUE(ledger_exact(e));
  }
}

TEST(Stage1, ZeroLatentScaleIsResolvedFromTrainingLatents) {
  const auto& p = prereqs();
  auto cfg = p.cfg;
  cfg.stage1.epochs = 0;
  cfg.vae.latent_scale = 0.0;
  auto r = train_stage1(cfg, p.encoder, p.vae, p.train);
  std::vector<Image> hq;
  for (const auto& s : p.train) hq.push_back(s.hq);
  auto vae = p.vae;
  torch::NoGradGuard guard;
  const double std_dev = vae_encode(*vae, images_to_batch(hq)).latent.std().item<double>();
  EXPECT_NEAR(r.models.cfg.vae.latent_scale, 1.0 / std_dev, 1e-4 / std_dev);
  auto reloaded = models_from_checkpoint(r.checkpoint);
  EXPECT_EQ(reloaded.cfg.vae.latent_scale, r.models.cfg.vae.latent_scale);

  // An unresolved scale cannot reach the sampler.
  reloaded.cfg.vae.latent_scale = 0.0;
  auto lq = images_to_batch(std::vector<Image>{p.train.front().lq});
  EXPECT_THROW(sample_latents(reloaded, lq, compute_prompts(reloaded, lq), 2, 1), ValidationError);
}

TEST(Stage1, DisabledControlDecoderZeroesReconstructionWeight) {
  auto cfg = prereqs().cfg;
  cfg.control.control_decoder_enabled = false;
  EXPECT_EQ(effective_rec_weight(cfg), 0.0);
  cfg.control.control_decoder_enabled = true;
  EXPECT_EQ(effective_rec_weight(cfg), cfg.loss.l_rec_weight);
}

TEST(Stage2, RejectsWrongStageCheckpoints) {
  const auto& p = prereqs();
  auto vae_ckpt = load_checkpoint(p.cfg.vae_path());
  try {
    train_stage2(p.cfg, vae_ckpt, p.train);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("stage-1"), std::string::npos) << e.what();
  }
  auto enc_ckpt = load_checkpoint(p.cfg.encoder_path());
  EXPECT_THROW(train_stage2(p.cfg, enc_ckpt, p.train, true), ValidationError);
}

TEST(Stage2, FrozenComponentsUnchangedAndFirstStepMatchesPlainDecoder) {
  const auto& p = prereqs();
  auto s1 = train_stage1(p.cfg, p.encoder, p.vae, p.train);
  auto cfg = p.cfg;
  cfg.stage2.batch_size = static_cast<int64_t>(p.train.size());  // one step covers every sample
  auto r = train_stage2(cfg, s1.checkpoint, p.train);
  EXPECT_EQ(r.hashes_before, r.hashes_after);
  EXPECT_EQ(r.hashes_before, frozen_hashes(s1.models));
  EXPECT_EQ(r.checkpoint.stage(), "stage2");
  ASSERT_EQ(r.ledger.entries.size(), 1u);
  const auto& e = r.ledger.entries[0];
  EXPECT_TRUE(ledger_exact(e));

  // A fresh refined decoder is the plain VAE decoder, so the first pixel loss is the
  // autoencoder's reconstruction error on the ground truth.
  std::vector<Image> hq;
  for (const auto& s : p.train) hq.push_back(s.hq);
  torch::NoGradGuard guard;
  auto x = images_to_batch(hq);
  auto rec = s1.models.vae->decoder->forward(vae_encode(*s1.models.vae, x).latent);
  const double expected = (rec - x).pow(2).mean().item<double>();
  EXPECT_NEAR(e.components[0].second, expected, 1e-5 * expected + 1e-7);
}

TEST(Stage2, VaeOnlyStartNeedsTheFlag) {
  const auto& p = prereqs();
  auto r = train_stage2(p.cfg, load_checkpoint(p.cfg.vae_path()), p.train, true);
  EXPECT_FALSE(r.models.prompt);
  EXPECT_EQ(r.checkpoint.stage(), "stage2");
}
