#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace dfr {

struct DimsConfig {
  int64_t d_e = 64;    // vision encoder output
  int64_t d_s = 768;   // semantic prompt P_S
  int64_t d_d = 256;   // degradation prompt P_D
  int64_t latent_channels = 4;
  int64_t factor = 4;  // VAE spatial downsampling
  int64_t num_kinds = 8;
  int64_t image_side = 64;
};

struct EncoderConfig {
  std::vector<int64_t> widths{16, 32, 64};
  int64_t input_side = 64;
  int64_t epochs = 30;
  int64_t batch_size = 32;
  double lr = 2e-3;
  double temperature = 0.1;
};

struct VaeConfig {
  std::vector<int64_t> channels{32, 64, 128};
  int64_t epochs = 60;
  int64_t batch_size = 16;
  double lr = 2e-3;
  double kl_weight = 1e-6;
  double target_psnr = 28.0;
  // Multiplier taking VAE latents to the diffusion space. 0 estimates 1/std from the stage-1
  // training latents.
  double latent_scale = 1.0;
};

struct UNetConfig {
  std::vector<int64_t> channels{32, 64};
  int64_t heads = 4;
  bool frozen = false;
};

struct ControlConfig {
  std::vector<int64_t> widths{64, 128, 256};
  bool dmb_enabled = true;
  bool control_decoder_enabled = true;
  bool use_timestep = true;
  bool use_context = true;
};

struct ScheduleConfig {
  int64_t steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 2e-2;
};

struct SamplerConfig {
  int64_t steps = 20;
  bool control = true;
};

struct LossConfig {
  double l_deg_weight = 1.0;
  double l_rec_weight = 1.0;
  double per_weight = 0.1;
  double adv_weight = 0.001;
};

struct OptimConfig {
  int64_t epochs = 100;
  int64_t batch_size = 16;
  double lr = 1e-5;
  double weight_decay = 0.01;
  double grad_clip = 1.0;
};

struct Stage2Config {
  int64_t epochs = 25;
  int64_t batch_size = 4;
  double lr = 1e-5;
  double disc_lr = 1e-5;
  double weight_decay = 0.01;
  double grad_clip = 1.0;
  bool drb_enabled = true;
};

// Artifact locations. Empty checkpoint paths resolve to <work_dir>/<name>.
struct PathsConfig {
  std::string work_dir = "runs/default";
  std::string manifest;
  std::string encoder_ckpt;
  std::string vae_ckpt;
  std::string stage1_ckpt;
  std::string stage2_ckpt;
};

struct DataConfig {
  std::string clean_dir;
  int64_t generate_clean = 0;  // when > 0, synthesize this many clean images first
  std::string out_dir;
  nlohmann::json recipe = nlohmann::json::object();
};

struct FrozenConfig {
  std::vector<std::string> stage1{"vision_encoder", "bank", "vae"};
  std::vector<std::string> stage2{"vision_encoder", "bank", "vae.encoder", "prompt_processor",
                                  "control", "unet"};
};

struct RunConfig {
  DimsConfig dims;
  EncoderConfig encoder;
  VaeConfig vae;
  UNetConfig unet;
  ControlConfig control;
  ScheduleConfig schedule;
  SamplerConfig sampler;
  LossConfig loss;
  OptimConfig stage1;
  Stage2Config stage2;
  PathsConfig paths;
  DataConfig data;
  FrozenConfig frozen;
  uint64_t seed = 0;

  // Checks value constraints (positive sizes, weights >= 0, d_s != d_d, ...).
  void validate() const;

  std::filesystem::path encoder_path() const;
  std::filesystem::path vae_path() const;
  std::filesystem::path stage1_path() const;
  std::filesystem::path stage2_path() const;
  std::filesystem::path manifest_path() const;
};

nlohmann::ordered_json config_to_json(const RunConfig& cfg);
// Strict: unknown keys and type mismatches raise ValidationError naming the dotted path.
// Missing keys keep their defaults.
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);
// "a.b.c=value"; value parsed as JSON when possible, otherwise taken as a string.
void apply_override(RunConfig& cfg, const std::string& assignment);
// Short stable hex digest of the canonical config document.
std::string config_digest(const RunConfig& cfg);

}  // namespace dfr
