#include "dfr/config.hpp"

#include <fstream>
#include <sstream>

#include "dfr/error.hpp"
#include "dfr/hash.hpp"

using nlohmann::json;

namespace dfr {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(DimsConfig, d_e, d_s, d_d, latent_channels, factor, num_kinds,
                                   image_side)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(EncoderConfig, widths, input_side, epochs, batch_size, lr,
                                   temperature)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(VaeConfig, channels, epochs, batch_size, lr, kl_weight,
                                   target_psnr, latent_scale)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(UNetConfig, channels, heads, frozen)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ControlConfig, widths, dmb_enabled, control_decoder_enabled,
                                   use_timestep, use_context)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ScheduleConfig, steps, beta_start, beta_end)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SamplerConfig, steps, control)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(LossConfig, l_deg_weight, l_rec_weight, per_weight, adv_weight)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(OptimConfig, epochs, batch_size, lr, weight_decay, grad_clip)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(Stage2Config, epochs, batch_size, lr, disc_lr, weight_decay,
                                   grad_clip, drb_enabled)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(PathsConfig, work_dir, manifest, encoder_ckpt, vae_ckpt,
                                   stage1_ckpt, stage2_ckpt)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(DataConfig, clean_dir, generate_clean, out_dir, recipe)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(FrozenConfig, stage1, stage2)

namespace {

json to_plain_json(const RunConfig& c) {
  return json{{"dims", c.dims},       {"encoder", c.encoder},   {"vae", c.vae},
              {"unet", c.unet},       {"control", c.control},   {"schedule", c.schedule},
              {"sampler", c.sampler}, {"loss", c.loss},         {"stage1", c.stage1},
              {"stage2", c.stage2},   {"paths", c.paths},       {"data", c.data},
              {"frozen", c.frozen},   {"seed", c.seed}};
}

std::string type_label(const json& v) {
  if (v.is_boolean()) return "boolean";
  if (v.is_number_integer() || v.is_number_unsigned()) return "integer";
  if (v.is_number()) return "number";
  if (v.is_string()) return "string";
  if (v.is_array()) return "array";
  if (v.is_object()) return "object";
  return "null";
}

bool compatible(const json& schema, const json& value) {
  if (schema.is_number_integer() || schema.is_number_unsigned()) {
    return value.is_number_integer() || value.is_number_unsigned();
  }
  if (schema.is_number_float()) return value.is_number();
  return type_label(schema) == type_label(value);
}

// Walks `value` against the defaults document, which doubles as the schema.
void check_against(const json& schema, const json& value, const std::string& path) {
  if (path == "data.recipe") {
    if (!value.is_object()) throw ValidationError("config field '" + path + "' must be an object");
    return;
  }
  if (!compatible(schema, value)) {
    throw ValidationError("config field '" + path + "' expects " + type_label(schema) + ", got " +
                          type_label(value));
  }
  if (schema.is_object()) {
    for (const auto& [key, sub] : value.items()) {
      const std::string child = path.empty() ? key : path + "." + key;
      if (!schema.contains(key)) throw ValidationError("unknown config field '" + child + "'");
      check_against(schema.at(key), sub, child);
    }
  } else if (schema.is_array() && !schema.empty()) {
    for (std::size_t i = 0; i < value.size(); ++i) {
      check_against(schema.front(), value[i], path + "[" + std::to_string(i) + "]");
    }
  }
}

void merge_into(json& base, const json& patch, const std::string& path) {
  for (const auto& [key, sub] : patch.items()) {
    const std::string child = path.empty() ? key : path + "." + key;
    if (sub.is_object() && base[key].is_object() && child != "data.recipe") {
      merge_into(base[key], sub, child);
    } else {
      base[key] = sub;
    }
  }
}

RunConfig from_plain_json(const json& j) {
  RunConfig c;
  j.at("dims").get_to(c.dims);
  j.at("encoder").get_to(c.encoder);
  j.at("vae").get_to(c.vae);
  j.at("unet").get_to(c.unet);
  j.at("control").get_to(c.control);
  j.at("schedule").get_to(c.schedule);
  j.at("sampler").get_to(c.sampler);
  j.at("loss").get_to(c.loss);
  j.at("stage1").get_to(c.stage1);
  j.at("stage2").get_to(c.stage2);
  j.at("paths").get_to(c.paths);
  j.at("data").get_to(c.data);
  j.at("frozen").get_to(c.frozen);
  j.at("seed").get_to(c.seed);
  return c;
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ValidationError(message);
}

std::filesystem::path resolve(const RunConfig& c, const std::string& explicit_path,
                              const char* name) {
  if (!explicit_path.empty()) return explicit_path;
  return std::filesystem::path(c.paths.work_dir) / name;
}

}  // namespace

void RunConfig::validate() const {
  require(dims.d_e > 0 && dims.d_s > 0 && dims.d_d > 0, "dims.d_e, dims.d_s and dims.d_d must be positive");
  require(dims.d_s != dims.d_d, "dims.d_s must differ from dims.d_d");
  require(dims.latent_channels > 0, "dims.latent_channels must be positive");
  require(dims.factor == 4, "dims.factor must be 4 (two VAE downsamplings)");
  require(dims.num_kinds >= 2, "dims.num_kinds must be at least 2");
  require(dims.image_side >= 16 && dims.image_side % 16 == 0, "dims.image_side must be a multiple of 16");
  require(encoder.widths.size() == 3, "encoder.widths must have 3 entries");
  require(vae.channels.size() == 3, "vae.channels must have 3 entries");
  require(unet.channels.size() >= 2, "unet.channels needs at least 2 scales");
  require(control.widths.size() == 3, "control.widths must have 3 entries");
  for (auto w : encoder.widths) require(w > 0, "encoder.widths entries must be positive");
  for (auto w : vae.channels) require(w > 0, "vae.channels entries must be positive");
  for (auto w : unet.channels) require(w > 0, "unet.channels entries must be positive");
  for (auto w : control.widths) require(w > 0, "control.widths entries must be positive");
  require(unet.heads > 0, "unet.heads must be positive");
  for (auto w : unet.channels) require(w % unet.heads == 0, "unet.channels must be divisible by unet.heads");
  require(schedule.steps >= 1, "schedule.steps must be >= 1");
  require(schedule.beta_start > 0 && schedule.beta_start <= schedule.beta_end && schedule.beta_end < 1,
          "schedule betas must satisfy 0 < beta_start <= beta_end < 1");
  require(sampler.steps >= 1 && sampler.steps <= schedule.steps, "sampler.steps must be in [1, schedule.steps]");
  require(loss.l_deg_weight >= 0 && loss.l_rec_weight >= 0 && loss.per_weight >= 0 && loss.adv_weight >= 0,
          "loss weights must be >= 0");
  require(stage1.epochs >= 0 && stage1.batch_size > 0 && stage1.lr > 0, "stage1 epochs/batch_size/lr invalid");
  require(stage2.epochs >= 0 && stage2.batch_size > 0 && stage2.lr > 0, "stage2 epochs/batch_size/lr invalid");
  require(encoder.epochs >= 0 && encoder.batch_size > 0 && encoder.lr > 0 && encoder.temperature > 0,
          "encoder training settings invalid");
  require(vae.epochs >= 0 && vae.batch_size > 0 && vae.lr > 0 && vae.kl_weight >= 0, "vae training settings invalid");
  require(vae.latent_scale >= 0, "vae.latent_scale must be positive, or 0 to estimate it");
}

std::filesystem::path RunConfig::encoder_path() const { return resolve(*this, paths.encoder_ckpt, "encoder.ckpt"); }
std::filesystem::path RunConfig::vae_path() const { return resolve(*this, paths.vae_ckpt, "vae.ckpt"); }
std::filesystem::path RunConfig::stage1_path() const { return resolve(*this, paths.stage1_ckpt, "stage1.ckpt"); }
std::filesystem::path RunConfig::stage2_path() const { return resolve(*this, paths.stage2_ckpt, "stage2.ckpt"); }
std::filesystem::path RunConfig::manifest_path() const {
  if (!paths.manifest.empty()) return paths.manifest;
  const std::string out = data.out_dir.empty() ? (std::filesystem::path(paths.work_dir) / "data").string()
                                               : data.out_dir;
  return std::filesystem::path(out) / "manifest.jsonl";
}

nlohmann::ordered_json config_to_json(const RunConfig& cfg) {
  return nlohmann::ordered_json::parse(to_plain_json(cfg).dump());
}

RunConfig config_from_json(const json& j) {
  const json defaults = to_plain_json(RunConfig{});
  check_against(defaults, j, "");
  json merged = defaults;
  merge_into(merged, j, "");
  RunConfig cfg = from_plain_json(merged);
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw RuntimeFailure("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ValidationError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ValidationError("override '" + assignment + "' must look like key.path=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }
  json patch = value;
  std::vector<std::string> parts;
  std::stringstream ss(key);
  for (std::string part; std::getline(ss, part, '.');) parts.push_back(part);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) {
    if (it->empty()) throw ValidationError("override key '" + key + "' has an empty segment");
    patch = json{{*it, patch}};
  }
  json current = to_plain_json(cfg);
  const json defaults = to_plain_json(RunConfig{});
  check_against(defaults, patch, "");
  merge_into(current, patch, "");
  RunConfig next = from_plain_json(current);
  next.validate();
  cfg = std::move(next);
}

std::string config_digest(const RunConfig& cfg) { return hex64(fnv1a64(to_plain_json(cfg).dump())); }

}  // namespace dfr
