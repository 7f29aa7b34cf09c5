#include "dfr/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "dfr/config.hpp"
#include "dfr/data_synth.hpp"
#include "dfr/embeddings.hpp"
#include "dfr/error.hpp"
#include "dfr/evalkit.hpp"
#include "dfr/log.hpp"
#include "dfr/models.hpp"
#include "dfr/png_io.hpp"
#include "dfr/rng.hpp"
#include "dfr/tensor_image.hpp"
#include "dfr/training.hpp"
#include "dfr/vae.hpp"

namespace fs = std::filesystem;

namespace dfr::cli {

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  int64_t seed = -1;
  bool verbose = false;
  bool quiet = false;
};

struct Options {
  Common common;
  std::string out_dir;
  std::string clean_dir;
  bool balance = false;
  std::string manifest;
  std::string input;
  std::string output;
  std::string checkpoint;
  std::string bank;
  std::string labels;
  std::string results;
  int64_t steps = 0;
  int64_t limit = 0;
  bool plain_decoder = false;
  bool vae_only = false;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "Run configuration file (JSON); defaults to $DFR_CONFIG_DIR/default.json");
  app->add_option("--set", c.overrides, "Override a config field, e.g. --set stage1.epochs=5 (repeatable)");
  app->add_option("--seed", c.seed, "Seed for every random choice (overrides the config seed)");
  app->add_flag("-v,--verbose", c.verbose, "Debug-level logging");
  app->add_flag("-q,--quiet", c.quiet, "Warnings and errors only");
}

struct Parser {
  CLI::App app{"Universal image restoration with visual prompts and degradation-aware control", "dfr"};
  Options o;
  std::map<std::string, CLI::App*> subs;

  Parser() {
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Help for every subcommand");

    auto* synth = add("synth", "Synthesize a degraded dataset and its manifest");
    synth->add_option("--out-dir", o.out_dir, "Output directory (default: data.out_dir or <work_dir>/data)");
    synth->add_option("--clean-dir", o.clean_dir, "Directory of clean images (default: data.clean_dir)");
    synth->add_flag("--balance", o.balance, "Oversample every task to the recipe's target_count");

    auto* vae = add("pretrain-vae", "Train the toy autoencoder on the manifest's clean images");
    vae->add_option("--manifest", o.manifest, "Dataset manifest (default: paths.manifest)");

    auto* enc = add("train-encoder", "Train the toy vision encoder and its prototype bank");
    enc->add_option("--manifest", o.manifest, "Dataset manifest (default: paths.manifest)");

    auto* s1 = add("train-stage1", "Train prompt processor, control module and denoiser");
    s1->add_option("--manifest", o.manifest, "Dataset manifest (default: paths.manifest)");

    auto* s2 = add("train-stage2", "Train the degradation-aware decoder");
    s2->add_option("--manifest", o.manifest, "Dataset manifest (default: paths.manifest)");
    s2->add_option("--checkpoint", o.checkpoint, "Stage-1 checkpoint (default: paths.stage1_ckpt)");
    s2->add_flag("--vae-only", o.vae_only, "Start from a VAE checkpoint instead of a stage-1 checkpoint");

    auto* restore = add("restore", "Restore one degraded image");
    restore->add_option("--input", o.input, "Degraded PNG")->required();
    restore->add_option("--output", o.output, "Where to write the restored PNG")->required();
    restore->add_option("--checkpoint", o.checkpoint, "Model checkpoint (default: stage 2, or stage 1 with --plain-decoder)");
    restore->add_option("--steps", o.steps, "Sampling steps (default: sampler.steps)");
    restore->add_flag("--plain-decoder", o.plain_decoder, "Decode with the plain VAE decoder");

    auto* probe = add("probe", "Print degradation similarity scores for one image");
    probe->add_option("--input", o.input, "Image to probe")->required();
    probe->add_option("--bank", o.bank, "Encoder checkpoint holding the prototype bank (default: paths.encoder_ckpt)");
    probe->add_option("--labels", o.labels, "Comma-separated subset of bank labels to score against");

    auto* ev = add("eval", "Restore the test split and write metrics and a report");
    ev->add_option("--manifest", o.manifest, "Dataset manifest (default: paths.manifest)");
    ev->add_option("--out-dir", o.out_dir, "Output directory (default: <work_dir>/eval)");
    ev->add_option("--checkpoint", o.checkpoint, "Model checkpoint (default: stage 2, or stage 1 with --plain-decoder)");
    ev->add_option("--steps", o.steps, "Sampling steps (default: sampler.steps)");
    ev->add_option("--limit", o.limit, "Evaluate at most this many test records (0 = all)");
    ev->add_flag("--plain-decoder", o.plain_decoder, "Decode with the plain VAE decoder");

    auto* rep = add("report", "Rebuild report files from an eval results file");
    rep->add_option("--results", o.results, "results.json written by eval")->required();
    rep->add_option("--out-dir", o.out_dir, "Output directory (default: the results file's directory)");
  }

  CLI::App* add(const std::string& name, const std::string& description) {
    auto* sub = app.add_subcommand(name, description);
    add_common(sub, o.common);
    subs[name] = sub;
    return sub;
  }
};

RunConfig resolve_config(const Common& c) {
  RunConfig cfg;
  fs::path path = c.config;
  if (path.empty()) {
    if (const char* dir = std::getenv("DFR_CONFIG_DIR")) {
      const fs::path candidate = fs::path(dir) / "default.json";
      if (fs::exists(candidate)) path = candidate;
    }
  }
  if (!path.empty()) {
    if (!fs::exists(path)) throw ValidationError("config file " + path.string() + " does not exist");
    cfg = load_config(path);
  }
  for (const auto& o : c.overrides) apply_override(cfg, o);
  if (c.seed >= 0) cfg.seed = static_cast<uint64_t>(c.seed);
  return cfg;
}

fs::path manifest_of(const Options& o, const RunConfig& cfg) {
  return o.manifest.empty() ? cfg.manifest_path() : fs::path(o.manifest);
}

void require_checkpoint(const fs::path& dir, const std::string& hint) {
  if (!fs::exists(dir / "params.bin")) throw RuntimeFailure("checkpoint " + dir.string() + " not found; " + hint);
}

int cmd_synth(const Options& o, RunConfig cfg, std::ostream& out) {
  fs::path out_dir = !o.out_dir.empty() ? fs::path(o.out_dir)
                     : !cfg.data.out_dir.empty() ? fs::path(cfg.data.out_dir)
                                                 : fs::path(cfg.paths.work_dir) / "data";
  fs::path clean = !o.clean_dir.empty() ? fs::path(o.clean_dir) : fs::path(cfg.data.clean_dir);
  const auto recipe = recipe_from_json(cfg.data.recipe);
  if (cfg.data.generate_clean > 0) {
    if (clean.empty()) clean = out_dir / "clean";
    generate_clean_corpus(clean, static_cast<int>(cfg.data.generate_clean), recipe.side, derive_seed(cfg.seed, 0xC1EA));
  }
  if (clean.empty()) throw ValidationError("no clean image directory: set data.clean_dir, --clean-dir or data.generate_clean");
  const auto summary = build_dataset(clean, recipe, out_dir, cfg.seed);
  fs::path manifest = summary.manifest;
  if (o.balance) {
    AugmentOptions aug{recipe.augment_rotation, recipe.augment_affine, recipe.augment_noise, recipe.augment_crop};
    manifest = balance_and_augment(manifest, recipe.target_count, cfg.seed, aug);
  }
  out << manifest.string() << "\n";
  log::info("synth_done", {{"manifest", manifest.string()},
                           {"records", log::str(summary.records)},
                           {"skipped", log::str(summary.skipped_files)}});
  return kExitOk;
}

int cmd_pretrain_vae(const Options& o, const RunConfig& cfg, std::ostream& out) {
  auto r = pretrain_autoencoder(manifest_of(o, cfg), cfg);
  r.checkpoint.meta["config"] = config_to_json(cfg);
  save_checkpoint(r.checkpoint, cfg.vae_path());
  out << cfg.vae_path().string() << "\n";
  log::info("vae_saved", {{"path", cfg.vae_path().string()},
                          {"heldout_psnr", log::str(r.heldout_psnr)},
                          {"exit_criterion_met", r.exit_criterion_met ? "true" : "false"}});
  return kExitOk;
}

int cmd_train_encoder(const Options& o, const RunConfig& cfg, std::ostream& out) {
  auto r = train_toy_encoder(manifest_of(o, cfg), cfg);
  r.checkpoint.meta["config"] = config_to_json(cfg);
  save_checkpoint(r.checkpoint, cfg.encoder_path());
  out << cfg.encoder_path().string() << "\n";
  return kExitOk;
}

int cmd_train_stage1(const Options& o, RunConfig cfg, std::ostream& out) {
  if (!o.manifest.empty()) cfg.paths.manifest = o.manifest;
  auto r = train_stage1(cfg);
  save_checkpoint(r.checkpoint, cfg.stage1_path());
  r.ledger.write_jsonl(cfg.stage1_path() / "ledger.jsonl");
  out << cfg.stage1_path().string() << "\n";
  return kExitOk;
}

int cmd_train_stage2(const Options& o, RunConfig cfg, std::ostream& out) {
  if (!o.manifest.empty()) cfg.paths.manifest = o.manifest;
  const fs::path src = !o.checkpoint.empty() ? fs::path(o.checkpoint) : o.vae_only ? cfg.vae_path() : cfg.stage1_path();
  require_checkpoint(src, o.vae_only ? "run pretrain-vae first" : "stage 2 requires a stage-1 checkpoint; run train-stage1 first");
  auto r = train_stage2(cfg, load_checkpoint(src), o.vae_only);
  save_checkpoint(r.checkpoint, cfg.stage2_path());
  r.ledger.write_jsonl(cfg.stage2_path() / "ledger.jsonl");
  out << cfg.stage2_path().string() << "\n";
  return kExitOk;
}

Models load_models(const Options& o, const RunConfig& cfg) {
  fs::path ckpt = o.checkpoint;
  if (ckpt.empty()) {
    ckpt = cfg.stage2_path();
    if (o.plain_decoder && !fs::exists(ckpt / "params.bin")) ckpt = cfg.stage1_path();
  }
  require_checkpoint(ckpt, "train the model first (train-stage1, then train-stage2)");
  return models_from_checkpoint(load_checkpoint(ckpt));
}

int64_t steps_of(const Options& o, const Models& m) {
  const int64_t steps = o.steps > 0 ? o.steps : m.cfg.sampler.steps;
  if (steps > m.cfg.schedule.steps) throw ValidationError("--steps exceeds schedule.steps");
  return steps;
}

int cmd_restore(const Options& o, const RunConfig& cfg, std::ostream& out) {
  Models m = load_models(o, cfg);
  const Image lq = read_png(o.input);
  validate_image(lq);
  const auto batch = image_to_tensor(lq).unsqueeze(0);
  check_vae_input(batch);
  const auto r = restore(m, batch, steps_of(o, m), cfg.seed, o.plain_decoder);
  write_png(o.output, tensor_to_image(r.restored));
  out << o.output << "\n";
  log::info("restore_done", {{"input", o.input}, {"output", o.output}});
  return kExitOk;
}

int cmd_probe(const Options& o, const RunConfig& cfg, std::ostream& out) {
  const fs::path bank_path = o.bank.empty() ? cfg.encoder_path() : fs::path(o.bank);
  auto bundle = load_encoder_provider(bank_path);
  if (!o.labels.empty()) {
    std::vector<std::string> wanted;
    std::stringstream ss(o.labels);
    for (std::string l; std::getline(ss, l, ',');) wanted.push_back(l);
    bundle.bank = bundle.bank.subset(wanted);
  }
  const Image img = read_png(o.input);
  validate_image(img);
  const auto scores = degradation_similarity(*bundle.encoder, img, bundle.bank);
  const auto best = std::max_element(scores.begin(), scores.end()) - scores.begin();
  out << "label       score\n";
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out << std::left << std::setw(10) << bundle.bank.labels[i] << "  " << std::fixed << std::setprecision(4)
        << scores[i] << (static_cast<long>(i) == best ? "  <- argmax" : "") << "\n";
  }
  return kExitOk;
}

fs::path relative_to(const fs::path& p, const fs::path& base) { return fs::relative(fs::absolute(p), fs::absolute(base)); }

int cmd_eval(const Options& o, const RunConfig& cfg, std::ostream& out) {
  Models m = load_models(o, cfg);
  const fs::path manifest = manifest_of(o, cfg);
  auto samples = load_samples(manifest, Split::test);
  if (samples.empty()) throw ValidationError("manifest " + manifest.string() + " has no test records");
  if (o.limit > 0 && static_cast<int64_t>(samples.size()) > o.limit) samples.resize(o.limit);
  const fs::path out_dir = o.out_dir.empty() ? fs::path(cfg.paths.work_dir) / "eval" : fs::path(o.out_dir);
  fs::create_directories(out_dir / "restored");
  const int64_t steps = steps_of(o, m);
  const auto metrics = builtin_metrics();

  Report report;
  report.config_digest = config_digest(m.cfg);
  report.provenance = "checkpoint=" + (o.checkpoint.empty() ? std::string("default") : o.checkpoint) +
                      " steps=" + std::to_string(steps) + " decoder=" + (o.plain_decoder ? "plain" : "refined");
  nlohmann::ordered_json results;
  results["manifest"] = relative_to(manifest, out_dir).string();
  results["rows"] = nlohmann::ordered_json::array();
  const std::size_t chunk = 16;
  for (std::size_t s = 0, c = 0; s < samples.size(); s += chunk, ++c) {
    const std::size_t e = std::min(samples.size(), s + chunk);
    std::vector<Image> lq;
    for (std::size_t i = s; i < e; ++i) lq.push_back(samples[i].lq);
    const auto r = restore(m, images_to_batch(lq), steps, derive_seed(cfg.seed, c), o.plain_decoder);
    const auto restored = batch_to_images(r.restored);
    for (std::size_t i = s; i < e; ++i) {
      ReportRow row;
      row.id = samples[i].id;
      row.task = samples[i].task;
      row.lq = samples[i].lq;
      row.gt = samples[i].hq;
      row.restored = restored[i - s];
      for (const auto& metric : metrics) {
        row.metrics[metric->name()] = metric->compute(row.restored, row.gt);
        row.metrics[metric->name() + "_lq"] = metric->compute(row.lq, row.gt);
      }
      const fs::path png = out_dir / "restored" / (row.id + ".png");
      write_png(png, row.restored);
      nlohmann::ordered_json jr;
      jr["id"] = row.id;
      jr["task"] = row.task;
      jr["restored_path"] = relative_to(png, out_dir).string();
      nlohmann::ordered_json jm = nlohmann::ordered_json::object();
      for (const auto& [k, v] : row.metrics) jm[k] = v;
      jr["metrics"] = jm;
      results["rows"].push_back(jr);
      report.rows.push_back(std::move(row));
    }
  }
  results["config_digest"] = report.config_digest;
  results["provenance"] = report.provenance;
  {
    std::ofstream f(out_dir / "results.json", std::ios::trunc);
    f << results.dump(2) << "\n";
  }
  make_report(report, out_dir);
  for (const auto& [task, agg] : task_aggregates(report)) {
    out << task << ": psnr " << std::fixed << std::setprecision(2) << agg.at("psnr") << " dB (lq " << agg.at("psnr_lq")
        << "), ssim " << std::setprecision(4) << agg.at("ssim") << " (lq " << agg.at("ssim_lq") << ")\n";
  }
  return kExitOk;
}

int cmd_report(const Options& o, std::ostream& out) {
  std::ifstream in(o.results);
  if (!in) throw RuntimeFailure("cannot read results file " + o.results);
  nlohmann::json results;
  try {
    results = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("results file " + o.results + " is not valid JSON: " + e.what());
  }
  const fs::path base = fs::path(o.results).parent_path();
  const auto samples = load_samples(base / results.at("manifest").get<std::string>(), Split::test);
  std::map<std::string, const LoadedSample*> by_id;
  for (const auto& s : samples) by_id[s.id] = &s;
  Report report;
  report.config_digest = results.value("config_digest", "");
  report.provenance = results.value("provenance", "");
  for (const auto& jr : results.at("rows")) {
    ReportRow row;
    row.id = jr.at("id").get<std::string>();
    row.task = jr.at("task").get<std::string>();
    const auto it = by_id.find(row.id);
    if (it == by_id.end()) throw ValidationError("results row " + row.id + " is not in the manifest's test split");
    row.lq = it->second->lq;
    row.gt = it->second->hq;
    row.restored = read_png(base / jr.at("restored_path").get<std::string>());
    for (const auto& [k, v] : jr.at("metrics").items()) row.metrics[k] = v.get<double>();
    report.rows.push_back(std::move(row));
  }
  const auto files = make_report(report, o.out_dir.empty() ? base : fs::path(o.out_dir));
  out << files.json.string() << "\n" << files.csv.string() << "\n" << files.grid.string() << "\n";
  return kExitOk;
}

int dispatch(const std::string& name, const Options& o, std::ostream& out) {
  if (name == "report") return cmd_report(o, out);
  RunConfig cfg = resolve_config(o.common);
  if (name == "synth") return cmd_synth(o, cfg, out);
  if (name == "pretrain-vae") return cmd_pretrain_vae(o, cfg, out);
  if (name == "train-encoder") return cmd_train_encoder(o, cfg, out);
  if (name == "train-stage1") return cmd_train_stage1(o, cfg, out);
  if (name == "train-stage2") return cmd_train_stage2(o, cfg, out);
  if (name == "restore") return cmd_restore(o, cfg, out);
  if (name == "probe") return cmd_probe(o, cfg, out);
  if (name == "eval") return cmd_eval(o, cfg, out);
  throw ValidationError("unknown subcommand " + name);
}

}  // namespace

std::string help_text(const std::string& subcommand) {
  Parser p;
  if (subcommand.empty()) return p.app.help();
  const auto it = p.subs.find(subcommand);
  if (it == p.subs.end()) throw ValidationError("unknown subcommand " + subcommand);
  return it->second->help();
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Parser p;
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    p.app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    const auto* sub = p.app.get_subcommands().empty() ? &p.app : p.app.get_subcommands().front();
    out << sub->help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << p.app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const auto subs = p.app.get_subcommands();
    err << (subs.empty() ? p.app.help() : subs.front()->help());
    return kExitValidation;
  }
  const auto* sub = p.app.get_subcommands().front();
  const auto& c = p.o.common;
  log::set_level(c.verbose ? log::Level::debug : c.quiet ? log::Level::warn : log::Level::info);
  try {
    return dispatch(sub->get_name(), p.o, out);
  } catch (const ValidationError& e) {
    log::emit(log::Level::error, "validation_error", {{"message", e.what()}});
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const RuntimeFailure& e) {
    log::emit(log::Level::error, "runtime_failure", {{"message", e.what()}});
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    log::emit(log::Level::error, "runtime_failure", {{"message", e.what()}});
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace dfr::cli
