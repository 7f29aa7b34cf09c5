#include <cstdlib>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "dfr/cli.hpp"
#include "dfr/data_synth.hpp"
#include "dfr/png_io.hpp"
#include "dfr/training.hpp"
#include "test_util.hpp"

using namespace dfr;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  args.push_back("-q");
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

Outcome invoke_raw(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

// Small end-to-end configuration: two kinds, 32 px images, minimal widths and epochs.
void write_tiny_config(const fs::path& path, const fs::path& work) {
  nlohmann::json j = {
      {"seed", 5},
      {"dims", {{"d_e", 16}, {"d_s", 24}, {"d_d", 12}, {"image_side", 32}}},
      {"encoder", {{"widths", {8, 8, 16}}, {"epochs", 2}, {"batch_size", 16}}},
      {"vae", {{"channels", {8, 16, 16}}, {"epochs", 2}, {"batch_size", 8}}},
      {"unet", {{"channels", {16, 16}}, {"heads", 2}}},
      {"control", {{"widths", {8, 8, 16}}}},
      {"stage1", {{"epochs", 1}, {"batch_size", 8}, {"lr", 1e-3}}},
      {"stage2", {{"epochs", 1}, {"batch_size", 4}, {"lr", 1e-3}, {"disc_lr", 1e-3}}},
      {"sampler", {{"steps", 3}}},
      {"paths", {{"work_dir", work.string()}}},
      {"data",
       {{"generate_clean", 10},
        {"recipe", {{"side", 32}, {"per_kind", {{"noise", 8}, {"haze", 8}}}, {"test_fraction", 0.25}}}}}};
  std::ofstream(path) << j.dump(2);
}

}  // namespace

TEST(CliHelp, MatchesSnapshots) {
  const fs::path dir = DFR_SNAPSHOT_DIR;
  const bool update = std::getenv("DFR_UPDATE_SNAPSHOTS") != nullptr;
  for (const std::string sub : {"", "synth", "pretrain-vae", "train-encoder", "train-stage1", "train-stage2",
                                "restore", "probe", "eval", "report"}) {
    const fs::path file = dir / ((sub.empty() ? std::string("dfr") : sub) + ".txt");
    const std::string text = cli::help_text(sub);
    if (update) std::ofstream(file, std::ios::binary) << text;
    ASSERT_TRUE(fs::exists(file)) << file;
    EXPECT_EQ(text, test::slurp(file)) << sub;
  }
  const auto r = invoke_raw({"restore", "--help"});
  EXPECT_EQ(r.code, cli::kExitOk);
  EXPECT_EQ(r.out, cli::help_text("restore"));
}

TEST(CliErrors, UsageProblemsExitOne) {
  auto r = invoke({"restore", "--output", "x.png"});
  EXPECT_EQ(r.code, cli::kExitValidation);
  EXPECT_NE(r.err.find("--input"), std::string::npos) << r.err;
  EXPECT_EQ(invoke({"bogus"}).code, cli::kExitValidation);
  EXPECT_EQ(invoke({"synth", "--set", "stage1.nothing=1"}).code, cli::kExitValidation);
  EXPECT_EQ(invoke({"synth", "--config", "/nonexistent/config.json"}).code, cli::kExitValidation);
  EXPECT_EQ(invoke_raw({}).code, cli::kExitValidation);
}

TEST(CliErrors, MissingArtifactsExitTwoWithStageOrder) {
  const auto dir = test::scratch_dir("cli_order");
  const std::string work = "paths.work_dir=" + (dir / "run").string();
  auto r = invoke({"train-stage2", "--set", work});
  EXPECT_EQ(r.code, cli::kExitRuntime);
  EXPECT_NE(r.err.find("stage 2 requires a stage-1 checkpoint"), std::string::npos) << r.err;
  r = invoke({"train-stage1", "--set", work});
  EXPECT_EQ(r.code, cli::kExitRuntime);
  EXPECT_NE(r.err.find("train-encoder before train-stage1"), std::string::npos) << r.err;
  r = invoke({"probe", "--input", (dir / "none.png").string(), "--set", work});
  EXPECT_EQ(r.code, cli::kExitRuntime);
}

TEST(CliPipeline, EndToEndIsDeterministic) {
  const auto dir = test::scratch_dir("cli_pipeline");
  const auto cfg = dir / "tiny.json";
  write_tiny_config(cfg, dir / "run");
  const std::vector<std::string> base = {"--config", cfg.string()};
  auto step = [&](std::vector<std::string> args) {
    args.insert(args.end(), base.begin(), base.end());
    auto r = invoke(args);
    EXPECT_EQ(r.code, 0) << args[0] << ": " << r.err;
    return r;
  };

  step({"synth"});
  const auto manifest = dir / "run" / "data" / "manifest.jsonl";
  ASSERT_TRUE(fs::exists(manifest));
  step({"synth", "--out-dir", (dir / "again").string()});
  EXPECT_EQ(test::slurp(manifest), test::slurp(dir / "again" / "manifest.jsonl"));

  step({"train-encoder"});
  step({"pretrain-vae"});
  step({"train-stage1"});
  step({"train-stage2"});
  const auto ledger = LossLedger::read_jsonl(dir / "run" / "stage1.ckpt" / "ledger.jsonl");
  ASSERT_FALSE(ledger.entries.empty());
  for (const auto& e : ledger.entries) EXPECT_TRUE(ledger_exact(e));

  auto e1 = step({"eval", "--out-dir", (dir / "eval1").string()});
  step({"eval", "--out-dir", (dir / "eval2").string()});
  EXPECT_NE(e1.out.find("noise: psnr"), std::string::npos) << e1.out;
  for (const char* f : {"results.json", "report.json", "report.csv", "grid.png"}) {
    const auto a = test::slurp(dir / "eval1" / f);
    EXPECT_FALSE(a.empty()) << f;
    EXPECT_EQ(a, test::slurp(dir / "eval2" / f)) << f;
  }

  const auto results = nlohmann::json::parse(test::slurp(dir / "eval1" / "results.json"));
  const auto first = results.at("rows").at(0).at("id").get<std::string>();
  fs::path input;
  for (const auto& rec : read_manifest(manifest)) {
    if (rec.id == first) input = manifest.parent_path() / rec.lq_path;
  }
  ASSERT_FALSE(input.empty());
  step({"restore", "--input", input.string(), "--output", (dir / "r1.png").string()});
  step({"restore", "--input", input.string(), "--output", (dir / "r2.png").string()});
  EXPECT_EQ(test::slurp(dir / "r1.png"), test::slurp(dir / "r2.png"));
  EXPECT_EQ(read_png(dir / "r1.png").height(), 32);

  fs::create_directories(dir / "rebuilt");
  auto rep = invoke({"report", "--results", (dir / "eval1" / "results.json").string(), "--out-dir",
                     (dir / "rebuilt").string()});
  EXPECT_EQ(rep.code, 0) << rep.err;
  EXPECT_EQ(test::slurp(dir / "eval1" / "report.csv"), test::slurp(dir / "rebuilt" / "report.csv"));
  EXPECT_EQ(test::slurp(dir / "eval1" / "grid.png"), test::slurp(dir / "rebuilt" / "grid.png"));

  auto probe = step({"probe", "--input", input.string()});
  EXPECT_NE(probe.out.find("<- argmax"), std::string::npos) << probe.out;
  EXPECT_NE(probe.out.find("noise"), std::string::npos);
  EXPECT_NE(probe.out.find("haze"), std::string::npos);
  auto subset = step({"probe", "--input", input.string(), "--labels", "haze,noise"});
  EXPECT_LT(subset.out.find("haze"), subset.out.find("noise"));
  EXPECT_EQ(invoke({"probe", "--input", input.string(), "--labels", "snow", "--config", cfg.string()}).code,
            cli::kExitValidation);
}
