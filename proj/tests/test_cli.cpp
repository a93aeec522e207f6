#include <fstream>
#include <iterator>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "crossinit/backend.hpp"
#include "crossinit/cli.hpp"
#include "crossinit/errors.hpp"
#include "support/fixtures.hpp"

using namespace crossinit;
using nlohmann::json;

namespace {

struct CliRun {
  int code;
  std::string out, err;
};

CliRun run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

json read_json(const std::filesystem::path& p) { return json::parse(slurp(p)); }

std::vector<std::string> csv_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  return lines;
}

std::string train_concept(const fixture::TempDir& dir, const std::string& sub = "train") {
  const auto d = (dir / sub).string();
  EXPECT_EQ(run({"train", "--seed", "7", "--steps", "10", "--output-dir", d}).code, 0);
  return d + "/concept.json";
}

}  // namespace

TEST(CliTrain, WritesArtifactsAndManifest) {
  fixture::TempDir dir("cli");
  const auto d = dir / "o";
  const CliRun r = run({"train", "--seed", "7", "--steps", "20", "--checkpoint-every", "8", "--output-dir", d.string(),
                     "--run-id", "exp"});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"concept.json", "v_init.json", "exp_trajectory.csv", "exp_trajectory_concat.csv",
                        "manifest.json", "checkpoints/step_000008.json", "checkpoints/step_000016.json"})
    EXPECT_TRUE(std::filesystem::exists(d / f)) << f;
  const json m = read_json(d / "manifest.json");
  EXPECT_EQ(m["status"], "ok");
  EXPECT_EQ(m["seed"], 7);
  EXPECT_EQ(m["optimizer"]["steps"], 20);
  EXPECT_EQ(m["optimizer"]["lambda"], 1e-5);
  EXPECT_EQ(csv_lines(d / "exp_trajectory.csv").size(), 1u + 21u * 2u);
  EXPECT_EQ(load_concept(d / "concept.json").metadata()["step"], 20);
}

TEST(CliTrain, RerunIsByteIdentical) {
  fixture::TempDir dir("cli");
  for (const char* sub : {"a", "b"})
    ASSERT_EQ(run({"train", "--seed", "3", "--steps", "15", "--output-dir", (dir / sub).string()}).code, 0);
  for (const char* f : {"concept.json", "v_init.json", "run_trajectory.csv", "run_trajectory_concat.csv"})
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
}

TEST(CliTrain, FastModeRecordedInManifest) {
  fixture::TempDir dir("cli");
  ASSERT_EQ(run({"train", "--fast", "--output-dir", dir.path().string()}).code, 0);
  const json m = read_json(dir / "manifest.json");
  EXPECT_EQ(m["optimizer"]["steps"], 25);
  EXPECT_EQ(m["optimizer"]["learning_rate"], 0.08);
  EXPECT_EQ(m["optimizer"]["fast"], true);
}

TEST(CliConfig, FlagsOverrideFileOverridesDefaults) {
  fixture::TempDir dir("cli");
  std::ofstream(dir / "cfg.json") << R"({"steps": 7, "lr": 0.01, "run_id": "fromfile"})";
  const CliRun r = run({"train", "--config", (dir / "cfg.json").string(), "--steps", "9", "--output-dir",
                     dir.path().string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const json m = read_json(dir / "manifest.json");
  EXPECT_EQ(m["optimizer"]["steps"], 9);
  EXPECT_EQ(m["optimizer"]["learning_rate"], 0.01);
  EXPECT_EQ(m["optimizer"]["batch_size"], 8);
  EXPECT_EQ(m["config"]["run_id"], "fromfile");
  EXPECT_TRUE(std::filesystem::exists(dir / "fromfile_trajectory.csv"));
  bool has_config_input = false;
  for (const auto& in : m["inputs"])
    if (in["role"] == "config") has_config_input = in["sha256"].get<std::string>().size() == 64;
  EXPECT_TRUE(has_config_input);
}

TEST(CliConfig, UnknownKeyAndMissingPathAreConfigErrors) {
  fixture::TempDir dir("cli");
  std::ofstream(dir / "cfg.json") << R"({"stepz": 7})";
  EXPECT_EQ(run({"train", "--config", (dir / "cfg.json").string(), "--output-dir", dir.path().string()}).code,
            cli::kConfigError);
  EXPECT_EQ(run({"train", "--names", (dir / "nope.txt").string(), "--output-dir", dir.path().string()}).code,
            cli::kConfigError);
  EXPECT_EQ(run({"train", "--image", (dir / "nope.png").string(), "--output-dir", dir.path().string()}).code,
            cli::kConfigError);
  EXPECT_EQ(run({"train", "--init", "random", "--output-dir", dir.path().string()}).code, cli::kConfigError);
  EXPECT_EQ(run({"train", "--bogus-flag"}).code, cli::kConfigError);
  EXPECT_EQ(run({"frobnicate"}).code, cli::kConfigError);
}

TEST(CliConfig, MergeRejectsUnknownKeys) {
  json base = cli::default_config();
  EXPECT_THROW(cli::merge_config(base, json::object({{"nonsense", 1}})), InvalidConfig);
  cli::merge_config(base, json::object({{"steps", 11}}));
  EXPECT_EQ(cli::config_from_json(base, "train").optimizer.steps, 11);
  for (const auto& k : cli::config_keys()) EXPECT_TRUE(base.contains(k)) << k;
}

TEST(CliTrain, DivergenceExitsThreeWithCheckpoint) {
  fixture::TempDir dir("cli");
  const CliRun r = run({"train", "--steps", "10", "--lr", "1e300", "--output-dir", dir.path().string()});
  EXPECT_EQ(r.code, cli::kNonFinite);
  EXPECT_TRUE(std::filesystem::exists(dir / "checkpoints/last_finite.json"));
  EXPECT_EQ(read_json(dir / "manifest.json")["status"], "non_finite");
}

TEST(CliTrain, NamesFileAndSuperCategory) {
  fixture::TempDir dir("cli");
  std::ofstream(dir / "names.txt") << "# two\nAlbert Einstein\nMarie Curie\n";
  ASSERT_EQ(run({"train", "--steps", "2", "--names", (dir / "names.txt").string(), "--output-dir",
                 (dir / "n").string()})
                .code,
            0);
  ASSERT_EQ(run({"train", "--steps", "2", "--init", "super-category", "--output-dir", (dir / "s").string()}).code, 0);
  EXPECT_EQ(load_concept(dir / "s/v_init.json").init_strategy(), InitStrategy::super_category);
  EXPECT_NE(slurp(dir / "n/v_init.json"), slurp(dir / "s/v_init.json"));
}

TEST(CliGenerate, DeterministicLatents) {
  fixture::TempDir dir("cli");
  const std::string c = train_concept(dir);
  for (const char* sub : {"g1", "g2"})
    ASSERT_EQ(run({"generate", "--concept", c, "--prompt", "a {S*} person on the beach", "--num", "3", "--seed",
                   "4", "--sample-steps", "10", "--decode", "--output-dir", (dir / sub).string()})
                  .code,
              0);
  EXPECT_EQ(slurp(dir / "g1/run_latents.json"), slurp(dir / "g2/run_latents.json"));
  const json l = read_json(dir / "g1/run_latents.json");
  EXPECT_EQ(l["prompts"][0]["seeds"], json({4, 5, 6}));
  EXPECT_TRUE(std::filesystem::exists(dir / "g1/images/p00_s02.png"));
  EXPECT_TRUE(std::filesystem::exists(dir / "g1/generate_manifest.json"));
}

TEST(CliGenerate, MissingDecoderExitsFour) {
  fixture::TempDir dir("cli");
  const std::string c = train_concept(dir);
  register_backend_adapter("nodecoder", [](const json&) {
    Backend b = make_toy_backend();
    b.latent_decoder.reset();
    return b;
  });
  EXPECT_EQ(run({"generate", "--backend", "adapter:nodecoder", "--concept", c, "--decode", "--output-dir",
                 (dir / "g").string()})
                .code,
            cli::kAdapterMissing);
  EXPECT_EQ(run({"generate", "--output-dir", (dir / "g").string()}).code, cli::kConfigError);
  unregister_backend_adapter("nodecoder");
}

TEST(CliAnalyze, IdentityAdapterGivesFlatTrace) {
  fixture::TempDir dir("cli");
  register_backend_adapter("identity", [](const json&) { return fixture::identity_backend(); });
  const CliRun r = run({"analyze", "--backend", "adapter:identity", "--output-dir", dir.path().string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto lines = csv_lines(dir / "run_block_trace.csv");
  ASSERT_GE(lines.size(), 3u);
  const std::string first_norm = lines[1].substr(lines[1].find(',') + 1);
  for (std::size_t i = 2; i < lines.size(); ++i) EXPECT_EQ(lines[i].substr(lines[i].find(',') + 1), first_norm);
  unregister_backend_adapter("identity");
}

TEST(CliAnalyze, RepeatsZeroGivesSingleRow) {
  fixture::TempDir dir("cli");
  ASSERT_EQ(run({"analyze", "--repeats", "0", "--prompt", "a photo of einstein", "--output-dir",
                 dir.path().string()})
                .code,
            0);
  EXPECT_EQ(csv_lines(dir / "run_repeated_encoding.csv").size(), 2u);
  EXPECT_EQ(csv_lines(dir / "run_block_trace.csv").size(), 1u + 6u);
  EXPECT_EQ(run({"analyze", "--position", "99", "--output-dir", dir.path().string()}).code, cli::kConfigError);
}

TEST(CliEvaluate, DefaultPromptSetAndRerunIdentical) {
  fixture::TempDir dir("cli");
  const std::string c = train_concept(dir);
  for (const char* sub : {"e1", "e2"})
    ASSERT_EQ(run({"evaluate", "--concept", c, "--sample-steps", "10", "--threads", sub[1] == '1' ? "1" : "3",
                   "--output-dir", (dir / sub).string()})
                  .code,
              0);
  EXPECT_EQ(slurp(dir / "e1/report.json"), slurp(dir / "e2/report.json"));
  const json rep = read_json(dir / "e1/report.json");
  EXPECT_EQ(rep["per_prompt"].size(), 20u);
  EXPECT_EQ(rep["excluded_from_identity"].size(), 5u);
}

TEST(CliEvaluate, PromptsFileAndReferenceImage) {
  fixture::TempDir dir("cli");
  const std::string c = train_concept(dir);
  std::ofstream(dir / "p.txt") << "style\tcubism painting of a {S*} person\n";
  ASSERT_EQ(run({"evaluate", "--concept", c, "--prompts", (dir / "p.txt").string(), "--image",
                 CROSSINIT_DATA_DIR "/example_face.pgm", "--sample-steps", "5", "--output-dir",
                 (dir / "e").string()})
                .code,
            0);
  const json rep = read_json(dir / "e/report.json");
  EXPECT_EQ(rep["identity_defined"], false);
  const json m = read_json(dir / "e/evaluate_manifest.json");
  EXPECT_GE(m["inputs"].size(), 3u);
}

TEST(CliAblate, WritesSummaryForEveryMode) {
  fixture::TempDir dir("cli");
  ASSERT_EQ(run({"ablate", "--steps", "5", "--output-dir", dir.path().string()}).code, 0);
  const auto lines = csv_lines(dir / "run_ablation.csv");
  EXPECT_EQ(lines[0], "mode,slot,norm,norm_ratio,cos_init,angle_rad,final_loss");
  EXPECT_EQ(lines.size(), 1u + 4u * 2u);
  for (const char* m : {"full", "no_ci", "no_mean", "no_reg"})
    EXPECT_TRUE(std::filesystem::exists(dir / "ablation" / m / "concept.json")) << m;
  ASSERT_EQ(run({"ablate", "--mode", "no-reg", "--steps", "3", "--output-dir", (dir / "one").string()}).code, 0);
  EXPECT_EQ(csv_lines(dir / "one/run_ablation.csv").size(), 3u);
}

TEST(CliMisc, Sha256OfKnownBytes) {
  fixture::TempDir dir("cli");
  std::ofstream(dir / "abc.txt", std::ios::binary) << "abc";
  EXPECT_EQ(cli::file_sha256(dir / "abc.txt"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
