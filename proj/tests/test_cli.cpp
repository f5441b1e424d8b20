#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

namespace fs = std::filesystem;

namespace {

fs::path work_dir() {
  const fs::path d = fs::temp_directory_path() / "rppgid_cli_test";
  fs::create_directories(d);
  return d;
}

int cli(const std::string& args) {
  const std::string cmd = "cd '" + work_dir().string() + "' && '" + RPPGID_CLI + "' " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Cli, UnknownOptionIsConfigError) { EXPECT_EQ(cli("train --bogus"), 2); }

TEST(Cli, MissingRequiredOptionIsConfigError) { EXPECT_EQ(cli("eval --data x.json"), 2); }

TEST(Cli, UnknownConfigKeyIsConfigError) {
  std::ofstream(work_dir() / "bad.json") << R"({"stage2_stepz": 3})";
  EXPECT_EQ(cli("--config bad.json synth --out d"), 2);
}

TEST(Cli, InvalidConfigValueIsConfigError) {
  std::ofstream(work_dir() / "neg.json") << R"({"stage2_batch": 0})";
  EXPECT_EQ(cli("--config neg.json synth --out d"), 2);
}

TEST(Cli, MissingManifestIsMissingArtifact) { EXPECT_EQ(cli("deid --manifest nowhere/manifest.json --out o"), 3); }

TEST(Cli, TrainWithoutStageOneCheckpointIsMissingArtifact) {
  ASSERT_EQ(cli("--seed 3 synth --subjects 2 --duration 20 --external 2 --out data"), 0);
  ASSERT_EQ(cli("deid --manifest data/manifest.json --out deid"), 0);
  EXPECT_EQ(cli("train --data deid/manifest.json --cppg data/external_cppg.json --stage1 none/stage1.ckpt --out t"), 3);
  EXPECT_FALSE(fs::exists(work_dir() / "t" / "stage2.ckpt"));
}

TEST(Cli, EvalWithoutCheckpointIsMissingArtifact) {
  EXPECT_EQ(cli("eval --data deid/manifest.json --checkpoint none/stage2.ckpt --out e"), 3);
}
