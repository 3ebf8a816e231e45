#include <gtest/gtest.h>

#include <sys/wait.h>

#include <fstream>
#include <sstream>

#include "test_util.hpp"

using namespace aortaseg;

namespace
{

struct RunResult
{
  int status = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path & p)
{
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunResult run_cli(const std::string & args)
{
  static int counter = 0;
  const auto dir = testutil::scratch_dir("cli_io");
  const auto out = dir / ("out" + std::to_string(counter) + ".txt");
  const auto err = dir / ("err" + std::to_string(counter++) + ".txt");
  const std::string cmd = std::string(AORTASEG_CLI_PATH) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int raw = std::system(cmd.c_str());
  RunResult r;
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

int count_lines(const std::string & s)
{
  return static_cast<int>(std::count(s.begin(), s.end(), '\n'));
}

}  // namespace

TEST(Cli, UsageErrorsExitTwo)
{
  EXPECT_EQ(run_cli("").status, 2);
  EXPECT_EQ(run_cli("frobnicate").status, 2);
  EXPECT_EQ(run_cli("phantom --out /tmp/x --bogus").status, 2);
  const auto missing = run_cli("split --datalist /nonexistent/cases.json");
  EXPECT_EQ(missing.status, 2);
  EXPECT_EQ(count_lines(missing.err), 1);
  EXPECT_EQ(missing.err.rfind("error: ", 0), 0u) << missing.err;
  EXPECT_EQ(run_cli("mesh --input /nonexistent.nii.gz --output /tmp/m.stl").status, 2);
  EXPECT_EQ(run_cli("mesh --input a --output b --format ply").status, 2);

  const auto dir = testutil::scratch_dir("cli_badcfg");
  std::ofstream(dir / "bad.yaml") << "modality: MR\ndatalist: d.json\n";
  const auto bad = run_cli("train --config " + (dir / "bad.yaml").string());
  EXPECT_EQ(bad.status, 2);
  EXPECT_NE(bad.err.find("modality"), std::string::npos);
}

TEST(Cli, HelpExitsZero)
{
  const auto r = run_cli("--help");
  EXPECT_EQ(r.status, 0);
  for (const char * sub : {"phantom", "split", "train", "infer", "evaluate", "mesh", "report"}) {
    EXPECT_NE(r.out.find(sub), std::string::npos) << sub;
  }
}

TEST(Cli, EndToEndPipeline)
{
  const auto dir = testutil::scratch_dir("cli_e2e");
  const auto data = dir / "data";
  const auto s = [](const fs::path & p) {return p.string();};

  auto r = run_cli("phantom --n 6 --shape 24 --seed 3 --folds 2 --out " + s(data));
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_TRUE(fs::exists(data / "dataset.json"));
  EXPECT_TRUE(fs::exists(data / "manifest.json"));

  r = run_cli("split --datalist " + s(data / "dataset.json") + " --k 2 --seed 7 --output " + s(data / "split.json"));
  ASSERT_EQ(r.status, 0) << r.err;
  const auto split = load_datalist(data / "split.json");
  EXPECT_EQ(split.entries.size(), 6u);
  EXPECT_NO_THROW(split.validate(2));
  EXPECT_EQ(r.out, run_cli("split --datalist " + s(data / "dataset.json") + " --k 2 --seed 7 --output " +
    s(data / "split.json")).out);
  const auto again = load_datalist(data / "split.json");
  for (std::size_t i = 0; i < 6; ++i) {EXPECT_EQ(again.entries[i].fold, split.entries[i].fold);}

  std::ofstream(dir / "exp.yaml") <<
    "modality: CT\n"
    "datalist: data/split.json\n"
    "train: {epochs: 1, folds: 2, repeats: 2, effective_batch: 2, lr0: 0.002, target_spacing: [1, 1, 1]}\n"
    "arch: {init_filters: 2, blocks_per_stage: [1, 1], deep_supervision_levels: 1}\n"
    "augment: {crop_size: 16}\n";
  r = run_cli("train --config " + s(dir / "exp.yaml") + " --ckpt-dir " + s(dir / "ckpt"));
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_EQ(load_checkpoint_dir(dir / "ckpt").size(), 4u);
  const auto manifest = nlohmann::json::parse(slurp(dir / "ckpt" / "manifest.json"));
  EXPECT_EQ(manifest["command"], "train");
  EXPECT_EQ(manifest["config"]["train"]["seed"], TrainConfig{}.seed);
  EXPECT_EQ(manifest["checkpoints"].size(), 4u);
  EXPECT_TRUE(fs::exists(dir / "ckpt" / "train_log.jsonl"));

  // --resume skips everything that already exists.
  const auto before = detail::read_all(checkpoint_path(dir / "ckpt", 0, 0));
  r = run_cli("train --config " + s(dir / "exp.yaml") + " --ckpt-dir " + s(dir / "ckpt") + " --resume");
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_EQ(detail::read_all(checkpoint_path(dir / "ckpt", 0, 0)), before);

  r = run_cli("--jobs 2 infer --ckpt-dir " + s(dir / "ckpt") + " --input " + s(data / "imagesTr") + " --output " +
    s(dir / "pred") + " --report " + s(dir / "infer.json"));
  ASSERT_EQ(r.status, 0) << r.err;
  const auto report = nlohmann::json::parse(slurp(dir / "infer.json"));
  EXPECT_EQ(report["cases"].size(), 6u);
  EXPECT_EQ(report["infer"]["stage1_count"], 2);
  const auto pred = load_volume(dir / "pred" / "phantom_000.nii.gz");
  EXPECT_EQ(pred.shape(), load_volume(data / "imagesTr" / "phantom_000.nii.gz").shape());

  r = run_cli("evaluate --pred " + s(dir / "pred") + " --gt " + s(data / "labelsTr") + " --output " + s(dir / "eval.csv"));
  ASSERT_EQ(r.status, 0) << r.err;
  const auto csv = slurp(dir / "eval.csv");
  EXPECT_EQ(csv.rfind("case_id,dice,hd95\n", 0), 0u);
  EXPECT_EQ(count_lines(csv), 1 + 6 + 3);
  EXPECT_NE(csv.find("\nstd,"), std::string::npos);
  EXPECT_NE(csv.find("\nmean,"), std::string::npos);

  r = run_cli("mesh --input " + s(data / "labelsTr" / "phantom_000.nii.gz") + " --output " + s(dir / "m.stl") +
    " --smooth-iters 2");
  ASSERT_EQ(r.status, 0) << r.err;
  const auto stats = nlohmann::json::parse(r.out);
  EXPECT_TRUE(stats["watertight"].get<bool>());
  EXPECT_EQ(load_stl(dir / "m.stl").size(), stats["triangles"].get<std::size_t>());
  r = run_cli("mesh --input " + s(data / "labelsTr" / "phantom_000.nii.gz") + " --output " + s(dir / "m.obj") +
    " --format obj");
  ASSERT_EQ(r.status, 0) << r.err;

  r = run_cli("report --ckpt-dir " + s(dir / "ckpt") + " --eval-csv " + s(dir / "eval.csv"));
  ASSERT_EQ(r.status, 0) << r.err;
  const auto rep = nlohmann::json::parse(r.out);
  EXPECT_EQ(rep["checkpoints"].size(), 4u);
  EXPECT_EQ(rep["evaluation"].size(), 9u);
}
