#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "omnigf/eval/evaluator.hpp"
#include "omnigf/scene/canonical_io.hpp"
#include "testutil.hpp"

using namespace omnigf;

namespace {

std::string cli_path() {
  const char* p = std::getenv("OMNIGF_CLI");
  if (!p) throw std::runtime_error("OMNIGF_CLI not set (run through ctest)");
  return p;
}

struct RunResult {
  int exit_code;
  std::string output;
};

RunResult run(const std::string& args) {
  const std::string cmd = cli_path() + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  EXPECT_NE(pipe, nullptr);
  std::string out;
  char buf[512];
  while (fgets(buf, sizeof(buf), pipe)) out += buf;
  const int status = pclose(pipe);
  return {WEXITSTATUS(status), out};
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

std::string train_cfg_text(const std::string& out_dir) {
  std::ostringstream cfg;
  cfg << "hidden_dim = 32\nnum_layers = 1\nnum_heads = 4\nscene_side = 32\npatch = 8\n"
      << "head_side = 16\nmax_context = 768\nlora_rank = 4\nlora_alpha = 8\n"
      << "task_mode = localize\nbatch_size = 1\naccum_steps = 1\ntotal_steps = 2\n"
      << "lr_adapter = 1e-3\nlr_head = 2.5e-3\nsynth_count = 2\nsynth_side = 32\n"
      << "synth_head_px = 10\nout_dir = " << out_dir << "\n";
  return cfg.str();
}

}  // namespace

TEST(CliSynth, DeterministicAcrossRuns) {
  auto dir = test::tmpdir("cli_synth");
  auto r1 = run("synth --seed 7 --count 5 --out " + (dir / "a").string());
  auto r2 = run("synth --seed 7 --count 5 --out " + (dir / "b").string());
  ASSERT_EQ(r1.exit_code, 0) << r1.output;
  ASSERT_EQ(r2.exit_code, 0);
  EXPECT_EQ(slurp((dir / "a" / "scenes.jsonl").string()),
            slurp((dir / "b" / "scenes.jsonl").string()));
  EXPECT_FALSE(slurp((dir / "a" / "scenes.jsonl").string()).empty());
  // rasters as sidecar files
  EXPECT_EQ(slurp((dir / "a" / "scenes_0.ppm").string()),
            slurp((dir / "b" / "scenes_0.ppm").string()));
}

TEST(CliSynth, ZeroCountWritesEmptyFile) {
  auto dir = test::tmpdir("cli_synth0");
  auto r = run("synth --seed 1 --count 0 --out " + (dir / "z").string());
  EXPECT_EQ(r.exit_code, 0) << r.output;
  EXPECT_TRUE(std::filesystem::exists(dir / "z" / "scenes.jsonl"));
  EXPECT_TRUE(slurp((dir / "z" / "scenes.jsonl").string()).empty());
}

TEST(CliSynth, InvalidOutDirFails) {
  auto r = run("synth --seed 1 --count 1 --out /proc/definitely/not/writable");
  EXPECT_NE(r.exit_code, 0);
  EXPECT_FALSE(r.output.empty());
}

TEST(CliUsage, MissingSubcommandOrFlagIsUsageError) {
  EXPECT_EQ(run("").exit_code, 1);
  EXPECT_EQ(run("synth").exit_code, 1);           // --out required
  EXPECT_EQ(run("train").exit_code, 1);           // --config required
  EXPECT_EQ(run("definitely-not-a-cmd").exit_code, 1);
}

TEST(CliTrain, MissingConfigFileIsDataError) {
  auto r = run("train --config /nonexistent/cfg.txt");
  EXPECT_EQ(r.exit_code, 2);
}

TEST(CliPipeline, TrainEvalPredictEndToEnd) {
  auto dir = test::tmpdir("cli_pipe");
  const auto cfg_path = (dir / "train.cfg").string();
  {
    std::ofstream f(cfg_path);
    f << train_cfg_text((dir / "run").string());
  }
  auto tr = run("train --config " + cfg_path);
  ASSERT_EQ(tr.exit_code, 0) << tr.output;
  const auto ckpt = (dir / "run" / "checkpoint.ogf").string();
  ASSERT_TRUE(std::filesystem::exists(ckpt));
  ASSERT_TRUE(std::filesystem::exists(dir / "run" / "train_log.jsonl"));
  // log: one JSON line per step with the loss components and lr
  {
    std::istringstream log(slurp((dir / "run" / "train_log.jsonl").string()));
    std::string line;
    int lines = 0;
    while (std::getline(log, line)) {
      auto j = nlohmann::json::parse(line);
      EXPECT_TRUE(j.contains("l_total"));
      EXPECT_TRUE(j.contains("lr_adapter"));
      ++lines;
    }
    EXPECT_EQ(lines, 2);
  }

  // data for eval
  auto sy = run("synth --seed 3 --count 3 --side 32 --out " + (dir / "data").string());
  ASSERT_EQ(sy.exit_code, 0) << sy.output;
  const auto data = (dir / "data" / "scenes.jsonl").string();

  auto ev = run("eval --checkpoint " + ckpt + " --data " + data + " --tasks gaze,social --out " +
                (dir / "eval1").string() + " --max-new-tokens 48");
  ASSERT_EQ(ev.exit_code, 0) << ev.output;
  auto metrics = nlohmann::json::parse(slurp((dir / "eval1" / "metrics.json").string()));
  EXPECT_TRUE(metrics.contains("avg_dist"));
  EXPECT_TRUE(metrics.contains("min_dist"));
  // prediction file validates against its own schema checker
  std::istringstream preds(slurp((dir / "eval1" / "predictions.jsonl").string()));
  std::string line;
  int n_preds = 0;
  while (std::getline(preds, line)) {
    validate_prediction_json(nlohmann::json::parse(line));
    ++n_preds;
  }
  EXPECT_EQ(n_preds, 3);

  // rerun: byte-identical metrics
  auto ev2 = run("eval --checkpoint " + ckpt + " --data " + data + " --tasks gaze,social --out " +
                 (dir / "eval2").string() + " --max-new-tokens 48");
  ASSERT_EQ(ev2.exit_code, 0);
  EXPECT_EQ(slurp((dir / "eval1" / "metrics.json").string()),
            slurp((dir / "eval2" / "metrics.json").string()));

  // social task on data without pair labels: social keys absent, exit 0
  {
    auto scenes = load_canonical(data);
    for (auto& s : scenes) s.pair_labels.clear();
    save_canonical(scenes, (dir / "nopairs.jsonl").string(), true);
    auto ev3 = run("eval --checkpoint " + ckpt + " --data " + (dir / "nopairs.jsonl").string() +
                   " --tasks social --out " + (dir / "eval3").string() + " --max-new-tokens 48");
    ASSERT_EQ(ev3.exit_code, 0) << ev3.output;
    auto m3 = nlohmann::json::parse(slurp((dir / "eval3" / "metrics.json").string()));
    EXPECT_FALSE(m3.contains("lah_f1"));
    EXPECT_FALSE(m3.contains("sa_ap"));
  }

  // predict on a single image with two heads
  {
    auto scenes = load_canonical(data);
    write_ppm((dir / "img.ppm").string(), scenes[0].image);
    auto pr = run("predict --checkpoint " + ckpt + " --image " + (dir / "img.ppm").string() +
                  " --heads 2,2,12,12 --heads 18,3,28,13 --out " + (dir / "pred.jsonl").string() +
                  " --visualize-out " + (dir / "vis").string() + " --max-new-tokens 48");
    ASSERT_EQ(pr.exit_code, 0) << pr.output;
    auto j = nlohmann::json::parse(slurp((dir / "pred.jsonl").string()));
    EXPECT_EQ(j["persons"].size(), 2u);
    EXPECT_EQ(j["pairs"].size(), 2u);  // both ordered pairs
    EXPECT_TRUE(std::filesystem::exists(dir / "vis" / "person0.ppm"));
    EXPECT_TRUE(std::filesystem::exists(dir / "vis" / "person1.ppm"));
  }

  // clamped head box warns but succeeds
  {
    auto pr = run("predict --checkpoint " + ckpt + " --image " + (dir / "img.ppm").string() +
                  " --heads -4,-4,10,10 --out " + (dir / "pred2.jsonl").string() +
                  " --max-new-tokens 16");
    EXPECT_EQ(pr.exit_code, 0) << pr.output;
    EXPECT_NE(pr.output.find("clamped"), std::string::npos);
  }

  // resume continues the step counter
  {
    const auto cfg2_path = (dir / "resume.cfg").string();
    std::ofstream f(cfg2_path);
    f << train_cfg_text((dir / "run2").string()) << "total_steps = 4\nresume_from = " << ckpt
      << "\n";
    f.close();
    auto tr2 = run("train --config " + cfg2_path);
    ASSERT_EQ(tr2.exit_code, 0) << tr2.output;
    std::istringstream log(slurp((dir / "run2" / "train_log.jsonl").string()));
    std::string first_line;
    std::getline(log, first_line);
    auto j = nlohmann::json::parse(first_line);
    EXPECT_EQ(j["step"].get<int>(), 2);  // continues after the 2 completed steps
  }
}
