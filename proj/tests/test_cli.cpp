#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "distil/data.hpp"
#include "distil/ioutil.hpp"
#include "distil/pipeline.hpp"

using namespace distil;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Runs the installed binary through the shell, capturing both streams.
RunResult run(const std::string& args, const std::string& env_prefix = "") {
  static int counter = 0;
  const std::string tag = std::to_string(::getpid()) + "_" + std::to_string(counter++);
  const fs::path out_file = fs::temp_directory_path() / ("distil_cli_out_" + tag);
  const fs::path err_file = fs::temp_directory_path() / ("distil_cli_err_" + tag);
  const std::string cmd = env_prefix + std::string(DISTIL_BIN_PATH) + " " + args + " > " +
                          out_file.string() + " 2> " + err_file.string();
  const int raw = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.out = slurp(out_file);
  r.err = slurp(err_file);
  fs::remove(out_file);
  fs::remove(err_file);
  return r;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag)
      : path(fs::temp_directory_path() / ("distil_clitest_" + tag + "_" +
                                          std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

const std::string kTinyFlags =
    " --k 3 --teacher-arch linear --student-arch linear"
    " --teacher-epochs 6 --student-epochs 6 --stage2-epochs 3 --batch-size 8 --seed 5";

}  // namespace

TEST_CASE("help exits cleanly, bad invocations do not") {
  CHECK(run("--help").code == 0);
  CHECK(run("--help").out.find("synth") != std::string::npos);
  CHECK(run("").code == 1);
  CHECK(run("synth --bogus-flag 1").code == 1);
  CHECK(run("frobnicate").code == 1);
}

TEST_CASE("full run through every subcommand") {
  TempDir dir("flow");
  const std::string data_dir = (dir.path / "data").string();
  const std::string run_dir = (dir.path / "run").string();

  const RunResult synth =
      run("synth --classes 5 --dim 8 --n 60 --flip-noise 0.15 --boundary-noise 0.1 --seed 3 --out " +
          data_dir);
  CHECK(synth.code == 0);
  CHECK(synth.out.find("n=60") != std::string::npos);
  CHECK(synth.out.find("classes=5") != std::string::npos);
  const std::string data = (fs::path(data_dir) / "dataset.jsonl").string();
  REQUIRE(fs::exists(data));

  const RunResult s1 = run("stage1 --data " + data + " --out " + run_dir + kTinyFlags);
  CHECK(s1.code == 0);
  CHECK(s1.out.find("stage1 k=3") != std::string::npos);
  CHECK(fs::exists(fs::path(run_dir) / "config.json"));
  CHECK(fs::exists(fs::path(run_dir) / "softlabels.csv"));
  CHECK(fs::exists(fs::path(run_dir) / "metrics_stage1.json"));
  CHECK(fs::exists(fs::path(run_dir) / "checkpoints" / "teacher_2.json"));
  CHECK(fs::exists(fs::path(run_dir) / "checkpoints" / "student_stage1_2.json"));

  const RunResult sel = run("select --run " + run_dir + " --delta 0.1");
  CHECK(sel.code == 0);
  CHECK(sel.out.find("select folds=3") != std::string::npos);
  CHECK(fs::exists(fs::path(run_dir) / "selection_0.json"));
  CHECK(fs::exists(fs::path(run_dir) / "selection_2.csv"));

  const RunResult s2 = run("stage2 --run " + run_dir + " --scheme adaptive");
  CHECK(s2.code == 0);
  CHECK(s2.out.find("stage2 scheme=adaptive") != std::string::npos);
  CHECK(fs::exists(fs::path(run_dir) / "metrics_stage2.json"));
  CHECK(fs::exists(fs::path(run_dir) / "checkpoints" / "student_stage2_2.json"));

  const std::string metrics_out = (dir.path / "eval.json").string();
  const RunResult ev = run("eval --checkpoint " +
                           (fs::path(run_dir) / "checkpoints" / "student_stage2_0.json").string() +
                           " --data " + data + " --out " + metrics_out);
  CHECK(ev.code == 0);
  CHECK(ev.out.find("eval n=60") != std::string::npos);
  CHECK(fs::exists(metrics_out));

  const RunResult rep = run("report --run " + run_dir);
  CHECK(rep.code == 0);
  CHECK(rep.out.find("map@3") != std::string::npos);
  CHECK(rep.out.find("stage1") != std::string::npos);
  CHECK(fs::exists(fs::path(run_dir) / "report.json"));
}

TEST_CASE("CLI run matches the library run byte for byte") {
  TempDir dir("parity");
  const std::string data_dir = (dir.path / "data").string();
  run("synth --classes 5 --dim 8 --n 60 --flip-noise 0.1 --seed 7 --out " + data_dir);
  const std::string data = (fs::path(data_dir) / "dataset.jsonl").string();

  const std::string cli_run = (dir.path / "cli_run").string();
  const RunResult s1 = run("stage1 --data " + data + " --out " + cli_run + kTinyFlags);
  REQUIRE(s1.code == 0);

  TrainConfig cfg;
  cfg.teacher_arch = parse_arch("linear");
  cfg.student_arch = parse_arch("linear");
  cfg.k_folds = 3;
  cfg.teacher_epochs = 6;
  cfg.student_epochs = 6;
  cfg.stage2_epochs = 3;
  cfg.batch_size = 8;
  cfg.seed = 5;
  cfg.data_path = data;
  const LoadedDataset ds = load_dataset(data, cfg.dim);
  const StageArtifacts art = stage1(ds.samples, ds.labels.size(), cfg);
  const std::string lib_run = (dir.path / "lib_run").string();
  write_stage1_outputs(lib_run, art, cfg);

  for (const char* name : {"config.json", "foldplan.json", "softlabels.csv",
                           "metrics_stage1.json", "checkpoints/teacher_0.json",
                           "checkpoints/teacher_1.json", "checkpoints/teacher_2.json",
                           "checkpoints/student_stage1_0.json",
                           "checkpoints/student_stage1_1.json",
                           "checkpoints/student_stage1_2.json"}) {
    CAPTURE(name);
    CHECK(slurp(fs::path(cli_run) / name) == slurp(fs::path(lib_run) / name));
  }
}

TEST_CASE("exit codes distinguish the failure families") {
  TempDir dir("codes");
  const std::string data_dir = (dir.path / "data").string();
  run("synth --classes 5 --dim 8 --n 60 --seed 11 --out " + data_dir);
  const std::string data = (fs::path(data_dir) / "dataset.jsonl").string();

  const RunResult bad_cfg =
      run("stage1 --data " + data + " --out " + (dir.path / "r1").string() + " --k 1");
  CHECK(bad_cfg.code == 1);
  CHECK(bad_cfg.err.find("k_folds") != std::string::npos);

  const RunResult bad_data = run("stage1 --data " + (dir.path / "missing.jsonl").string() +
                                 " --out " + (dir.path / "r2").string() + kTinyFlags);
  CHECK(bad_data.code == 2);

  const std::string run_dir = (dir.path / "run").string();
  REQUIRE(run("stage1 --data " + data + " --out " + run_dir + kTinyFlags).code == 0);
  fs::remove(fs::path(run_dir) / "softlabels.csv");
  const RunResult missing = run("stage2 --run " + run_dir);
  CHECK(missing.code == 2);
  CHECK(missing.err.find("softlabels.csv") != std::string::npos);

  const RunResult diverged = run("stage1 --data " + data + " --out " +
                                 (dir.path / "r3").string() + kTinyFlags +
                                 " --teacher-lr 1e308");
  CHECK(diverged.code == 3);
  CHECK(diverged.err.find("non-finite") != std::string::npos);
}

TEST_CASE("sweep writes a ranked table the report renders") {
  TempDir dir("sweep");
  const std::string data_dir = (dir.path / "data").string();
  run("synth --classes 5 --dim 8 --n 60 --flip-noise 0.15 --seed 13 --out " + data_dir);
  const std::string data = (fs::path(data_dir) / "dataset.jsonl").string();
  const std::string sweep_dir = (dir.path / "sweep").string();

  const RunResult sw = run("sweep --data " + data + " --out " + sweep_dir +
                           " --deltas 0.05,0.1" + kTinyFlags);
  CHECK(sw.code == 0);
  CHECK(sw.out.find("sweep points=2") != std::string::npos);
  CHECK(sw.out.find("best map@3=") != std::string::npos);
  REQUIRE(fs::exists(fs::path(sweep_dir) / "sweep.csv"));
  CHECK(fs::exists(fs::path(sweep_dir) / "sweep_folds_0.csv"));

  const RunResult rep = run("report --run " + sweep_dir);
  CHECK(rep.code == 0);
  CHECK(rep.out.find("index") != std::string::npos);
  CHECK(rep.out.find("stage2_map3_mean") != std::string::npos);
}

TEST_CASE("DISTIL_RUN_ROOT fills in for the directory flags") {
  TempDir dir("envroot");
  const RunResult with_env = run("synth --classes 5 --dim 8 --n 50 --seed 17",
                                 "DISTIL_RUN_ROOT=" + dir.path.string() + " ");
  CHECK(with_env.code == 0);
  CHECK(fs::exists(dir.path / "dataset.jsonl"));

  const RunResult without = run("synth --classes 5 --dim 8 --n 50 --seed 17",
                                "DISTIL_RUN_ROOT= ");
  CHECK(without.code == 1);
  CHECK(without.err.find("DISTIL_RUN_ROOT") != std::string::npos);
}
