#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <string>

#include "test_util.hpp"

// End-to-end tests of the cbseq binary. The path to the built binary
// arrives in CBSEQ_BIN.

namespace {

std::string cbseq_bin() {
  const char* env = std::getenv("CBSEQ_BIN");
  REQUIRE(env != nullptr);
  return env;
}

struct CmdResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

CmdResult run_cmd(const testutil::TempDir& dir, const std::string& args,
                  const std::string& extra_env = "") {
  static int counter = 0;
  std::string out_file = dir.file("cmd_out_" + std::to_string(counter));
  std::string err_file = dir.file("cmd_err_" + std::to_string(counter));
  ++counter;
  std::string cmd = extra_env + cbseq_bin() + " " + args + " >" + out_file +
                    " 2>" + err_file;
  int rc = std::system(cmd.c_str());
  CmdResult r;
  r.exit_code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  r.out = testutil::slurp(out_file);
  r.err = testutil::slurp(err_file);
  return r;
}

const char* kMixedScenario = R"(
[[scenario]]
kind = "single_node_persistent"
family = "beacon"
flows_per_channel = 12
period = 60.0
pn_mean = 5
up_bytes = 900
down_bytes = 300
port_strategy = "fixed"
sp_base = 45000
start_time = 3600
seed = 21

[[scenario]]
kind = "single_node_persistent"
family = "beacon"
flows_per_channel = 9
period = 30.0
pn_mean = 3
up_bytes = 400
down_bytes = 150
port_strategy = "fixed"
sp_base = 46000
start_time = 18000
seed = 22

[[scenario]]
kind = "single_node_persistent"
family = "beacon"
flows_per_channel = 30
period = 300.0
pn_mean = 20
up_bytes = 20000
down_bytes = 5000
port_strategy = "sequential"
sp_base = 41000
start_time = 36000
seed = 25

[[scenario]]
kind = "single_node_persistent"
family = "beacon"
flows_per_channel = 18
period = 120.0
pn_mean = 8
up_bytes = 3000
down_bytes = 900
port_strategy = "fixed"
sp_base = 47000
start_time = 50000
seed = 26

[[scenario]]
kind = "multi_node_transient"
family = "worm"
hosts = 6
flows_per_channel = 2
period = 20.0
pn_mean = 2
up_bytes = 2500
down_bytes = 100
start_time = 4000
seed = 23

[[scenario]]
kind = "benign_background"
hosts = 24
flows_per_channel = 5
pn_mean = 8
up_bytes = 50000
down_bytes = 200000
bytes_sigma = 2.5
duration = 70000.0
start_time = 3600
seed = 24
)";

}  // namespace

TEST_CASE("--help exits zero for the app and every subcommand") {
  testutil::TempDir dir;
  CHECK(run_cmd(dir, "--help").exit_code == 0);
  for (const char* sub :
       {"ingest", "channels", "cluster", "sequences", "embed-train", "train",
        "detect", "eval", "synth", "pipeline"}) {
    auto r = run_cmd(dir, std::string(sub) + " --help");
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("--help") != std::string::npos);
  }
}

TEST_CASE("missing input produces a nonzero exit and JSON error on stderr") {
  testutil::TempDir dir;
  auto r = run_cmd(dir, "ingest --jsonl " + dir.file("nope.jsonl") + " --out " +
                            dir.file("x.jsonl"));
  CHECK(r.exit_code != 0);
  CHECK(r.err.find("{\"error\":") != std::string::npos);
  CHECK(r.err.find("\"stage\":\"ingest\"") != std::string::npos);

  auto r2 = run_cmd(dir, "bogus-subcommand");
  CHECK(r2.exit_code != 0);
}

TEST_CASE("stage-by-stage run from synth to detect") {
  testutil::TempDir dir;
  testutil::spit(dir.file("corpus.toml"), kMixedScenario);

  auto synth = run_cmd(dir, "synth --scenario " + dir.file("corpus.toml") +
                                " --out " + dir.file("raw.jsonl") +
                                " --meta " + dir.file("truth.json"));
  REQUIRE(synth.exit_code == 0);
  CHECK(testutil::slurp(dir.file("truth.json")).find("channels") !=
        std::string::npos);

  auto ingest = run_cmd(dir, "ingest --jsonl " + dir.file("raw.jsonl") +
                                 " --out " + dir.file("flows.jsonl"));
  REQUIRE(ingest.exit_code == 0);

  auto channels = run_cmd(dir, "channels --flows " + dir.file("flows.jsonl") +
                                   " --out " + dir.file("channels.jsonl"));
  REQUIRE(channels.exit_code == 0);
  CHECK(channels.out.find("channels=34") != std::string::npos);  // 4+6+24

  auto cluster = run_cmd(
      dir, "cluster --channels " + dir.file("channels.jsonl") +
               " --eps 1.0 --minpts 1 --slice 14400 --out " +
               dir.file("clusters.jsonl"));
  REQUIRE(cluster.exit_code == 0);

  auto sequences = run_cmd(dir, "sequences --clusters " +
                                    dir.file("clusters.jsonl") + " --out " +
                                    dir.file("behseq.jsonl"));
  REQUIRE(sequences.exit_code == 0);

  for (const char* type : {"pn", "iat", "sp", "dp"}) {
    auto emb = run_cmd(
        dir, std::string("embed-train --behseq ") + dir.file("behseq.jsonl") +
                 " --type " + type + " --dim 8 --epochs 3 --out " +
                 dir.file(std::string(type) + ".vec"));
    REQUIRE(emb.exit_code == 0);
  }

  std::string emb_list = dir.file("pn.vec") + "," + dir.file("iat.vec") + "," +
                         dir.file("sp.vec") + "," + dir.file("dp.vec");
  auto train = run_cmd(
      dir, "train --behseq " + dir.file("behseq.jsonl") + " --emb " +
               emb_list +
               " --d-model 8 --blocks 1 --heads 2 --epochs 2 --batch 4 "
               "--lr 0.001 --out " +
               dir.file("model.msf"));
  REQUIRE(train.exit_code == 0);

  auto detect = run_cmd(dir, "detect --model " + dir.file("model.msf") +
                                 " --behseq " + dir.file("behseq.jsonl") +
                                 " --emb " + emb_list + " --out " +
                                 dir.file("results.csv"));
  REQUIRE(detect.exit_code == 0);
  std::string csv = testutil::slurp(dir.file("results.csv"));
  CHECK(csv.rfind("cluster_id,channels,p_malware,verdict", 0) == 0);
  CHECK(csv.find("malware") != std::string::npos);

  // Re-running detect reproduces the identical file.
  auto detect2 = run_cmd(dir, "detect --model " + dir.file("model.msf") +
                                  " --behseq " + dir.file("behseq.jsonl") +
                                  " --emb " + emb_list + " --out " +
                                  dir.file("results2.csv"));
  REQUIRE(detect2.exit_code == 0);
  CHECK(testutil::slurp(dir.file("results.csv")) ==
        testutil::slurp(dir.file("results2.csv")));
}

TEST_CASE("eval subcommand runs the known protocol from a config") {
  testutil::TempDir dir;
  testutil::spit(dir.file("corpus.toml"), kMixedScenario);
  REQUIRE(run_cmd(dir, "synth --scenario " + dir.file("corpus.toml") +
                           " --out " + dir.file("flows.jsonl"))
              .exit_code == 0);
  REQUIRE(run_cmd(dir, "channels --flows " + dir.file("flows.jsonl") +
                           " --out " + dir.file("channels.jsonl"))
              .exit_code == 0);
  REQUIRE(run_cmd(dir, "cluster --channels " + dir.file("channels.jsonl") +
                           " --out " + dir.file("clusters.jsonl"))
              .exit_code == 0);
  REQUIRE(run_cmd(dir, "sequences --clusters " + dir.file("clusters.jsonl") +
                           " --out " + dir.file("behseq.jsonl"))
              .exit_code == 0);

  testutil::spit(dir.file("eval.toml"), R"(
mode = "known"
seed = 5
folds = 2
repeats = 2

[data]
behseq = ")" + dir.file("behseq.jsonl") + R"("

[embedding]
dim = 8
epochs = 2

[model]
d_model = 8
blocks = 1
heads = 2
d_ff = 16
epochs = 2
lr = 0.001
batch = 4
)");
  auto eval = run_cmd(dir, "eval --mode known --config " +
                               dir.file("eval.toml") + " --out " +
                               dir.file("metrics.csv") + " --roc " +
                               dir.file("roc.csv"));
  REQUIRE(eval.exit_code == 0);
  std::string metrics = testutil::slurp(dir.file("metrics.csv"));
  CHECK(metrics.rfind("run,fold,tpr,fpr,auc", 0) == 0);
  // header + 2 runs x 2 folds
  CHECK(std::count(metrics.begin(), metrics.end(), '\n') == 5);
  std::string roc = testutil::slurp(dir.file("roc.csv"));
  CHECK(roc.rfind("threshold,fpr,tpr", 0) == 0);
}

TEST_CASE("pipeline runs end to end and reruns byte-identically") {
  testutil::TempDir dir;
  testutil::spit(dir.file("corpus.toml"), kMixedScenario);
  REQUIRE(run_cmd(dir, "synth --scenario " + dir.file("corpus.toml") +
                           " --out " + dir.file("raw.jsonl"))
              .exit_code == 0);

  auto config_for = [&](const std::string& out_dir) {
    return std::string("seed = 11\nout_dir = \"") + dir.file(out_dir) +
           "\"\n\n[ingest]\njsonl = \"" + dir.file("raw.jsonl") +
           "\"\n\n[embedding]\ndim = 8\nepochs = 2\n\n[model]\nd_model = 8\n"
           "blocks = 1\nheads = 2\nd_ff = 16\nepochs = 2\nlr = 0.001\n"
           "batch = 4\n\n[eval]\nfolds = 2\nrepeats = 1\n";
  };
  testutil::spit(dir.file("p1.toml"), config_for("run1"));
  testutil::spit(dir.file("p2.toml"), config_for("run2"));

  auto p1 = run_cmd(dir, "pipeline --config " + dir.file("p1.toml"));
  REQUIRE(p1.exit_code == 0);
  auto p2 = run_cmd(dir, "pipeline --config " + dir.file("p2.toml"));
  REQUIRE(p2.exit_code == 0);

  for (const char* f : {"flows.jsonl", "channels.jsonl", "clusters.jsonl",
                        "behseq.jsonl", "pn.vec", "iat.vec", "sp.vec",
                        "dp.vec", "model.msf", "metrics.csv", "roc.csv"}) {
    CHECK(testutil::slurp(dir.file("run1/" + std::string(f))) ==
          testutil::slurp(dir.file("run2/" + std::string(f))));
  }
}

TEST_CASE("CBSEQ_SEED overrides the configured seed") {
  testutil::TempDir dir;
  testutil::spit(dir.file("corpus.toml"), kMixedScenario);
  REQUIRE(run_cmd(dir, "synth --scenario " + dir.file("corpus.toml") +
                           " --out " + dir.file("flows.jsonl"))
              .exit_code == 0);
  REQUIRE(run_cmd(dir, "channels --flows " + dir.file("flows.jsonl") +
                           " --out " + dir.file("channels.jsonl"))
              .exit_code == 0);
  REQUIRE(run_cmd(dir, "cluster --channels " + dir.file("channels.jsonl") +
                           " --out " + dir.file("clusters.jsonl"))
              .exit_code == 0);
  REQUIRE(run_cmd(dir, "sequences --clusters " + dir.file("clusters.jsonl") +
                           " --out " + dir.file("behseq.jsonl"))
              .exit_code == 0);

  auto emb_with = [&](const std::string& name, const std::string& env) {
    auto r = run_cmd(dir,
                     "embed-train --behseq " + dir.file("behseq.jsonl") +
                         " --type pn --dim 8 --epochs 2 --seed 1 --out " +
                         dir.file(name),
                     env);
    REQUIRE(r.exit_code == 0);
  };
  emb_with("a.vec", "");
  emb_with("b.vec", "CBSEQ_SEED=99 ");
  emb_with("c.vec", "CBSEQ_SEED=99 ");
  CHECK(testutil::slurp(dir.file("a.vec")) != testutil::slurp(dir.file("b.vec")));
  CHECK(testutil::slurp(dir.file("b.vec")) == testutil::slurp(dir.file("c.vec")));
}
