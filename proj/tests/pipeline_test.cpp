// Copyright 2026 The lenrep Authors
// SPDX-License-Identifier: Apache-2.0

#include "lenrep/pipeline.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <map>

#include "lenrep/io.hpp"
#include "lenrep/report.hpp"
#include "support.hpp"

namespace lenrep {
namespace {

namespace fs = std::filesystem;
using testing::TempDir;

constexpr const char* kTinyConfig = R"(
# Tiny end-to-end run. The learning rates keep the model close to its
# random init so generations run to the token budget.
seed = 9
corpus.n_examples = 150
corpus.max_len = 12
model.n_layers = 3
model.d_model = 32
model.n_heads = 4
model.d_ffn = 64
model.max_context = 64
pretrain.epochs = 1
pretrain.warmup_steps = 5
pretrain.lr = 1e-5
finetune.epochs = 1
finetune.warmup_steps = 2
finetune.lr = 1e-5
collect.prompts = 10
collect.decode = greedy/8
probe.max_epochs = 4
probe.runs = 2
rank.top_m = 4
sweep.k = 3
sweep.scales = -2, 2
sweep.prompts = 4
sweep.decodes = greedy/8
evaluate.prompts = 5
evaluate.decode = greedy/8
)";

ExperimentConfig tiny(const fs::path& out) {
  auto kv = KvConfig::parse(kTinyConfig);
  kv.set("out_dir", out.string());
  return ExperimentConfig::from_kv(kv);
}

ErrorKind kind_of(auto&& fn, std::string* message = nullptr) {
  try {
    fn();
  } catch (const Error& e) {
    if (message) *message = e.what();
    return e.kind();
  }
  return ErrorKind::Internal;
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file())
      files[fs::relative(e.path(), root).generic_string()] = read_text_file(e.path());
  return files;
}

TEST(KvConfig, ParsesCommentsListsAndNumbers) {
  const auto kv = KvConfig::parse("a = 1  # one\n\n  b=x, y ,z\nc = -2.5\nd = 18446744073709551615\n");
  EXPECT_EQ(kv.get_int("a", 0), 1);
  EXPECT_EQ(kv.get_list("b", {}), (std::vector<std::string>{"x", "y", "z"}));
  EXPECT_EQ(kv.get_real("c", 0), -2.5);
  EXPECT_EQ(kv.get_uint("d", 0), 18446744073709551615ULL);
  EXPECT_EQ(kv.get("missing", "fallback"), "fallback");
  EXPECT_EQ(kind_of([&] { kv.get_int("b", 0); }), ErrorKind::Config);
  EXPECT_EQ(kind_of([] { KvConfig::parse("no equals sign\n"); }), ErrorKind::Config);
  EXPECT_EQ(kind_of([] { KvConfig::load("/nonexistent/lenrep.cfg"); }), ErrorKind::Config);
}

TEST(ExperimentConfig, TextRoundTrips) {
  const auto c = ExperimentConfig::from_kv(KvConfig::parse(kTinyConfig));
  const auto again = ExperimentConfig::from_kv(KvConfig::parse(c.to_text()));
  EXPECT_EQ(again.to_text(), c.to_text());
  const auto defaults = ExperimentConfig::from_kv(KvConfig{});
  EXPECT_EQ(ExperimentConfig::from_kv(KvConfig::parse(defaults.to_text())).to_text(),
            defaults.to_text());
  EXPECT_EQ(defaults.model.n_layers, 6);
  EXPECT_EQ(defaults.probe_runs, 5);
}

TEST(ExperimentConfig, SeedsDeriveFromMaster) {
  auto a = ExperimentConfig::from_kv(KvConfig::parse("seed = 1"));
  auto b = ExperimentConfig::from_kv(KvConfig::parse("seed = 2"));
  EXPECT_NE(a.corpus.seed, b.corpus.seed);
  EXPECT_NE(a.model.seed, a.pretrain.seed);
  EXPECT_EQ(a.model.seed, ExperimentConfig::from_kv(KvConfig::parse("seed = 1")).model.seed);
}

TEST(ExperimentConfig, RejectsBadInput) {
  std::string msg;
  EXPECT_EQ(kind_of([] { ExperimentConfig::from_kv(KvConfig::parse("modle.n_layers = 4")); }, &msg),
            ErrorKind::Config);
  EXPECT_NE(msg.find("modle.n_layers"), std::string::npos);
  for (const char* bad : {"collect.layers = 1,x", "model.n_layers = 2", "rank.tap = attn_residual",
                          "sweep.k = 500", "sweep.scales = 1,two", "probe.runs = 0",
                          "collect.decode = greedy/0", "collect.layers = 9"})
    EXPECT_EQ(kind_of([&] { ExperimentConfig::from_kv(KvConfig::parse(bad)); }), ErrorKind::Config)
        << bad;
}

TEST(ExitCodes, MapErrorKinds) {
  EXPECT_EQ(exit_code(Error(ErrorKind::Config, "")), 1);
  EXPECT_EQ(exit_code(Error(ErrorKind::Data, "")), 2);
  EXPECT_EQ(exit_code(Error(ErrorKind::Provenance, "")), 2);
  EXPECT_EQ(exit_code(Error(ErrorKind::Corruption, "")), 2);
  EXPECT_EQ(exit_code(Error(ErrorKind::Internal, "")), 3);
}

TEST(Pipeline, StageWithoutInputsNamesTheProducer) {
  TempDir dir("order");
  const auto c = tiny(dir.path());
  std::string msg;
  EXPECT_EQ(kind_of([&] { run_stage("probe", c); }, &msg), ErrorKind::Data);
  EXPECT_NE(msg.find("lenrep collect"), std::string::npos) << msg;
  EXPECT_EQ(kind_of([&] { run_stage("train", c); }, &msg), ErrorKind::Data);
  EXPECT_NE(msg.find("lenrep gen-corpus"), std::string::npos) << msg;
  EXPECT_EQ(kind_of([&] { run_stage("bogus", c); }), ErrorKind::Config);
  EXPECT_FALSE(fs::exists(dir.path() / ".lenrep.lock"));
}

TEST(Pipeline, LockedDirectoryIsRefused) {
  TempDir dir("lock");
  const auto c = tiny(dir.path());
  { std::ofstream(dir.path() / ".lenrep.lock") << "busy"; }
  EXPECT_EQ(kind_of([&] { run_stage("gen-corpus", c); }), ErrorKind::Data);
  fs::remove(dir.path() / ".lenrep.lock");
  EXPECT_NO_THROW(run_stage("gen-corpus", c));
}

TEST(Pipeline, EndToEndIsReproducible) {
  TempDir a("e2e-a"), b("e2e-b");
  run_stage("run", tiny(a.path()));
  run_stage("run", tiny(b.path()));
  const auto fa = snapshot(a.path()), fb = snapshot(b.path());
  for (const char* f : {"corpus/corpus.tsv", "model/pretrain.bin", "model/finetune.bin",
                        "collect/dataset.bin", "probe/grid.json", "rank/ranking.json",
                        "sweep/greedy-8.json", "evaluate/accuracy.json", "report/summary.txt"})
    EXPECT_TRUE(fa.contains(f)) << f;
  ASSERT_EQ(fa.size(), fb.size());
  for (const auto& [name, content] : fa) EXPECT_EQ(content, fb.at(name)) << name;

  const auto sweep = read_sweep(a.path() / "sweep/greedy-8.json");
  EXPECT_EQ(sweep.cells.size(), 6U);  // {top-3, smallest-3} x {-2, 1, 2}
  const auto grid = read_probe_report(a.path() / "probe/grid.json");
  EXPECT_EQ(grid.cells.size(), 12U);
  EXPECT_EQ(grid.n_runs, 2);
}

TEST(Pipeline, ChangedInputsRaiseProvenanceErrors) {
  TempDir dir("prov");
  const auto c = tiny(dir.path());
  for (const char* s : {"gen-corpus", "train", "finetune", "collect"}) run_stage(s, c);

  // Regenerating the corpus with another seed invalidates the checkpoints.
  auto other = c;
  other.master_seed = 10;
  other.derive_seeds();
  run_stage("gen-corpus", other);
  std::string msg;
  EXPECT_EQ(kind_of([&] { run_stage("finetune", c); }, &msg), ErrorKind::Provenance);
  EXPECT_NE(msg.find("corpus"), std::string::npos) << msg;
  RunOptions force;
  force.override_provenance = true;
  EXPECT_NO_THROW(run_stage("finetune", c, force));

  // The dataset was collected from the old fine-tuned checkpoint.
  EXPECT_EQ(kind_of([&] { run_stage("probe", c); }), ErrorKind::Provenance);

  // Tampering with a stage output is caught by the consumer.
  run_stage("collect", c);
  {
    std::ofstream f(dir.path() / paths::kDataset, std::ios::binary | std::ios::app);
    f << "x";
  }
  EXPECT_EQ(kind_of([&] { run_stage("probe", c); }), ErrorKind::Provenance);
}

TEST(Pipeline, SweepRefusesRankingFromAnotherCheckpoint) {
  TempDir dir("ckpt");
  const auto c = tiny(dir.path());
  for (const char* s : {"gen-corpus", "train", "finetune", "collect", "rank"}) run_stage(s, c);
  EXPECT_NO_THROW(run_stage("sweep", c));

  auto retuned = c;
  retuned.finetune.lr = 2e-5F;
  run_stage("finetune", retuned);
  std::string msg;
  EXPECT_EQ(kind_of([&] { run_stage("sweep", retuned); }, &msg), ErrorKind::Provenance);
  EXPECT_NE(msg.find("checkpoint"), std::string::npos) << msg;
  RunOptions force;
  force.override_provenance = true;
  EXPECT_NO_THROW(run_stage("sweep", retuned, force));
}

TEST(Pipeline, ReportListsMissingStages) {
  TempDir dir("report");
  const auto c = tiny(dir.path());
  for (const char* s : {"gen-corpus", "train", "finetune", "collect", "probe"}) run_stage(s, c);
  const auto summary = write_report(dir.path(), c);
  auto has_gap = [&](const std::string& prefix) {
    for (const auto& g : summary.gaps)
      if (g.rfind(prefix, 0) == 0) return true;
    return false;
  };
  EXPECT_TRUE(has_gap("sweep: absent"));
  EXPECT_TRUE(has_gap("units: absent"));
  EXPECT_TRUE(has_gap("evaluate: absent"));
  EXPECT_FALSE(has_gap("probe grid: absent"));
  EXPECT_NO_THROW(run_stage("report", c));
  EXPECT_NE(read_text_file(dir.path() / "report/summary.txt").find("sweep: absent"),
            std::string::npos);
}

}  // namespace
}  // namespace lenrep
