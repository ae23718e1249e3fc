// Copyright 2026 The lenrep Authors
// SPDX-License-Identifier: Apache-2.0
//
// lenrep <command> [--config FILE] [--seed N] [--out-dir DIR] [--threads N]
//                  [--override-provenance] [--set key=value ...]

#include <CLI11.hpp>
#include <iostream>

#include "lenrep/pipeline.hpp"

namespace {

constexpr int kUsage = 1;
constexpr int kInternal = 3;

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<unsigned> threads;
  bool override_provenance = false;
  std::vector<std::string> sets;
  bool quiet = false;
};

lenrep::ExperimentConfig load_config(const Flags& f) {
  lenrep::KvConfig kv = f.config.empty() ? lenrep::KvConfig{} : lenrep::KvConfig::load(f.config);
  for (const auto& s : f.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos)
      lenrep::fail(lenrep::ErrorKind::Config, "--set expects key=value, got '" + s + "'");
    kv.set(s.substr(0, eq), s.substr(eq + 1));
  }
  if (f.seed) kv.set("seed", std::to_string(*f.seed));
  if (f.out_dir) kv.set("out_dir", *f.out_dir);
  if (f.threads) kv.set("threads", std::to_string(*f.threads));
  return lenrep::ExperimentConfig::from_kv(kv);
}

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "key = value config file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "master seed (overrides the config file)");
  cmd->add_option("--out-dir", f.out_dir, "run directory (overrides the config file)");
  cmd->add_option("--threads", f.threads, "worker threads for collection, probes and sweeps")
      ->check(CLI::PositiveNumber);
  cmd->add_flag("--override-provenance", f.override_provenance,
                "continue with a warning when upstream artifacts do not match");
  cmd->add_option("--set", f.sets, "extra key=value setting; may repeat");
  cmd->add_flag("-q,--quiet", f.quiet, "no progress output");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Length-representation probing and steering workbench"};
  app.require_subcommand(1);
  app.set_version_flag("--version", lenrep::kToolVersion);

  Flags flags;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"gen-corpus", "generate and split the synthetic compression corpus"},
      {"train", "pretrain the model on all prompt families"},
      {"finetune", "continue training on one prompt family"},
      {"collect", "record tap activations while generating"},
      {"probe", "train regression probes over the layer x tap grid"},
      {"rank", "probe single units and rank them"},
      {"sweep", "scale top/smallest units and measure output length"},
      {"evaluate", "accuracy, compression ratio and Rouge-L per prompt family"},
      {"report", "write summary tables and plot CSVs"},
      {"run", "every stage in order"},
      {"show-config", "print the effective configuration"}};
  for (const auto& [name, help] : commands) add_common(app.add_subcommand(name, help), flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kUsage;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    const auto config = load_config(flags);
    if (command == "show-config") {
      std::cout << config.to_text();
      return 0;
    }
    lenrep::RunOptions opts;
    opts.override_provenance = flags.override_provenance;
    opts.log = flags.quiet ? nullptr : &std::cerr;
    lenrep::run_stage(command, config, opts);
    return 0;
  } catch (const lenrep::Error& e) {
    std::cerr << "lenrep " << command << ": " << e.what() << "\n";
    return lenrep::exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "lenrep " << command << ": internal error: " << e.what() << "\n";
    return kInternal;
  }
}
