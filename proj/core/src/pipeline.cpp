// Copyright 2026 The lenrep Authors
// SPDX-License-Identifier: Apache-2.0

#include "lenrep/pipeline.hpp"

#include <cstdio>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "lenrep/capture.hpp"
#include "lenrep/hash.hpp"
#include "lenrep/io.hpp"
#include "lenrep/metrics.hpp"
#include "lenrep/report.hpp"

namespace lenrep {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + items[i];
  return out;
}

template <typename T, typename Fn>
std::vector<std::string> map_strings(const std::vector<T>& items, Fn fn) {
  std::vector<std::string> out;
  for (const auto& x : items) out.push_back(fn(x));
  return out;
}

std::vector<std::string> kind_names(const std::vector<PromptKind>& kinds) {
  return map_strings(kinds, [](PromptKind k) { return std::string(to_string(k)); });
}

}  // namespace

// ---------------------------------------------------------------- config

TrainConfig default_finetune() {
  TrainConfig t;
  t.phase = TrainPhase::FineTune;
  t.epochs = 1;
  t.lr = 5e-4F;
  t.warmup_steps = 20;
  t.max_examples = 8000;
  return t;
}

ExperimentConfig ExperimentConfig::from_kv(const KvConfig& kv) try {
  ExperimentConfig c;
  c.master_seed = kv.get_uint("seed", c.master_seed);

  c.corpus.n_examples = kv.get_uint("corpus.n_examples", c.corpus.n_examples);
  c.corpus.min_len = static_cast<int>(kv.get_int("corpus.min_len", c.corpus.min_len));
  c.corpus.max_len = static_cast<int>(kv.get_int("corpus.max_len", c.corpus.max_len));
  c.corpus.content_prob = kv.get_real("corpus.content_prob", c.corpus.content_prob);
  c.split.train = kv.get_real("split.train", c.split.train);
  c.split.val = kv.get_real("split.val", c.split.val);
  c.split.test = kv.get_real("split.test", c.split.test);

  c.model.n_layers = static_cast<int>(kv.get_int("model.n_layers", c.model.n_layers));
  c.model.d_model = static_cast<int>(kv.get_int("model.d_model", c.model.d_model));
  c.model.n_heads = static_cast<int>(kv.get_int("model.n_heads", c.model.n_heads));
  c.model.d_ffn = static_cast<int>(kv.get_int("model.d_ffn", c.model.d_ffn));
  c.model.max_context = static_cast<int>(kv.get_int("model.max_context", c.model.max_context));

  for (auto [t, prefix] : {std::pair{&c.pretrain, "pretrain."}, std::pair{&c.finetune, "finetune."}}) {
    const std::string p = prefix;
    t->epochs = static_cast<int>(kv.get_int(p + "epochs", t->epochs));
    t->batch = static_cast<int>(kv.get_int(p + "batch", t->batch));
    t->lr = static_cast<float>(kv.get_real(p + "lr", t->lr));
    t->warmup_steps = static_cast<int>(kv.get_int(p + "warmup_steps", t->warmup_steps));
    t->max_examples = kv.get_uint(p + "max_examples", t->max_examples);
    t->final_lr_fraction =
        static_cast<float>(kv.get_real(p + "final_lr_fraction", t->final_lr_fraction));
    t->clip_norm = static_cast<float>(kv.get_real(p + "clip_norm", t->clip_norm));
  }
  c.pretrain.phase = TrainPhase::Pretrain;
  c.finetune.phase = TrainPhase::FineTune;
  c.finetune.finetune_kind = parse_prompt_kind(kv.get("finetune.kind", "priming"));

  c.collect_kind = parse_prompt_kind(kv.get("collect.kind", "priming"));
  c.collect_prompts = kv.get_uint("collect.prompts", c.collect_prompts);
  const auto layers = kv.get_list("collect.layers", {"all"});
  if (!(layers.size() == 1 && layers[0] == "all"))
    for (const auto& l : layers) c.layers.push_back(std::stoi(l));
  const auto taps = kv.get_list("collect.taps", {"all"});
  if (!(taps.size() == 1 && taps[0] == "all")) {
    c.taps.clear();
    for (const auto& t : taps) c.taps.push_back(parse_tap(t));
  }
  c.collect_decode = DecodeConfig::parse(kv.get("collect.decode", "greedy/64"));

  c.probe_full.hidden_width = c.probe_unit.hidden_width =
      static_cast<int>(kv.get_int("probe.hidden_width", 100));
  c.probe_full.dropout = c.probe_unit.dropout = kv.get_real("probe.dropout", 0.1);
  c.probe_full.lr = c.probe_unit.lr = kv.get_real("probe.lr", 1e-3);
  c.probe_full.max_epochs = c.probe_unit.max_epochs =
      static_cast<int>(kv.get_int("probe.max_epochs", 1000));
  c.probe_full.batch = static_cast<int>(kv.get_int("probe.full_batch", 32));
  c.probe_full.patience = static_cast<int>(kv.get_int("probe.full_patience", 10));
  c.probe_unit.batch = static_cast<int>(kv.get_int("probe.unit_batch", 64));
  c.probe_unit.patience = static_cast<int>(kv.get_int("probe.unit_patience", 5));
  c.probe_runs = static_cast<int>(kv.get_int("probe.runs", c.probe_runs));

  c.rank_layer = static_cast<int>(kv.get_int("rank.layer", c.rank_layer));
  c.rank_tap = parse_tap(kv.get("rank.tap", "attn_out"));
  c.top_m = kv.get_uint("rank.top_m", c.top_m);

  const auto scales = kv.get_list("sweep.scales", {});
  if (!scales.empty()) {
    c.scales.clear();
    for (const auto& s : scales) c.scales.push_back(std::stod(s));
  }
  const auto ks = kv.get_list("sweep.k", {});
  if (!ks.empty()) {
    c.k_list.clear();
    for (const auto& k : ks) c.k_list.push_back(std::stoul(k));
  }
  c.scope = parse_position_scope(kv.get("sweep.scope", "all-generated"));
  c.sweep_kind = parse_prompt_kind(kv.get("sweep.kind", "priming"));
  c.sweep_prompts = kv.get_uint("sweep.prompts", c.sweep_prompts);
  c.sweep_decodes.clear();
  for (const auto& d : kv.get_list("sweep.decodes", {"greedy/64"}))
    c.sweep_decodes.push_back(DecodeConfig::parse(d));

  const auto kinds = kv.get_list("evaluate.kinds", {});
  if (!kinds.empty()) {
    c.eval_kinds.clear();
    for (const auto& k : kinds) c.eval_kinds.push_back(parse_prompt_kind(k));
  }
  c.eval_prompts = kv.get_uint("evaluate.prompts", c.eval_prompts);
  c.eval_decode = DecodeConfig::parse(kv.get("evaluate.decode", "greedy/64"));

  c.threads = static_cast<unsigned>(kv.get_uint("threads", c.threads));
  c.out_dir = kv.get("out_dir", c.out_dir.string());

  if (const auto unused = kv.unused_keys(); !unused.empty())
    fail(ErrorKind::Config, "unknown config keys: " + join(unused));
  c.derive_seeds();
  c.validate();
  return c;
} catch (const std::logic_error& e) {  // std::stoi and friends
  fail(ErrorKind::Config, std::string("invalid config value: ") + e.what());
}

std::string ExperimentConfig::to_text() const {
  std::ostringstream o;
  auto line = [&o](const std::string& k, const auto& v) { o << k << " = " << v << "\n"; };
  auto real = [](auto v) { return format_real(v); };
  line("seed", master_seed);
  line("corpus.n_examples", corpus.n_examples);
  line("corpus.min_len", corpus.min_len);
  line("corpus.max_len", corpus.max_len);
  line("corpus.content_prob", real(corpus.content_prob));
  line("split.train", real(split.train));
  line("split.val", real(split.val));
  line("split.test", real(split.test));
  line("model.n_layers", model.n_layers);
  line("model.d_model", model.d_model);
  line("model.n_heads", model.n_heads);
  line("model.d_ffn", model.d_ffn);
  line("model.max_context", model.max_context);
  for (auto [t, p] : {std::pair{&pretrain, "pretrain."}, std::pair{&finetune, "finetune."}}) {
    const std::string prefix = p;
    line(prefix + "epochs", t->epochs);
    line(prefix + "batch", t->batch);
    line(prefix + "lr", real(t->lr));
    line(prefix + "warmup_steps", t->warmup_steps);
    line(prefix + "max_examples", t->max_examples);
    line(prefix + "final_lr_fraction", real(t->final_lr_fraction));
    line(prefix + "clip_norm", real(t->clip_norm));
  }
  line("finetune.kind", to_string(finetune.finetune_kind));
  line("collect.kind", to_string(collect_kind));
  line("collect.prompts", collect_prompts);
  line("collect.layers",
       layers.empty() ? std::string("all")
                      : join(map_strings(layers, [](int l) { return std::to_string(l); })));
  line("collect.taps", join(map_strings(taps, [](TapPoint t) { return std::string(to_string(t)); })));
  line("collect.decode", collect_decode.describe());
  line("probe.hidden_width", probe_full.hidden_width);
  line("probe.dropout", real(probe_full.dropout));
  line("probe.lr", real(probe_full.lr));
  line("probe.max_epochs", probe_full.max_epochs);
  line("probe.full_batch", probe_full.batch);
  line("probe.full_patience", probe_full.patience);
  line("probe.unit_batch", probe_unit.batch);
  line("probe.unit_patience", probe_unit.patience);
  line("probe.runs", probe_runs);
  line("rank.layer", rank_layer);
  line("rank.tap", to_string(rank_tap));
  line("rank.top_m", top_m);
  line("sweep.scales", join(map_strings(scales, [](double s) { return format_real(s); })));
  line("sweep.k", join(map_strings(k_list, [](std::size_t k) { return std::to_string(k); })));
  line("sweep.scope", to_string(scope));
  line("sweep.kind", to_string(sweep_kind));
  line("sweep.prompts", sweep_prompts);
  line("sweep.decodes",
       join(map_strings(sweep_decodes, [](const DecodeConfig& d) { return d.describe(); })));
  line("evaluate.kinds", join(kind_names(eval_kinds)));
  line("evaluate.prompts", eval_prompts);
  line("evaluate.decode", eval_decode.describe());
  line("threads", threads);
  return o.str();
}

void ExperimentConfig::derive_seeds() {
  corpus.seed = derive_seed(master_seed, "corpus");
  model.seed = derive_seed(master_seed, "model-init");
  pretrain.seed = derive_seed(master_seed, "pretrain");
  finetune.seed = derive_seed(master_seed, "finetune");
  probe_full.seed = derive_seed(master_seed, "probe-grid");
  probe_unit.seed = derive_seed(master_seed, "probe-units");
}

std::vector<int> ExperimentConfig::probe_layers() const {
  if (!layers.empty()) return layers;
  std::vector<int> all;
  for (int l = 1; l <= model.n_layers; ++l) all.push_back(l);
  return all;
}

void ExperimentConfig::validate() const {
  corpus.validate();
  model.validate();
  pretrain.validate();
  if (has_finetune()) finetune.validate();
  collect_decode.validate();
  eval_decode.validate();
  for (const auto& d : sweep_decodes) d.validate();
  probe_full.validate();
  probe_unit.validate();
  if (probe_runs < 1) fail(ErrorKind::Config, "probe.runs must be at least 1");
  for (int l : probe_layers())
    if (l < 1 || l > model.n_layers)
      fail(ErrorKind::Config, "collect.layers entry " + std::to_string(l) + " out of range");
  if (taps.empty()) fail(ErrorKind::Config, "collect.taps must not be empty");
  InterventionSpec probe_spec;
  probe_spec.layer = rank_layer;
  probe_spec.tap = rank_tap;
  probe_spec.validate(model);
  for (std::size_t k : k_list)
    if (k > static_cast<std::size_t>(model.d_model))
      fail(ErrorKind::Config, "sweep.k exceeds d_model");
  if (top_m < 1 || top_m > static_cast<std::size_t>(model.d_model))
    fail(ErrorKind::Config, "rank.top_m must be in 1..d_model");
  if (collect_prompts == 0 || sweep_prompts == 0 || eval_prompts == 0)
    fail(ErrorKind::Config, "prompt counts must be positive");
  if (threads < 1) fail(ErrorKind::Config, "threads must be at least 1");
}

// ---------------------------------------------------------------- paths

fs::path paths::sweep_stem(const DecodeConfig& decode) {
  std::string tag = decode.describe();
  for (char& ch : tag)
    if (ch == '/' || ch == ':') ch = '-';
  return fs::path("sweep") / tag;
}

fs::path active_checkpoint(const ExperimentConfig& config) {
  return config.has_finetune() ? paths::kFinetune : paths::kPretrain;
}

int exit_code(const Error& error) noexcept {
  switch (error.kind()) {
    case ErrorKind::Config:
      return 1;
    case ErrorKind::Data:
    case ErrorKind::Corruption:
    case ErrorKind::Provenance:
    case ErrorKind::Length:
    case ErrorKind::Degenerate:
      return 2;
    case ErrorKind::Internal:
      break;
  }
  return 3;
}

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names = {"gen-corpus", "train",    "finetune",
                                                 "collect",    "probe",    "rank",
                                                 "sweep",      "evaluate", "report"};
  return names;
}

// ---------------------------------------------------------------- stages

namespace {

fs::path with_ext(fs::path p, const std::string& ext) { return p += ext; }

std::vector<fs::path> checkpoint_files(const fs::path& stem) {
  return {with_ext(stem, ".bin"), with_ext(stem, ".manifest")};
}

std::vector<fs::path> corpus_files() {
  return {paths::kCorpus, with_ext(paths::kCorpus, ".header")};
}

class Stage {
 public:
  Stage(std::string name, const ExperimentConfig& config, const RunOptions& options)
      : name_(std::move(name)), cfg_(config), opts_(options), root_(config.out_dir) {}

  const ExperimentConfig& cfg() const { return cfg_; }
  fs::path at(const fs::path& rel) const { return root_ / rel; }

  void log(const std::string& msg) const {
    if (opts_.log) *opts_.log << "[" << name_ << "] " << msg << std::endl;
  }

  /// Checks that `dir` was produced by `producer` and that neither its
  /// outputs nor its inputs have changed since.
  void require(const fs::path& dir, const std::string& producer) {
    const fs::path mpath = at(dir / "manifest.json");
    if (!fs::exists(mpath))
      fail(ErrorKind::Data, "missing " + (root_ / dir).string() + " artifacts; run `lenrep " +
                                producer + "` first");
    json m;
    try {
      m = json::parse(read_text_file(mpath));
    } catch (const json::exception& e) {
      fail(ErrorKind::Corruption, mpath.string() + ": " + e.what());
    }
    for (const auto& [rel, sha] : m.at("outputs").items()) {
      if (!fs::exists(at(rel)))
        fail(ErrorKind::Data, "missing " + at(rel).string() + "; run `lenrep " + producer + "`");
      if (file_sha256(at(rel)) != sha.get<std::string>())
        provenance(rel + " changed after `lenrep " + producer + "` wrote it");
    }
    for (const auto& [rel, sha] : m.at("inputs").items()) {
      if (!fs::exists(at(rel)) || file_sha256(at(rel)) != sha.get<std::string>())
        provenance(dir.string() + " was produced from a different " + rel + "; rerun `lenrep " +
                   producer + "`");
    }
    if (m.contains("checkpoint") && fs::exists(at(with_ext(active_checkpoint(cfg_), ".manifest"))) &&
        m.at("checkpoint").get<std::string>() != checkpoint_hash(at(active_checkpoint(cfg_))))
      provenance(dir.string() + " was produced from a different checkpoint; rerun `lenrep " +
                 producer + "`");
  }

  void provenance(const std::string& msg) {
    if (!opts_.override_provenance) fail(ErrorKind::Provenance, "provenance mismatch: " + msg);
    log("warning: " + msg + " (overridden)");
  }

  void input(const fs::path& rel) { inputs_.push_back(rel); }
  void inputs(const std::vector<fs::path>& rels) {
    for (const auto& r : rels) input(r);
  }
  void output(const fs::path& rel) { outputs_.push_back(rel); }
  void checkpoint(const std::string& hash) { checkpoint_ = hash; }

  void finish(const fs::path& dir, std::uint64_t seed, json extra = json::object()) {
    json m;
    m["command"] = name_;
    m["tool_version"] = kToolVersion;
    m["master_seed"] = cfg_.master_seed;
    m["stage_seed"] = seed;
    m["config"] = cfg_.to_text();
    if (!checkpoint_.empty()) m["checkpoint"] = checkpoint_;
    auto hashes = [this](const std::vector<fs::path>& rels) {
      json h = json::object();
      for (const auto& r : rels) h[r.generic_string()] = file_sha256(at(r));
      return h;
    };
    m["inputs"] = hashes(inputs_);
    m["outputs"] = hashes(outputs_);
    for (auto& [k, v] : extra.items()) m[k] = v;
    write_text_file(at(dir / "manifest.json"), m.dump(2) + "\n");
  }

 private:
  std::string name_;
  const ExperimentConfig& cfg_;
  const RunOptions& opts_;
  fs::path root_;
  std::vector<fs::path> inputs_, outputs_;
  std::string checkpoint_;
};

std::vector<CompressionExample> test_examples(const Corpus& corpus, std::size_t n) {
  std::vector<CompressionExample> out;
  for (std::size_t i = 0; i < std::min(n, corpus.split.test.size()); ++i)
    out.push_back(corpus.examples[corpus.split.test[i]]);
  if (out.empty()) fail(ErrorKind::Data, "corpus test split is empty");
  return out;
}

void stage_gen_corpus(Stage& s) {
  const auto& c = s.cfg();
  auto corpus = split_corpus(generate_corpus(c.corpus), c.split,
                             derive_seed(c.master_seed, "split"));
  write_corpus(corpus, s.at(paths::kCorpus));
  for (const auto& f : corpus_files()) s.output(f);
  s.log(std::to_string(corpus.examples.size()) + " examples, mean compression ratio " +
        format_real(mean_compression_ratio(corpus)));
  s.finish("corpus", c.corpus.seed);
}

void train_phase(Stage& s, const TrainConfig& tc, const std::string& dir_stem,
                 const fs::path& out_stem, const fs::path* from) {
  const auto& c = s.cfg();
  s.require("corpus", "gen-corpus");
  s.inputs(corpus_files());
  if (from) {
    s.require(fs::path("model") / from->filename(), "train");
    s.inputs(checkpoint_files(*from));
  }
  const Corpus corpus = read_corpus(s.at(paths::kCorpus));
  Model model = from ? load_checkpoint(s.at(*from)) : Model(c.model);
  const auto log = train(model, corpus, tc, [&](int epoch, double loss) {
    s.log("epoch " + std::to_string(epoch + 1) + "/" + std::to_string(tc.epochs) + " loss " +
          format_real(loss));
  });
  save_checkpoint(model, s.at(out_stem));
  const fs::path log_path = fs::path("model") / (dir_stem + "-log.json");
  write_text_file(s.at(log_path),
                  json{{"epoch_loss", log.epoch_loss}, {"steps", log.steps}}.dump(2) + "\n");
  for (const auto& f : checkpoint_files(out_stem)) s.output(f);
  s.output(log_path);
  s.finish(fs::path("model") / dir_stem, tc.seed);
}

struct Loaded {
  Corpus corpus;
  Model model;
  std::string checkpoint;
};

Loaded load_active(Stage& s) {
  const auto& c = s.cfg();
  const fs::path stem = active_checkpoint(c);
  s.require("corpus", "gen-corpus");
  s.require(fs::path("model") / stem.filename(), c.has_finetune() ? "finetune" : "train");
  s.inputs(corpus_files());
  s.inputs(checkpoint_files(stem));
  Loaded l{read_corpus(s.at(paths::kCorpus)), load_checkpoint(s.at(stem)),
           checkpoint_hash(s.at(stem))};
  s.checkpoint(l.checkpoint);
  return l;
}

void stage_collect(Stage& s) {
  const auto& c = s.cfg();
  const Loaded l = load_active(s);
  std::vector<PromptItem> prompts;
  for (const auto& ex : test_examples(l.corpus, c.collect_prompts))
    prompts.push_back({ex.id, render_prompt(ex, c.collect_kind)});
  CollectOptions opts;
  opts.split_seed = derive_seed(c.master_seed, "collect-split");
  opts.threads = c.threads;
  opts.provenance = {l.checkpoint, std::string(to_string(c.collect_kind)), ""};
  const auto ds =
      collect_states(l.model, prompts, c.taps, c.probe_layers(), c.collect_decode, opts);
  write_dataset(ds, s.at(paths::kDataset));
  s.output(paths::kDataset);
  s.log(std::to_string(ds.record_count()) + " records per cell from " +
        std::to_string(prompts.size()) + " prompts");
  s.finish("collect", opts.split_seed);
}

ActivationDataset load_dataset(Stage& s) {
  s.require("collect", "collect");
  s.input(paths::kDataset);
  auto ds = read_dataset(s.at(paths::kDataset));
  const fs::path stem = active_checkpoint(s.cfg());
  if (fs::exists(s.at(with_ext(stem, ".manifest")))) {
    if (auto w = provenance_warning(ds, checkpoint_hash(s.at(stem)))) s.provenance(*w);
  }
  s.checkpoint(ds.provenance.checkpoint_hash);
  return ds;
}

void stage_probe(Stage& s) {
  const auto& c = s.cfg();
  const auto ds = load_dataset(s);
  const auto report = probe_grid(ds, c.probe_layers(), c.taps, c.probe_full, c.probe_runs,
                                 c.threads);
  write_probe_report(report, s.at(paths::kGridJson), s.at(paths::kGridCsv));
  s.output(paths::kGridJson);
  s.output(paths::kGridCsv);
  s.log(std::to_string(report.cells.size()) + " cells x " + std::to_string(c.probe_runs) +
        " runs");
  s.finish("probe", c.probe_full.seed);
}

void stage_rank(Stage& s) {
  const auto& c = s.cfg();
  const auto ds = load_dataset(s);
  const auto slice = make_slice(ds, c.rank_layer, c.rank_tap);
  const auto scores = probe_per_unit(slice, c.probe_unit, c.threads);
  std::size_t k_max = 0;
  for (auto k : c.k_list) k_max = std::max(k_max, k);
  const auto ranking = rank_units(scores, k_max, c.top_m);
  write_unit_scores(scores, s.at(paths::kUnitsJson), s.at(paths::kUnitsCsv));
  json r = {{"layer", c.rank_layer},
            {"tap", to_string(c.rank_tap)},
            {"order", ranking.order()},
            {"top_m", c.top_m},
            {"avg_top_m", ranking.avg_top_m(c.top_m)}};
  for (const auto& sel : selections_from(ranking, c.k_list)) r["selections"][sel.name] = sel.units;
  write_text_file(s.at(paths::kRanking), r.dump(2) + "\n");
  for (const auto& p : {paths::kUnitsJson, paths::kUnitsCsv, paths::kRanking}) s.output(p);
  s.log("top unit " + std::to_string(ranking.order().front()) + " r2 " +
        format_real(scores.r2[ranking.order().front()]));
  s.finish("rank", c.probe_unit.seed);
}

void stage_sweep(Stage& s) {
  const auto& c = s.cfg();
  const Loaded l = load_active(s);
  s.require("rank", "rank");
  s.input(paths::kRanking);
  const json r = json::parse(read_text_file(s.at(paths::kRanking)));
  if (r.at("layer").get<int>() != c.rank_layer || r.at("tap").get<std::string>() != to_string(c.rank_tap))
    fail(ErrorKind::Data, "ranking was computed for a different layer or tap; rerun `lenrep rank`");
  std::vector<Selection> selections;
  for (std::size_t k : c.k_list)
    for (const std::string prefix : {"top-", "smallest-"}) {
      const std::string name = prefix + std::to_string(k);
      if (!r.at("selections").contains(name))
        fail(ErrorKind::Data, "ranking lacks selection " + name + "; rerun `lenrep rank`");
      selections.push_back({name, r.at("selections").at(name).get<std::vector<std::size_t>>()});
    }
  std::stable_sort(selections.begin(), selections.end(), [](const Selection& a, const Selection& b) {
    return a.name.rfind("top-", 0) == 0 && b.name.rfind("top-", 0) != 0;
  });
  InterventionSpec spec;
  spec.layer = c.rank_layer;
  spec.tap = c.rank_tap;
  spec.scope = c.scope;
  const auto examples = test_examples(l.corpus, c.sweep_prompts);
  for (const auto& decode : c.sweep_decodes) {
    const auto result = sweep_intervention(l.model, examples, c.sweep_kind, spec, c.scales,
                                           selections, decode, c.threads);
    const fs::path stem = paths::sweep_stem(decode);
    write_sweep(result, s.at(with_ext(stem, ".json")), s.at(with_ext(stem, ".csv")));
    s.output(with_ext(stem, ".json"));
    s.output(with_ext(stem, ".csv"));
    s.log(decode.describe() + ": " + std::to_string(result.cells.size()) + " cells");
  }
  s.finish("sweep", c.master_seed);
}

void stage_evaluate(Stage& s) {
  const auto& c = s.cfg();
  s.require("corpus", "gen-corpus");
  s.inputs(corpus_files());
  const Corpus corpus = read_corpus(s.at(paths::kCorpus));
  std::vector<std::pair<std::string, fs::path>> phases = {{"pretrain", paths::kPretrain}};
  if (c.has_finetune()) phases.emplace_back("finetune", paths::kFinetune);
  const auto examples = test_examples(corpus, c.eval_prompts);
  json acc;
  for (const auto& [phase, stem] : phases) {
    s.require(fs::path("model") / phase, phase == "pretrain" ? "train" : "finetune");
    s.inputs(checkpoint_files(stem));
    const Model model = load_checkpoint(s.at(stem));
    for (PromptKind kind : c.eval_kinds) {
      std::vector<GenerationOutput> outs;
      std::vector<TokenSequence> golds, sources;
      for (const auto& ex : examples) {
        outs.push_back(generate(model, render_prompt(ex, kind), c.eval_decode));
        golds.push_back(ex.gold);
        sources.push_back(ex.source);
      }
      auto report = evaluate_run(outs, golds, sources);
      report.prompt_kind = std::string(to_string(kind));
      report.decode = c.eval_decode.describe();
      const fs::path stem_out = fs::path("evaluate") / (phase + "-" + std::string(to_string(kind)));
      write_eval_json(report, s.at(with_ext(stem_out, ".json")));
      write_eval_csv(report, s.at(with_ext(stem_out, ".csv")));
      s.output(with_ext(stem_out, ".json"));
      s.output(with_ext(stem_out, ".csv"));

      const auto a = evaluate_accuracy(model, corpus, corpus.split.test, kind);
      acc[phase][std::string(to_string(kind))] = {{"token_accuracy", a.token_accuracy},
                                                  {"sequence_accuracy", a.sequence_accuracy},
                                                  {"tokens", a.tokens},
                                                  {"sequences", a.sequences}};
      s.log(phase + " " + std::string(to_string(kind)) + ": token accuracy " +
            format_real(a.token_accuracy) + ", mean delta_cr " +
            format_real(report.delta_cr.mean));
    }
  }
  write_text_file(s.at(paths::kAccuracy), acc.dump(2) + "\n");
  s.output(paths::kAccuracy);
  s.finish("evaluate", c.master_seed);
}

void stage_report(Stage& s) {
  const auto summary = write_report(s.cfg().out_dir, s.cfg());
  for (const auto& f : summary.files) s.output(f);
  for (const auto& g : summary.gaps) s.log(g);
  s.finish("report", s.cfg().master_seed);
}

// One command at a time per run directory.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) : path_(dir / ".lenrep.lock") {
    fs::create_directories(dir);
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f)
      fail(ErrorKind::Data, "run directory " + dir.string() + " is locked by another command (" +
                                path_.string() + "); remove the file if no command is running");
    std::fclose(f);
  }
  ~DirLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  fs::path path_;
};

void dispatch(const std::string& stage, const ExperimentConfig& c, const RunOptions& opts) {
  Stage s(stage, c, opts);
  if (stage == "gen-corpus") {
    stage_gen_corpus(s);
  } else if (stage == "train") {
    train_phase(s, c.pretrain, "pretrain", paths::kPretrain, nullptr);
  } else if (stage == "finetune") {
    if (!c.has_finetune()) fail(ErrorKind::Config, "finetune.epochs is 0; nothing to do");
    train_phase(s, c.finetune, "finetune", paths::kFinetune, &paths::kPretrain);
  } else if (stage == "collect") {
    stage_collect(s);
  } else if (stage == "probe") {
    stage_probe(s);
  } else if (stage == "rank") {
    stage_rank(s);
  } else if (stage == "sweep") {
    stage_sweep(s);
  } else if (stage == "evaluate") {
    stage_evaluate(s);
  } else if (stage == "report") {
    stage_report(s);
  } else {
    fail(ErrorKind::Config, "unknown command '" + stage + "'");
  }
}

}  // namespace

void run_stage(const std::string& stage, const ExperimentConfig& config, const RunOptions& options) {
  config.validate();
  if (stage != "run" &&
      std::find(stage_names().begin(), stage_names().end(), stage) == stage_names().end())
    fail(ErrorKind::Config, "unknown command '" + stage + "'");
  DirLock lock(config.out_dir);
  write_text_file(config.out_dir / "config.txt", config.to_text());
  if (stage != "run") {
    dispatch(stage, config, options);
    return;
  }
  for (const auto& name : stage_names()) {
    if (name == "finetune" && !config.has_finetune()) continue;
    dispatch(name, config, options);
  }
}

}  // namespace lenrep
