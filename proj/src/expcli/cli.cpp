#include "mmfuse/expcli/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <optional>
#include <set>

#include "mmfuse/expcli/ablation.hpp"
#include "mmfuse/expcli/exports.hpp"
#include "mmfuse/expcli/report.hpp"
#include "mmfuse/features/split.hpp"
#include "mmfuse/features/synth.hpp"
#include "mmfuse/trainer/run.hpp"

namespace mmfuse::expcli {

namespace fs = std::filesystem;
using nlohmann::json;
using trainer::RunConfig;

namespace {

// Usage problems found after parsing (bad config files, missing inputs).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

constexpr const char* kSplitFile = "split.json";

RunConfig read_config(const std::string& file) {
  std::ifstream in(file);
  if (!in) throw UsageError("cannot read config " + file);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw UsageError(file + ": " + e.what());
  }
  try {
    return trainer::run_config_from_json(j);
  } catch (const fusion::ConfigError& e) {
    throw UsageError(file + ": " + e.what());
  }
}

void write_file(const fs::path& file, const std::string& text) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::trunc);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + file.string());
}

// Train/dev ids come from <dir>/split.json when present, otherwise from a
// stratified split seeded with `seed`. Test records are appended to the
// dataset and listed as the test split.
trainer::DataSplits load_splits(const fs::path& dir, const std::string& test_dir, std::uint64_t seed, double ratio) {
  trainer::DataSplits s;
  s.data = features::read_features(dir);
  const features::Split split = fs::exists(dir / kSplitFile)
                                    ? features::read_split(dir / kSplitFile)
                                    : features::stratified_split(s.data.records, ratio, seed);
  s.train = split.train;
  s.dev = split.dev;
  if (!test_dir.empty()) {
    features::FeatureSet test = features::read_features(test_dir);
    if (!(test.spec == s.data.spec)) throw UsageError(test_dir + ": test features do not match " + dir.string());
    std::set<std::uint64_t> ids;
    for (const auto& r : s.data.records) ids.insert(r.id);
    for (auto& r : test.records) {
      if (!ids.insert(r.id).second) throw UsageError(test_dir + ": record id " + std::to_string(r.id) + " also in " + dir.string());
      s.test.push_back(r.id);
      s.data.records.push_back(std::move(r));
    }
  }
  return s;
}

struct DataArgs {
  std::string data;
  std::string aux;
  std::string test;
  double ratio = 0.8;
};

void add_data_flags(CLI::App* cmd, DataArgs& a, bool required) {
  cmd->add_option("--data", a.data, "primary feature directory")->required(required);
  cmd->add_option("--aux", a.aux, "second dataset, used when multi_task is Yes");
  cmd->add_option("--test", a.test, "test feature directory for the primary dataset");
  cmd->add_option("--split-ratio", a.ratio, "train share when the data has no split.json")
      ->check(CLI::Range(0.0, 1.0));
}

std::vector<trainer::DataSplits> load_data(const DataArgs& a, const RunConfig& config) {
  std::vector<trainer::DataSplits> data;
  data.push_back(load_splits(a.data, a.test, config.train.seed, a.ratio));
  if (config.multi_task) {
    if (a.aux.empty()) throw UsageError("multi_task is Yes but no --aux dataset was given");
    data.push_back(load_splits(a.aux, "", config.train.seed, a.ratio));
  }
  return data;
}

json summary_json(const trainer::RunSummary& s) {
  return json{{"epochs_completed", s.epochs_completed}, {"optimizer_steps", s.optimizer_steps},
              {"total_steps", s.total_steps},           {"warmup_steps", s.warmup_steps},
              {"complete", s.complete},                 {"best_epoch", s.best_epoch},
              {"max", s.max_scores}};
}

trainer::RunSummary train_into(const RunConfig& config, const DataArgs& a, const fs::path& out, bool resume,
                               std::ostream& err) {
  const auto data = load_data(a, config);
  trainer::RunOptions opts;
  opts.resume = resume;
  opts.log = [&err](const std::string& line) { err << line << '\n'; };
  return trainer::run(config, data, out, opts);
}

struct Args {
  // gen-synth
  std::string kind;
  std::string spec_file;
  std::size_t records = 400;
  std::size_t text_dim = 32;
  std::size_t image_dim = 32;
  std::size_t max_boxes = 24;
  std::size_t max_text = 24;
  double signal = 3.0;
  std::uint64_t seed = 0;
  // shared
  std::string out;
  std::string config;
  std::string run;
  std::string checkpoint = "best";
  DataArgs data;
  bool resume = false;
  // split
  double ratio = 0.8;
  // ablation
  int round = 0;
  bool plan_only = false;
  bool table_only = false;
  // eval
  std::string ids = "all";
  // stats
  std::vector<std::string> runs;
};

int gen_synth(const Args& a, std::ostream& out) {
  features::SynthSpec spec;
  if (!a.spec_file.empty()) {
    std::ifstream in(a.spec_file);
    if (!in) throw UsageError("cannot read synth spec " + a.spec_file);
    try {
      spec = features::synth_spec_from_json(json::parse(in));
    } catch (const json::exception& e) {
      throw UsageError(a.spec_file + ": " + e.what());
    }
  } else if (a.kind == "mami") {
    spec = features::mami_synth_spec(a.records, a.text_dim, a.image_dim, a.max_boxes, a.max_text);
    spec.signal_strength = a.signal;
  } else {
    spec = features::fbhm_synth_spec(a.records, a.text_dim, a.image_dim, a.max_boxes, a.max_text);
    spec.signal_strength = a.signal;
  }
  const auto set = features::synth_generate(spec, a.seed);
  features::write_features(a.out, set.spec, set.records);
  out << json{{"dataset", set.spec.name}, {"records", set.records.size()}, {"dir", a.out}}.dump() << '\n';
  return kExitOk;
}

int split_cmd(const Args& a, std::ostream& out) {
  const auto set = features::read_features(a.data.data);
  const auto s = features::stratified_split(set.records, a.ratio, a.seed);
  const fs::path file = a.out.empty() ? fs::path(a.data.data) / kSplitFile : fs::path(a.out);
  features::write_split(file, s, a.ratio, a.seed);
  out << json{{"train", s.train.size()}, {"dev", s.dev.size()}, {"file", file.string()}}.dump() << '\n';
  return kExitOk;
}

int train_cmd(const Args& a, std::ostream& out, std::ostream& err) {
  const RunConfig config = read_config(a.config);
  const auto s = train_into(config, a.data, a.out, a.resume, err);
  out << summary_json(s).dump() << '\n';
  return kExitOk;
}

int eval_cmd(const Args& a, std::ostream& out) {
  const LoadedRun r = load_run(a.run, a.checkpoint);
  const auto set = features::read_features(a.data.data);
  const std::size_t d = r.dataset_index(set.spec);
  std::vector<std::uint64_t> ids;
  if (a.ids == "all") {
    for (const auto& rec : set.records) ids.push_back(rec.id);
  } else {
    const fs::path file = fs::path(a.data.data) / kSplitFile;
    if (!fs::exists(file)) throw UsageError("--ids " + a.ids + " needs " + file.string());
    const auto split = features::read_split(file);
    ids = a.ids == "train" ? split.train : split.dev;
  }
  for (const auto& s : trainer::evaluate(*r.model, d, set, ids)) {
    out << json{{"dataset", s.dataset}, {"task", s.task}, {"metric", s.metric}, {"value", s.value},
                {"records", ids.size()}}
               .dump()
        << '\n';
  }
  return kExitOk;
}

int ablation_cmd(const Args& a, std::ostream& out, std::ostream& err) {
  const RunConfig base = a.config.empty() ? RunConfig{} : read_config(a.config);
  const auto grid = ablation_round(a.round, base);
  if (a.plan_only) {
    for (const auto& e : grid) out << json{{"round", a.round}, {"id", e.id}, {"config", trainer::to_json(e.config)}}.dump() << '\n';
    return kExitOk;
  }
  if (a.out.empty()) throw UsageError("ablation needs --out unless --plan-only is given");
  const fs::path root = a.out;
  std::vector<std::pair<std::string, fs::path>> runs;
  for (const auto& e : grid) runs.emplace_back(e.id, root / e.id);
  if (!a.table_only) {
    if (a.data.data.empty()) throw UsageError("ablation needs --data to train");
    for (const auto& e : grid) {
      const fs::path dir = root / e.id;
      const bool started = fs::exists(dir / trainer::kMetricsFile);
      const bool unfinished = fs::exists(dir / trainer::kIncompleteMarker);
      if (started && !unfinished) {
        err << "experiment " << e.id << " already complete\n";
        continue;
      }
      const bool resume = unfinished && fs::exists(dir / trainer::kLastCheckpoint);
      err << "experiment " << e.id << (resume ? " resuming\n" : " starting\n");
      train_into(e.config, a.data, dir, resume, err);
    }
  }
  const RoundTable table = render_round_table(load_complete_runs(runs));
  const std::string stem = "round" + std::to_string(a.round);
  write_file(root / (stem + ".txt"), table.text());
  write_file(root / (stem + ".jsonl"), table.jsonl());
  out << table.text();
  return kExitOk;
}

int viz_attention_cmd(const Args& a, std::ostream& out) {
  const LoadedRun r = load_run(a.run, a.checkpoint);
  const auto set = features::read_features(a.data.data);
  std::string text;
  for (const auto& s : attention_summary(*r.model, r.dataset_index(set.spec), set)) text += s.to_json().dump() + "\n";
  write_file(a.out, text);
  out << json{{"file", a.out}, {"records", set.records.size()}}.dump() << '\n';
  return kExitOk;
}

int viz_embeddings_cmd(const Args& a, std::ostream& out) {
  const LoadedRun r = load_run(a.run, a.checkpoint);
  const auto set = features::read_features(a.data.data);
  const EmbeddingExport e = embedding_export(*r.model, r.dataset_index(set.spec), set);
  write_file(a.out, e.jsonl());
  out << json{{"file", a.out}, {"queries", e.queries.size()}, {"outputs", e.rows.size()}}.dump() << '\n';
  return kExitOk;
}

int stats_cmd(const Args& a, std::ostream& out, std::ostream& err) {
  std::string text;
  for (const auto& dir : a.runs) {
    const std::string id = fs::path(dir).lexically_normal().filename().string();
    for (const auto& s : read_score_series(dir, id.empty() ? dir : id)) {
      const SeriesStats st = series_stats(s.scores);
      for (const auto& w : st.warnings) err << "warning: " << s.run << " " << s.split << "/" << s.task << ": " << w << '\n';
      text += stats_to_json(s, st).dump() + "\n";
    }
  }
  if (a.out.empty()) {
    out << text;
  } else {
    write_file(a.out, text);
    out << json{{"file", a.out}}.dump() << '\n';
  }
  return kExitOk;
}

void error_line(std::ostream& err, const char* kind, const std::string& message) {
  err << json{{"error", kind}, {"message", message}}.dump() << '\n';
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-modal meme classification: training, ablations and exports", "mmfuse"};
  app.require_subcommand(1);
  Args a;

  auto* gen = app.add_subcommand("gen-synth", "write a synthetic feature directory");
  auto* kind = gen->add_option("--kind", a.kind, "preset")->check(CLI::IsMember({"mami", "fbhm"}));
  auto* spec = gen->add_option("--spec", a.spec_file, "synth spec JSON instead of a preset");
  kind->excludes(spec);
  gen->add_option("--records", a.records)->check(CLI::PositiveNumber);
  gen->add_option("--text-dim", a.text_dim)->check(CLI::PositiveNumber);
  gen->add_option("--image-dim", a.image_dim)->check(CLI::PositiveNumber);
  gen->add_option("--max-boxes", a.max_boxes)->check(CLI::PositiveNumber);
  gen->add_option("--max-text", a.max_text)->check(CLI::PositiveNumber);
  gen->add_option("--signal", a.signal);
  gen->add_option("--seed", a.seed);
  gen->add_option("--out", a.out)->required();

  auto* split = app.add_subcommand("split", "write a stratified train/dev split");
  split->add_option("--data", a.data.data)->required();
  split->add_option("--ratio", a.ratio)->check(CLI::Range(0.0, 1.0));
  split->add_option("--seed", a.seed);
  split->add_option("--out", a.out, "defaults to <data>/split.json");

  auto* train = app.add_subcommand("train", "train one configuration");
  train->add_option("--config", a.config)->required();
  add_data_flags(train, a.data, true);
  train->add_option("--out", a.out)->required();
  train->add_flag("--resume", a.resume, "continue from last.ckpt");

  auto* eval = app.add_subcommand("eval", "score a trained run on a feature directory");
  eval->add_option("--run", a.run)->required();
  eval->add_option("--data", a.data.data)->required();
  eval->add_option("--checkpoint", a.checkpoint)->check(CLI::IsMember({"best", "last"}));
  eval->add_option("--ids", a.ids, "all records or one side of <data>/split.json")
      ->check(CLI::IsMember({"all", "train", "dev"}));

  auto* abl = app.add_subcommand("ablation", "run one ablation round and render its table");
  abl->add_option("--round", a.round)->required()->check(CLI::Range(1, kRounds));
  abl->add_option("--config", a.config, "base config for the axes to override");
  add_data_flags(abl, a.data, false);
  abl->add_option("--out", a.out);
  abl->add_flag("--plan-only", a.plan_only, "print the experiment configs and exit");
  abl->add_flag("--table-only", a.table_only, "render the table from finished runs");

  auto* att = app.add_subcommand("viz-attention", "export mean decoder attention");
  auto* emb = app.add_subcommand("viz-embeddings", "export decoder outputs and class queries");
  for (auto* cmd : {att, emb}) {
    cmd->add_option("--run", a.run)->required();
    cmd->add_option("--data", a.data.data)->required();
    cmd->add_option("--checkpoint", a.checkpoint)->check(CLI::IsMember({"best", "last"}));
    cmd->add_option("--out", a.out)->required();
  }

  auto* stats = app.add_subcommand("stats", "mean, 95% CI and box summary of per-epoch scores");
  stats->add_option("--run", a.runs, "run directory (repeatable)")->required();
  stats->add_option("--out", a.out);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    error_line(err, "usage", e.what());
    return kExitUsage;
  }

  try {
    if (gen->parsed()) {
      if (a.kind.empty() && a.spec_file.empty()) throw UsageError("gen-synth needs --kind or --spec");
      return gen_synth(a, out);
    }
    if (split->parsed()) return split_cmd(a, out);
    if (train->parsed()) return train_cmd(a, out, err);
    if (eval->parsed()) return eval_cmd(a, out);
    if (abl->parsed()) return ablation_cmd(a, out, err);
    if (att->parsed()) return viz_attention_cmd(a, out);
    if (emb->parsed()) return viz_embeddings_cmd(a, out);
    if (stats->parsed()) return stats_cmd(a, out, err);
  } catch (const UsageError& e) {
    error_line(err, "usage", e.what());
    return kExitUsage;
  } catch (const fusion::ConfigError& e) {
    error_line(err, "usage", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    error_line(err, "runtime", e.what());
    return kExitRuntime;
  }
  error_line(err, "usage", "no subcommand");
  return kExitUsage;
}

}  // namespace mmfuse::expcli
