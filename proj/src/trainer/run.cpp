#include "mmfuse/trainer/run.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "mmfuse/trainer/metrics.hpp"

namespace mmfuse::trainer {

namespace fs = std::filesystem;
using features::FeatureRecord;
using features::FeatureSet;
using nlohmann::json;

template <typename T>
std::vector<TaskScore> evaluate(const Model<T>& model, std::size_t d, const FeatureSet& data,
                                const std::vector<std::uint64_t>& ids) {
  std::unordered_map<std::uint64_t, const FeatureRecord*> by_id;
  for (const auto& r : data.records) by_id[r.id] = &r;
  const auto& task_ids = model.dataset_tasks(d);
  // probs[t][i][c], labels[t][i][c]
  std::vector<std::vector<std::vector<double>>> probs(task_ids.size());
  std::vector<std::vector<std::vector<std::uint8_t>>> labels(task_ids.size());
  for (std::uint64_t id : ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw DataError(data.spec.name + ": no record with id " + std::to_string(id));
    const auto p = model.predict(*it->second, d);
    for (std::size_t t = 0; t < task_ids.size(); ++t) {
      const auto& task = model.tasks()[task_ids[t]];
      probs[t].push_back(p[t]);
      std::vector<std::uint8_t> y;
      for (std::size_t idx : task.label_index) y.push_back(it->second->labels[idx]);
      labels[t].push_back(std::move(y));
    }
  }
  std::vector<TaskScore> out;
  for (std::size_t t = 0; t < task_ids.size(); ++t) {
    const auto& task = model.tasks()[task_ids[t]];
    TaskScore s{data.spec.name, task.name, task.single_label() ? "scoreA" : "scoreB", 0.0};
    if (task.single_label()) {
      std::vector<double> p;
      std::vector<std::uint8_t> y;
      for (std::size_t i = 0; i < probs[t].size(); ++i) {
        p.push_back(probs[t][i][0]);
        y.push_back(labels[t][i][0]);
      }
      s.value = score_a(p, y);
    } else {
      s.value = score_b(probs[t], labels[t]);
    }
    out.push_back(s);
  }
  return out;
}

StepPlan plan_steps(const std::vector<std::size_t>& train_sizes, const TrainConfig& train) {
  StepPlan p;
  for (std::size_t n : train_sizes) p.batches_per_epoch += batch_count(n, train.batch_size);
  p.total = steps_per_epoch(p.batches_per_epoch, train.accumulation_every) * train.epochs;
  p.warmup = p.total / 10;
  return p;
}

namespace {

class RunLock {
 public:
  explicit RunLock(fs::path path) : path_(std::move(path)) {
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) throw RunError(path_.string() + " exists: the run directory is owned by another process");
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
    ::close(fd);
  }
  ~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  fs::path path_;
};

void append_line(const fs::path& file, const json& line) {
  std::ofstream out(file, std::ios::app);
  out << line.dump() << '\n';
  if (!out) throw RunError("cannot append to " + file.string());
}

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::trunc);
  out << text;
  if (!out) throw RunError("cannot write " + file.string());
}

// Keeps the lines whose "epoch" is at most `epoch`.
void truncate_after_epoch(const fs::path& file, std::size_t epoch) {
  if (!fs::exists(file)) return;
  std::ifstream in(file);
  std::ostringstream kept;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (json::parse(line).at("epoch").get<std::size_t>() <= epoch) kept << line << '\n';
  }
  in.close();
  write_text(file, kept.str());
}

std::string score_key(const std::string& split, const TaskScore& s) {
  return split + "/" + s.dataset + "/" + s.task;
}

}  // namespace

RunSummary run(const RunConfig& config, const std::vector<DataSplits>& data, const fs::path& out,
               const RunOptions& options) {
  config.validate();
  if (data.empty()) throw RunError("run needs at least one dataset");
  auto log = [&](const std::string& s) {
    if (options.log) options.log(s);
  };

  fs::create_directories(out);
  RunLock lock(out / kLockFile);
  write_text(out / kIncompleteMarker, "");

  std::vector<features::DatasetSpec> specs;
  json spec_json = json::array();
  for (const auto& d : data) {
    specs.push_back(d.data.spec);
    spec_json.push_back(features::dataset_spec_to_json(d.data.spec));
  }
  const json config_json = to_json(config);
  const TrainConfig& tc = config.train;

  Model<float> model(config, specs, make_rng(tc.seed, 0, Stream::Init)());
  Madgrad<float> opt(model.store().params().size(), {tc.momentum, tc.eps});

  RunSummary summary;
  std::size_t start_epoch = 0;
  if (options.resume) {
    const fs::path last = out / kLastCheckpoint;
    if (!fs::exists(last)) throw RunError("cannot resume: " + last.string() + " is missing");
    const CheckpointMeta meta = load_checkpoint(last, model, &opt);
    if (meta.config != config_json) throw RunError("cannot resume: the run was started with another config");
    start_epoch = meta.epoch;
    for (const auto& [k, v] : meta.state.at("max").items()) summary.max_scores[k] = v.get<double>();
    for (const auto& [k, v] : meta.state.at("last").items()) summary.last_scores[k] = v.get<double>();
    summary.best_selection = meta.state.at("best_selection").get<double>();
    summary.best_epoch = meta.state.at("best_epoch").get<std::size_t>();
    truncate_after_epoch(out / kTraceFile, start_epoch);
    truncate_after_epoch(out / kMetricsFile, start_epoch);
    log("resuming after epoch " + std::to_string(start_epoch));
  } else {
    write_text(out / kTraceFile, "");
    write_text(out / kMetricsFile, "");
  }
  write_text(out / kConfigFile, config_json.dump(2) + "\n");

  std::vector<DatasetIds> train_ids;
  std::vector<std::size_t> train_sizes;
  std::vector<std::unordered_map<std::uint64_t, const FeatureRecord*>> by_id(data.size());
  for (std::size_t d = 0; d < data.size(); ++d) {
    train_ids.push_back({data[d].data.spec.name, data[d].train});
    train_sizes.push_back(data[d].train.size());
    for (const auto& r : data[d].data.records) by_id[d][r.id] = &r;
  }
  const StepPlan plan = plan_steps(train_sizes, tc);
  summary.total_steps = plan.total;
  summary.warmup_steps = plan.warmup;
  const bool has_dev = std::any_of(data.begin(), data.end(), [](const DataSplits& d) { return !d.dev.empty(); });

  for (std::size_t epoch = start_epoch; epoch < tc.epochs; ++epoch) {
    const Schedule schedule = build_schedule(train_ids, tc.batch_size, tc.seed, epoch);
    auto dropout_rng = make_rng(tc.seed, epoch, Stream::Dropout);
    const fusion::ForwardContext ctx{true, config.fusion.dropout, &dropout_rng};

    std::size_t window = 0;
    double sum_total = 0, sum_main = 0, sum_align = 0, sum_con = 0;
    for (std::size_t b = 0; b < schedule.batches.size(); ++b) {
      const Batch& batch = schedule.batches[b];
      std::vector<const FeatureRecord*> records;
      for (std::uint64_t id : batch.ids) {
        auto it = by_id[batch.dataset].find(id);
        if (it == by_id[batch.dataset].end()) {
          throw DataError(data[batch.dataset].data.spec.name + ": no record with id " + std::to_string(id));
        }
        records.push_back(it->second);
      }
      {
        const BatchLoss<float> loss = model.batch_loss(records, batch.dataset, ctx);
        loss.total.backward();
        sum_total += loss.total.item();
        for (const auto& t : loss.tasks) {
          const double n = double(loss.tasks.size());
          sum_main += t.main.item() / n;
          sum_align += t.align.item() / n;
          sum_con += t.contrastive.item() / n;
        }
      }
      ++window;
      const bool boundary = (b + 1) % tc.accumulation_every == 0 || b + 1 == schedule.batches.size();
      if (!boundary) continue;

      const std::size_t k = opt.steps();
      const double lr = lr_at(k, plan.warmup, plan.total, tc.lr);
      const double norm = clip_grad_norm(model.store(), tc.clip_norm);
      opt.step(model.store(), lr, tc.weight_decay);
      const double w = double(window);
      append_line(out / kTraceFile, json{{"step", k + 1},
                                         {"epoch", epoch + 1},
                                         {"lr", lr},
                                         {"batches", window},
                                         {"grad_norm", norm},
                                         {"loss", sum_total / w},
                                         {"main", sum_main / w},
                                         {"align", sum_align / w},
                                         {"contrastive", sum_con / w}});
      window = 0;
      sum_total = sum_main = sum_align = sum_con = 0;
    }

    double selection = 0;
    std::size_t selection_n = 0;
    for (std::size_t d = 0; d < data.size(); ++d) {
      for (const char* split : {"train", "dev", "test"}) {
        const auto& ids = std::string(split) == "train" ? data[d].train
                          : std::string(split) == "dev" ? data[d].dev
                                                        : data[d].test;
        if (ids.empty()) continue;
        for (const TaskScore& s : evaluate(model, d, data[d].data, ids)) {
          const std::string key = score_key(split, s);
          auto [it, fresh] = summary.max_scores.try_emplace(key, s.value);
          if (!fresh) it->second = std::max(it->second, s.value);
          summary.last_scores[key] = s.value;
          append_line(out / kMetricsFile, json{{"epoch", epoch + 1},
                                               {"split", split},
                                               {"dataset", s.dataset},
                                               {"task", s.task},
                                               {"metric", s.metric},
                                               {"value", s.value},
                                               {"max", it->second}});
          if (std::string(split) == (has_dev ? "dev" : "train")) {
            selection += s.value;
            ++selection_n;
          }
        }
      }
    }
    selection /= double(std::max<std::size_t>(selection_n, 1));

    summary.epochs_completed = epoch + 1;
    summary.optimizer_steps = opt.steps();
    CheckpointMeta meta;
    meta.config = config_json;
    meta.epoch = epoch + 1;
    meta.datasets = spec_json;
    if (selection > summary.best_selection) {
      summary.best_selection = selection;
      summary.best_epoch = epoch + 1;
    }
    meta.state = json{{"max", summary.max_scores},
                      {"last", summary.last_scores},
                      {"best_selection", summary.best_selection},
                      {"best_epoch", summary.best_epoch}};
    if (summary.best_epoch == epoch + 1) save_checkpoint(out / kBestCheckpoint, model, opt, meta);
    save_checkpoint(out / kLastCheckpoint, model, opt, meta);
    log("epoch " + std::to_string(epoch + 1) + "/" + std::to_string(tc.epochs) + " selection " +
        std::to_string(selection));

    if (options.stop_after_epoch && *options.stop_after_epoch == epoch + 1 && epoch + 1 < tc.epochs) {
      return summary;
    }
  }

  summary.complete = true;
  fs::remove(out / kIncompleteMarker);
  return summary;
}

template std::vector<TaskScore> evaluate<float>(const Model<float>&, std::size_t, const FeatureSet&,
                                                const std::vector<std::uint64_t>&);
template std::vector<TaskScore> evaluate<double>(const Model<double>&, std::size_t, const FeatureSet&,
                                                 const std::vector<std::uint64_t>&);

}  // namespace mmfuse::trainer
