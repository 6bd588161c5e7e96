#include "mmfuse/expcli/exports.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "mmfuse/trainer/run.hpp"

namespace mmfuse::expcli {

namespace fs = std::filesystem;
using features::FeatureSet;
using features::TrackKind;
using nlohmann::json;
using trainer::Model;

std::size_t LoadedRun::dataset_index(const features::DatasetSpec& spec) const {
  const auto& ds = model->datasets();
  for (std::size_t d = 0; d < ds.size(); ++d) {
    if (ds[d] == spec) return d;
  }
  for (const auto& d : ds) {
    if (d.name == spec.name) throw ExportError("dataset " + spec.name + " differs from the one the run was trained on");
  }
  throw ExportError("the run was not trained on dataset " + spec.name);
}

LoadedRun load_run(const fs::path& run_dir, const std::string& which) {
  if (which != "best" && which != "last") throw ExportError("checkpoint must be 'best' or 'last', got '" + which + "'");
  const fs::path path = run_dir / (which == "best" ? trainer::kBestCheckpoint : trainer::kLastCheckpoint);
  if (!fs::exists(path)) throw ExportError(path.string() + " does not exist");
  LoadedRun r;
  r.meta = trainer::read_checkpoint_meta(path);
  r.config = trainer::run_config_from_json(r.meta.config);
  std::vector<features::DatasetSpec> specs;
  for (const auto& j : r.meta.datasets) specs.push_back(features::dataset_spec_from_json(j));
  r.model = std::make_unique<Model<float>>(r.config, specs, 0);
  trainer::load_checkpoint<float>(path, *r.model, nullptr);
  return r;
}

json AttentionSummary::to_json() const {
  return json{{"task", task},     {"labels", labels}, {"tracks", tracks}, {"instances", instances},
              {"layers", self.size()}, {"self", self},     {"cross", cross}};
}

namespace {

template <typename T>
void require_decoder(const Model<T>& model) {
  if (!model.config().uses_decoder()) {
    throw ExportError("the model classifies a pooled vector (CLS pooling) and has no decoder to export");
  }
}

std::vector<TrackKind> source_tracks(const trainer::RunConfig& c) {
  std::vector<TrackKind> out;
  if (c.fusion.use_image_patch) out.push_back(TrackKind::ImagePatch);
  if (c.fusion.use_object) out.push_back(TrackKind::Object);
  out.push_back(TrackKind::Text);
  return out;
}

}  // namespace

template <typename T>
std::vector<AttentionSummary> attention_summary(const Model<T>& model, std::size_t dataset, const FeatureSet& data) {
  require_decoder(model);
  const auto kinds = source_tracks(model.config());
  const std::size_t K = kinds.size();
  const std::size_t layers = model.config().heads.decoder.layers;
  const auto& task_ids = model.dataset_tasks(dataset);

  std::vector<AttentionSummary> out;
  for (std::size_t t : task_ids) {
    const auto& task = model.tasks()[t];
    AttentionSummary s;
    s.task = task.name;
    s.labels = task.labels;
    for (TrackKind k : kinds) s.tracks.emplace_back(features::to_string(k));
    const std::size_t C = task.labels.size();
    s.self.assign(layers, std::vector<double>(C * C, 0.0));
    s.cross.assign(layers, std::vector<double>(C * K, 0.0));
    out.push_back(std::move(s));
  }

  ndgrad::NoGradGuard no_grad;
  for (const auto& record : data.records) {
    trainer::InstanceRecord rec;
    model.forward(record, dataset, {}, &rec);
    std::vector<std::size_t> track_of(rec.source_kind.size());
    for (std::size_t j = 0; j < rec.source_kind.size(); ++j) {
      const auto it = std::find(kinds.begin(), kinds.end(), rec.source_kind[j]);
      if (it == kinds.end()) throw ExportError("decoder source holds a track the config does not use");
      track_of[j] = std::size_t(it - kinds.begin());
    }
    for (std::size_t t = 0; t < out.size(); ++t) {
      AttentionSummary& s = out[t];
      const auto& dr = rec.decoder.at(t);
      for (std::size_t l = 0; l < layers; ++l) {
        const auto& self = dr.self.at(l);
        for (std::size_t i = 0; i < self.weights.size(); ++i) s.self[l][i] += self.weights[i];
        const auto& cross = dr.cross.at(l);
        for (std::size_t c = 0; c < cross.rows; ++c) {
          for (std::size_t j = 0; j < cross.cols; ++j) s.cross[l][c * K + track_of[j]] += cross.at(c, j);
        }
      }
      ++s.instances;
    }
  }
  for (auto& s : out) {
    if (s.instances == 0) continue;
    const double inv = 1.0 / double(s.instances);
    for (auto& m : s.self) {
      for (double& v : m) v *= inv;
    }
    for (auto& m : s.cross) {
      for (double& v : m) v *= inv;
    }
  }
  return out;
}

template <typename T>
EmbeddingExport embedding_export(const Model<T>& model, std::size_t dataset, const FeatureSet& data) {
  require_decoder(model);
  EmbeddingExport e;
  const auto& queries = model.queries();
  const auto& task_ids = model.dataset_tasks(dataset);
  std::vector<std::string> seen;
  for (std::size_t t : task_ids) {
    for (const auto& label : model.tasks()[t].labels) {
      if (std::find(seen.begin(), seen.end(), label) != seen.end()) continue;
      seen.push_back(label);
      const std::size_t row = queries.index(label);
      const std::size_t H = queries.table.cols();
      const auto d = queries.table.data().subspan(row * H, H);
      e.queries.push_back({label, std::vector<double>(d.begin(), d.end())});
    }
  }

  ndgrad::NoGradGuard no_grad;
  for (const auto& record : data.records) {
    const auto out = model.forward(record, dataset, {});
    for (std::size_t t = 0; t < task_ids.size(); ++t) {
      const auto& task = model.tasks()[task_ids[t]];
      const auto& o = out.tasks[t];
      const std::size_t H = o.class_outputs.cols();
      for (std::size_t c = 0; c < task.labels.size(); ++c) {
        const auto d = o.class_outputs.data().subspan(c * H, H);
        e.rows.push_back({task.name, task.labels[c], record.id, o.labels[c], std::vector<double>(d.begin(), d.end())});
      }
    }
  }
  return e;
}

std::string EmbeddingExport::jsonl() const {
  std::ostringstream out;
  for (const auto& q : queries) out << json{{"kind", "query"}, {"label", q.label}, {"vector", q.query}}.dump() << '\n';
  for (const auto& r : rows) {
    out << json{{"kind", "output"}, {"task", r.task},     {"label", r.label},
                {"id", r.id},       {"target", r.target}, {"vector", r.output}}
               .dump()
        << '\n';
  }
  return out.str();
}

namespace {

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::max(std::sqrt(aa * bb), 1e-12);
}

}  // namespace

std::vector<QueryAlignment> query_alignment(const EmbeddingExport& e) {
  std::map<std::string, const QueryRow*> query;
  for (const auto& q : e.queries) query[q.label] = &q;
  std::vector<QueryAlignment> out;
  std::map<std::pair<std::string, std::string>, std::size_t> slot;
  for (const auto& r : e.rows) {
    const auto q = query.find(r.label);
    if (q == query.end()) throw ExportError("no query vector for label " + r.label);
    auto [it, fresh] = slot.try_emplace({r.task, r.label}, out.size());
    if (fresh) out.push_back({r.task, r.label});
    QueryAlignment& a = out[it->second];
    const double c = cosine(q->second->query, r.output);
    if (r.target) {
      a.positive_cosine += c;
      ++a.positives;
    } else {
      a.negative_cosine += c;
      ++a.negatives;
    }
  }
  for (auto& a : out) {
    if (a.positives) a.positive_cosine /= double(a.positives);
    if (a.negatives) a.negative_cosine /= double(a.negatives);
  }
  return out;
}

template std::vector<AttentionSummary> attention_summary<float>(const Model<float>&, std::size_t, const FeatureSet&);
template std::vector<AttentionSummary> attention_summary<double>(const Model<double>&, std::size_t,
                                                                 const FeatureSet&);
template EmbeddingExport embedding_export<float>(const Model<float>&, std::size_t, const FeatureSet&);
template EmbeddingExport embedding_export<double>(const Model<double>&, std::size_t, const FeatureSet&);

}  // namespace mmfuse::expcli
