#include "mmfuse/features/synth.hpp"

#include <cmath>
#include <random>

namespace mmfuse::features {

namespace {

std::vector<double> unit_vector(std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> v(dim);
  double norm = 0.0;
  for (auto& x : v) {
    x = gauss(rng);
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return v;
}

SynthTrack make_track(TrackKind kind, std::size_t dim, std::size_t min_len, std::size_t max_len) {
  SynthTrack t;
  t.spec.kind = kind;
  t.spec.dim = dim;
  switch (kind) {
    case TrackKind::ImagePatch:
      t.spec.name = "clip";
      t.spec.max_len = kImagePatchTokens;
      break;
    case TrackKind::Object:
      t.spec.name = "detr";
      t.spec.max_len = kObjectBoxes;
      t.spec.has_logits = true;
      t.spec.logit_classes = kDetrClasses;
      t.spec.no_object_index = kDetrClasses - 1;
      break;
    case TrackKind::Text:
      t.spec.name = "text";
      t.spec.max_len = kTextTokens;
      break;
  }
  t.min_len = min_len;
  t.max_len = max_len;
  return t;
}

}  // namespace

void SynthSpec::validate() const {
  auto fail = [](const std::string& why) { throw FeatureStoreError(ErrorCode::Config, "synth: " + why); };
  if (signal_strength < 0.0) fail("signal strength must be >= 0");
  if (noise < 0.0) fail("noise must be >= 0");
  if (label_priors.size() != label_names.size()) fail("one prior per label required");
  for (double p : label_priors)
    if (p < 0.0 || p > 1.0) fail("label priors must lie in [0, 1]");
  for (double f : {signal_token_fraction, no_object_fraction, all_no_object_fraction})
    if (f < 0.0 || f > 1.0) fail("fractions must lie in [0, 1]");
  for (const auto& t : tracks) {
    if (t.min_len < 1 || t.min_len > t.max_len || t.max_len > t.spec.max_len) {
      fail("track '" + t.spec.name + "' has an invalid length range");
    }
  }
  if (parent_label) {
    bool found = false;
    for (const auto& l : label_names) found = found || l == *parent_label;
    if (!found) fail("parent label is not a label");
  }
  dataset_spec().validate();
}

DatasetSpec SynthSpec::dataset_spec() const {
  DatasetSpec spec;
  spec.name = name;
  spec.label_names = label_names;
  spec.tasks = tasks.empty() ? std::vector<TaskSpec>{{name, label_names}} : tasks;
  for (const auto& t : tracks) spec.tracks.push_back(t.spec);
  return spec;
}

nlohmann::json synth_spec_to_json(const SynthSpec& spec) {
  nlohmann::json tracks = nlohmann::json::array();
  for (const auto& t : spec.tracks) {
    tracks.push_back({{"name", t.spec.name},
                      {"kind", std::string(to_string(t.spec.kind))},
                      {"dim", t.spec.dim},
                      {"max_len", t.spec.max_len},
                      {"has_logits", t.spec.has_logits},
                      {"logit_classes", t.spec.logit_classes},
                      {"no_object_index", t.spec.no_object_index},
                      {"min_seq_len", t.min_len},
                      {"max_seq_len", t.max_len}});
  }
  nlohmann::json tasks = nlohmann::json::array();
  for (const auto& task : spec.tasks) tasks.push_back({{"name", task.name}, {"labels", task.labels}});
  nlohmann::json j = {{"name", spec.name},
                      {"record_count", spec.record_count},
                      {"label_names", spec.label_names},
                      {"label_priors", spec.label_priors},
                      {"tasks", tasks},
                      {"tracks", tracks},
                      {"signal_strength", spec.signal_strength},
                      {"noise", spec.noise},
                      {"signal_token_fraction", spec.signal_token_fraction},
                      {"no_object_fraction", spec.no_object_fraction},
                      {"all_no_object_fraction", spec.all_no_object_fraction},
                      {"first_id", spec.first_id}};
  if (spec.parent_label) j["parent_label"] = *spec.parent_label;
  return j;
}

SynthSpec synth_spec_from_json(const nlohmann::json& j) {
  try {
    SynthSpec s;
    s.name = j.at("name").get<std::string>();
    s.record_count = j.at("record_count").get<std::size_t>();
    s.label_names = j.at("label_names").get<std::vector<std::string>>();
    s.label_priors = j.at("label_priors").get<std::vector<double>>();
    for (const auto& t : j.value("tasks", nlohmann::json::array())) {
      s.tasks.push_back({t.at("name").get<std::string>(), t.at("labels").get<std::vector<std::string>>()});
    }
    for (const auto& t : j.at("tracks")) {
      SynthTrack st = make_track(track_kind_from_string(t.at("kind").get<std::string>()),
                                 t.at("dim").get<std::size_t>(), t.at("min_seq_len").get<std::size_t>(),
                                 t.at("max_seq_len").get<std::size_t>());
      st.spec.name = t.value("name", st.spec.name);
      st.spec.max_len = t.value("max_len", st.spec.max_len);
      st.spec.has_logits = t.value("has_logits", st.spec.has_logits);
      st.spec.logit_classes = t.value("logit_classes", st.spec.logit_classes);
      st.spec.no_object_index = t.value("no_object_index", st.spec.no_object_index);
      s.tracks.push_back(st);
    }
    s.signal_strength = j.value("signal_strength", s.signal_strength);
    s.noise = j.value("noise", s.noise);
    s.signal_token_fraction = j.value("signal_token_fraction", s.signal_token_fraction);
    s.no_object_fraction = j.value("no_object_fraction", s.no_object_fraction);
    s.all_no_object_fraction = j.value("all_no_object_fraction", s.all_no_object_fraction);
    s.first_id = j.value("first_id", s.first_id);
    if (j.contains("parent_label")) s.parent_label = j.at("parent_label").get<std::string>();
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FeatureStoreError(ErrorCode::Config, std::string("synth spec: ") + e.what());
  }
}

SynthSpec mami_synth_spec(std::size_t records, std::size_t text_dim, std::size_t image_dim,
                          std::size_t max_boxes, std::size_t max_text) {
  SynthSpec s;
  s.name = "MAMI";
  s.record_count = records;
  const DatasetSpec roster = mami_dataset_spec(image_dim, image_dim, text_dim);
  s.label_names = roster.label_names;
  s.label_priors = {0.5, 0.3, 0.35, 0.3, 0.2};
  s.tasks = roster.tasks;
  s.parent_label = "misogynous";
  s.tracks = {make_track(TrackKind::ImagePatch, image_dim, kImagePatchTokens, kImagePatchTokens),
              make_track(TrackKind::Object, image_dim, max_boxes, max_boxes),
              make_track(TrackKind::Text, text_dim, std::max<std::size_t>(1, max_text / 2), max_text)};
  return s;
}

SynthSpec fbhm_synth_spec(std::size_t records, std::size_t text_dim, std::size_t image_dim,
                          std::size_t max_boxes, std::size_t max_text) {
  SynthSpec s = mami_synth_spec(records, text_dim, image_dim, max_boxes, max_text);
  const DatasetSpec roster = fbhm_dataset_spec(image_dim, image_dim, text_dim);
  s.name = "FBHM";
  s.label_names = roster.label_names;
  s.label_priors = {0.4};
  s.tasks = roster.tasks;
  s.parent_label.reset();
  s.first_id = 1'000'000;
  return s;
}

FeatureSet synth_generate(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  const std::size_t n_labels = spec.label_names.size();
  // directions[track][label]
  std::vector<std::vector<std::vector<double>>> directions(spec.tracks.size());
  for (std::size_t t = 0; t < spec.tracks.size(); ++t)
    for (std::size_t c = 0; c < n_labels; ++c)
      directions[t].push_back(unit_vector(spec.tracks[t].spec.dim, rng));

  std::size_t parent = n_labels;
  if (spec.parent_label) {
    for (std::size_t c = 0; c < n_labels; ++c)
      if (spec.label_names[c] == *spec.parent_label) parent = c;
  }

  FeatureSet set;
  set.spec = spec.dataset_spec();
  set.records.reserve(spec.record_count);
  for (std::size_t i = 0; i < spec.record_count; ++i) {
    FeatureRecord rec;
    rec.id = spec.first_id + i;
    rec.labels.assign(n_labels, 0);
    for (std::size_t c = 0; c < n_labels; ++c) rec.labels[c] = unif(rng) < spec.label_priors[c];
    if (parent < n_labels) {
      std::uint8_t any = 0;
      for (std::size_t c = 0; c < n_labels; ++c)
        if (c != parent) any |= rec.labels[c];
      rec.labels[parent] = any;
    }

    for (std::size_t t = 0; t < spec.tracks.size(); ++t) {
      const SynthTrack& st = spec.tracks[t];
      const std::size_t dim = st.spec.dim;
      TrackData td;
      std::uniform_int_distribution<std::size_t> len(st.min_len, st.max_len);
      td.seq_len = len(rng);
      td.tokens.resize(td.seq_len * dim);
      td.mask.assign(td.seq_len, 1);
      for (std::size_t k = 0; k < td.seq_len; ++k) {
        const bool carries = unif(rng) < spec.signal_token_fraction;
        for (std::size_t d = 0; d < dim; ++d) {
          double v = spec.noise * gauss(rng);
          if (carries) {
            for (std::size_t c = 0; c < n_labels; ++c) {
              const double sign = rec.labels[c] ? 1.0 : -1.0;
              v += spec.signal_strength * sign * directions[t][c][d];
            }
          }
          td.tokens[k * dim + d] = static_cast<float>(v);
        }
      }
      if (st.spec.has_logits) {
        const std::size_t classes = st.spec.logit_classes;
        const bool all_background = unif(rng) < spec.all_no_object_fraction;
        std::uniform_int_distribution<std::size_t> real_class(0, classes - 2);
        td.logits.resize(td.seq_len * classes);
        for (std::size_t k = 0; k < td.seq_len; ++k) {
          for (std::size_t c = 0; c < classes; ++c) td.logits[k * classes + c] = static_cast<float>(gauss(rng));
          const bool background = all_background || unif(rng) < spec.no_object_fraction;
          std::size_t winner = st.spec.no_object_index;
          if (!background) {
            winner = real_class(rng);
            if (winner >= st.spec.no_object_index) ++winner;
          }
          td.logits[k * classes + winner] += 6.0f;
        }
      }
      rec.tracks.push_back(std::move(td));
    }
    set.records.push_back(std::move(rec));
  }
  return set;
}

}  // namespace mmfuse::features
