#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "mmfuse/features/container.hpp"
#include "mmfuse/features/detr_mask.hpp"
#include "mmfuse/features/split.hpp"
#include "mmfuse/features/synth.hpp"

namespace fs = std::filesystem;
using namespace mmfuse::features;

namespace {

fs::path scratch_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("mmfuse_features_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Independent reference: argmax by raw logit comparison (softmax is monotone),
// fallback scores as log-probabilities ranked by pairwise comparison.
std::vector<std::uint8_t> reference_mask(const std::vector<float>& logits, std::size_t boxes,
                                         std::size_t classes, std::size_t bg) {
  std::vector<std::uint8_t> out(boxes, 0);
  bool any = false;
  for (std::size_t b = 0; b < boxes; ++b) {
    std::size_t arg = 0;
    for (std::size_t c = 1; c < classes; ++c)
      if (logits[b * classes + c] > logits[b * classes + arg]) arg = c;
    out[b] = arg != bg;
    any = any || out[b];
  }
  if (any) return out;
  std::vector<double> score(boxes);
  for (std::size_t b = 0; b < boxes; ++b) {
    long double z = 0.0L;
    double top = -INFINITY;
    for (std::size_t c = 0; c < classes; ++c) {
      if (c == bg) continue;
      z += std::exp(static_cast<long double>(logits[b * classes + c]));
      top = std::max(top, static_cast<double>(logits[b * classes + c]));
    }
    score[b] = static_cast<double>(std::exp(static_cast<long double>(top)) / z);
  }
  for (std::size_t b = 0; b < boxes; ++b) {
    std::size_t ahead = 0;
    for (std::size_t o = 0; o < boxes; ++o)
      if (score[o] > score[b] || (score[o] == score[b] && o < b)) ++ahead;
    out[b] = ahead < kFallbackBoxes;
  }
  return out;
}

FeatureRecord tiny_record(const DatasetSpec& spec, std::uint64_t id, std::mt19937_64& rng) {
  std::normal_distribution<float> g;
  FeatureRecord r;
  r.id = id;
  r.labels.assign(spec.label_names.size(), 0);
  for (auto& y : r.labels) y = rng() % 2;
  for (const auto& ts : spec.tracks) {
    TrackData td;
    td.seq_len = 1 + rng() % ts.max_len;
    td.tokens.resize(td.seq_len * ts.dim);
    for (auto& v : td.tokens) v = g(rng);
    td.mask.assign(td.seq_len, 1);
    if (ts.has_logits) {
      td.logits.resize(td.seq_len * ts.logit_classes);
      for (auto& v : td.logits) v = g(rng);
    }
    r.tracks.push_back(td);
  }
  return r;
}

DatasetSpec small_spec() { return mami_dataset_spec(6, 4, 8); }

std::vector<double> mean_text(const FeatureSet& set, const FeatureRecord& r) {
  const std::size_t t = set.spec.find_track(TrackKind::Text);
  const std::size_t dim = set.spec.tracks[t].dim;
  std::vector<double> m(dim, 0.0);
  const TrackData& td = r.tracks[t];
  for (std::size_t k = 0; k < td.seq_len; ++k)
    for (std::size_t d = 0; d < dim; ++d) m[d] += td.tokens[k * dim + d] / td.seq_len;
  return m;
}

// Plain gradient-descent logistic regression; returns dev accuracy.
double logistic_probe(const FeatureSet& set, std::size_t label, std::size_t n_train) {
  std::vector<std::vector<double>> x;
  std::vector<double> y;
  for (const auto& r : set.records) {
    x.push_back(mean_text(set, r));
    y.push_back(r.labels[label]);
  }
  const std::size_t dim = x[0].size();
  std::vector<double> w(dim, 0.0);
  double b = 0.0;
  for (int it = 0; it < 300; ++it) {
    std::vector<double> gw(dim, 0.0);
    double gb = 0.0;
    for (std::size_t i = 0; i < n_train; ++i) {
      double z = b;
      for (std::size_t d = 0; d < dim; ++d) z += w[d] * x[i][d];
      const double err = 1.0 / (1.0 + std::exp(-z)) - y[i];
      for (std::size_t d = 0; d < dim; ++d) gw[d] += err * x[i][d];
      gb += err;
    }
    for (std::size_t d = 0; d < dim; ++d) w[d] -= 0.5 * gw[d] / n_train;
    b -= 0.5 * gb / n_train;
  }
  std::size_t correct = 0;
  for (std::size_t i = n_train; i < x.size(); ++i) {
    double z = b;
    for (std::size_t d = 0; d < dim; ++d) z += w[d] * x[i][d];
    correct += (z > 0) == (y[i] > 0.5);
  }
  return static_cast<double>(correct) / static_cast<double>(x.size() - n_train);
}

}  // namespace

TEST(DetrMask, KeepsBoxesWhoseArgmaxIsARealClass) {
  const std::size_t classes = 5, bg = 4;
  std::vector<float> logits = {
      0, 0, 0, 0, 9,  // background
      0, 7, 0, 0, 1,  // class 1
      0, 0, 0, 0, 9,  // background
  };
  auto mask = detr_object_mask(logits, 3, classes, bg);
  EXPECT_EQ(mask, (std::vector<std::uint8_t>{0, 1, 0}));
}

TEST(DetrMask, LateBoxSurvivesAmongHundred) {
  std::vector<float> logits(kObjectBoxes * kDetrClasses, 0.0f);
  for (std::size_t b = 0; b < kObjectBoxes; ++b) logits[b * kDetrClasses + 91] = 5.0f;
  logits[99 * kDetrClasses + 17] = 8.0f;
  auto mask = detr_object_mask(logits, kObjectBoxes, kDetrClasses, 91);
  EXPECT_EQ(std::count(mask.begin(), mask.end(), 1), 1);
  EXPECT_EQ(mask[99], 1);
}

TEST(DetrMask, AllBackgroundKeepsTopFour) {
  const std::size_t boxes = 6, classes = 3, bg = 2;
  std::vector<float> logits(boxes * classes, 0.0f);
  const float peaks[] = {0.5f, 3.0f, 1.0f, 2.0f, 0.1f, 2.5f};
  for (std::size_t b = 0; b < boxes; ++b) {
    logits[b * classes + 0] = peaks[b];
    logits[b * classes + bg] = 10.0f;
  }
  auto mask = detr_object_mask(logits, boxes, classes, bg);
  EXPECT_EQ(mask, (std::vector<std::uint8_t>{0, 1, 1, 1, 0, 1}));
}

TEST(DetrMask, FallbackTiesGoToLowerBoxIndex) {
  const std::size_t boxes = 6, classes = 3, bg = 2;
  std::vector<float> logits(boxes * classes, 0.0f);
  for (std::size_t b = 0; b < boxes; ++b) logits[b * classes + bg] = 4.0f;
  auto mask = detr_object_mask(logits, boxes, classes, bg);
  EXPECT_EQ(mask, (std::vector<std::uint8_t>{1, 1, 1, 1, 0, 0}));
}

TEST(DetrMask, FewerCandidatesThanFallbackKeepsAll) {
  std::vector<float> logits = {0, 0, 5, 0, 0, 5};
  auto mask = detr_object_mask(logits, 2, 3, 2);
  EXPECT_EQ(mask, (std::vector<std::uint8_t>{1, 1}));
}

TEST(DetrMask, PaddingBoxesAreNeverKept) {
  std::vector<float> logits = {9, 0, 0, 0, 0, 5, 0, 0, 5};
  std::vector<std::uint8_t> valid = {0, 1, 1};
  auto mask = detr_object_mask(logits, 3, 3, 2, valid);
  EXPECT_EQ(mask, (std::vector<std::uint8_t>{0, 1, 1}));
}

TEST(DetrMask, RejectsMalformedInput) {
  std::vector<float> logits(7, 0.0f);
  EXPECT_THROW(detr_object_mask(logits, 2, 4, 3), FeatureStoreError);
  std::vector<float> ok(8, 0.0f);
  EXPECT_THROW(detr_object_mask(ok, 2, 4, 4), FeatureStoreError);
  ok[3] = NAN;
  EXPECT_THROW(detr_object_mask(ok, 2, 4, 3), FeatureStoreError);
}

TEST(DetrMask, MatchesExhaustiveReferenceOnRandomMatrices) {
  std::mt19937_64 rng(2024);
  std::normal_distribution<float> g(0.0f, 2.0f);
  std::size_t background_only = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<float> logits(kObjectBoxes * kDetrClasses);
    for (auto& v : logits) v = g(rng);
    if (trial % 3 == 0) {
      for (std::size_t b = 0; b < kObjectBoxes; ++b) logits[b * kDetrClasses + 91] += 12.0f;
    }
    if (trial % 7 == 0) {
      for (auto& v : logits) v = std::round(v * 2.0f) / 2.0f;  // provoke ties
    }
    auto ref = reference_mask(logits, kObjectBoxes, kDetrClasses, 91);
    auto got = detr_object_mask(logits, kObjectBoxes, kDetrClasses, 91);
    ASSERT_EQ(got, ref) << "trial " << trial;
    bool all_bg = true;
    for (std::size_t b = 0; b < kObjectBoxes && all_bg; ++b) {
      const float* row = logits.data() + b * kDetrClasses;
      all_bg = std::max_element(row, row + kDetrClasses) - row == 91;
    }
    background_only += all_bg;
  }
  EXPECT_GE(background_only, 100u);
}

TEST(Container, RoundTripsHundredRecords) {
  const DatasetSpec spec = small_spec();
  std::mt19937_64 rng(7);
  std::vector<FeatureRecord> records;
  for (std::uint64_t i = 0; i < 100; ++i) records.push_back(tiny_record(spec, 10 + i, rng));
  const fs::path dir = scratch_dir("roundtrip");
  write_features(dir, spec, records);
  FeatureSet back = read_features(dir);
  EXPECT_EQ(back.spec, spec);
  EXPECT_EQ(back.records, records);
}

TEST(Container, EncodingIsByteStable) {
  const DatasetSpec spec = small_spec();
  std::mt19937_64 rng(3);
  std::vector<FeatureRecord> records = {tiny_record(spec, 1, rng), tiny_record(spec, 2, rng)};
  auto a = encode_records(spec, records);
  auto b = encode_records(spec, decode_records(spec, a, 2));
  EXPECT_EQ(a, b);
}

TEST(Container, RejectsBadMagic) {
  const DatasetSpec spec = small_spec();
  std::mt19937_64 rng(3);
  std::vector<FeatureRecord> records = {tiny_record(spec, 1, rng)};
  auto bytes = encode_records(spec, records);
  bytes[0] = 'X';
  try {
    decode_records(spec, bytes, 1);
    FAIL() << "expected an error";
  } catch (const FeatureStoreError& e) {
    EXPECT_EQ(e.code(), ErrorCode::BadMagic);
  }
}

TEST(Container, RejectsBadVersionAndTruncation) {
  const DatasetSpec spec = small_spec();
  std::mt19937_64 rng(3);
  std::vector<FeatureRecord> records = {tiny_record(spec, 1, rng)};
  auto bytes = encode_records(spec, records);
  auto versioned = bytes;
  versioned[4] = 9;
  try {
    decode_records(spec, versioned, 1);
    FAIL();
  } catch (const FeatureStoreError& e) {
    EXPECT_EQ(e.code(), ErrorCode::BadVersion);
  }
  bytes.resize(bytes.size() - 3);
  try {
    decode_records(spec, bytes, 1);
    FAIL();
  } catch (const FeatureStoreError& e) {
    EXPECT_EQ(e.code(), ErrorCode::Truncated);
  }
}

TEST(Container, RejectsOverlongText) {
  const DatasetSpec spec = small_spec();
  std::mt19937_64 rng(5);
  FeatureRecord r = tiny_record(spec, 1, rng);
  const std::size_t t = spec.find_track(TrackKind::Text);
  r.tracks[t].seq_len = 121;
  r.tracks[t].tokens.assign(121 * spec.tracks[t].dim, 0.0f);
  r.tracks[t].mask.assign(121, 1);
  std::vector<FeatureRecord> records = {r};
  try {
    encode_records(spec, records);
    FAIL();
  } catch (const FeatureStoreError& e) {
    EXPECT_EQ(e.code(), ErrorCode::Inconsistent);
    EXPECT_NE(std::string(e.what()).find("121"), std::string::npos);
  }
}

TEST(Container, DetectsChecksumMismatch) {
  const DatasetSpec spec = small_spec();
  std::mt19937_64 rng(11);
  std::vector<FeatureRecord> records = {tiny_record(spec, 1, rng), tiny_record(spec, 2, rng)};
  const fs::path dir = scratch_dir("checksum");
  write_features(dir, spec, records);
  {
    std::fstream f(dir / kRecordsFile, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(6);  // first byte of the first record id
    f.put('\x7f');
  }
  try {
    read_features(dir);
    FAIL();
  } catch (const FeatureStoreError& e) {
    EXPECT_EQ(e.code(), ErrorCode::ChecksumMismatch);
  }
}

TEST(Container, RejectsTextOnlyRecordWithoutValidTokens) {
  const DatasetSpec spec = small_spec();
  std::mt19937_64 rng(13);
  FeatureRecord r = tiny_record(spec, 1, rng);
  r.tracks[spec.find_track(TrackKind::Text)].mask.assign(
      r.tracks[spec.find_track(TrackKind::Text)].seq_len, 0);
  EXPECT_THROW(validate_record(spec, r), FeatureStoreError);
}

TEST(Container, ManifestWithoutTasksDefaultsToSingleTask) {
  nlohmann::json j = dataset_spec_to_json(fbhm_dataset_spec(4, 4, 4));
  j.erase("tasks");
  DatasetSpec spec = dataset_spec_from_json(j);
  ASSERT_EQ(spec.tasks.size(), 1u);
  EXPECT_EQ(spec.tasks[0].name, "FBHM");
  EXPECT_EQ(spec.tasks[0].labels, spec.label_names);
}

TEST(Sha256, KnownDigest) {
  const std::string abc = "abc";
  std::vector<std::uint8_t> bytes(abc.begin(), abc.end());
  EXPECT_EQ(sha256_hex(bytes), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Synth, SameSeedSameBytes) {
  SynthSpec s = mami_synth_spec(40, 16, 8, 6, 6);
  auto a = synth_generate(s, 99);
  auto b = synth_generate(s, 99);
  auto c = synth_generate(s, 100);
  EXPECT_EQ(encode_records(a.spec, a.records), encode_records(b.spec, b.records));
  EXPECT_NE(encode_records(a.spec, a.records), encode_records(c.spec, c.records));
}

TEST(Synth, ParentLabelIsOrOfChildren) {
  SynthSpec s = mami_synth_spec(200, 16, 8, 6, 6);
  auto set = synth_generate(s, 1);
  for (const auto& r : set.records) {
    const std::uint8_t any = r.labels[1] | r.labels[2] | r.labels[3] | r.labels[4];
    EXPECT_EQ(r.labels[0], any);
  }
}

TEST(Synth, RecordsPassValidationAndRespectLengths) {
  SynthSpec s = mami_synth_spec(50, 16, 8, 6, 10);
  auto set = synth_generate(s, 4);
  for (const auto& r : set.records) {
    validate_record(set.spec, r);
    EXPECT_EQ(r.tracks[0].seq_len, kImagePatchTokens);
    EXPECT_EQ(r.tracks[1].seq_len, 6u);
    EXPECT_GE(r.tracks[2].seq_len, 5u);
    EXPECT_LE(r.tracks[2].seq_len, 10u);
  }
}

TEST(Synth, SomeRecordsAreAllBackground) {
  SynthSpec s = mami_synth_spec(200, 16, 8, 6, 6);
  s.all_no_object_fraction = 0.2;
  auto set = synth_generate(s, 8);
  const TrackSpec& ts = set.spec.tracks[1];
  std::size_t fallback = 0;
  for (const auto& r : set.records) {
    auto mask = detr_object_mask(r.tracks[1].logits, r.tracks[1].seq_len, ts.logit_classes,
                                 ts.no_object_index);
    if (std::count(mask.begin(), mask.end(), 1) == static_cast<long>(kFallbackBoxes)) ++fallback;
  }
  EXPECT_GT(fallback, 10u);
}

TEST(Synth, JsonRoundTrip) {
  SynthSpec s = mami_synth_spec(12, 16);
  SynthSpec back = synth_spec_from_json(synth_spec_to_json(s));
  EXPECT_EQ(synth_spec_to_json(back), synth_spec_to_json(s));
  auto bad = synth_spec_to_json(s);
  bad["signal_strength"] = -1.0;
  EXPECT_THROW(synth_spec_from_json(bad), FeatureStoreError);
}

TEST(Synth, PlantedSignalIsLinearlyRecoverable) {
  SynthSpec s = fbhm_synth_spec(400, 16, 8, 6, 12);
  auto set = synth_generate(s, 21);
  EXPECT_GE(logistic_probe(set, 0, 300), 0.9);
}

TEST(Synth, ZeroStrengthCarriesNoSignal) {
  SynthSpec s = fbhm_synth_spec(400, 16, 8, 6, 12);
  s.signal_strength = 0.0;
  auto set = synth_generate(s, 21);
  EXPECT_LE(logistic_probe(set, 0, 300), 0.75);
}

TEST(Split, EightyTwentyOnTwoStrata) {
  std::vector<FeatureRecord> records;
  for (std::uint64_t i = 0; i < 60; ++i) records.push_back({i, {1}, {}});
  for (std::uint64_t i = 60; i < 100; ++i) records.push_back({i, {0}, {}});
  Split s = stratified_split(records, 0.8, 5);
  EXPECT_EQ(s.train.size(), 80u);
  EXPECT_EQ(s.dev.size(), 20u);
  auto count_pos = [](const std::vector<std::uint64_t>& ids) {
    return std::count_if(ids.begin(), ids.end(), [](std::uint64_t id) { return id < 60; });
  };
  EXPECT_EQ(count_pos(s.train), 48);
  EXPECT_EQ(count_pos(s.dev), 12);
  EXPECT_TRUE(std::is_sorted(s.train.begin(), s.train.end()));
  std::set<std::uint64_t> all(s.train.begin(), s.train.end());
  all.insert(s.dev.begin(), s.dev.end());
  EXPECT_EQ(all.size(), 100u);
}

TEST(Split, DeterministicPerSeedAndSingletonGoesToTrain) {
  std::vector<FeatureRecord> records;
  for (std::uint64_t i = 0; i < 30; ++i) records.push_back({i, {static_cast<std::uint8_t>(i % 2), 0}, {}});
  records.push_back({99, {1, 1}, {}});
  Split a = stratified_split(records, 0.8, 1);
  Split b = stratified_split(records, 0.8, 1);
  Split c = stratified_split(records, 0.8, 2);
  EXPECT_EQ(a.train, b.train);
  EXPECT_NE(a.train, c.train);
  EXPECT_NE(std::find(a.train.begin(), a.train.end(), 99u), a.train.end());
  EXPECT_THROW(stratified_split(records, 1.0, 1), FeatureStoreError);
}

TEST(Split, FileRoundTrip) {
  Split s{{1, 2, 5}, {3, 4}};
  const fs::path dir = scratch_dir("split");
  write_split(dir / "split.json", s, 0.8, 3);
  Split back = read_split(dir / "split.json");
  EXPECT_EQ(back.train, s.train);
  EXPECT_EQ(back.dev, s.dev);
}
