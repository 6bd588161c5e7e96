#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "mmfuse/features/synth.hpp"
#include "mmfuse/trainer/metrics.hpp"
#include "mmfuse/trainer/run.hpp"

namespace fs = std::filesystem;
namespace nd = mmfuse::ndgrad;
using namespace mmfuse;
using namespace mmfuse::trainer;

namespace {

// F1 from precision and recall, counted cell by cell.
double f1_reference(const std::vector<int>& pred, const std::vector<int>& truth, int positive) {
  int tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] == positive, t = truth[i] == positive;
    tp += p && t;
    fp += p && !t;
    fn += !p && t;
  }
  const double precision = tp + fp ? double(tp) / (tp + fp) : 0.0;
  const double recall = tp + fn ? double(tp) / (tp + fn) : 0.0;
  return precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("mmfuse_trainer_" + name);
  fs::remove_all(dir);
  return dir;
}

RunConfig tiny_config(fusion::Pooling pooling = fusion::Pooling::None) {
  RunConfig c;
  c.fusion.hidden_dim = 8;
  c.fusion.variant = pooling == fusion::Pooling::Cls ? fusion::EncoderVariant::Shared : fusion::EncoderVariant::Multi;
  c.fusion.pooling = pooling;
  c.fusion.shared = c.fusion.image_patch = c.fusion.object = c.fusion.text = {1, 2};
  c.fusion.ff_multiplier = 2;
  c.fusion.dropout = 0.1;
  c.heads.decoder = {1, 2};
  c.heads.mlp_hidden = 8;
  c.losses = {true, true};
  c.train.batch_size = 4;
  c.train.epochs = 3;
  c.train.accumulation_every = 2;
  c.train.lr = 1e-3;
  c.train.seed = 11;
  return c;
}

features::FeatureSet tiny_mami(std::size_t n, std::uint64_t seed = 3) {
  return features::synth_generate(features::mami_synth_spec(n, 8, 6, 6, 6), seed);
}

features::FeatureSet tiny_fbhm(std::size_t n, std::uint64_t seed = 4) {
  return features::synth_generate(features::fbhm_synth_spec(n, 8, 6, 6, 6), seed);
}

DataSplits splits_of(const features::FeatureSet& set, std::size_t dev_every = 4) {
  DataSplits d;
  d.data = set;
  for (std::size_t i = 0; i < set.records.size(); ++i)
    (i % dev_every == 0 ? d.dev : d.train).push_back(set.records[i].id);
  return d;
}

std::vector<const features::FeatureRecord*> first_records(const features::FeatureSet& set, std::size_t n) {
  std::vector<const features::FeatureRecord*> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(&set.records[i]);
  return out;
}

}  // namespace

TEST(Metrics, HandCases) {
  std::vector<double> p = {1, 0, 0, 0};
  std::vector<std::uint8_t> y = {1, 1, 0, 0};
  EXPECT_NEAR(score_a(p, y), (2.0 / 3 + 4.0 / 5) / 2, 1e-12);
  EXPECT_EQ(score_a(std::vector<double>{0.9, 0.1}, std::vector<std::uint8_t>{1, 0}), 1.0);
  EXPECT_EQ(score_a(std::vector<double>{0.9, 0.8}, std::vector<std::uint8_t>{0, 0}), 0.0);
  EXPECT_THROW(score_a({}, {}), MetricError);
}

TEST(Metrics, ScoreBWeightsBySupport) {
  // Label 0: 3 positives, tp 2 fn 1 -> F1 0.8. Label 1: 1 positive, tp 1 fp 3 -> F1 0.4.
  std::vector<std::vector<double>> p = {{1, 1}, {1, 1}, {0, 1}, {0, 1}, {0, 0}};
  std::vector<std::vector<std::uint8_t>> y = {{1, 1}, {1, 0}, {1, 0}, {0, 0}, {0, 0}};
  EXPECT_NEAR(score_b(p, y), (3 * 0.8 + 1 * 0.4) / 4, 1e-12);
  EXPECT_EQ(score_b(std::vector<std::vector<double>>{{0.7}}, std::vector<std::vector<std::uint8_t>>{{1}}), 1.0);
  EXPECT_THROW(score_b(std::vector<std::vector<double>>{{0.7}}, std::vector<std::vector<std::uint8_t>>{{0}}),
               MetricError);
}

TEST(Metrics, MatchBruteForceOnRandomSets) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng() % 40, c = 1 + rng() % 5;
    std::vector<std::vector<double>> p(n, std::vector<double>(c));
    std::vector<std::vector<std::uint8_t>> y(n, std::vector<std::uint8_t>(c));
    for (auto& row : p)
      for (auto& v : row) v = u(rng);
    for (auto& row : y)
      for (auto& v : row) v = u(rng) < 0.4;
    y[0][0] = 1;

    std::vector<double> p0;
    std::vector<std::uint8_t> y0;
    std::vector<int> pred0, truth0;
    for (std::size_t i = 0; i < n; ++i) {
      p0.push_back(p[i][0]);
      y0.push_back(y[i][0]);
      pred0.push_back(p[i][0] >= 0.5);
      truth0.push_back(y[i][0]);
    }
    const double a_ref = (f1_reference(pred0, truth0, 1) + f1_reference(pred0, truth0, 0)) / 2;
    ASSERT_NEAR(score_a(p0, y0), a_ref, 1e-9);

    double weighted = 0, support = 0;
    for (std::size_t k = 0; k < c; ++k) {
      std::vector<int> pred, truth;
      for (std::size_t i = 0; i < n; ++i) {
        pred.push_back(p[i][k] >= 0.5);
        truth.push_back(y[i][k]);
      }
      const double s = double(std::count(truth.begin(), truth.end(), 1));
      weighted += s * f1_reference(pred, truth, 1);
      support += s;
    }
    ASSERT_NEAR(score_b(p, y), weighted / support, 1e-9);
  }
}

TEST(LearningRate, Anchors) {
  EXPECT_EQ(lr_at(0, 10, 110, 1.0), 0.0);
  EXPECT_EQ(lr_at(5, 10, 110, 1.0), 0.5);
  EXPECT_EQ(lr_at(10, 10, 110, 1.0), 1.0);
  EXPECT_EQ(lr_at(60, 10, 110, 1.0), 0.5);
  EXPECT_EQ(lr_at(110, 10, 110, 1.0), 0.0);
  EXPECT_EQ(lr_at(0, 0, 10, 2e-4), 2e-4);
}

TEST(Madgrad, ZeroGradientLeavesParameterUnchanged) {
  std::vector<double> x = {1.5, -2.0};
  const std::vector<double> g = {0.0, 0.0};
  MadgradSlot slot;
  for (std::size_t k = 0; k < 100; ++k) madgrad_update(x, g, slot, k, 0.1, {});
  EXPECT_EQ(x[0], 1.5);
  EXPECT_EQ(x[1], -2.0);
  EXPECT_THROW(madgrad_update(x, g, slot, 0, -1.0, {}), std::invalid_argument);
}

TEST(Madgrad, ConvergesOnQuadratic) {
  std::vector<double> x = {0.0};
  MadgradSlot slot;
  for (std::size_t k = 0; k < 2000; ++k) {
    const std::vector<double> g = {2 * (x[0] - 3)};
    madgrad_update(x, g, slot, k, 0.1, {});
  }
  EXPECT_LE(std::abs(x[0] - 3), 1e-2);
}

TEST(Madgrad, ConvergesOnLeastSquares) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> g;
  Eigen::MatrixXd A = Eigen::MatrixXd::Identity(8, 8);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) A(i, j) += 0.1 * g(rng);
  Eigen::VectorXd b(8);
  for (int i = 0; i < 8; ++i) b(i) = g(rng);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A);
  ASSERT_LT(svd.singularValues()(0) / svd.singularValues()(7), 3.0);

  std::vector<double> x(8, 0.0);
  MadgradSlot slot;
  double norm = 0;
  std::size_t k = 0;
  for (; k < 2000; ++k) {
    const Eigen::VectorXd grad = 2 * A.transpose() * (A * Eigen::Map<Eigen::VectorXd>(x.data(), 8) - b);
    norm = grad.norm();
    if (norm <= 1e-3) break;
    madgrad_update(x, std::vector<double>(grad.data(), grad.data() + 8), slot, k, 0.05, {});
  }
  EXPECT_LE(norm, 1e-3) << "after " << k << " steps";
}

TEST(Clipping, ScalesOnlyAboveThreshold) {
  nd::ParamStore<double> store(1);
  auto a = store.constant("a.W", {2}, 0.0, nd::ParamGroup::Weight);
  auto b = store.constant("a.b", {2}, 0.0, nd::ParamGroup::Bias);
  auto set = [&](double x0, double x1, double y0, double y1) {
    auto ga = a.mutable_grad();
    auto gb = b.mutable_grad();
    ga[0] = x0, ga[1] = x1, gb[0] = y0, gb[1] = y1;
  };
  set(0.6, 0.0, 0.0, 0.8);
  EXPECT_NEAR(clip_grad_norm(store, 0.5), 1.0, 1e-15);
  EXPECT_NEAR(a.grad()[0], 0.3, 1e-15);
  EXPECT_NEAR(b.grad()[1], 0.4, 1e-15);
  EXPECT_LE(global_grad_norm(store), 0.5 + 1e-6);
  set(0.18, 0.0, 0.0, 0.24);
  EXPECT_NEAR(clip_grad_norm(store, 0.5), 0.3, 1e-15);
  EXPECT_EQ(a.grad()[0], 0.18);
  set(std::nan(""), 0, 0, 0);
  EXPECT_THROW(clip_grad_norm(store, 0.5), nd::NumericError);
}

TEST(Madgrad, WeightDecaySkipsBiasAndNorm) {
  nd::ParamStore<double> store(1);
  auto w = store.constant("l.W", {2}, 1.0, nd::ParamGroup::Weight);
  auto b = store.constant("l.b", {2}, 1.0, nd::ParamGroup::Bias);
  auto n = store.constant("n.gamma", {2}, 1.0, nd::ParamGroup::Norm);
  auto e = store.constant("q", {2}, 1.0, nd::ParamGroup::Embedding);
  Madgrad<double> opt(store.params().size());
  for (int i = 0; i < 5; ++i) opt.step(store, 0.1, 0.5);
  EXPECT_LT(w.at(0), 1.0);
  EXPECT_LT(e.at(0), 1.0);
  EXPECT_EQ(b.at(0), 1.0);
  EXPECT_EQ(n.at(0), 1.0);
  EXPECT_EQ(opt.steps(), 5u);
}

TEST(Schedule, SingleDatasetBatches) {
  std::vector<std::uint64_t> ids(32);
  std::iota(ids.begin(), ids.end(), 1);
  const Schedule s = build_schedule({{"A", ids}}, 16, 1, 0);
  ASSERT_EQ(s.batches.size(), 2u);
  EXPECT_EQ(s.batches[0].dataset, 0u);
  EXPECT_EQ(s.batches[1].ids.size(), 16u);
}

TEST(Schedule, ProportionalInterleaveCoversEveryRecord) {
  std::vector<std::uint64_t> a(160), b(80);
  std::iota(a.begin(), a.end(), 1);
  std::iota(b.begin(), b.end(), 1000);
  for (std::uint64_t epoch = 0; epoch < 3; ++epoch) {
    const Schedule s = build_schedule({{"A", a}, {"B", b}}, 16, 7, epoch);
    std::size_t na = 0, nb = 0;
    std::multiset<std::uint64_t> seen;
    for (const auto& batch : s.batches) {
      (batch.dataset == 0 ? na : nb) += 1;
      for (auto id : batch.ids) {
        EXPECT_EQ(batch.dataset == 0, id < 1000);
        seen.insert(id);
      }
    }
    EXPECT_EQ(na, 10u);
    EXPECT_EQ(nb, 5u);
    EXPECT_EQ(seen.size(), 240u);
    EXPECT_EQ(std::set<std::uint64_t>(seen.begin(), seen.end()).size(), 240u);
  }
}

TEST(Schedule, DeterministicPerSeedAndEpoch) {
  std::vector<std::uint64_t> a(50), b(30);
  std::iota(a.begin(), a.end(), 1);
  std::iota(b.begin(), b.end(), 100);
  auto flat = [](const Schedule& s) {
    std::vector<std::uint64_t> out;
    for (const auto& batch : s.batches) out.insert(out.end(), batch.ids.begin(), batch.ids.end());
    return out;
  };
  EXPECT_EQ(flat(build_schedule({{"A", a}, {"B", b}}, 8, 3, 2)), flat(build_schedule({{"A", a}, {"B", b}}, 8, 3, 2)));
  EXPECT_NE(flat(build_schedule({{"A", a}, {"B", b}}, 8, 3, 2)), flat(build_schedule({{"A", a}, {"B", b}}, 8, 3, 3)));
  EXPECT_THROW(build_schedule({{"A", a}, {"E", {}}}, 8, 3, 0), std::invalid_argument);
}

TEST(Schedule, StepCounts) {
  EXPECT_EQ(steps_per_epoch(50, 20), 3u);
  EXPECT_EQ(steps_per_epoch(40, 20), 2u);
  TrainConfig tc;
  const StepPlan p = plan_steps({800}, tc);
  EXPECT_EQ(p.batches_per_epoch, 50u);
  EXPECT_EQ(p.total, 45u);
  EXPECT_EQ(p.warmup, 4u);
}

TEST(RunConfigJson, RoundTripAndRejections) {
  RunConfig c = tiny_config();
  c.fusion.use_object = false;
  const auto j = to_json(c);
  EXPECT_EQ(j.at("pooling"), "No");
  EXPECT_EQ(j.at("proj_align"), "Yes");
  EXPECT_EQ(run_config_from_json(j), c);
  auto bad = j;
  bad["hiden_dim"] = 8;
  EXPECT_THROW(run_config_from_json(bad), fusion::ConfigError);
  bad = j;
  bad["pooling"] = "CLS";
  EXPECT_THROW(run_config_from_json(bad), fusion::ConfigError);
  bad = j;
  bad["epochs"] = -1;
  EXPECT_THROW(run_config_from_json(bad), fusion::ConfigError);
  bad = j;
  bad["backbones"] = nlohmann::json::array();
  EXPECT_THROW(run_config_from_json(bad), fusion::ConfigError);
  EXPECT_EQ(run_config_from_json(nlohmann::json::object()), RunConfig{});
}

TEST(Model, TaskRosterAndDatasetLoss) {
  const auto mami = tiny_mami(8);
  const auto fbhm = tiny_fbhm(8);
  Model<double> model(tiny_config(), {mami.spec, fbhm.spec}, 5);
  ASSERT_EQ(model.dataset_tasks(0).size(), 3u);
  ASSERT_EQ(model.dataset_tasks(1).size(), 1u);
  EXPECT_EQ(model.queries().labels, global_labels({mami.spec, fbhm.spec}));
  EXPECT_EQ(model.queries().labels.back(), "hateful");

  const auto recs = first_records(mami, 3);
  const BatchLoss<double> loss = model.batch_loss(recs, 0, {});
  ASSERT_EQ(loss.tasks.size(), 3u);
  const double mean = (loss.tasks[0].total.item() + loss.tasks[1].total.item() + loss.tasks[2].total.item()) / 3;
  EXPECT_NEAR(loss.total.item(), mean, 1e-12);
  EXPECT_EQ(model.batch_loss(first_records(fbhm, 2), 1, {}).tasks.size(), 1u);

  auto broken = mami.records[0];
  broken.labels.resize(2);
  std::vector<const features::FeatureRecord*> one = {&broken};
  EXPECT_THROW(model.batch_loss(one, 0, {}), DataError);
}

TEST(Model, GradientsAccumulateAcrossBatches) {
  const auto mami = tiny_mami(8);
  Model<double> model(tiny_config(), {mami.spec}, 5);
  const auto a = first_records(mami, 2);
  const std::vector<const features::FeatureRecord*> b = {&mami.records[4], &mami.records[5]};
  auto grads = [&] {
    std::vector<double> out;
    for (const auto& p : model.store().params()) {
      if (!p.tensor.has_grad()) {
        out.insert(out.end(), p.tensor.numel(), 0.0);
        continue;
      }
      out.insert(out.end(), p.tensor.grad().begin(), p.tensor.grad().end());
    }
    return out;
  };
  model.store().zero_grad();
  model.batch_loss(a, 0, {}).total.backward();
  const auto ga = grads();
  model.store().zero_grad();
  model.batch_loss(b, 0, {}).total.backward();
  const auto gb = grads();
  model.store().zero_grad();
  model.batch_loss(a, 0, {}).total.backward();
  model.batch_loss(b, 0, {}).total.backward();
  const auto gab = grads();
  for (std::size_t i = 0; i < gab.size(); ++i) EXPECT_NEAR(gab[i], ga[i] + gb[i], 1e-12);
}

TEST(Model, ParameterGroupAudit) {
  const auto mami = tiny_mami(4);
  for (auto pooling : {fusion::Pooling::None, fusion::Pooling::Cls}) {
    Model<float> model(tiny_config(pooling), {mami.spec}, 1);
    for (const auto& p : model.store().params()) {
      const auto ends = [&](const std::string& s) {
        return p.name.size() >= s.size() && p.name.compare(p.name.size() - s.size(), s.size(), s) == 0;
      };
      if (ends(".b")) {
        EXPECT_EQ(p.group, nd::ParamGroup::Bias) << p.name;
      } else if (ends(".gamma") || ends(".beta")) {
        EXPECT_EQ(p.group, nd::ParamGroup::Norm) << p.name;
      } else {
        EXPECT_TRUE(nd::decays(p.group)) << p.name;
      }
      EXPECT_EQ(nd::decays(p.group), !(ends(".b") || ends(".gamma") || ends(".beta"))) << p.name;
    }
  }
}

TEST(Model, MultiTaskSharesFusionAndSeparatesHeads) {
  const auto mami = tiny_mami(6);
  const auto fbhm = tiny_fbhm(6);
  Model<double> model(tiny_config(), {mami.spec, fbhm.spec}, 2);
  const auto& hateful = model.tasks()[model.dataset_tasks(1)[0]];
  for (std::size_t t : model.dataset_tasks(0)) {
    EXPECT_FALSE(model.tasks()[t].head.hidden.W.same(hateful.head.hidden.W));
    EXPECT_FALSE(model.tasks()[t].head.out.W.same(hateful.head.out.W));
  }
  // Both datasets drive gradients into the same fusion tensors.
  auto touched = [&](std::size_t d, const features::FeatureSet& set) {
    model.store().zero_grad();
    model.batch_loss(first_records(set, 2), d, {}).total.backward();
    std::set<std::string> names;
    for (const auto& p : model.store().params()) {
      bool nz = false;
      if (p.tensor.has_grad())
        for (double g : p.tensor.grad()) nz = nz || g != 0.0;
      if (nz) names.insert(p.name);
    }
    return names;
  };
  const auto from_mami = touched(0, mami);
  const auto from_fbhm = touched(1, fbhm);
  for (const auto& name : {"fusion.emb.type", "fusion.proj.image_patch.W", "heads.queries"}) {
    EXPECT_TRUE(from_mami.count(name)) << name;
    EXPECT_TRUE(from_fbhm.count(name)) << name;
  }
  EXPECT_FALSE(from_mami.count("heads.task.Hateful.out.W"));
  EXPECT_FALSE(from_fbhm.count("heads.task.Task_A.out.W"));
}

TEST(Checkpoint, RoundTripIsBitwise) {
  const auto mami = tiny_mami(6);
  const fs::path dir = fresh_dir("ckpt");
  fs::create_directories(dir);
  Model<float> model(tiny_config(), {mami.spec}, 4);
  Madgrad<float> opt(model.store().params().size());
  model.batch_loss(first_records(mami, 2), 0, {}).total.backward();
  opt.step(model.store(), 1e-3, 5e-4);
  CheckpointMeta meta;
  meta.config = to_json(tiny_config());
  meta.epoch = 3;
  meta.state = {{"x", 1}};
  save_checkpoint(dir / "a.ckpt", model, opt, meta);

  Model<float> other(tiny_config(), {mami.spec}, 99);
  Madgrad<float> other_opt(other.store().params().size());
  const auto back = load_checkpoint(dir / "a.ckpt", other, &other_opt);
  EXPECT_EQ(back.epoch, 3u);
  EXPECT_EQ(back.config, meta.config);
  for (std::size_t i = 0; i < model.store().params().size(); ++i) {
    const auto x = model.store().params()[i].tensor.data();
    const auto y = other.store().params()[i].tensor.data();
    ASSERT_TRUE(std::equal(x.begin(), x.end(), y.begin())) << model.store().params()[i].name;
    EXPECT_EQ(opt.slots()[i].s, other_opt.slots()[i].s);
    EXPECT_EQ(opt.slots()[i].nu, other_opt.slots()[i].nu);
    EXPECT_EQ(opt.slots()[i].x0, other_opt.slots()[i].x0);
  }
  EXPECT_EQ(other_opt.steps(), 1u);
  EXPECT_EQ(read_checkpoint_meta(dir / "a.ckpt").epoch, 3u);
}

TEST(Checkpoint, RejectsShapeMismatchAndCorruption) {
  const auto mami = tiny_mami(4);
  const fs::path dir = fresh_dir("ckpt_bad");
  fs::create_directories(dir);
  Model<float> model(tiny_config(), {mami.spec}, 4);
  Madgrad<float> opt(model.store().params().size());
  save_checkpoint(dir / "a.ckpt", model, opt, {});

  auto wide = tiny_config();
  wide.fusion.hidden_dim = 16;
  const auto wide_mami = features::synth_generate(features::mami_synth_spec(4, 16, 6, 6, 6), 3);
  Model<float> other(wide, {wide_mami.spec}, 4);
  try {
    load_checkpoint<float>(dir / "a.ckpt", other, nullptr);
    FAIL() << "expected a shape error";
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("shape mismatch"), std::string::npos) << e.what();
  }
  Model<double> dbl(tiny_config(), {mami.spec}, 4);
  EXPECT_THROW(load_checkpoint<double>(dir / "a.ckpt", dbl, nullptr), CheckpointError);

  std::string bytes = slurp(dir / "a.ckpt");
  bytes[bytes.size() / 2] ^= 0x5a;
  std::ofstream(dir / "b.ckpt", std::ios::binary) << bytes;
  EXPECT_THROW(load_checkpoint<float>(dir / "b.ckpt", model, nullptr), CheckpointError);
  bytes = slurp(dir / "a.ckpt");
  bytes[4] = 9;
  std::ofstream(dir / "c.ckpt", std::ios::binary) << bytes;
  EXPECT_THROW(read_checkpoint_meta(dir / "c.ckpt"), CheckpointError);
}

TEST(Run, WritesRunDirectory) {
  const fs::path dir = fresh_dir("run_layout");
  const auto summary = run(tiny_config(), {splits_of(tiny_mami(24))}, dir);
  EXPECT_TRUE(summary.complete);
  for (const char* f : {kConfigFile, kTraceFile, kMetricsFile, kBestCheckpoint, kLastCheckpoint}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  EXPECT_FALSE(fs::exists(dir / kIncompleteMarker));
  EXPECT_FALSE(fs::exists(dir / kLockFile));
  // 18 train records, batch 4 -> 5 batches, accumulation 2 -> 3 steps per epoch.
  EXPECT_EQ(summary.total_steps, 9u);
  EXPECT_EQ(summary.optimizer_steps, 9u);
  std::ifstream trace(dir / kTraceFile);
  std::size_t lines = 0;
  for (std::string line; std::getline(trace, line);) ++lines;
  EXPECT_EQ(lines, 9u);
  // 3 epochs x 2 splits x 3 tasks
  std::ifstream metrics(dir / kMetricsFile);
  lines = 0;
  for (std::string line; std::getline(metrics, line);) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("metric"), j.at("task") == "Task_A" ? "scoreA" : "scoreB");
    ++lines;
  }
  EXPECT_EQ(lines, 18u);
  EXPECT_EQ(run_config_from_json(nlohmann::json::parse(slurp(dir / kConfigFile))), tiny_config());
}

TEST(Run, DeterministicAndResumable) {
  const auto data = std::vector<DataSplits>{splits_of(tiny_mami(24)), splits_of(tiny_fbhm(12))};
  const fs::path a = fresh_dir("det_a"), b = fresh_dir("det_b"), c = fresh_dir("det_c");
  run(tiny_config(), data, a);
  run(tiny_config(), data, b);
  EXPECT_EQ(slurp(a / kTraceFile), slurp(b / kTraceFile));
  EXPECT_FALSE(slurp(a / kTraceFile).empty());

  const auto partial = run(tiny_config(), data, c, {false, 1, {}});
  EXPECT_FALSE(partial.complete);
  EXPECT_TRUE(fs::exists(c / kIncompleteMarker));
  const auto resumed = run(tiny_config(), data, c, {true, {}, {}});
  EXPECT_TRUE(resumed.complete);
  EXPECT_EQ(slurp(a / kTraceFile), slurp(c / kTraceFile));
  EXPECT_EQ(slurp(a / kMetricsFile), slurp(c / kMetricsFile));

  auto other = tiny_config();
  other.train.lr = 2e-3;
  EXPECT_THROW(run(other, data, c, {true, {}, {}}), RunError);
}

TEST(Run, LockBlocksSecondOwner) {
  const fs::path dir = fresh_dir("locked");
  fs::create_directories(dir);
  std::ofstream(dir / kLockFile) << "1\n";
  EXPECT_THROW(run(tiny_config(), {splits_of(tiny_mami(8))}, dir), RunError);
}
