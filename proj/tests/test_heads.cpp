#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mmfuse/heads/heads.hpp"
#include "mmfuse/ndgrad/gradcheck.hpp"

namespace nd = mmfuse::ndgrad;
using namespace mmfuse::heads;

namespace {

using Td = nd::Tensor<double>;

const std::vector<std::string> kMamiLabels = {"misogynous", "shaming", "stereotype", "objectification",
                                              "violence"};
std::vector<std::string> all_labels() {
  auto l = kMamiLabels;
  l.push_back("hateful");
  return l;
}

Td random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = g(rng);
  return Td(nd::Shape{rows, cols}, v);
}

void zero_params(nd::ParamStore<double>& store) {
  for (auto& p : store.params()) {
    auto d = p.tensor.mutable_data();
    std::fill(d.begin(), d.end(), 0.0);
  }
}

}  // namespace

TEST(Probabilities, ClosedForms) {
  Td logits(nd::Shape{3}, {0.0, 40.0, std::log(3.0)});
  Td p = probabilities(logits);
  EXPECT_EQ(p.at(0), 0.5);
  EXPECT_EQ(p.at(1), 1.0 - 1e-7);
  EXPECT_NEAR(p.at(2), 0.75, 1e-12);
  Td low = probabilities(Td(nd::Shape{1}, {-40.0}));
  EXPECT_EQ(low.at(0), 1e-7);
}

TEST(ClassifyPooled, ZeroWeightsGiveHalf) {
  nd::ParamStore<double> store(1);
  TaskHead<double> head(store, "MAMI", HeadMode::MultiHead, 5, 8, 16);
  zero_params(store);
  std::mt19937_64 rng(2);
  auto out = classify_pooled(random_matrix(1, 8, rng), head);
  ASSERT_EQ(out.logits.shape(), (nd::Shape{5}));
  for (std::size_t c = 0; c < 5; ++c) {
    EXPECT_EQ(out.logits.at(c), 0.0);
    EXPECT_EQ(probabilities(out.logits).at(c), 0.5);
  }
}

TEST(ClassifyPooled, SingleLabelTaskHasOneLogit) {
  nd::ParamStore<double> store(3);
  TaskHead<double> head(store, "Task_A", HeadMode::MultiHead, 1, 8, 16);
  std::mt19937_64 rng(4);
  EXPECT_EQ(classify_pooled(random_matrix(1, 8, rng), head).logits.shape(), (nd::Shape{1}));
}

TEST(ClassifyPooled, LayerInputsAreSharedAcrossClasses) {
  nd::ParamStore<double> store(5);
  TaskHead<double> head(store, "MAMI", HeadMode::MultiHead, 5, 8, 16);
  std::mt19937_64 rng(6);
  auto out = classify_pooled(random_matrix(1, 8, rng), head);
  ASSERT_EQ(out.layer_inputs.size(), 2u);
  for (std::size_t l = 0; l < 2; ++l) {
    Td first = out.layer_input(l, 0);
    for (std::size_t c = 1; c < 5; ++c) {
      Td other = out.layer_input(l, c);
      for (std::size_t i = 0; i < first.numel(); ++i) EXPECT_EQ(first.at(i), other.at(i));
    }
  }
  // Each class has its own output weights, so logits differ for one input.
  EXPECT_NE(out.logits.at(0), out.logits.at(1));
}

TEST(ClassifyPooled, ModeMismatchIsRejected) {
  nd::ParamStore<double> store(7);
  TaskHead<double> shared(store, "x", HeadMode::SharedSingle, 2, 8, 16);
  TaskHead<double> multi(store, "y", HeadMode::MultiHead, 2, 8, 16);
  std::mt19937_64 rng(8);
  EXPECT_THROW(classify_pooled(random_matrix(1, 8, rng), shared), ConfigError);
  EXPECT_THROW(classify_shared(random_matrix(2, 8, rng), multi), ConfigError);
}

TEST(ClassifyShared, IdenticalRowsGiveIdenticalLogits) {
  nd::ParamStore<double> store(9);
  TaskHead<double> head(store, "MAMI", HeadMode::SharedSingle, 3, 8, 16);
  std::mt19937_64 rng(10);
  Td row = random_matrix(1, 8, rng);
  auto out = classify_shared(nd::concat_rows<double>({row, row, row}), head);
  EXPECT_EQ(out.logits.at(0), out.logits.at(1));
  EXPECT_EQ(out.logits.at(1), out.logits.at(2));
}

TEST(ClassifyShared, PermutingRowsPermutesLogits) {
  nd::ParamStore<double> store(11);
  TaskHead<double> head(store, "MAMI", HeadMode::SharedSingle, 3, 8, 16);
  std::mt19937_64 rng(12);
  Td a = random_matrix(1, 8, rng), b = random_matrix(1, 8, rng), c = random_matrix(1, 8, rng);
  auto abc = classify_shared(nd::concat_rows<double>({a, b, c}), head);
  auto cab = classify_shared(nd::concat_rows<double>({c, a, b}), head);
  EXPECT_EQ(cab.logits.at(0), abc.logits.at(2));
  EXPECT_EQ(cab.logits.at(1), abc.logits.at(0));
  EXPECT_EQ(cab.logits.at(2), abc.logits.at(1));
}

TEST(HeadGradients, MatchFiniteDifferences) {
  nd::ParamStore<double> store(13);
  TaskHead<double> pooled(store, "A", HeadMode::MultiHead, 3, 6, 5);
  TaskHead<double> shared(store, "B", HeadMode::SharedSingle, 3, 6, 5);
  std::mt19937_64 rng(14);
  Td x = random_matrix(1, 6, rng);
  Td rows = random_matrix(3, 6, rng);
  Td w = random_matrix(1, 3, rng);
  x.set_requires_grad(true);
  rows.set_requires_grad(true);
  auto f = [&] {
    Td lp = classify_pooled(x, pooled).logits;
    Td ls = classify_shared(rows, shared).logits;
    return nd::sum(nd::mul(nd::reshape(nd::add(lp, ls), {1, 3}), w));
  };
  auto params = store.tensors();
  params.push_back(x);
  params.push_back(rows);
  EXPECT_LE(nd::finite_diff_check(f, params).max_rel_error, 1e-4);
}

TEST(ClassQueries, OrderFollowsDeclaration) {
  nd::ParamStore<double> store(15);
  ClassQueryTable<double> q(store, all_labels(), 8);
  EXPECT_EQ(q.indices({"violence", "shaming"}), (std::vector<std::size_t>{1, 4}));
  EXPECT_THROW(q.index("nonsense"), ConfigError);
}

TEST(DecodeClasses, SingleClassSelfAttentionIsOne) {
  nd::ParamStore<double> store(16);
  ClassQueryTable<double> q(store, all_labels(), 8);
  DecoderStack<double> dec(store, "heads.decoder", 8, 3, 2, 16);
  std::mt19937_64 rng(17);
  Td src = random_matrix(7, 8, rng);
  nd::Mask mask = {1, 1, 0, 1, 1, 0, 1};
  DecoderRecord rec;
  Td out = decode_classes(src, mask, {"misogynous"}, q, dec, {}, &rec);
  EXPECT_EQ(out.shape(), (nd::Shape{1, 8}));
  ASSERT_EQ(rec.self.size(), 3u);
  for (const auto& m : rec.self) {
    ASSERT_EQ(m.weights.size(), 1u);
    EXPECT_EQ(m.weights[0], 1.0);
  }
}

TEST(DecodeClasses, CrossAttentionRowsSumToOne) {
  nd::ParamStore<double> store(18);
  ClassQueryTable<double> q(store, all_labels(), 8);
  DecoderStack<double> dec(store, "heads.decoder", 8, 2, 4, 16);
  std::mt19937_64 rng(19);
  Td src = random_matrix(9, 8, rng);
  nd::Mask mask = {1, 0, 1, 1, 0, 1, 1, 1, 0};
  DecoderRecord rec;
  Td out = decode_classes(src, mask, kMamiLabels, q, dec, {}, &rec);
  EXPECT_EQ(out.shape(), (nd::Shape{5, 8}));
  ASSERT_EQ(rec.cross.size(), 2u);
  for (std::size_t l = 0; l < 2; ++l) {
    EXPECT_EQ(rec.self[l].rows, 5u);
    EXPECT_EQ(rec.self[l].cols, 5u);
    for (std::size_t r = 0; r < 5; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < 9; ++c) {
        if (!mask[c]) EXPECT_EQ(rec.cross[l].at(r, c), 0.0);
        total += rec.cross[l].at(r, c);
      }
      EXPECT_NEAR(total, 1.0, 1e-5);
    }
  }
}

TEST(DecodeClasses, EqualQueriesGiveEqualOutputs) {
  nd::ParamStore<double> store(20);
  ClassQueryTable<double> q(store, all_labels(), 8);
  auto table = q.table.mutable_data();
  for (std::size_t r = 1; r < 6; ++r)
    for (std::size_t d = 0; d < 8; ++d) table[r * 8 + d] = table[d];
  DecoderStack<double> dec(store, "heads.decoder", 8, 2, 2, 16);
  std::mt19937_64 rng(21);
  Td out = decode_classes(random_matrix(5, 8, rng), nd::Mask(5, 1), kMamiLabels, q, dec, {});
  for (std::size_t r = 1; r < 5; ++r)
    for (std::size_t d = 0; d < 8; ++d) EXPECT_NEAR(out.at(r, d), out.at(0, d), 1e-12);
}

TEST(DecodeClasses, ErrorsOnBadInput) {
  nd::ParamStore<double> store(22);
  ClassQueryTable<double> q(store, all_labels(), 8);
  DecoderStack<double> dec(store, "heads.decoder", 8, 1, 2, 16);
  std::mt19937_64 rng(23);
  Td src = random_matrix(3, 8, rng);
  EXPECT_THROW(decode_classes(src, nd::Mask(3, 1), {"unknown"}, q, dec, {}), ConfigError);
  EXPECT_THROW(decode_classes(src, nd::Mask(3, 0), {"hateful"}, q, dec, {}), nd::DimensionError);
}

TEST(DecodeClasses, GradientMatchesFiniteDifferences) {
  nd::ParamStore<double> store(24);
  ClassQueryTable<double> q(store, all_labels(), 8);
  DecoderStack<double> dec(store, "heads.decoder", 8, 1, 2, 16);
  TaskHead<double> head(store, "T", HeadMode::SharedSingle, 2, 8, 6);
  std::mt19937_64 rng(25);
  Td src = random_matrix(4, 8, rng);
  src.set_requires_grad(true);
  nd::Mask mask = {1, 1, 0, 1};
  auto f = [&] {
    Td out = decode_classes(src, mask, {"shaming", "hateful"}, q, dec, {});
    return nd::sum(probabilities(classify_shared(out, head).logits));
  };
  auto params = store.tensors();
  params.push_back(src);
  EXPECT_LE(nd::finite_diff_check(f, params).max_rel_error, 1e-4);
}
