#include <gtest/gtest.h>

#include <cmath>

#include "argrel/relhead.hpp"

namespace argrel {
namespace {

RelationHead hand_head() {
  RelationHead h;
  h.p.add("w1", 4, 2);
  h.p.add("b1", 1, 2);
  h.p.add("w2", 2, 3);
  h.p.add("b2", 1, 3);
  h.p[RelationHead::kW1] << 0.5, -0.25, 0.1, 0.3, -0.4, 0.2, 0.05, -0.6;
  h.p[RelationHead::kB1] << 0.1, -0.2;
  h.p[RelationHead::kW2] << 1.0, -0.5, 0.25, 0.3, 0.8, -1.1;
  h.p[RelationHead::kB2] << 0.05, 0.0, -0.05;
  return h;
}

// Scalar re-derivation of softmax(tanh([hj; hi] W1 + b1) W2 + b2).
std::array<double, 3> oracle(const RelationHead& h, const std::vector<double>& hj, const std::vector<double>& hi) {
  std::vector<double> x = hj;
  x.insert(x.end(), hi.begin(), hi.end());
  const Mat& w1 = h.p[RelationHead::kW1];
  const Mat& b1 = h.p[RelationHead::kB1];
  const Mat& w2 = h.p[RelationHead::kW2];
  const Mat& b2 = h.p[RelationHead::kB2];
  std::vector<double> a(static_cast<std::size_t>(w1.cols()));
  for (Eigen::Index k = 0; k < w1.cols(); ++k) {
    double s = b1(0, k);
    for (std::size_t r = 0; r < x.size(); ++r) s += x[r] * w1(static_cast<Eigen::Index>(r), k);
    a[static_cast<std::size_t>(k)] = std::tanh(s);
  }
  std::array<double, 3> z{};
  for (int c = 0; c < 3; ++c) {
    double s = b2(0, c);
    for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * w2(static_cast<Eigen::Index>(k), c);
    z[static_cast<std::size_t>(c)] = s;
  }
  const double m = std::max({z[0], z[1], z[2]});
  double den = 0;
  for (auto& v : z) den += (v = std::exp(v - m));
  for (auto& v : z) v /= den;
  return z;
}

RowVec row(std::initializer_list<double> v) {
  RowVec r(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) r(i++) = x;
  return r;
}

TEST(PredictPair, MatchesScalarOracle) {
  const auto h = hand_head();
  const auto got = predict_pair(row({0.3, -1.2}), row({0.7, 0.4}), h);
  const auto want = oracle(h, {0.3, -1.2}, {0.7, 0.4});
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(got[static_cast<std::size_t>(c)], want[static_cast<std::size_t>(c)], 1e-12);
}

TEST(PredictPair, ZeroOutputLayerIsUniform) {
  auto h = hand_head();
  h.p[RelationHead::kW2].setZero();
  h.p[RelationHead::kB2].setZero();
  const auto d = predict_pair(row({1, 2}), row({3, 4}), h);
  for (double p : d) EXPECT_NEAR(p, 1.0 / 3.0, 1e-15);
  EXPECT_EQ(argmax_label(d), Label::support);
}

TEST(PredictPair, OutputBiasShiftInvarianceAndValidity) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    auto h = init_relation_head(3, 4, static_cast<std::uint64_t>(trial));
    RowVec hj(3), hi(3);
    for (int k = 0; k < 3; ++k) {
      hj(k) = rng.normal() * 3;
      hi(k) = rng.normal() * 3;
    }
    const auto base = predict_pair(hj, hi, h);
    double sum = 0;
    for (double p : base) {
      EXPECT_GE(p, 0.0);
      EXPECT_LE(p, 1.0);
      sum += p;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
    h.p[RelationHead::kB2].array() += rng.normal() * 10;
    const auto shifted = predict_pair(hj, hi, h);
    for (int c = 0; c < 3; ++c)
      EXPECT_NEAR(base[static_cast<std::size_t>(c)], shifted[static_cast<std::size_t>(c)], 1e-12);
  }
}

TEST(PredictPair, ShapeMismatch) {
  try {
    predict_pair(row({1, 2, 3}), row({1, 2}), hand_head());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::shape);
  }
}

TEST(HeadBackward, MatchesFiniteDifferences) {
  auto h = init_relation_head(3, 5, 2);
  const RowVec hj = row({0.2, -0.4, 0.9}), hi = row({-0.3, 0.1, 0.5});
  auto loss = [&](const RelationHead& hh, const RowVec& a, const RowVec& b) {
    return -std::log(predict_pair(a, b, hh)[1]);
  };
  HeadCache cache;
  const RowVec probs = head_forward(h, hj, hi, 0.0, nullptr, &cache);
  RowVec dl = probs;
  dl(1) -= 1.0;
  ParamSet g = h.p.zeros_like();
  const RowVec dx = head_backward(h, cache, dl, g);
  const double eps = 1e-6;
  for (std::size_t t = 0; t < h.p.size(); ++t)
    for (Eigen::Index i = 0; i < h.p[t].size(); ++i) {
      auto plus = h, minus = h;
      plus.p[t].data()[i] += eps;
      minus.p[t].data()[i] -= eps;
      EXPECT_NEAR(g[t].data()[i], (loss(plus, hj, hi) - loss(minus, hj, hi)) / (2 * eps), 1e-7);
    }
  for (Eigen::Index i = 0; i < 3; ++i) {
    RowVec a = hj, b = hj;
    a(i) += eps;
    b(i) -= eps;
    EXPECT_NEAR(dx(i), (loss(h, a, hi) - loss(h, b, hi)) / (2 * eps), 1e-7);
  }
}

// Four-proposition documents; the head (1) supports whichever proposition
// carries "because".
Corpus learnable_corpus(int n) {
  Corpus c;
  const std::vector<std::string> filler = {"the model is large", "results look fine", "we ran it twice",
                                           "tables are clear", "the data is small", "code is public"};
  for (int d = 0; d < n; ++d) {
    Document doc;
    doc.doc_id = "d" + std::to_string(d);
    const int target = d % 2 == 0 ? 0 : 2;
    for (int i = 0; i < 4; ++i) {
      std::string text = filler[static_cast<std::size_t>((d + i) % 6)];
      if (i == target) text = "because " + text;
      doc.propositions.push_back({i, text, PropType::evaluation});
    }
    doc.relations.push_back({1, target, Label::support});
    c.documents.push_back(doc);
  }
  return c;
}

TrainConfig small_train() {
  TrainConfig t;
  t.lr = 1e-2;
  t.warmup = 0;
  t.epochs = 40;
  t.batch_size = 1;
  t.seed = 3;
  t.encoder.dim = 16;
  t.encoder.layers = 1;
  t.encoder.heads = 2;
  t.encoder.ffn_mult = 2;
  t.encoder.dropout_p = 0.0;
  t.encoder.max_positions = 64;
  t.encoder.seed = 4;
  return t;
}

double train_accuracy(const Corpus& c, const Checkpoint& ck, const WindowConfig& w) {
  long ok = 0, n = 0;
  for (const auto& d : c.documents) {
    const auto gold = gold_pair_labels(d);
    for (const auto& p : predict_document(d, ck, w)) {
      const auto it = gold.find({p.head, p.tail});
      ok += p.predicted == (it == gold.end() ? Label::no_rel : it->second);
      ++n;
    }
  }
  return static_cast<double>(ok) / static_cast<double>(n);
}

TEST(Train, OverfitsSmallSetWithin500Steps) {
  const auto corpus = learnable_corpus(10);
  WindowConfig w;
  w.L = 3;
  auto cfg = small_train();
  cfg.max_steps = 500;
  const auto res = train(corpus, w, cfg);
  EXPECT_LE(res.checkpoint.steps, 500);
  EXPECT_GE(train_accuracy(corpus, res.checkpoint, w), 0.99);
  EXPECT_LT(res.epochs.back().loss, res.epochs.front().loss);
}

TEST(Train, ZeroEpochsAndZeroLrKeepInitialisation) {
  const auto corpus = learnable_corpus(4);
  WindowConfig w;
  w.L = 3;
  auto cfg = small_train();
  const auto init = init_checkpoint(build_vocab(corpus, cfg.min_count), cfg);
  cfg.epochs = 0;
  EXPECT_TRUE(train(corpus, w, cfg).checkpoint.same_parameters(init));
  cfg.epochs = 2;
  cfg.lr = 0.0;
  const auto res = train(corpus, w, cfg);
  EXPECT_TRUE(res.checkpoint.same_parameters(init));
  EXPECT_GT(res.checkpoint.steps, 0);
}

TEST(Train, DeterministicGivenSeeds) {
  const auto corpus = learnable_corpus(4);
  WindowConfig w;
  w.L = 3;
  auto cfg = small_train();
  cfg.epochs = 3;
  cfg.encoder.dropout_p = 0.1;
  const auto a = train(corpus, w, cfg);
  const auto b = train(corpus, w, cfg);
  EXPECT_EQ(encode_checkpoint(a.checkpoint), encode_checkpoint(b.checkpoint));
  cfg.seed = 99;
  EXPECT_NE(encode_checkpoint(train(corpus, w, cfg).checkpoint), encode_checkpoint(a.checkpoint));
}

TEST(Train, NoExamplesIsEmptyTraining) {
  Corpus c = learnable_corpus(2);
  for (auto& d : c.documents) d.relations.clear();
  WindowConfig w;
  try {
    train(c, w, small_train());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::empty_training);
  }
}

TEST(Checkpoint, RoundTripCorruptionAndMismatch) {
  const auto corpus = learnable_corpus(2);
  const auto cfg = small_train();
  auto ck = init_checkpoint(build_vocab(corpus), cfg);
  ck.metadata["note"] = "x";
  const auto bytes = encode_checkpoint(ck);
  const auto back = decode_checkpoint(bytes);
  EXPECT_TRUE(back.same_parameters(ck));
  EXPECT_EQ(back.metadata, ck.metadata);
  EXPECT_EQ(encode_checkpoint(back), bytes);

  auto corrupt = bytes;
  corrupt[corrupt.size() / 2] ^= 0x5a;
  try {
    decode_checkpoint(corrupt);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::integrity);
  }
  auto other = cfg.encoder;
  other.dim = 32;
  try {
    decode_checkpoint(bytes, &other);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::incompatible);
  }
  auto same = cfg.encoder;
  same.seed = 123;
  EXPECT_NO_THROW(decode_checkpoint(bytes, &same));
}

TEST(PredictDocument, PairCountsPerMode) {
  Document d;
  d.doc_id = "x";
  for (int i = 0; i < 5; ++i) d.propositions.push_back({i, "text " + std::to_string(i), PropType::fact});
  d.relations.push_back({2, 1, Label::support});
  Corpus c;
  c.documents.push_back(d);
  const auto ck = init_checkpoint(build_vocab(c), small_train());
  WindowConfig w;
  w.L = 2;
  w.mode = WindowMode::end_to_end;
  EXPECT_EQ(predict_document(d, ck, w).size(), 14u);
  w.mode = WindowMode::head_given;
  const auto hg = predict_document(d, ck, w);
  EXPECT_LE(hg.size(), 4u);
  for (const auto& p : hg) EXPECT_EQ(p.head, 2);
  w.L = 1;
  EXPECT_EQ(predict_document(d, ck, w).size(), 2u);
  auto headless = ck;
  headless.has_head = false;
  EXPECT_THROW(predict_document(d, headless, w), Error);
}

}  // namespace
}  // namespace argrel
