#include <gtest/gtest.h>

#include <algorithm>
#include <chrono>

#include "argrel/relhead.hpp"

namespace argrel {
namespace {

TEST(Tokenize, SplitsPunctuationAndLowercases) {
  EXPECT_EQ(tokenize("The proof, however, fails."),
            (std::vector<std::string>{"the", "proof", ",", "however", ",", "fails", "."}));
  EXPECT_TRUE(tokenize("").empty());
  EXPECT_EQ(tokenize("Due to X"), (std::vector<std::string>{"due", "to", "x"}));
}

Corpus tiny_corpus(const std::string& text) {
  Corpus c;
  Document d;
  d.doc_id = "d";
  d.propositions.push_back({0, text, PropType::fact});
  c.documents.push_back(d);
  return c;
}

TEST(Vocab, FrequencyThresholdAndOrder) {
  const auto v2 = build_vocab(tiny_corpus("a a a b"), 2);
  EXPECT_NE(v2.id("a"), Vocab::kUnk);
  EXPECT_EQ(v2.id("b"), Vocab::kUnk);
  const auto v1 = build_vocab(tiny_corpus("a a a b"), 1);
  EXPECT_NE(v1.id("b"), Vocab::kUnk);
  // Equal counts fall back to lexicographic order.
  const auto tie = build_vocab(tiny_corpus("zeta alpha mid mid"), 1);
  EXPECT_EQ(tie.token(Vocab::kNumSpecial), "mid");
  EXPECT_EQ(tie.token(Vocab::kNumSpecial + 1), "alpha");
  EXPECT_EQ(tie.token(Vocab::kNumSpecial + 2), "zeta");
  EXPECT_EQ(tie.token(Vocab::kSep), "[SEP]");
  EXPECT_EQ(tie.token(Vocab::kMask), "[MASK]");
}

EncoderConfig small_config(int dim = 8, int layers = 1, int heads = 1, double p = 0.1) {
  EncoderConfig c;
  c.dim = dim;
  c.layers = layers;
  c.heads = heads;
  c.ffn_mult = 2;
  c.dropout_p = p;
  c.max_positions = 32;
  c.seed = 11;
  return c;
}

const std::vector<std::vector<int>> kProps = {{4, 5, 6}, {7, 8}, {9, 4, 10, 11}};

TEST(Encoder, EvalIsDeterministic) {
  const auto e = init_encoder(small_config(), 12);
  const auto a = encode_window(kProps, 1, e, EncodeMode::eval, 1);
  const auto b = encode_window(kProps, 1, e, EncodeMode::eval, 99);
  ASSERT_EQ(a.size(), 3u);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(a[i] == b[i]);
}

TEST(Encoder, McDropoutSeeding) {
  const auto e = init_encoder(small_config(8, 1, 1, 0.3), 12);
  const auto a = encode_window(kProps, 0, e, EncodeMode::mc_dropout, 5);
  const auto b = encode_window(kProps, 0, e, EncodeMode::mc_dropout, 5);
  const auto c = encode_window(kProps, 0, e, EncodeMode::mc_dropout, 6);
  EXPECT_TRUE(a[0] == b[0]);
  EXPECT_FALSE(a[0] == c[0]);
}

TEST(Encoder, ZeroDropoutMcCollapsesToEval) {
  const auto e = init_encoder(small_config(8, 2, 2, 0.0), 12);
  const auto ev = encode_window(kProps, 0, e, EncodeMode::eval, 0);
  for (std::uint64_t s = 0; s < 4; ++s) {
    const auto mc = encode_window(kProps, 0, e, EncodeMode::mc_dropout, s);
    for (std::size_t i = 0; i < ev.size(); ++i) EXPECT_TRUE(ev[i] == mc[i]);
  }
}

TEST(Encoder, SinglePropositionAndOrderSensitivity) {
  const auto e = init_encoder(small_config(), 12);
  EXPECT_EQ(encode_window({{4, 5}}, 0, e, EncodeMode::eval, 0).size(), 1u);
  const auto a = encode_window(kProps, 0, e, EncodeMode::eval, 0);
  const std::vector<std::vector<int>> swapped = {kProps[1], kProps[0], kProps[2]};
  const auto b = encode_window(swapped, 1, e, EncodeMode::eval, 0);
  // Same proposition {4,5,6} at a different position gets a different state.
  EXPECT_GT((a[0] - b[1]).norm(), 1e-6);
}

TEST(Encoder, OverlengthInputRejected) {
  const auto e = init_encoder(small_config(), 12);
  std::vector<std::vector<int>> longp = {std::vector<int>(40, 4)};
  try {
    encode_window(longp, 0, e, EncodeMode::eval, 0);
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.code(), ErrorCode::precondition);
  }
}

TEST(Encoder, BackwardWithoutForwardIsStateError) {
  const auto e = init_encoder(small_config(), 12);
  EncodeTape tape;
  ParamSet g = e.p.zeros_like();
  try {
    encoder_backward(e, tape, Mat::Zero(3, 8), g);
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.code(), ErrorCode::state);
  }
}

// ---------------------------------------------------------------------------
// Finite-difference oracle: the loss is recomputed with forward passes only.

struct GradFixture {
  Checkpoint ck;
  Window w;
  std::vector<std::vector<int>> doc_ids = kProps;
  std::uint64_t seed = 1234;

  double loss() const {
    const auto props = window_tokens(doc_ids, w.context, ck.encoder.config.max_positions);
    const auto enc = encode_window_full(props, ck.encoder, EncodeMode::train, seed);
    Rng rng(derive_seed(seed, "head-dropout"));
    double total = 0.0;
    const RowVec hj = enc.rep(static_cast<std::size_t>(w.head));
    for (const auto& [tail, label] : w.targets) {
      const RowVec p = head_forward(ck.head, hj, enc.rep(static_cast<std::size_t>(tail)),
                                    ck.encoder.config.dropout_p, &rng, nullptr);
      total += -std::log(p(static_cast<Eigen::Index>(label)));
    }
    return total / static_cast<double>(w.targets.size());
  }
};

GradFixture make_fixture(const EncoderConfig& cfg) {
  GradFixture f;
  TrainConfig tc;
  tc.encoder = cfg;
  std::vector<std::string> words;
  for (int i = 0; i < 12; ++i) words.push_back("t" + std::to_string(i));
  f.ck = init_checkpoint(Vocab(words), tc);
  f.w.head = 1;
  f.w.context = {0, 1, 2};
  f.w.targets = {{0, Label::support}, {2, Label::no_rel}};
  return f;
}

struct GradCheckResult {
  double max_rel = 0.0;
  std::size_t checked = 0;
};

GradCheckResult check_all(GradFixture& f) {
  ParamSet genc = f.ck.encoder.p.zeros_like(), ghead = f.ck.head.p.zeros_like();
  window_step(f.ck, f.doc_ids, f.w, {1.0, 1.0, 1.0}, static_cast<double>(f.w.targets.size()), f.seed, genc,
              ghead);
  GradCheckResult r;
  const double h = 1e-5;
  auto check_set = [&](ParamSet& params, const ParamSet& grads) {
    for (std::size_t t = 0; t < params.size(); ++t) {
      for (Eigen::Index i = 0; i < params[t].size(); ++i) {
        double& x = params[t].data()[i];
        const double orig = x;
        x = orig + h;
        const double lp = f.loss();
        x = orig - h;
        const double lm = f.loss();
        x = orig;
        const double numeric = (lp - lm) / (2 * h);
        const double analytic = grads[t].data()[i];
        const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
        const double rel = std::abs(numeric - analytic) / denom;
        r.max_rel = std::max(r.max_rel, rel);
        ++r.checked;
        EXPECT_LT(rel, 1e-4) << params.tensors[t].name << "[" << i << "] analytic=" << analytic
                             << " numeric=" << numeric;
      }
    }
  };
  check_set(f.ck.encoder.p, genc);
  check_set(f.ck.head.p, ghead);
  return r;
}

TEST(Gradients, MatchFiniteDifferencesSmallConfig) {
  auto f = make_fixture(small_config(8, 1, 1, 0.1));
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = check_all(f);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_GT(r.checked, 500u);
  EXPECT_LT(r.max_rel, 1e-4);
  EXPECT_LT(secs, 30.0);
}

TEST(Gradients, MatchFiniteDifferencesMultiHeadTwoLayers) {
  auto f = make_fixture(small_config(8, 2, 2, 0.2));
  EXPECT_LT(check_all(f).max_rel, 1e-4);
}

TEST(Gradients, UnusedParametersGetZeroAndLossScalesLinearly) {
  auto f = make_fixture(small_config());
  ParamSet g1 = f.ck.encoder.p.zeros_like(), h1 = f.ck.head.p.zeros_like();
  window_step(f.ck, f.doc_ids, f.w, {1, 1, 1}, 2.0, f.seed, g1, h1);
  // Token 3 ([MASK]) and unused vocabulary rows never appear in the input.
  EXPECT_EQ(g1[EncoderParams::kTokEmb].row(Vocab::kMask).norm(), 0.0);
  EXPECT_EQ(g1[EncoderParams::kTokEmb].row(15).norm(), 0.0);
  // Positions beyond the sequence length carry no gradient.
  EXPECT_EQ(g1[EncoderParams::kPosEmb].row(31).norm(), 0.0);

  ParamSet g2 = f.ck.encoder.p.zeros_like(), h2 = f.ck.head.p.zeros_like();
  window_step(f.ck, f.doc_ids, f.w, {1, 1, 1}, 1.0, f.seed, g2, h2);  // loss doubled
  for (std::size_t t = 0; t < g1.size(); ++t) EXPECT_TRUE(g2[t].isApprox(2.0 * g1[t], 1e-12));
  for (std::size_t t = 0; t < h1.size(); ++t) EXPECT_TRUE(h2[t].isApprox(2.0 * h1[t], 1e-12));
}

}  // namespace
}  // namespace argrel
