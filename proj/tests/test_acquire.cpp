#include <gtest/gtest.h>

#include <cmath>

#include "argrel/acquire.hpp"

namespace argrel {
namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an argrel::Error";
  return ErrorCode::io;
}

TEST(Entropy, Values) {
  EXPECT_NEAR(entropy({1.0 / 3, 1.0 / 3, 1.0 / 3}), std::log(3.0), 1e-15);
  EXPECT_EQ(entropy({1.0, 0.0, 0.0}), 0.0);
  EXPECT_NEAR(entropy({0.7, 0.2, 0.1}), 0.8018, 1e-4);
}

TEST(Bald, ValuesAndNonNegativity) {
  EXPECT_NEAR(bald_score({{1, 0, 0}, {0, 1, 0}}), std::log(2.0), 1e-15);
  EXPECT_NEAR(bald_score({{0.2, 0.3, 0.5}, {0.2, 0.3, 0.5}, {0.2, 0.3, 0.5}}), 0.0, 1e-15);
  EXPECT_EQ(code_of([] { bald_score({{1, 0, 0}}); }), ErrorCode::precondition);
  Rng rng(2);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<LabelDistribution> passes;
    const int k = 2 + static_cast<int>(rng.index(8));
    for (int i = 0; i < k; ++i) {
      LabelDistribution d{rng.uniform(), rng.uniform(), rng.uniform()};
      const double s = d[0] + d[1] + d[2];
      for (auto& v : d) v /= s;
      passes.push_back(d);
    }
    const double score = bald_score(passes);
    EXPECT_GE(score, 0.0);
    LabelDistribution mean{};
    for (const auto& p : passes)
      for (int c = 0; c < 3; ++c) mean[static_cast<std::size_t>(c)] += p[static_cast<std::size_t>(c)] / k;
    EXPECT_LE(score, entropy(mean) + 1e-12);
  }
}

TEST(Novelty, CountsAreFrozenPerRound) {
  VocabCounts counts = update_vocab_counts({}, {{"b", "b"}, {"b", "c"}});
  EXPECT_EQ(counts["b"], 3);
  EXPECT_EQ(counts["a"], 0);
  EXPECT_DOUBLE_EQ(novelty_score({"a", "a", "b"}, counts), 2.25);
  EXPECT_EQ(novelty_score({}, counts), 0.0);
  // Brute-force restatement.
  Rng rng(6);
  const std::vector<std::string> words = {"w0", "w1", "w2", "w3", "w4"};
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::vector<std::string>> labeled(3);
    for (auto& p : labeled)
      for (int i = 0; i < 4; ++i) p.push_back(words[rng.index(words.size())]);
    std::vector<std::string> cand;
    for (int i = 0; i < 6; ++i) cand.push_back(words[rng.index(words.size())]);
    const auto vc = update_vocab_counts({}, labeled);
    double want = 0;
    for (const auto& w : words) {
      long f = 0, v = 0;
      for (const auto& t : cand) f += t == w;
      for (const auto& p : labeled)
        for (const auto& t : p) v += t == w;
      want += static_cast<double>(f) / (1.0 + static_cast<double>(v));
    }
    EXPECT_NEAR(novelty_score(cand, vc), want, 1e-12);
  }
}

RowVec pt(std::initializer_list<double> v) {
  RowVec r(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) r(i++) = x;
  return r;
}

TEST(KCenter, HandExample) {
  const std::vector<RowVec> cand = {pt({0}), pt({10}), pt({4})};
  EXPECT_EQ(kcenter_greedy(cand, {}, 3, 0), (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(kcenter_greedy(cand, {pt({0})}, 2), (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(kcenter_greedy(cand, {pt({0}), pt({10})}, 1), (std::vector<std::size_t>{2}));
  EXPECT_EQ(code_of([&] { kcenter_greedy(cand, {}, 4); }), ErrorCode::budget);
}

TEST(KCenter, EachPickIsFarthestFromChosenSet) {
  Rng rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<RowVec> cand, centers;
    const int n = 3 + static_cast<int>(rng.index(20));
    for (int i = 0; i < n; ++i) cand.push_back(pt({rng.normal(), rng.normal()}));
    const int m = static_cast<int>(rng.index(3));
    for (int i = 0; i < m; ++i) centers.push_back(pt({rng.normal(), rng.normal()}));
    const std::size_t b = 1 + rng.index(static_cast<std::size_t>(n));
    const auto picks = kcenter_greedy(cand, centers, b, 0);
    std::vector<RowVec> chosen = centers;
    for (std::size_t step = 0; step < picks.size(); ++step) {
      if (chosen.empty()) {
        EXPECT_EQ(picks[step], 0u);
      } else {
        auto dist = [&](std::size_t i) {
          double best = std::numeric_limits<double>::infinity();
          for (const auto& c : chosen) best = std::min(best, (cand[i] - c).norm());
          return best;
        };
        const double got = dist(picks[step]);
        for (std::size_t i = 0; i < cand.size(); ++i) {
          if (std::find(picks.begin(), picks.begin() + static_cast<std::ptrdiff_t>(step), i) !=
              picks.begin() + static_cast<std::ptrdiff_t>(step))
            continue;
          EXPECT_GE(got, dist(i));
        }
      }
      chosen.push_back(cand[picks[step]]);
    }
    std::set<std::size_t> uniq(picks.begin(), picks.end());
    EXPECT_EQ(uniq.size(), b);
  }
}

Corpus small_corpus() {
  SynthConfig cfg;
  cfg.n_docs = 6;
  cfg.props_per_doc = 12;
  cfg.seed = 21;
  cfg.marker_plant_prob = 1.0;
  return generate_synthetic(cfg);
}

Checkpoint small_checkpoint(const Corpus& c) {
  TrainConfig t;
  t.encoder.dim = 8;
  t.encoder.layers = 1;
  t.encoder.heads = 1;
  t.encoder.ffn_mult = 2;
  t.encoder.max_positions = 256;
  return init_checkpoint(build_vocab(c), t);
}

TEST(Select, EveryStrategyReturnsDistinctPoolMembers) {
  const auto corpus = small_corpus();
  const auto ck = small_checkpoint(corpus);
  Pool U = full_pool(corpus), D;
  for (int p = 0; p < 6; ++p) {
    D.insert({0, p});
    U.erase({0, p});
  }
  SelectContext ctx;
  ctx.checkpoint = &ck;
  ctx.window.L = 2;
  ctx.seed = 5;
  ctx.mc_passes = 3;
  for (Strategy s : kAllStrategies)
    for (std::size_t b : {std::size_t{1}, std::size_t{7}, U.size()}) {
      const auto sel = select(s, corpus, U, D, b, ctx);
      ASSERT_EQ(sel.items.size(), b) << to_string(s);
      std::set<PropRef> uniq(sel.items.begin(), sel.items.end());
      EXPECT_EQ(uniq.size(), b) << to_string(s);
      for (const auto& r : sel.items) EXPECT_TRUE(U.count(r)) << to_string(s);
      const auto again = select(s, corpus, U, D, b, ctx);
      EXPECT_EQ(again.items, sel.items) << to_string(s);
    }
  for (Strategy s : kAllStrategies) EXPECT_TRUE(select(s, corpus, U, D, 0, ctx).items.empty());
}

TEST(Select, BudgetAndModelErrors) {
  const auto corpus = small_corpus();
  const Pool U = full_pool(corpus);
  SelectContext ctx;
  EXPECT_EQ(code_of([&] { select(Strategy::random_prop, corpus, U, {}, U.size() + 1, ctx); }), ErrorCode::budget);
  for (Strategy s : {Strategy::max_entropy, Strategy::bald, Strategy::coreset})
    EXPECT_EQ(code_of([&] { select(s, corpus, U, {}, 3, ctx); }), ErrorCode::config);
  auto ck = small_checkpoint(corpus);
  ck.has_head = false;
  ctx.checkpoint = &ck;
  EXPECT_EQ(code_of([&] { select(Strategy::max_entropy, corpus, U, {}, 3, ctx); }), ErrorCode::config);
  EXPECT_EQ(select(Strategy::coreset, corpus, U, {}, 3, ctx).items.size(), 3u);
  EXPECT_EQ(strategy_from_string("bald"), Strategy::bald);
  EXPECT_EQ(code_of([] { strategy_from_string("greedy"); }), ErrorCode::parse);
}

TEST(Select, MarkerStrategiesPreferTheirSet) {
  const auto corpus = small_corpus();
  const Pool U = full_pool(corpus);
  std::set<PropRef> marked;
  for (const auto& r : U)
    if (has_marker(corpus.documents[r.doc].propositions[static_cast<std::size_t>(r.prop)].text)) marked.insert(r);
  ASSERT_GT(marked.size(), 2u);
  ASSERT_LT(marked.size(), U.size());
  SelectContext ctx;
  const auto few = select(Strategy::disc_marker, corpus, U, {}, 2, ctx);
  for (const auto& r : few.items) EXPECT_TRUE(marked.count(r));
  const auto all = select(Strategy::disc_marker, corpus, U, {}, marked.size(), ctx);
  EXPECT_EQ(std::set<PropRef>(all.items.begin(), all.items.end()), marked);
  const auto more = select(Strategy::disc_marker, corpus, U, {}, marked.size() + 3, ctx);
  for (const auto& r : marked) EXPECT_NE(std::find(more.items.begin(), more.items.end(), r), more.items.end());
  const auto unmarked = select(Strategy::no_disc_marker, corpus, U, {}, U.size() - marked.size(), ctx);
  for (const auto& r : unmarked.items) EXPECT_FALSE(marked.count(r));
}

TEST(Select, NovelVocabRanksByNovelty) {
  Corpus c;
  Document d;
  d.doc_id = "n";
  d.propositions = {{0, "alpha beta", PropType::fact},
                    {1, "alpha beta", PropType::fact},
                    {2, "gamma delta epsilon", PropType::fact},
                    {3, "alpha gamma", PropType::fact}};
  c.documents.push_back(d);
  const Pool D = {{0, 0}};
  const Pool U = {{0, 1}, {0, 2}, {0, 3}};
  const auto sel = select(Strategy::novel_vocab, c, U, D, 3, SelectContext{});
  EXPECT_EQ(sel.items, (std::vector<PropRef>{{0, 2}, {0, 3}, {0, 1}}));
  EXPECT_DOUBLE_EQ(sel.scores[0], 3.0);
  EXPECT_DOUBLE_EQ(sel.scores[1], 1.5);
  EXPECT_DOUBLE_EQ(sel.scores[2], 1.0);
}

TEST(Select, RandomContextStartsWithAContiguousRun) {
  const auto corpus = small_corpus();
  const Pool U = full_pool(corpus);
  SelectContext ctx;
  ctx.window.L = 3;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    ctx.seed = seed;
    const auto sel = select(Strategy::random_ctx, corpus, U, {}, 10, ctx);
    ASSERT_EQ(sel.items.size(), 10u);
    // The first anchor sees an untouched pool, so it takes L+1 neighbours in
    // one direction unless it hits a document edge first.
    const auto& a = sel.items[0];
    std::size_t run = 1;
    while (run < sel.items.size() && sel.items[run].doc == a.doc &&
           std::abs(sel.items[run].prop - a.prop) == static_cast<int>(run) &&
           (run < 2 || (sel.items[run].prop - a.prop) * (sel.items[1].prop - a.prop) > 0))
      ++run;
    EXPECT_LE(run, 4u);
    if (run < 4) {
      const int last = sel.items[run - 1].prop;
      EXPECT_TRUE(last == 0 || last == corpus.documents[a.doc].size() - 1) << "seed " << seed;
    }
  }
}

TEST(Select, UncertaintyPrefersHigherScores) {
  const auto corpus = small_corpus();
  const auto ck = small_checkpoint(corpus);
  const Pool U = full_pool(corpus);
  SelectContext ctx;
  ctx.checkpoint = &ck;
  ctx.window.L = 2;
  const auto sel = select(Strategy::max_entropy, corpus, U, {}, U.size(), ctx);
  for (std::size_t i = 1; i < sel.scores.size(); ++i) EXPECT_GE(sel.scores[i - 1], sel.scores[i]);
  for (double s : sel.scores) {
    EXPECT_GE(s, 0.0);
    EXPECT_LE(s, std::log(3.0) + 1e-12);
  }
}

}  // namespace
}  // namespace argrel
