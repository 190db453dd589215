#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "argrel/alloop.hpp"

namespace argrel {
namespace {

Corpus synth(std::uint64_t seed, int docs, int props = 10) {
  SynthConfig cfg;
  cfg.seed = seed;
  cfg.n_docs = docs;
  cfg.props_per_doc = props;
  cfg.marker_plant_prob = 1.0;
  return generate_synthetic(cfg);
}

ALConfig tiny_config() {
  ALConfig cfg;
  cfg.T = 3;
  cfg.b = 10;
  cfg.window.L = 2;
  cfg.window.mode = WindowMode::end_to_end;
  cfg.train.epochs = 1;
  cfg.train.batch_size = 8;
  cfg.train.encoder.dim = 8;
  cfg.train.encoder.layers = 1;
  cfg.train.encoder.heads = 1;
  cfg.train.encoder.ffn_mult = 1;
  cfg.train.encoder.max_positions = 128;
  cfg.mc_passes = 2;
  cfg.seed = 5;
  return cfg;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an argrel::Error";
  return ErrorCode::io;
}

TEST(Budget, DefaultIsTenPercentRoundedUp) {
  ALConfig cfg;
  EXPECT_EQ(resolve_budget(cfg, 100), 10u);
  EXPECT_EQ(resolve_budget(cfg, 101), 11u);
  EXPECT_EQ(resolve_budget(cfg, 3), 1u);
  cfg.b = 7;
  EXPECT_EQ(resolve_budget(cfg, 100), 7u);
  cfg.b = 0;
  EXPECT_EQ(code_of([&] { resolve_budget(cfg, 100); }), ErrorCode::config);
  cfg.b = -3;
  EXPECT_EQ(code_of([&] { resolve_budget(cfg, 100); }), ErrorCode::config);
}

TEST(TaskId, Format) { EXPECT_EQ(make_task_id("r1", 3, "doc-7", 4), "r1/3/doc-7/4"); }

TEST(LabelingUnitNames, RoundTrip) {
  EXPECT_EQ(labeling_unit_from_string(to_string(LabelingUnit::incident)), LabelingUnit::incident);
  EXPECT_EQ(labeling_unit_from_string("pairwise"), LabelingUnit::pairwise);
  EXPECT_EQ(code_of([] { labeling_unit_from_string("all"); }), ErrorCode::parse);
}

TEST(RunAl, LabeledSetGrowsByBudgetEachIteration) {
  const auto pool = synth(1, 10);
  const auto test = synth(2, 3);
  auto cfg = tiny_config();
  cfg.T = 10;
  SimulatedOracle oracle;
  const auto trace = run_al(pool, test, cfg, oracle);
  ASSERT_EQ(trace.iterations.size(), 10u);
  EXPECT_EQ(trace.b, 10u);
  EXPECT_FALSE(trace.truncated);
  std::set<PropRef> seen;
  for (std::size_t t = 0; t < 10; ++t) {
    const auto& rec = trace.iterations[t];
    EXPECT_EQ(rec.iteration, static_cast<int>(t) + 1);
    EXPECT_EQ(rec.selected.size(), 10u);
    EXPECT_EQ(rec.labeled, 10u * (t + 1));
    for (const auto& r : rec.selected) EXPECT_TRUE(seen.insert(r).second);
    EXPECT_GE(rec.metrics.macro_f1, 0.0);
    EXPECT_LE(rec.metrics.macro_f1, 1.0);
    EXPECT_EQ(rec.checkpoint_ref.rfind("sha256:", 0), 0u);
  }
  EXPECT_EQ(seen, full_pool(pool));
}

TEST(RunAl, TruncatesWhenThePoolRunsOut) {
  const auto pool = synth(1, 2, 5);
  const auto test = synth(2, 2);
  auto cfg = tiny_config();
  cfg.T = 5;
  cfg.b = 4;
  SimulatedOracle oracle;
  const auto trace = run_al(pool, test, cfg, oracle);
  EXPECT_TRUE(trace.truncated);
  ASSERT_EQ(trace.iterations.size(), 3u);
  EXPECT_EQ(trace.iterations.back().selected.size(), 2u);
  EXPECT_EQ(trace.iterations.back().labeled, 10u);
}

TEST(RunAl, ConfigErrors) {
  const auto pool = synth(1, 2);
  SimulatedOracle oracle;
  auto cfg = tiny_config();
  cfg.b = 0;
  EXPECT_EQ(code_of([&] { run_al(pool, pool, cfg, oracle); }), ErrorCode::config);
  cfg = tiny_config();
  cfg.T = 0;
  EXPECT_EQ(code_of([&] { run_al(pool, pool, cfg, oracle); }), ErrorCode::config);
  EXPECT_EQ(code_of([&] { run_al(Corpus{}, pool, tiny_config(), oracle); }), ErrorCode::precondition);
}

TEST(RunAl, DeterministicGivenSeed) {
  const auto pool = synth(3, 6);
  const auto test = synth(4, 2);
  for (Strategy s : {Strategy::random_prop, Strategy::max_entropy, Strategy::coreset}) {
    auto cfg = tiny_config();
    cfg.strategy = s;
    SimulatedOracle o1, o2;
    const auto a = to_json(run_al(pool, test, cfg, o1));
    const auto b = to_json(run_al(pool, test, cfg, o2));
    EXPECT_EQ(a, b) << to_string(s);
  }
}

TEST(RunAl, ModelBasedFirstIterationFallsBackWithoutAModel) {
  const auto pool = synth(3, 6);
  auto cfg = tiny_config();
  cfg.strategy = Strategy::bald;
  SimulatedOracle oracle;
  const auto trace = run_al(pool, pool, cfg, oracle);
  EXPECT_TRUE(trace.iterations[0].random_fallback);
  EXPECT_FALSE(trace.iterations[1].random_fallback);
}

// Fails once the loop reaches a given iteration, as an interrupted external
// annotation round would.
class InterruptingOracle : public Oracle {
 public:
  explicit InterruptingOracle(int stop_at) : stop_at_(stop_at) {}
  std::vector<TaskAnswer> answer(const Corpus& corpus, const std::vector<LabelTask>& tasks, int iteration) override {
    if (iteration == stop_at_) fail(ErrorCode::timeout, "interrupted");
    return inner_.answer(corpus, tasks, iteration);
  }

 private:
  int stop_at_;
  SimulatedOracle inner_;
};

TEST(RunAl, ResumesFromSavedState) {
  const auto pool = synth(6, 6);
  const auto test = synth(7, 2);
  const auto dir = std::filesystem::temp_directory_path() / "argrel_al_resume";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  for (Strategy s : {Strategy::random_prop, Strategy::max_entropy}) {
    auto cfg = tiny_config();
    cfg.T = 4;
    cfg.strategy = s;
    SimulatedOracle straight;
    const auto expected = to_json(run_al(pool, test, cfg, straight));

    cfg.state_path = (dir / (std::string(to_string(s)) + ".json")).string();
    InterruptingOracle breaks(3);
    EXPECT_EQ(code_of([&] { run_al(pool, test, cfg, breaks); }), ErrorCode::timeout);
    const auto saved = load_state(cfg.state_path);
    ASSERT_TRUE(saved.has_value());
    EXPECT_EQ(saved->next_iteration, 3);
    EXPECT_TRUE(saved->pending_selection.has_value());

    SimulatedOracle rest;
    EXPECT_EQ(to_json(run_al(pool, test, cfg, rest)), expected) << to_string(s);
  }
  std::filesystem::remove_all(dir);
}

TEST(RunAl, StateJsonRoundTrip) {
  ALState s;
  s.next_iteration = 4;
  s.labeled = {{0, 1}, {2, 3}};
  s.revealed[0][{1, 2}] = Label::attack;
  s.pending_selection = Selection{{{1, 1}}, {0.5}};
  s.pending_fallback = true;
  ALRecord rec;
  rec.iteration = 1;
  rec.selected = {{0, 1}};
  rec.labeled = 1;
  ConfusionMatrix cm;
  cm.add(Label::support, Label::no_rel, 2);
  cm.add(Label::no_rel, Label::no_rel, 3);
  rec.metrics = metrics_from_confusion(cm, true);
  s.trace.iterations.push_back(rec);
  const auto back = state_from_json(state_to_json(s));
  EXPECT_EQ(back.next_iteration, 4);
  EXPECT_EQ(back.labeled, s.labeled);
  EXPECT_EQ(back.revealed, s.revealed);
  ASSERT_TRUE(back.pending_selection.has_value());
  EXPECT_EQ(back.pending_selection->items, s.pending_selection->items);
  EXPECT_TRUE(back.pending_fallback);
  EXPECT_EQ(to_json(back.trace), to_json(s.trace));
}

TEST(RunAl, ObserverSeesStatusTransitions) {
  const auto pool = synth(8, 3);
  auto cfg = tiny_config();
  cfg.T = 2;
  std::vector<std::string> seen;
  ALObserver obs{[&](int it, std::size_t, std::string_view s) { seen.push_back(std::to_string(it) + ":" + std::string(s)); }};
  SimulatedOracle oracle;
  run_al(pool, pool, cfg, oracle, &obs);
  EXPECT_EQ(seen, (std::vector<std::string>{"1:waiting_for_labels", "1:training", "2:waiting_for_labels",
                                            "2:training", "2:finished"}));
}

TEST(RunAl, CheckpointsWrittenPerIteration) {
  const auto pool = synth(8, 3);
  auto cfg = tiny_config();
  cfg.T = 2;
  const auto dir = std::filesystem::temp_directory_path() / "argrel_al_ckpt";
  std::filesystem::remove_all(dir);
  cfg.checkpoint_dir = dir.string();
  SimulatedOracle oracle;
  const auto trace = run_al(pool, pool, cfg, oracle);
  for (int t = 1; t <= 2; ++t) {
    const auto bytes = read_file((dir / ("iter-" + std::to_string(t) + ".ckpt")).string());
    EXPECT_EQ(trace.iterations[static_cast<std::size_t>(t - 1)].checkpoint_ref, "sha256:" + sha256_hex(bytes));
    EXPECT_NO_THROW(decode_checkpoint(bytes));
  }
  std::filesystem::remove_all(dir);
}

// Reference construction of the pairs a selection reveals.
std::set<std::tuple<std::size_t, int, int>> oracle_pairs(const Corpus& c, const Pool& labeled, const WindowConfig& w,
                                                         LabelingUnit unit) {
  std::set<std::tuple<std::size_t, int, int>> out;
  for (std::size_t d = 0; d < c.documents.size(); ++d) {
    const auto& doc = c.documents[d];
    std::vector<int> len;
    for (const auto& p : doc.propositions) len.push_back(default_token_length(p.text));
    for (int j = 0; j < static_cast<int>(doc.propositions.size()); ++j)
      for (int i : window_context(doc, j, w, len)) {
        if (i == j) continue;
        const bool hj = labeled.count({d, j}) > 0, hi = labeled.count({d, i}) > 0;
        if (unit == LabelingUnit::pairwise ? (hj && hi) : (hj || hi)) out.insert({d, j, i});
      }
  }
  return out;
}

TEST(MakeTasks, SelectedHeadsFirstAndPairsMatchReference) {
  const auto c = synth(9, 4, 8);
  WindowConfig w;
  w.L = 2;
  w.mode = WindowMode::end_to_end;
  Rng rng(3);
  for (LabelingUnit unit : {LabelingUnit::pairwise, LabelingUnit::incident}) {
    Pool labeled;
    RevealedLabels revealed;
    for (int it = 1; it <= 4; ++it) {
      Selection sel;
      while (sel.items.size() < 5) {
        const PropRef r{rng.index(4), static_cast<int>(rng.index(8))};
        if (labeled.count(r) || std::find(sel.items.begin(), sel.items.end(), r) != sel.items.end()) continue;
        sel.items.push_back(r);
        sel.scores.push_back(static_cast<double>(sel.items.size()));
      }
      const auto tasks = make_tasks(c, labeled, sel, revealed, w, unit, "run", it);
      ASSERT_GE(tasks.size(), sel.items.size());
      for (std::size_t k = 0; k < sel.items.size(); ++k) {
        EXPECT_EQ(tasks[k].doc, sel.items[k].doc);
        EXPECT_EQ(tasks[k].head, sel.items[k].prop);
        EXPECT_EQ(tasks[k].score, sel.scores[k]);
      }
      std::set<std::string> ids;
      for (const auto& t : tasks) {
        EXPECT_TRUE(ids.insert(t.task_id).second);
        EXPECT_TRUE(std::is_sorted(t.candidates.begin(), t.candidates.end()));
        for (int cand : t.candidates) {
          EXPECT_FALSE(revealed[t.doc].count({t.head, cand}));
          revealed[t.doc][{t.head, cand}] = Label::no_rel;
        }
      }
      for (const auto& r : sel.items) labeled.insert(r);
      std::set<std::tuple<std::size_t, int, int>> got;
      for (const auto& [d, pairs] : revealed)
        for (const auto& [p, l] : pairs) got.insert({d, p.first, p.second});
      EXPECT_EQ(got, oracle_pairs(c, labeled, w, unit)) << to_string(unit) << " iteration " << it;
    }
  }
}

TEST(RevealedWindows, OnlyRevealedTargets) {
  const auto c = synth(10, 2, 6);
  WindowConfig w;
  w.L = 2;
  w.mode = WindowMode::end_to_end;
  RevealedLabels revealed;
  revealed[0][{1, 2}] = Label::support;
  revealed[0][{1, 3}] = Label::no_rel;
  revealed[1][{4, 5}] = Label::no_rel;
  const auto windows = revealed_windows(c, revealed, w);
  std::size_t targets = 0;
  for (const auto& win : windows) targets += win.targets.size();
  EXPECT_EQ(targets, 3u);
  w.mode = WindowMode::head_given;
  targets = 0;
  for (const auto& win : revealed_windows(c, revealed, w)) targets += win.targets.size();
  EXPECT_EQ(targets, 2u);
}

TEST(Compare, SingleSeedMatchesTraceAndZeroDeltaForIdenticalInit) {
  const auto pool = synth(11, 5);
  const auto test = synth(12, 2);
  auto shared = tiny_config();
  shared.T = 2;
  const auto rep = compare_strategies({{Strategy::random_prop, false}}, {5}, pool, test, shared, "synth");
  SimulatedOracle oracle;
  auto cfg = shared;
  cfg.seed = 5;
  const auto trace = run_al(pool, test, cfg, oracle);
  for (int t = 1; t <= 2; ++t)
    EXPECT_EQ((rep.cells.at({Variant{Strategy::random_prop, false}, t}).mean_f1),
              trace.iterations[static_cast<std::size_t>(t - 1)].metrics.macro_f1);
  EXPECT_EQ(rep.rows.size(), 2u);

  // A warm start equal to the cold initialisation yields no difference.
  const auto tc = seeded_train_config(cfg);
  Checkpoint warm = init_checkpoint(build_vocab(pool, tc.min_count), tc);
  warm.has_head = false;
  shared.warm_start = &warm;
  const auto both = compare_strategies({{Strategy::random_prop, false}, {Strategy::random_prop, true}}, {5}, pool,
                                       test, shared, "synth");
  for (int t = 1; t <= 2; ++t) {
    const auto& cell = both.cells.at({Variant{Strategy::random_prop, true}, t});
    ASSERT_TRUE(cell.warm_delta.has_value());
    EXPECT_NEAR(*cell.warm_delta, 0.0, 1e-12);
    EXPECT_FALSE(both.cells.at({Variant{Strategy::random_prop, false}, t}).warm_delta.has_value());
  }
  std::ostringstream os;
  write_compare_summary(os, both);
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "variant,iteration,mean_macro_f1,warm_delta");
  EXPECT_NE(os.str().find("random_prop+tl,1,"), std::string::npos);
}

TEST(Compare, Errors) {
  const auto pool = synth(11, 2);
  const auto shared = tiny_config();
  EXPECT_EQ(code_of([&] { compare_strategies({{Strategy::random_prop, true}}, {1}, pool, pool, shared); }),
            ErrorCode::config);
  EXPECT_EQ(code_of([&] { compare_strategies({}, {1}, pool, pool, shared); }), ErrorCode::config);
  EXPECT_EQ(code_of([&] { compare_strategies({{Strategy::random_prop, false}}, {}, pool, pool, shared); }),
            ErrorCode::config);
  EXPECT_EQ(replicate_seeds(7, 3), (std::vector<std::uint64_t>{7, 8, 9}));
}

}  // namespace
}  // namespace argrel
