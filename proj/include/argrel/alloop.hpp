// Pool-based active learning: select -> label -> train -> evaluate, T times.
#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "argrel/acquire.hpp"
#include "argrel/eval.hpp"

namespace argrel {

// Pair labels obtained so far, per document index: (head, tail) -> label.
using RevealedLabels = std::map<std::size_t, std::map<std::pair<int, int>, Label>>;

// A head-centric labeling request.
struct LabelTask {
  std::string task_id;
  std::size_t doc = 0;
  int head = 0;
  std::vector<int> candidates;  // tails to decide, document order
  double score = 0.0;
};

struct TaskAnswer {
  std::string task_id;
  std::vector<std::pair<int, Label>> decisions;  // (tail, label)
};

class Oracle {
 public:
  virtual ~Oracle() = default;
  // Returns one answer per task, in task order.
  virtual std::vector<TaskAnswer> answer(const Corpus& corpus, const std::vector<LabelTask>& tasks, int iteration) = 0;
};

// Answers from the corpus' own gold relations.
class SimulatedOracle : public Oracle {
 public:
  std::vector<TaskAnswer> answer(const Corpus& corpus, const std::vector<LabelTask>& tasks, int) override {
    std::vector<TaskAnswer> out;
    for (const auto& t : tasks) {
      const auto gold = gold_pair_labels(corpus.documents[t.doc]);
      TaskAnswer a{t.task_id, {}};
      for (int c : t.candidates) {
        const auto it = gold.find({t.head, c});
        a.decisions.emplace_back(c, it == gold.end() ? Label::no_rel : it->second);
      }
      out.push_back(std::move(a));
    }
    return out;
  }
};

inline std::string make_task_id(const std::string& run_id, int iteration, const std::string& doc_id, int head) {
  return run_id + "/" + std::to_string(iteration) + "/" + doc_id + "/" + std::to_string(head);
}

// How pair labels materialise from selected propositions.
//  * pairwise: pairs (j, i) with both j and i labeled and i inside the window
//    of j.
//  * incident: every pair inside a window that involves a selected
//    proposition, whether or not the other end is labeled.
enum class LabelingUnit { pairwise, incident };

inline std::string_view to_string(LabelingUnit u) { return u == LabelingUnit::pairwise ? "pairwise" : "incident"; }
inline LabelingUnit labeling_unit_from_string(std::string_view s) {
  if (s == "pairwise") return LabelingUnit::pairwise;
  if (s == "incident") return LabelingUnit::incident;
  fail(ErrorCode::parse, "unknown labeling unit '" + std::string(s) + "'");
}

// One task per selected proposition (as head, in selection order) followed
// by tasks for other heads that gain undecided candidates.
inline std::vector<LabelTask> make_tasks(const Corpus& corpus, const Pool& previous, const Selection& selected,
                                         const RevealedLabels& revealed, const WindowConfig& window,
                                         LabelingUnit unit, const std::string& run_id, int iteration) {
  Pool now = previous;
  for (const auto& r : selected.items) now.insert(r);
  std::map<std::size_t, std::vector<int>> lengths;
  auto context_of = [&](const PropRef& r) {
    const Document& doc = corpus.documents[r.doc];
    auto& len = lengths[r.doc];
    if (len.empty())
      for (const auto& p : doc.propositions) len.push_back(default_token_length(p.text));
    return window_context(doc, r.prop, window, len);
  };
  auto known = [&](std::size_t d, int h, int t) {
    const auto it = revealed.find(d);
    return it != revealed.end() && it->second.count({h, t});
  };
  std::map<PropRef, std::set<int>> wanted;
  for (const auto& r : selected.items) {
    wanted[r];
    for (int c : context_of(r)) {
      if (c == r.prop) continue;
      const PropRef other{r.doc, c};
      if (unit == LabelingUnit::pairwise && !now.count(other)) continue;
      if (!known(r.doc, r.prop, c)) wanted[r].insert(c);
      const auto back = context_of(other);
      if (std::find(back.begin(), back.end(), r.prop) != back.end() && !known(r.doc, c, r.prop))
        wanted[other].insert(r.prop);
    }
  }
  std::vector<LabelTask> tasks;
  auto emit = [&](const PropRef& r, double score) {
    const auto& cand = wanted[r];
    tasks.push_back({make_task_id(run_id, iteration, corpus.documents[r.doc].doc_id, r.prop), r.doc, r.prop,
                     std::vector<int>(cand.begin(), cand.end()), score});
  };
  std::set<PropRef> emitted;
  for (std::size_t k = 0; k < selected.items.size(); ++k) {
    emit(selected.items[k], selected.scores[k]);
    emitted.insert(selected.items[k]);
  }
  for (const auto& [r, cand] : wanted)
    if (!emitted.count(r) && !cand.empty()) emit(r, 0.0);
  return tasks;
}

// Training windows from revealed labels. In head-given mode only heads with
// at least one revealed support/attack label are used.
inline std::vector<Window> revealed_windows(const Corpus& corpus, const RevealedLabels& revealed,
                                            const WindowConfig& window) {
  std::vector<Window> out;
  for (const auto& [d, pairs] : revealed) {
    const Document& doc = corpus.documents[d];
    std::vector<int> lengths;
    for (const auto& p : doc.propositions) lengths.push_back(default_token_length(p.text));
    std::map<int, std::vector<std::pair<int, Label>>> by_head;
    for (const auto& [ht, label] : pairs) by_head[ht.first].emplace_back(ht.second, label);
    for (auto& [head, targets] : by_head) {
      if (window.mode == WindowMode::head_given &&
          std::none_of(targets.begin(), targets.end(), [](const auto& t) { return is_positive(t.second); }))
        continue;
      Window w;
      w.doc = d;
      w.head = head;
      w.context = window_context(doc, head, window, lengths);
      for (const auto& t : targets)
        if (std::find(w.context.begin(), w.context.end(), t.first) != w.context.end()) w.targets.push_back(t);
      if (!w.targets.empty()) out.push_back(std::move(w));
    }
  }
  return out;
}

enum class OracleKind { simulated, external };

struct ALConfig {
  int T = 10;
  int b = -1;  // -1: ceil(|U| / 10)
  Strategy strategy = Strategy::random_prop;
  WindowConfig window;
  TrainConfig train;
  const Checkpoint* warm_start = nullptr;
  OracleKind oracle = OracleKind::simulated;
  std::uint64_t seed = 0;
  int mc_passes = 10;
  LabelingUnit labeling = LabelingUnit::pairwise;
  std::string run_id = "run";
  std::string checkpoint_dir;  // when set, each M_t is saved there
  std::string state_path;      // resumable state (external oracle)
};

struct ALRecord {
  int iteration = 0;
  std::vector<PropRef> selected;
  std::size_t labeled = 0;         // |D_t|
  std::size_t revealed_pairs = 0;
  bool random_fallback = false;    // model-based strategy replaced by random_prop
  bool trained = false;            // false when no pair labels were available
  std::string checkpoint_ref;
  Metrics metrics;
};

struct ALTrace {
  Strategy strategy = Strategy::random_prop;
  bool warm_start = false;
  std::uint64_t seed = 0;
  int T = 0;
  std::size_t b = 0;
  bool truncated = false;
  std::vector<ALRecord> iterations;
};

inline std::size_t resolve_budget(const ALConfig& cfg, std::size_t pool_size) {
  if (cfg.b == -1) return std::max<std::size_t>(1, (pool_size + 9) / 10);
  require(cfg.b >= 1, ErrorCode::config, "AL budget b must be >= 1");
  return static_cast<std::size_t>(cfg.b);
}

// Train config with the per-run seeds filled in from the AL seed.
inline TrainConfig seeded_train_config(const ALConfig& cfg) {
  TrainConfig tc = cfg.train;
  tc.seed = derive_seed(cfg.seed, "train");
  tc.encoder.seed = derive_seed(cfg.seed, "encoder-init");
  return tc;
}

struct ALState {
  int next_iteration = 1;
  Pool labeled;
  RevealedLabels revealed;
  ALTrace trace;
  std::optional<Selection> pending_selection;
  bool pending_fallback = false;
};

inline nlohmann::json to_json(const PropRef& r) { return nlohmann::json::array({r.doc, r.prop}); }
inline PropRef prop_ref_from_json(const nlohmann::json& j) { return {j.at(0).get<std::size_t>(), j.at(1).get<int>()}; }

inline nlohmann::json metrics_state(const Metrics& m) {
  nlohmann::json cm = nlohmann::json::array();
  for (const auto& row : m.cm.counts) cm.push_back(row);
  return {{"confusion", cm}, {"two_class", m.two_class}};
}

inline Metrics metrics_from_state(const nlohmann::json& j) {
  ConfusionMatrix cm;
  for (int g = 0; g < kNumLabels; ++g)
    for (int p = 0; p < kNumLabels; ++p)
      cm.counts[static_cast<std::size_t>(g)][static_cast<std::size_t>(p)] = j.at("confusion").at(g).at(p).get<long>();
  return metrics_from_confusion(cm, !j.at("two_class").get<bool>());
}

inline nlohmann::json state_to_json(const ALState& s) {
  nlohmann::json j;
  j["next_iteration"] = s.next_iteration;
  j["labeled"] = nlohmann::json::array();
  for (const auto& r : s.labeled) j["labeled"].push_back(to_json(r));
  j["revealed"] = nlohmann::json::array();
  for (const auto& [d, pairs] : s.revealed)
    for (const auto& [ht, l] : pairs) j["revealed"].push_back({d, ht.first, ht.second, to_string(l)});
  j["truncated"] = s.trace.truncated;
  j["iterations"] = nlohmann::json::array();
  for (const auto& rec : s.trace.iterations) {
    nlohmann::json r = {{"iteration", rec.iteration},          {"labeled", rec.labeled},
                        {"revealed_pairs", rec.revealed_pairs}, {"random_fallback", rec.random_fallback},
                        {"trained", rec.trained},               {"checkpoint_ref", rec.checkpoint_ref},
                        {"metrics", metrics_state(rec.metrics)}};
    r["selected"] = nlohmann::json::array();
    for (const auto& p : rec.selected) r["selected"].push_back(to_json(p));
    j["iterations"].push_back(r);
  }
  if (s.pending_selection) {
    nlohmann::json p = {{"fallback", s.pending_fallback}, {"items", nlohmann::json::array()},
                        {"scores", s.pending_selection->scores}};
    for (const auto& r : s.pending_selection->items) p["items"].push_back(to_json(r));
    j["pending"] = p;
  }
  return j;
}

inline ALState state_from_json(const nlohmann::json& j) {
  ALState s;
  s.next_iteration = j.at("next_iteration").get<int>();
  for (const auto& r : j.at("labeled")) s.labeled.insert(prop_ref_from_json(r));
  for (const auto& r : j.at("revealed"))
    s.revealed[r.at(0).get<std::size_t>()][{r.at(1).get<int>(), r.at(2).get<int>()}] =
        label_from_string(r.at(3).get<std::string>());
  s.trace.truncated = j.value("truncated", false);
  for (const auto& r : j.at("iterations")) {
    ALRecord rec;
    rec.iteration = r.at("iteration").get<int>();
    rec.labeled = r.at("labeled").get<std::size_t>();
    rec.revealed_pairs = r.at("revealed_pairs").get<std::size_t>();
    rec.random_fallback = r.at("random_fallback").get<bool>();
    rec.trained = r.at("trained").get<bool>();
    rec.checkpoint_ref = r.at("checkpoint_ref").get<std::string>();
    rec.metrics = metrics_from_state(r.at("metrics"));
    for (const auto& p : r.at("selected")) rec.selected.push_back(prop_ref_from_json(p));
    s.trace.iterations.push_back(std::move(rec));
  }
  if (j.contains("pending")) {
    Selection sel;
    for (const auto& p : j.at("pending").at("items")) sel.items.push_back(prop_ref_from_json(p));
    sel.scores = j.at("pending").at("scores").get<std::vector<double>>();
    s.pending_selection = sel;
    s.pending_fallback = j.at("pending").at("fallback").get<bool>();
  }
  return s;
}

inline void save_state(const ALState& s, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    require(out.good(), ErrorCode::io, "cannot write AL state " + tmp);
    out << state_to_json(s).dump() << '\n';
  }
  std::filesystem::rename(tmp, path);
}

inline std::optional<ALState> load_state(const std::string& path) {
  if (path.empty() || !std::filesystem::exists(path)) return std::nullopt;
  std::ifstream in(path);
  try {
    return state_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::parse, "unreadable AL state " + path + ": " + e.what());
  }
}

// Progress hooks for an attached annotation service.
struct ALObserver {
  std::function<void(int iteration, std::size_t labeled, std::string_view status)> on_status;
};

inline ALTrace run_al(const Corpus& pool_corpus, const Corpus& test, const ALConfig& cfg, Oracle& oracle,
                      const ALObserver* observer = nullptr) {
  require(cfg.T >= 1, ErrorCode::config, "AL iterations T must be >= 1");
  require(!pool_corpus.documents.empty(), ErrorCode::precondition, "AL pool corpus is empty");
  const Pool all = full_pool(pool_corpus);
  const std::size_t b = resolve_budget(cfg, all.size());
  const TrainConfig tc = seeded_train_config(cfg);

  ALState st = load_state(cfg.state_path).value_or(ALState{});
  st.trace.strategy = cfg.strategy;
  st.trace.warm_start = cfg.warm_start != nullptr;
  st.trace.seed = cfg.seed;
  st.trace.T = cfg.T;
  st.trace.b = b;

  const Vocab cold_vocab = build_vocab(pool_corpus, tc.min_count);
  std::optional<Checkpoint> previous;
  auto status = [&](int it, std::string_view s) {
    if (observer && observer->on_status) observer->on_status(it, st.labeled.size(), s);
  };

  auto build_model = [&](const RevealedLabels& revealed, bool& trained) {
    const auto windows = revealed_windows(pool_corpus, revealed, cfg.window);
    std::size_t targets = 0;
    for (const auto& w : windows) targets += w.targets.size();
    trained = targets > 0;
    if (trained) return train_windows(pool_corpus, windows, tc, cfg.warm_start).checkpoint;
    if (!cfg.warm_start) return init_checkpoint(cold_vocab, tc);
    Checkpoint model = *cfg.warm_start;
    if (!model.has_head) {
      model.head = init_relation_head(tc.encoder.dim, tc.hidden > 0 ? tc.hidden : tc.encoder.dim,
                                      derive_seed(tc.encoder.seed, "relation-head"));
      model.has_head = true;
    }
    return model;
  };
  if (st.next_iteration > 1 && !st.pending_selection && is_model_based(cfg.strategy)) {
    bool trained = false;
    previous = build_model(st.revealed, trained);
  }

  for (int t = st.next_iteration; t <= cfg.T; ++t) {
    Pool unlabeled;
    std::set_difference(all.begin(), all.end(), st.labeled.begin(), st.labeled.end(),
                        std::inserter(unlabeled, unlabeled.end()));
    if (unlabeled.empty()) {
      st.trace.truncated = true;
      break;
    }
    const std::size_t bt = std::min(b, unlabeled.size());
    if (bt < b) st.trace.truncated = true;

    ALRecord rec;
    rec.iteration = t;
    Selection sel;
    if (st.pending_selection) {
      sel = *st.pending_selection;
      rec.random_fallback = st.pending_fallback;
    } else {
      const Checkpoint* model = previous ? &*previous : cfg.warm_start;
      Strategy s = cfg.strategy;
      if (is_model_based(s) && (model == nullptr || (s != Strategy::coreset && !model->has_head))) {
        s = Strategy::random_prop;
        rec.random_fallback = true;
      }
      SelectContext ctx{model, cfg.window, derive_seed(cfg.seed, "selection", static_cast<std::uint64_t>(t)),
                        cfg.mc_passes, nullptr};
      sel = select(s, pool_corpus, unlabeled, st.labeled, bt, ctx);
      st.pending_selection = sel;
      st.pending_fallback = rec.random_fallback;
      if (!cfg.state_path.empty()) save_state(st, cfg.state_path);
    }

    status(t, "waiting_for_labels");
    const auto tasks = make_tasks(pool_corpus, st.labeled, sel, st.revealed, cfg.window, cfg.labeling, cfg.run_id, t);
    const auto answers = oracle.answer(pool_corpus, tasks, t);
    for (std::size_t k = 0; k < tasks.size(); ++k)
      for (const auto& [tail, label] : answers[k].decisions) st.revealed[tasks[k].doc][{tasks[k].head, tail}] = label;
    for (const auto& r : sel.items) st.labeled.insert(r);
    st.pending_selection.reset();

    status(t, "training");
    rec.selected = sel.items;
    rec.labeled = st.labeled.size();
    for (const auto& [d, pairs] : st.revealed) rec.revealed_pairs += pairs.size();
    Checkpoint model = build_model(st.revealed, rec.trained);
    const std::string bytes = encode_checkpoint(model);
    rec.checkpoint_ref = "sha256:" + sha256_hex(bytes);
    if (!cfg.checkpoint_dir.empty()) {
      std::filesystem::create_directories(cfg.checkpoint_dir);
      write_file((std::filesystem::path(cfg.checkpoint_dir) / ("iter-" + std::to_string(t) + ".ckpt")).string(),
                 bytes);
    }
    rec.metrics = evaluate(predict_corpus(test, model, cfg.window), test, cfg.window);
    previous = std::move(model);
    st.trace.iterations.push_back(std::move(rec));
    st.next_iteration = t + 1;
    if (!cfg.state_path.empty()) save_state(st, cfg.state_path);
  }
  status(cfg.T, "finished");
  return st.trace;
}

// ---------------------------------------------------------------------------
// Strategy comparison.

struct Variant {
  Strategy strategy = Strategy::random_prop;
  bool warm = false;

  std::string name() const { return std::string(to_string(strategy)) + (warm ? "+tl" : ""); }
  auto operator<=>(const Variant&) const = default;
};

struct CompareCell {
  double mean_f1 = 0.0;
  std::optional<double> warm_delta;  // mean(warm) - mean(cold), warm variants only
};

struct CompareReport {
  std::vector<Variant> variants;
  std::vector<std::uint64_t> seeds;
  int T = 0;
  std::map<std::pair<Variant, int>, CompareCell> cells;  // (variant, iteration)
  std::vector<TableRow> rows;
};

inline std::vector<std::uint64_t> replicate_seeds(std::uint64_t base, int R) {
  std::vector<std::uint64_t> s;
  for (int i = 0; i < R; ++i) s.push_back(base + static_cast<std::uint64_t>(i));
  return s;
}

inline CompareReport compare_strategies(const std::vector<Variant>& variants, const std::vector<std::uint64_t>& seeds,
                                        const Corpus& pool_corpus, const Corpus& test, const ALConfig& shared,
                                        const std::string& dataset = "synthetic") {
  require(!variants.empty(), ErrorCode::config, "compare_strategies needs at least one strategy");
  require(!seeds.empty(), ErrorCode::config, "compare_strategies needs at least one seed");
  for (const auto& v : variants)
    require(!v.warm || shared.warm_start != nullptr, ErrorCode::config,
            "warm-start variant " + v.name() + " requires a warm-start checkpoint");
  CompareReport rep;
  rep.variants = variants;
  rep.seeds = seeds;
  rep.T = shared.T;
  std::map<std::pair<Variant, int>, std::vector<double>> values;
  for (const auto& v : variants)
    for (auto seed : seeds) {
      ALConfig cfg = shared;
      cfg.strategy = v.strategy;
      cfg.seed = seed;
      cfg.warm_start = v.warm ? shared.warm_start : nullptr;
      cfg.state_path.clear();
      SimulatedOracle oracle;
      const auto trace = run_al(pool_corpus, test, cfg, oracle);
      for (const auto& rec : trace.iterations) {
        values[{v, rec.iteration}].push_back(rec.metrics.macro_f1);
        rep.rows.push_back({dataset, v.name(), rec.iteration, seed, rec.metrics});
      }
    }
  for (const auto& [key, vals] : values) {
    double s = 0.0;
    for (double x : vals) s += x;
    rep.cells[key].mean_f1 = s / static_cast<double>(vals.size());
  }
  for (auto& [key, cell] : rep.cells) {
    if (!key.first.warm) continue;
    const auto cold = rep.cells.find({Variant{key.first.strategy, false}, key.second});
    if (cold != rep.cells.end()) cell.warm_delta = cell.mean_f1 - cold->second.mean_f1;
  }
  return rep;
}

inline void write_compare_summary(std::ostream& out, const CompareReport& rep) {
  out << "variant,iteration,mean_macro_f1,warm_delta\n";
  for (const auto& v : rep.variants)
    for (int t = 1; t <= rep.T; ++t) {
      const auto it = rep.cells.find({v, t});
      if (it == rep.cells.end()) continue;
      out << v.name() << ',' << t << ',' << format_number(it->second.mean_f1) << ','
          << (it->second.warm_delta ? format_number(*it->second.warm_delta) : std::string()) << '\n';
    }
}

inline nlohmann::ordered_json to_json(const ALTrace& trace) {
  nlohmann::ordered_json j = {{"strategy", to_string(trace.strategy)}, {"warm_start", trace.warm_start},
                              {"seed", trace.seed},                     {"T", trace.T},
                              {"b", trace.b},                           {"truncated", trace.truncated}};
  j["iterations"] = nlohmann::ordered_json::array();
  for (const auto& r : trace.iterations) {
    nlohmann::ordered_json rec = {{"iteration", r.iteration},
                                  {"labeled", r.labeled},
                                  {"revealed_pairs", r.revealed_pairs},
                                  {"random_fallback", r.random_fallback},
                                  {"trained", r.trained},
                                  {"checkpoint", r.checkpoint_ref},
                                  {"metrics", to_json(r.metrics)}};
    rec["selected"] = nlohmann::ordered_json::array();
    for (const auto& p : r.selected) rec["selected"].push_back({p.doc, p.prop});
    j["iterations"].push_back(rec);
  }
  return j;
}

}  // namespace argrel
