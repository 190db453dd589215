// Pair-level metrics, Fleiss' kappa and flat result tables.
#pragma once

#include <array>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "argrel/baseline.hpp"
#include "argrel/relhead.hpp"

namespace argrel {

struct ConfusionMatrix {
  std::array<std::array<long, kNumLabels>, kNumLabels> counts{};  // [gold][predicted]

  void add(Label gold, Label predicted, long n = 1) {
    counts[static_cast<std::size_t>(gold)][static_cast<std::size_t>(predicted)] += n;
  }
  long at(Label gold, Label predicted) const {
    return counts[static_cast<std::size_t>(gold)][static_cast<std::size_t>(predicted)];
  }
  long total() const {
    long t = 0;
    for (const auto& row : counts)
      for (long v : row) t += v;
    return t;
  }
  long gold_count(Label c) const {
    long t = 0;
    for (long v : counts[static_cast<std::size_t>(c)]) t += v;
    return t;
  }
  long predicted_count(Label c) const {
    long t = 0;
    for (const auto& row : counts) t += row[static_cast<std::size_t>(c)];
    return t;
  }
  double precision(Label c) const {
    const long p = predicted_count(c);
    return p == 0 ? 0.0 : static_cast<double>(at(c, c)) / static_cast<double>(p);
  }
  double recall(Label c) const {
    const long g = gold_count(c);
    return g == 0 ? 0.0 : static_cast<double>(at(c, c)) / static_cast<double>(g);
  }
  double f1(Label c) const {
    const double p = precision(c), r = recall(c);
    return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
  }
  bool operator==(const ConfusionMatrix&) const = default;
};

inline double macro_f1(const ConfusionMatrix& cm, bool corpus_has_attack) {
  require(cm.total() > 0, ErrorCode::undefined_input, "macro_f1 of an empty confusion matrix");
  if (!corpus_has_attack) return (cm.f1(Label::support) + cm.f1(Label::no_rel)) / 2.0;
  return (cm.f1(Label::support) + cm.f1(Label::attack) + cm.f1(Label::no_rel)) / 3.0;
}

// Items x categories; every row sums to the same number of raters.
using RatingTable = std::vector<std::vector<long>>;

inline double fleiss_kappa(const RatingTable& ratings) {
  require(!ratings.empty(), ErrorCode::precondition, "fleiss_kappa needs at least one item");
  const std::size_t k = ratings[0].size();
  long n = 0;
  for (long v : ratings[0]) n += v;
  require(n >= 2, ErrorCode::precondition, "fleiss_kappa needs at least two raters");
  std::vector<double> p(k, 0.0);
  double pbar = 0.0;
  for (const auto& row : ratings) {
    require(row.size() == k, ErrorCode::precondition, "rating rows differ in category count");
    long sum = 0, sq = 0;
    for (std::size_t j = 0; j < k; ++j) {
      require(row[j] >= 0, ErrorCode::precondition, "negative rating count");
      sum += row[j];
      sq += row[j] * row[j];
      p[j] += static_cast<double>(row[j]);
    }
    require(sum == n, ErrorCode::precondition, "rating rows differ in rater count");
    pbar += static_cast<double>(sq - n) / static_cast<double>(n * (n - 1));
  }
  const auto items = static_cast<double>(ratings.size());
  pbar /= items;
  double pe = 0.0;
  for (double& pj : p) {
    pj /= items * static_cast<double>(n);
    pe += pj * pj;
  }
  bool unanimous = true;
  for (const auto& row : ratings)
    unanimous = unanimous && std::count_if(row.begin(), row.end(), [](long v) { return v > 0; }) == 1;
  if (unanimous) return 1.0;
  require(pe < 1.0, ErrorCode::undefined_input, "fleiss_kappa undefined: expected agreement is 1");
  return (pbar - pe) / (1.0 - pe);
}

struct PredictedPair {
  std::string doc_id;
  int head = 0;
  int tail = 0;
  Label predicted = Label::no_rel;
};

// Predictions tagged with the windowing they were produced under.
struct PredictionSet {
  WindowConfig window;
  std::vector<PredictedPair> pairs;
};

struct Metrics {
  ConfusionMatrix cm;
  bool two_class = false;
  std::array<double, kNumLabels> precision{}, recall{}, f1{};
  std::array<long, kNumLabels> support{};
  double macro_f1 = 0.0;
  long pairs = 0;
};

inline Metrics metrics_from_confusion(const ConfusionMatrix& cm, bool corpus_has_attack) {
  Metrics m;
  m.cm = cm;
  m.two_class = !corpus_has_attack;
  for (int c = 0; c < kNumLabels; ++c) {
    const auto l = static_cast<Label>(c);
    m.precision[static_cast<std::size_t>(c)] = cm.precision(l);
    m.recall[static_cast<std::size_t>(c)] = cm.recall(l);
    m.f1[static_cast<std::size_t>(c)] = cm.f1(l);
    m.support[static_cast<std::size_t>(c)] = cm.gold_count(l);
  }
  m.macro_f1 = macro_f1(cm, corpus_has_attack);
  m.pairs = cm.total();
  return m;
}

inline Metrics evaluate(const PredictionSet& predictions, const Corpus& gold, const WindowConfig& cfg) {
  require(predictions.window == cfg, ErrorCode::config,
          "predictions were produced under a different window configuration");
  std::map<std::tuple<std::string, int, int>, Label> expected;
  for (const auto& doc : gold.documents)
    for (const auto& ex : build_examples(doc, cfg)) expected[{doc.doc_id, ex.head, ex.tail}] = ex.label;
  require(expected.size() == predictions.pairs.size(), ErrorCode::config,
          "prediction count " + std::to_string(predictions.pairs.size()) + " does not match " +
              std::to_string(expected.size()) + " windowed gold pairs");
  ConfusionMatrix cm;
  for (const auto& p : predictions.pairs) {
    const auto it = expected.find({p.doc_id, p.head, p.tail});
    require(it != expected.end(), ErrorCode::config,
            "predicted pair (" + p.doc_id + ", " + std::to_string(p.head) + ", " + std::to_string(p.tail) +
                ") is not a windowed gold pair");
    cm.add(it->second, p.predicted);
  }
  return metrics_from_confusion(cm, gold.has_attack());
}

inline PredictionSet predict_corpus(const Corpus& corpus, const Checkpoint& ck, const WindowConfig& cfg) {
  PredictionSet out{cfg, {}};
  for (const auto& doc : corpus.documents)
    for (const auto& p : predict_document(doc, ck, cfg))
      out.pairs.push_back({doc.doc_id, p.head, p.tail, p.predicted});
  return out;
}

inline PredictionSet predict_corpus(const Corpus& corpus, const BaselineModel& m, const WindowConfig& cfg) {
  PredictionSet out{cfg, {}};
  for (const auto& doc : corpus.documents)
    for (const auto& ex : build_examples(doc, cfg))
      out.pairs.push_back(
          {doc.doc_id, ex.head, ex.tail, predict_linear(m.linear, extract_features(doc, ex.head, ex.tail, m.features))});
  return out;
}

inline nlohmann::ordered_json to_json(const Metrics& m) {
  nlohmann::ordered_json per_class = nlohmann::ordered_json::object();
  for (int c = 0; c < kNumLabels; ++c) {
    const auto i = static_cast<std::size_t>(c);
    per_class[std::string(to_string(static_cast<Label>(c)))] = {
        {"precision", m.precision[i]}, {"recall", m.recall[i]}, {"f1", m.f1[i]}, {"support", m.support[i]}};
  }
  nlohmann::ordered_json cm = nlohmann::ordered_json::array();
  for (const auto& row : m.cm.counts) cm.push_back(row);
  return {{"macro_f1", m.macro_f1}, {"two_class", m.two_class}, {"pairs", m.pairs},
          {"per_class", per_class}, {"confusion", cm}};
}

// One row of the plotting table.
struct TableRow {
  std::string dataset;
  std::string strategy;
  int iteration = 0;
  std::uint64_t seed = 0;
  Metrics metrics;
};

inline std::string format_number(double v) {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << v;
  return os.str();
}

inline void write_table_header(std::ostream& out) {
  out << "dataset,strategy,iteration,seed,macro_f1,f1_support,f1_attack,f1_no_rel\n";
}

inline void write_table_row(std::ostream& out, const TableRow& r) {
  out << r.dataset << ',' << r.strategy << ',' << r.iteration << ',' << r.seed << ','
      << format_number(r.metrics.macro_f1) << ',' << format_number(r.metrics.f1[0]) << ','
      << format_number(r.metrics.f1[1]) << ',' << format_number(r.metrics.f1[2]) << '\n';
}

}  // namespace argrel
