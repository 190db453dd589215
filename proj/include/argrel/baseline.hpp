// Feature-based pair classifier: sparse lexical/structural/indicator/overlap
// features and a one-vs-rest linear max-margin model trained with
// stochastic subgradient steps.
#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "argrel/checkpoint_io.hpp"
#include "argrel/corpus.hpp"
#include "argrel/pairs.hpp"
#include "argrel/text.hpp"

namespace argrel {

inline bool is_word_token(const std::string& t) {
  return std::any_of(t.begin(), t.end(), [](unsigned char c) { return std::isalnum(c); });
}

// Lowercase input assumed (see tokenize). Strips the first matching suffix
// when at least three characters remain.
inline std::string stem(const std::string& word) {
  static const std::pair<const char*, const char*> rules[] = {
      {"ational", "ate"}, {"ization", "ize"}, {"fulness", "ful"}, {"ousness", "ous"},
      {"iveness", "ive"}, {"ingly", ""},      {"edly", ""},       {"ments", ""},
      {"ment", ""},       {"ness", ""},       {"ies", "y"},       {"ing", ""},
      {"ed", ""},         {"ly", ""},         {"es", ""},         {"s", ""},
  };
  for (const auto& [suffix, repl] : rules) {
    const std::string s(suffix);
    if (word.size() >= s.size() + 3 && word.compare(word.size() - s.size(), s.size(), s) == 0) {
      if (s == "s" && word.size() >= 2 && word[word.size() - 2] == 's') return word;
      return word.substr(0, word.size() - s.size()) + repl;
    }
  }
  return word;
}

inline const std::set<std::string>& default_stopwords() {
  static const std::set<std::string> words = {
      "a",     "about", "above", "after", "again", "against", "all",   "also",  "am",    "an",
      "and",   "any",   "are",   "as",    "at",    "be",      "been",  "being", "both",  "by",
      "can",   "could", "did",   "do",    "does",  "doing",   "down",  "each",  "few",   "for",
      "from",  "further", "had", "has",   "have",  "having",  "he",    "her",   "here",  "hers",
      "him",   "his",   "how",   "i",     "if",    "in",      "into",  "is",    "it",    "its",
      "just",  "me",    "more",  "most",  "must",  "my",      "no",    "nor",   "not",   "now",
      "of",    "off",   "on",    "once",  "only",  "or",      "other", "our",   "ours",  "out",
      "over",  "own",   "same",  "she",   "should", "so",     "some",  "such",  "than",  "that",
      "the",   "their", "theirs", "them", "then",  "there",   "these", "they",  "this",  "those",
      "through", "to",  "too",   "under", "until", "up",      "very",  "was",   "we",    "were",
      "what",  "when",  "where", "which", "while", "who",     "whom",  "why",   "will",  "with",
      "would", "you",   "your",  "yours", "paper", "authors", "work",  "results", "method",
  };
  return words;
}

inline std::set<std::string> load_stopwords(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::io, "cannot open stopword file " + path);
  std::set<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    std::string w = trim(line);
    std::transform(w.begin(), w.end(), w.begin(), [](unsigned char c) { return std::tolower(c); });
    if (!w.empty() && w[0] != '#') out.insert(w);
  }
  return out;
}

// Optional part-of-speech tagger: maps tokens to tags drawn from `tagset`.
struct PosTagger {
  std::vector<std::string> tagset;
  std::function<std::vector<std::string>(const std::vector<std::string>&)> tag;
};

struct FeatureSpace {
  std::vector<std::string> lexicon;  // stemmed unigrams
  std::unordered_map<std::string, int> index;
  std::vector<Marker> markers = default_markers();
  std::set<std::string> stopwords = default_stopwords();
  const PosTagger* tagger = nullptr;

  static constexpr int kStructural = 5;
  static constexpr int kIndicators = kNumMarkerClasses * 3;
  static constexpr int kShared = 2;

  int lexicon_size() const { return static_cast<int>(lexicon.size()); }
  int structural_offset() const { return 2 * lexicon_size(); }
  int indicator_offset() const { return structural_offset() + kStructural; }
  int shared_offset() const { return indicator_offset() + kIndicators; }
  int pos_offset() const { return shared_offset() + kShared; }
  int dim() const {
    return pos_offset() + (tagger ? 2 * static_cast<int>(tagger->tagset.size()) : 0);
  }
};

inline FeatureSpace make_feature_space(std::vector<std::string> lexicon) {
  FeatureSpace fs;
  fs.lexicon = std::move(lexicon);
  for (std::size_t i = 0; i < fs.lexicon.size(); ++i) fs.index[fs.lexicon[i]] = static_cast<int>(i);
  return fs;
}

// Most frequent stemmed unigrams over all propositions; ties broken
// lexicographically.
inline std::vector<std::string> build_lexicon(const Corpus& corpus, std::size_t size = 500) {
  std::map<std::string, std::size_t> counts;
  for (const auto& d : corpus.documents)
    for (const auto& p : d.propositions)
      for (const auto& t : tokenize(p.text))
        if (is_word_token(t)) ++counts[stem(t)];
  std::vector<std::pair<std::string, std::size_t>> v(counts.begin(), counts.end());
  std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < v.size() && i < size; ++i) out.push_back(v[i].first);
  return out;
}

// Sorted, duplicate-free (index, value) pairs.
struct SparseVec {
  std::vector<std::pair<int, double>> entries;

  double value(int index) const {
    const auto it = std::lower_bound(entries.begin(), entries.end(), std::make_pair(index, -1e300));
    return it != entries.end() && it->first == index ? it->second : 0.0;
  }
  bool operator==(const SparseVec&) const = default;
};

inline std::set<std::string> content_tokens(const std::string& text, const std::set<std::string>& stopwords) {
  std::set<std::string> out;
  for (const auto& t : tokenize(text))
    if (t.size() >= 4 && is_word_token(t) && !stopwords.count(t)) out.insert(t);
  return out;
}

inline SparseVec extract_features(const Document& doc, int head, int tail, const FeatureSpace& fs) {
  const int n = static_cast<int>(doc.size());
  require(head >= 0 && head < n && tail >= 0 && tail < n, ErrorCode::precondition,
          "extract_features: proposition id out of range");
  std::map<int, double> f;
  const auto head_tokens = tokenize(doc.propositions[static_cast<std::size_t>(head)].text);
  const auto tail_tokens = tokenize(doc.propositions[static_cast<std::size_t>(tail)].text);

  for (const auto& t : head_tokens)
    if (auto it = fs.index.find(stem(t)); it != fs.index.end()) f[it->second] = 1.0;
  for (const auto& t : tail_tokens)
    if (auto it = fs.index.find(stem(t)); it != fs.index.end()) f[fs.lexicon_size() + it->second] = 1.0;

  const int so = fs.structural_offset();
  f[so + 0] = static_cast<double>(head_tokens.size());
  f[so + 1] = static_cast<double>(tail_tokens.size());
  f[so + 2] = static_cast<double>(std::max(0, std::abs(tail - head) - 1));
  f[so + 3] = tail < head ? 1.0 : 0.0;
  f[so + 4] = head < tail ? 1.0 : 0.0;

  auto mark = [&](const std::vector<std::string>& tokens, int location) {
    for (const auto& m : fs.markers)
      if (contains_sequence(tokens, m.tokens))
        f[fs.indicator_offset() + static_cast<int>(m.cls) * 3 + location] = 1.0;
  };
  mark(head_tokens, 0);
  mark(tail_tokens, 1);
  for (int k = std::min(head, tail) + 1; k < std::max(head, tail); ++k)
    mark(tokenize(doc.propositions[static_cast<std::size_t>(k)].text), 2);

  const auto hc = content_tokens(doc.propositions[static_cast<std::size_t>(head)].text, fs.stopwords);
  const auto tc = content_tokens(doc.propositions[static_cast<std::size_t>(tail)].text, fs.stopwords);
  std::size_t shared = 0;
  for (const auto& t : hc) shared += tc.count(t);
  f[fs.shared_offset()] = static_cast<double>(shared);
  f[fs.shared_offset() + 1] = shared > 0 ? 1.0 : 0.0;

  if (fs.tagger) {
    const int tags = static_cast<int>(fs.tagger->tagset.size());
    auto pos = [&](const std::vector<std::string>& tokens, int block) {
      for (const auto& tag : fs.tagger->tag(tokens)) {
        const auto it = std::find(fs.tagger->tagset.begin(), fs.tagger->tagset.end(), tag);
        if (it != fs.tagger->tagset.end())
          f[fs.pos_offset() + block * tags + static_cast<int>(it - fs.tagger->tagset.begin())] = 1.0;
      }
    };
    pos(head_tokens, 0);
    pos(tail_tokens, 1);
  }

  SparseVec out;
  for (const auto& [i, v] : f)
    if (v != 0.0) out.entries.emplace_back(i, v);
  return out;
}

struct LinearModel {
  Mat w;         // kNumLabels x dim
  Mat b;         // 1 x kNumLabels
  double reg = 1e-4;

  int dim() const { return static_cast<int>(w.cols()); }
};

inline LinearModel zero_linear_model(int dim, double reg = 1e-4) {
  return {Mat::Zero(kNumLabels, dim), Mat::Zero(1, kNumLabels), reg};
}

inline std::array<double, kNumLabels> class_scores(const LinearModel& m, const SparseVec& x) {
  std::array<double, kNumLabels> s{};
  for (int c = 0; c < kNumLabels; ++c) {
    double v = m.b(0, c);
    for (const auto& [i, xv] : x.entries)
      if (i < m.dim()) v += m.w(c, i) * xv;
    s[static_cast<std::size_t>(c)] = v;
  }
  return s;
}

inline Label predict_linear(const LinearModel& m, const SparseVec& x) {
  const auto s = class_scores(m, x);
  int best = 0;
  for (int c = 1; c < kNumLabels; ++c)
    if (s[static_cast<std::size_t>(c)] > s[static_cast<std::size_t>(best)]) best = c;
  return static_cast<Label>(best);
}

inline double hinge_loss(double score, bool positive) {
  return std::max(0.0, 1.0 - (positive ? score : -score));
}

struct LinearTrainConfig {
  double reg = 1e-4;
  int epochs = 20;
  std::uint64_t seed = 0;
};

// Pegasos-style one-vs-rest training; the bias acts as a constant feature
// and shares the L2 penalty.
inline LinearModel train_linear(const std::vector<SparseVec>& xs, const std::vector<Label>& ys, int dim,
                                const LinearTrainConfig& cfg) {
  require(xs.size() == ys.size(), ErrorCode::precondition, "train_linear: feature/label count mismatch");
  require(cfg.reg > 0.0, ErrorCode::config, "train_linear: reg must be > 0");
  require(cfg.epochs >= 1, ErrorCode::config, "train_linear: epochs must be >= 1");
  std::set<Label> present(ys.begin(), ys.end());
  require(present.size() >= 2, ErrorCode::degenerate_training,
          "train_linear needs at least two classes (got " + std::to_string(present.size()) + ")");
  LinearModel m = zero_linear_model(dim, cfg.reg);
  std::vector<std::size_t> order(xs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(cfg.seed, "linear"));
  long t = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t k : order) {
      ++t;
      const double eta = 1.0 / (cfg.reg * static_cast<double>(t));
      const auto scores = class_scores(m, xs[k]);
      m.w *= (1.0 - eta * cfg.reg);
      m.b *= (1.0 - eta * cfg.reg);
      for (int c = 0; c < kNumLabels; ++c) {
        const bool pos = static_cast<int>(ys[k]) == c;
        if (hinge_loss(scores[static_cast<std::size_t>(c)], pos) > 0.0) {
          const double y = pos ? 1.0 : -1.0;
          for (const auto& [i, v] : xs[k].entries)
            if (i < dim) m.w(c, i) += eta * y * v;
          m.b(0, c) += eta * y;
        }
      }
    }
  }
  require(m.w.allFinite() && m.b.allFinite(), ErrorCode::degenerate_training, "train_linear diverged");
  return m;
}

struct BaselineModel {
  FeatureSpace features;
  LinearModel linear;
  WindowConfig window;
};

struct BaselineConfig {
  LinearTrainConfig linear;
  std::size_t lexicon_size = 500;
  std::string stopword_file;
};

inline BaselineModel train_baseline(const Corpus& corpus, const WindowConfig& wcfg, const BaselineConfig& cfg) {
  BaselineModel model;
  model.features = make_feature_space(build_lexicon(corpus, cfg.lexicon_size));
  if (!cfg.stopword_file.empty()) model.features.stopwords = load_stopwords(cfg.stopword_file);
  model.window = wcfg;
  std::vector<SparseVec> xs;
  std::vector<Label> ys;
  for (const auto& doc : corpus.documents)
    for (const auto& ex : build_examples(doc, wcfg)) {
      xs.push_back(extract_features(doc, ex.head, ex.tail, model.features));
      ys.push_back(ex.label);
    }
  model.linear = train_linear(xs, ys, model.features.dim(), cfg.linear);
  return model;
}

inline std::string encode_baseline(const BaselineModel& m) {
  nlohmann::json header = {{"kind", "linear-model"},
                           {"format", 1},
                           {"lexicon", m.features.lexicon},
                           {"stopwords", m.features.stopwords},
                           {"marker_lexicon", kMarkerLexiconVersion},
                           {"reg", m.linear.reg},
                           {"window", {{"L", m.window.L}, {"max_tokens", m.window.max_tokens},
                                       {"mode", to_string(m.window.mode)}}}};
  ParamSet ps;
  ps.add("w", m.linear.w.rows(), m.linear.w.cols());
  ps[0] = m.linear.w;
  ps.add("b", 1, kNumLabels);
  ps[1] = m.linear.b;
  return encode_container(header, {{"linear", &ps}});
}

inline BaselineModel decode_baseline(const std::string& bytes) {
  auto data = decode_container(bytes);
  require(data.header.value("kind", "") == "linear-model", ErrorCode::incompatible,
          "container does not hold a linear model");
  BaselineModel m;
  m.features = make_feature_space(data.header.at("lexicon").get<std::vector<std::string>>());
  m.features.stopwords = data.header.at("stopwords").get<std::set<std::string>>();
  m.linear.reg = data.header.at("reg").get<double>();
  const auto& w = data.header.at("window");
  m.window.L = w.at("L").get<int>();
  m.window.max_tokens = w.at("max_tokens").get<int>();
  m.window.mode = window_mode_from_string(w.at("mode").get<std::string>());
  auto& g = data.groups["linear"];
  require(g.size() == 2, ErrorCode::integrity, "linear model tensors missing");
  m.linear.w = g[0];
  m.linear.b = g[1];
  require(m.linear.w.rows() == kNumLabels && m.linear.w.cols() == m.features.dim(), ErrorCode::integrity,
          "linear model shape does not match its lexicon");
  return m;
}

}  // namespace argrel
