// Windowed head-tail pair construction. Every head proposition is encoded
// together with the L propositions on each side; those become its candidate
// tails. Over-budget windows are trimmed from the far ends inward.
#pragma once

#include <algorithm>
#include <deque>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "argrel/corpus.hpp"
#include "argrel/text.hpp"

namespace argrel {

enum class WindowMode { head_given, end_to_end };

inline std::string_view to_string(WindowMode m) {
  return m == WindowMode::head_given ? "head_given" : "end_to_end";
}
inline WindowMode window_mode_from_string(std::string_view s) {
  if (s == "head_given" || s == "head-given") return WindowMode::head_given;
  if (s == "end_to_end" || s == "end-to-end") return WindowMode::end_to_end;
  fail(ErrorCode::parse, "unknown window mode '" + std::string(s) + "'");
}

struct WindowConfig {
  int L = 20;
  int max_tokens = 512;
  WindowMode mode = WindowMode::head_given;

  void check() const {
    require(L >= 1, ErrorCode::precondition, "window L must be >= 1");
    require(max_tokens >= 16, ErrorCode::precondition, "window max_tokens must be >= 16");
  }
  bool operator==(const WindowConfig&) const = default;
};

struct PairExample {
  std::string doc_id;
  int head = 0;
  int tail = 0;
  Label label = Label::no_rel;
  std::vector<int> context;  // retained proposition ids, document order
};

// Token count of a proposition's text (excluding its separator).
using TokenLength = std::function<int(const std::string&)>;

inline int default_token_length(const std::string& text) {
  return static_cast<int>(tokenize(text).size());
}

// Retained context for one head: alternately drops the farthest remaining
// proposition on the left, then on the right, until the window (each
// proposition plus one separator) fits the budget. The head is never dropped.
inline std::vector<int> window_context(const Document& doc, int head, const WindowConfig& cfg,
                                       const std::vector<int>& lengths) {
  const int lo = std::max(0, head - cfg.L);
  const int hi = std::min(doc.size() - 1, head + cfg.L);
  std::deque<int> left, right;
  long total = lengths[static_cast<std::size_t>(head)] + 1;
  for (int i = lo; i < head; ++i) {
    left.push_back(i);
    total += lengths[static_cast<std::size_t>(i)] + 1;
  }
  for (int i = head + 1; i <= hi; ++i) {
    right.push_back(i);
    total += lengths[static_cast<std::size_t>(i)] + 1;
  }
  bool from_left = true;
  while (total > cfg.max_tokens && (!left.empty() || !right.empty())) {
    if (from_left && left.empty()) from_left = false;
    if (!from_left && right.empty()) from_left = true;
    if (from_left) {
      total -= lengths[static_cast<std::size_t>(left.front())] + 1;
      left.pop_front();
    } else {
      total -= lengths[static_cast<std::size_t>(right.back())] + 1;
      right.pop_back();
    }
    from_left = !from_left;
  }
  std::vector<int> ctx(left.begin(), left.end());
  ctx.push_back(head);
  ctx.insert(ctx.end(), right.begin(), right.end());
  return ctx;
}

inline std::vector<int> gold_heads(const Document& doc) {
  std::vector<bool> h(static_cast<std::size_t>(doc.size()), false);
  for (const auto& r : doc.relations) h[static_cast<std::size_t>(r.head)] = true;
  std::vector<int> out;
  for (int i = 0; i < doc.size(); ++i)
    if (h[static_cast<std::size_t>(i)]) out.push_back(i);
  return out;
}

inline std::map<std::pair<int, int>, Label> gold_pair_labels(const Document& doc) {
  std::map<std::pair<int, int>, Label> m;
  for (const auto& r : doc.relations) m[{r.head, r.tail}] = r.label;
  return m;
}

inline std::vector<PairExample> build_examples(const Document& doc, const WindowConfig& cfg,
                                               const TokenLength& token_length = default_token_length) {
  cfg.check();
  std::vector<int> lengths;
  lengths.reserve(doc.propositions.size());
  for (const auto& p : doc.propositions) lengths.push_back(token_length(p.text));

  std::vector<int> heads;
  if (cfg.mode == WindowMode::head_given) {
    heads = gold_heads(doc);
  } else {
    for (int i = 0; i < doc.size(); ++i) heads.push_back(i);
  }
  const auto gold = gold_pair_labels(doc);

  std::vector<PairExample> out;
  for (int head : heads) {
    const auto ctx = window_context(doc, head, cfg, lengths);
    for (int tail : ctx) {
      if (tail == head) continue;
      PairExample ex;
      ex.doc_id = doc.doc_id;
      ex.head = head;
      ex.tail = tail;
      const auto it = gold.find({head, tail});
      ex.label = it == gold.end() ? Label::no_rel : it->second;
      ex.context = ctx;
      out.push_back(std::move(ex));
    }
  }
  return out;
}

inline std::vector<PairExample> build_examples(const Corpus& corpus, const WindowConfig& cfg,
                                               const TokenLength& token_length = default_token_length) {
  std::vector<PairExample> all;
  for (const auto& d : corpus.documents) {
    auto ex = build_examples(d, cfg, token_length);
    all.insert(all.end(), std::make_move_iterator(ex.begin()), std::make_move_iterator(ex.end()));
  }
  return all;
}

inline double positive_ratio(const std::vector<PairExample>& examples) {
  require(!examples.empty(), ErrorCode::undefined_input, "positive_ratio: no examples");
  const auto pos = std::count_if(examples.begin(), examples.end(),
                                 [](const PairExample& e) { return is_positive(e.label); });
  return static_cast<double>(pos) / static_cast<double>(examples.size());
}

// One encoder input: a head, its retained context and the supervised tails.
struct Window {
  std::size_t doc = 0;  // index into the owning corpus
  int head = 0;
  std::vector<int> context;
  std::vector<std::pair<int, Label>> targets;
};

// Groups consecutive pair examples of the same head into windows.
inline std::vector<Window> group_windows(const std::vector<PairExample>& examples, std::size_t doc) {
  std::vector<Window> out;
  for (const auto& ex : examples) {
    if (out.empty() || out.back().head != ex.head) {
      Window w;
      w.doc = doc;
      w.head = ex.head;
      w.context = ex.context;
      out.push_back(std::move(w));
    }
    out.back().targets.emplace_back(ex.tail, ex.label);
  }
  return out;
}

}  // namespace argrel
