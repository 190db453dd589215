// Acquisition strategies for pool-based active learning over propositions.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "argrel/relhead.hpp"

namespace argrel {

enum class Strategy { random_prop, random_ctx, max_entropy, bald, coreset, novel_vocab, disc_marker, no_disc_marker };

inline constexpr Strategy kAllStrategies[] = {Strategy::random_prop, Strategy::random_ctx, Strategy::max_entropy,
                                              Strategy::bald,        Strategy::coreset,    Strategy::novel_vocab,
                                              Strategy::disc_marker, Strategy::no_disc_marker};

inline std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::random_prop: return "random_prop";
    case Strategy::random_ctx: return "random_ctx";
    case Strategy::max_entropy: return "max_entropy";
    case Strategy::bald: return "bald";
    case Strategy::coreset: return "coreset";
    case Strategy::novel_vocab: return "novel_vocab";
    case Strategy::disc_marker: return "disc_marker";
    case Strategy::no_disc_marker: return "no_disc_marker";
  }
  return "random_prop";
}

inline Strategy strategy_from_string(std::string_view s) {
  for (Strategy st : kAllStrategies)
    if (to_string(st) == s) return st;
  fail(ErrorCode::parse, "unknown strategy '" + std::string(s) + "'");
}

inline bool is_model_based(Strategy s) {
  return s == Strategy::max_entropy || s == Strategy::bald || s == Strategy::coreset;
}

// ---------------------------------------------------------------------------
// Scores.

inline double entropy(const LabelDistribution& p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

inline double bald_score(const std::vector<LabelDistribution>& passes) {
  require(passes.size() >= 2, ErrorCode::precondition, "bald_score needs at least two passes");
  LabelDistribution mean{};
  double mean_entropy = 0.0;
  for (const auto& p : passes) {
    for (std::size_t c = 0; c < mean.size(); ++c) mean[c] += p[c];
    mean_entropy += entropy(p);
  }
  const auto k = static_cast<double>(passes.size());
  for (double& v : mean) v /= k;
  return std::max(0.0, entropy(mean) - mean_entropy / k);
}

// Word occurrence counts V(w) over the labeled pool.
struct VocabCounts {
  std::map<std::string, long> counts;

  long operator[](const std::string& w) const {
    const auto it = counts.find(w);
    return it == counts.end() ? 0 : it->second;
  }
  bool operator==(const VocabCounts&) const = default;
};

inline VocabCounts update_vocab_counts(VocabCounts counts, const std::vector<std::vector<std::string>>& props) {
  for (const auto& tokens : props)
    for (const auto& t : tokens) ++counts.counts[t];
  return counts;
}

inline double novelty_score(const std::vector<std::string>& tokens, const VocabCounts& pool) {
  std::map<std::string, long> freq;
  for (const auto& t : tokens) ++freq[t];
  double s = 0.0;
  for (const auto& [w, f] : freq) s += static_cast<double>(f) / (1.0 + static_cast<double>(pool[w]));
  return s;
}

// Greedy k-center: repeatedly picks the candidate farthest (L2) from its
// nearest center, adding it to the centers. With no initial centers the
// first pick is `first`.
inline std::vector<std::size_t> kcenter_greedy(const std::vector<RowVec>& candidates,
                                               const std::vector<RowVec>& centers, std::size_t b,
                                               std::size_t first = 0) {
  require(b <= candidates.size(), ErrorCode::budget, "k-center budget exceeds candidate count");
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> nearest(candidates.size(), inf);
  for (std::size_t i = 0; i < candidates.size(); ++i)
    for (const auto& c : centers) nearest[i] = std::min(nearest[i], (candidates[i] - c).norm());
  std::vector<bool> taken(candidates.size(), false);
  std::vector<std::size_t> out;
  while (out.size() < b) {
    std::size_t best = candidates.size();
    if (centers.empty() && out.empty()) {
      best = first;
    } else {
      for (std::size_t i = 0; i < candidates.size(); ++i)
        if (!taken[i] && (best == candidates.size() || nearest[i] > nearest[best])) best = i;
    }
    taken[best] = true;
    out.push_back(best);
    for (std::size_t i = 0; i < candidates.size(); ++i)
      nearest[i] = std::min(nearest[i], (candidates[i] - candidates[best]).norm());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pools and selection.

struct PropRef {
  std::size_t doc = 0;  // index into the corpus
  int prop = 0;
  auto operator<=>(const PropRef&) const = default;
};

using Pool = std::set<PropRef>;

inline Pool full_pool(const Corpus& corpus) {
  Pool p;
  for (std::size_t d = 0; d < corpus.documents.size(); ++d)
    for (int i = 0; i < corpus.documents[d].size(); ++i) p.insert({d, i});
  return p;
}

struct SelectContext {
  const Checkpoint* checkpoint = nullptr;
  WindowConfig window;
  std::uint64_t seed = 0;
  int mc_passes = 10;  // K for bald
  const std::vector<Marker>* markers = nullptr;  // defaults to the built-in list
};

struct Selection {
  std::vector<PropRef> items;
  std::vector<double> scores;  // aligned; higher is more preferred
};

namespace detail {

inline Selection ranked(std::vector<PropRef> items) {
  Selection s;
  for (std::size_t i = 0; i < items.size(); ++i) s.scores.push_back(static_cast<double>(items.size() - i));
  s.items = std::move(items);
  return s;
}

inline Selection top_b(std::vector<std::pair<PropRef, double>> scored, std::size_t b) {
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& c) { return a.second > c.second; });
  Selection s;
  for (std::size_t i = 0; i < b; ++i) {
    s.items.push_back(scored[i].first);
    s.scores.push_back(scored[i].second);
  }
  return s;
}

inline std::vector<int> token_lengths(const Document& doc) {
  std::vector<int> lengths;
  for (const auto& p : doc.propositions) lengths.push_back(default_token_length(p.text));
  return lengths;
}

// Max over in-window pairs where the candidate is a tail of any proposition.
inline std::map<PropRef, double> pair_uncertainty(const Corpus& corpus, const Pool& U, const SelectContext& ctx,
                                                  bool use_bald) {
  const Checkpoint& ck = *ctx.checkpoint;
  std::map<PropRef, double> best;
  std::set<std::size_t> docs;
  for (const auto& r : U) docs.insert(r.doc);
  for (std::size_t d : docs) {
    const Document& doc = corpus.documents[d];
    std::vector<std::vector<int>> ids;
    for (const auto& p : doc.propositions) ids.push_back(ck.vocab.encode(p.text));
    const auto lengths = token_lengths(doc);
    for (int head = 0; head < doc.size(); ++head) {
      const auto context = window_context(doc, head, ctx.window, lengths);
      bool any = false;
      for (int t : context) any = any || (t != head && U.count({d, t}));
      if (!any) continue;
      std::map<int, std::vector<LabelDistribution>> passes;
      if (use_bald) {
        for (int k = 0; k < ctx.mc_passes; ++k) {
          const auto seed = derive_seed(ctx.seed, "mc", (d * 4099 + static_cast<std::size_t>(head)) * 131 +
                                                            static_cast<std::size_t>(k));
          for (const auto& p : score_window(ck, ids, context, head, EncodeMode::mc_dropout, seed))
            passes[p.tail].push_back(p.dist);
        }
      } else {
        for (const auto& p : score_window(ck, ids, context, head, EncodeMode::eval, 0)) passes[p.tail].push_back(p.dist);
      }
      for (const auto& [tail, dists] : passes) {
        if (!U.count({d, tail})) continue;
        const double s = use_bald ? bald_score(dists) : entropy(dists[0]);
        auto [it, inserted] = best.emplace(PropRef{d, tail}, s);
        if (!inserted) it->second = std::max(it->second, s);
      }
    }
  }
  return best;
}

// Eval-mode representation of a proposition encoded as head of its window.
inline RowVec proposition_representation(const Corpus& corpus, const PropRef& r, const Checkpoint& ck,
                                         const WindowConfig& window) {
  const Document& doc = corpus.documents[r.doc];
  std::vector<std::vector<int>> ids;
  for (const auto& p : doc.propositions) ids.push_back(ck.vocab.encode(p.text));
  const auto context = window_context(doc, r.prop, window, token_lengths(doc));
  const auto props = window_tokens(ids, context, ck.encoder.config.max_positions);
  const auto hpos = static_cast<std::size_t>(std::find(context.begin(), context.end(), r.prop) - context.begin());
  return encode_window_full(props, ck.encoder, EncodeMode::eval, 0).rep(hpos);
}

}  // namespace detail

inline Selection select(Strategy strategy, const Corpus& corpus, const Pool& U, const Pool& D, std::size_t b,
                        const SelectContext& ctx) {
  require(b <= U.size(), ErrorCode::budget,
          "budget " + std::to_string(b) + " exceeds unlabeled pool size " + std::to_string(U.size()));
  if (is_model_based(strategy))
    require(ctx.checkpoint != nullptr, ErrorCode::config,
            std::string(to_string(strategy)) + " requires a model checkpoint");
  if (b == 0) return {};
  const auto& markers = ctx.markers ? *ctx.markers : default_markers();
  const auto text = [&](const PropRef& r) -> const std::string& {
    return corpus.documents[r.doc].propositions[static_cast<std::size_t>(r.prop)].text;
  };
  std::vector<PropRef> pool(U.begin(), U.end());
  Rng rng(derive_seed(ctx.seed, "select"));

  switch (strategy) {
    case Strategy::random_prop: {
      rng.shuffle(pool);
      pool.resize(b);
      return detail::ranked(std::move(pool));
    }
    case Strategy::random_ctx: {
      std::vector<PropRef> out;
      Pool remaining = U;
      while (out.size() < b) {
        std::vector<PropRef> rem(remaining.begin(), remaining.end());
        const PropRef anchor = rem[rng.index(rem.size())];
        const bool forward = rng.bernoulli(0.5);
        const int n = corpus.documents[anchor.doc].size();
        for (int k = 0; k <= ctx.window.L && out.size() < b; ++k) {
          const int p = forward ? anchor.prop + k : anchor.prop - k;
          if (p < 0 || p >= n) break;
          if (remaining.erase({anchor.doc, p})) out.push_back({anchor.doc, p});
        }
      }
      return detail::ranked(std::move(out));
    }
    case Strategy::max_entropy:
    case Strategy::bald: {
      require(ctx.checkpoint->has_head, ErrorCode::config, "uncertainty strategies need a trained relation head");
      const auto scores = detail::pair_uncertainty(corpus, U, ctx, strategy == Strategy::bald);
      std::vector<std::pair<PropRef, double>> scored;
      for (const auto& r : pool) {
        const auto it = scores.find(r);
        scored.emplace_back(r, it == scores.end() ? 0.0 : it->second);
      }
      return detail::top_b(std::move(scored), b);
    }
    case Strategy::coreset: {
      std::vector<RowVec> cand, centers;
      for (const auto& r : pool) cand.push_back(detail::proposition_representation(corpus, r, *ctx.checkpoint, ctx.window));
      for (const auto& r : D) centers.push_back(detail::proposition_representation(corpus, r, *ctx.checkpoint, ctx.window));
      const auto picks = kcenter_greedy(cand, centers, b, rng.index(cand.size()));
      Selection s;
      for (std::size_t i : picks) s.items.push_back(pool[i]);
      return detail::ranked(std::move(s.items));
    }
    case Strategy::novel_vocab: {
      std::vector<std::vector<std::string>> labeled;
      for (const auto& r : D) labeled.push_back(tokenize(text(r)));
      const auto counts = update_vocab_counts({}, labeled);
      std::vector<std::pair<PropRef, double>> scored;
      for (const auto& r : pool) scored.emplace_back(r, novelty_score(tokenize(text(r)), counts));
      return detail::top_b(std::move(scored), b);
    }
    case Strategy::disc_marker:
    case Strategy::no_disc_marker: {
      const bool want = strategy == Strategy::disc_marker;
      std::vector<PropRef> match, rest;
      for (const auto& r : pool) (has_marker(text(r), markers) == want ? match : rest).push_back(r);
      rng.shuffle(match);
      rng.shuffle(rest);
      std::vector<PropRef> out(match.begin(), match.begin() + static_cast<std::ptrdiff_t>(std::min(b, match.size())));
      for (std::size_t i = 0; out.size() < b; ++i) out.push_back(rest[i]);
      return detail::ranked(std::move(out));
    }
  }
  return {};
}

}  // namespace argrel
