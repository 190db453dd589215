// Canonical corpus model: documents of typed propositions with directed
// support/attack relations, the line-delimited JSON format, validation
// rules, corpus statistics and the synthetic corpus generator.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "argrel/common.hpp"
#include "argrel/text.hpp"

namespace argrel {

enum class PropType {
  evaluation,
  request,
  fact,
  reference,
  quote,
  non_arg,
  claim,
  premise,
  major_claim,
  policy,
  value,
  testimony,
  unknown,
};

inline std::string_view to_string(PropType t) {
  switch (t) {
    case PropType::evaluation: return "evaluation";
    case PropType::request: return "request";
    case PropType::fact: return "fact";
    case PropType::reference: return "reference";
    case PropType::quote: return "quote";
    case PropType::non_arg: return "non-arg";
    case PropType::claim: return "claim";
    case PropType::premise: return "premise";
    case PropType::major_claim: return "major-claim";
    case PropType::policy: return "policy";
    case PropType::value: return "value";
    case PropType::testimony: return "testimony";
    case PropType::unknown: return "unknown";
  }
  return "unknown";
}

inline std::optional<PropType> prop_type_from_string(std::string_view s) {
  static const std::pair<std::string_view, PropType> table[] = {
      {"evaluation", PropType::evaluation}, {"request", PropType::request},
      {"fact", PropType::fact},             {"reference", PropType::reference},
      {"quote", PropType::quote},           {"non-arg", PropType::non_arg},
      {"claim", PropType::claim},           {"premise", PropType::premise},
      {"major-claim", PropType::major_claim}, {"policy", PropType::policy},
      {"value", PropType::value},           {"testimony", PropType::testimony},
      {"unknown", PropType::unknown},
  };
  for (const auto& [name, t] : table)
    if (name == s) return t;
  return std::nullopt;
}

inline bool is_factual(PropType t) {
  return t == PropType::fact || t == PropType::reference || t == PropType::quote;
}
inline bool is_subjective(PropType t) {
  return t == PropType::evaluation || t == PropType::request;
}
inline bool is_ampere_type(PropType t) {
  return is_factual(t) || is_subjective(t) || t == PropType::non_arg;
}

struct Proposition {
  int id = 0;
  std::string text;
  PropType type = PropType::unknown;
  bool operator==(const Proposition&) const = default;
};

// Directed link tail -> head; the head is the targeted proposition.
struct Relation {
  int head = 0;
  int tail = 0;
  Label label = Label::support;
  bool operator==(const Relation&) const = default;
};

struct Document {
  std::string doc_id;
  std::vector<Proposition> propositions;
  std::vector<Relation> relations;

  int size() const { return static_cast<int>(propositions.size()); }
  bool operator==(const Document&) const = default;
};

enum class Split { train, validation, test, unlabeled };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
    case Split::unlabeled: return "unlabeled";
  }
  return "train";
}

inline Split split_from_string(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "validation" || s == "dev") return Split::validation;
  if (s == "test") return Split::test;
  if (s == "unlabeled") return Split::unlabeled;
  fail(ErrorCode::parse, "unknown split '" + std::string(s) + "'");
}

struct Corpus {
  std::vector<Document> documents;
  Split split = Split::train;

  std::size_t proposition_count() const {
    std::size_t n = 0;
    for (const auto& d : documents) n += d.propositions.size();
    return n;
  }
  std::size_t relation_count() const {
    std::size_t n = 0;
    for (const auto& d : documents) n += d.relations.size();
    return n;
  }
  bool has_attack() const {
    for (const auto& d : documents)
      for (const auto& r : d.relations)
        if (r.label == Label::attack) return true;
    return false;
  }
  bool operator==(const Corpus&) const = default;
};

// ---------------------------------------------------------------------------
// Line-delimited JSON format.

inline Document parse_document(const nlohmann::json& j, std::size_t line_no,
                               std::vector<std::string>* warnings) {
  auto where = [&] { return "line " + std::to_string(line_no) + ": "; };
  auto warn = [&](const std::string& msg) {
    if (warnings) warnings->push_back(where() + msg);
  };
  if (!j.is_object()) fail(ErrorCode::parse, where() + "record is not an object");
  for (const auto& [k, _] : j.items())
    if (k != "doc_id" && k != "propositions" && k != "relations")
      warn("unknown field '" + k + "' ignored");

  Document doc;
  try {
    doc.doc_id = j.at("doc_id").get<std::string>();
    std::unordered_map<int, int> position_of;
    for (const auto& p : j.at("propositions")) {
      for (const auto& [k, _] : p.items())
        if (k != "id" && k != "text" && k != "type")
          warn("unknown proposition field '" + k + "' ignored");
      Proposition prop;
      const int file_id = p.at("id").get<int>();
      prop.text = p.at("text").get<std::string>();
      const std::string type = p.value("type", std::string("unknown"));
      const auto t = prop_type_from_string(type);
      if (!t) fail(ErrorCode::parse, where() + "unknown proposition type '" + type + "'");
      prop.type = *t;
      prop.id = static_cast<int>(doc.propositions.size());
      if (!position_of.emplace(file_id, prop.id).second)
        fail(ErrorCode::parse, where() + "duplicate proposition id " + std::to_string(file_id));
      doc.propositions.push_back(std::move(prop));
    }
    if (j.contains("relations")) {
      for (const auto& r : j.at("relations")) {
        for (const auto& [k, _] : r.items())
          if (k != "head" && k != "tail" && k != "label")
            warn("unknown relation field '" + k + "' ignored");
        Relation rel;
        const int h = r.at("head").get<int>();
        const int t = r.at("tail").get<int>();
        const auto hp = position_of.find(h);
        const auto tp = position_of.find(t);
        if (hp == position_of.end())
          fail(ErrorCode::parse, where() + "relation head " + std::to_string(h) + " out of range");
        if (tp == position_of.end())
          fail(ErrorCode::parse, where() + "relation tail " + std::to_string(t) + " out of range");
        rel.head = hp->second;
        rel.tail = tp->second;
        const std::string label = r.at("label").get<std::string>();
        if (label != "support" && label != "attack")
          fail(ErrorCode::parse, where() + "relation label must be support|attack");
        rel.label = label_from_string(label);
        doc.relations.push_back(rel);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::parse, where() + e.what());
  }
  return doc;
}

inline Corpus parse_corpus(std::istream& in, Split split, std::vector<std::string>* warnings = nullptr) {
  Corpus corpus;
  corpus.split = split;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      fail(ErrorCode::parse, "line " + std::to_string(line_no) + ": " + e.what());
    }
    Document doc = parse_document(j, line_no, warnings);
    if (!seen.insert(doc.doc_id).second)
      fail(ErrorCode::conflict, "line " + std::to_string(line_no) + ": duplicate doc_id '" +
                                    doc.doc_id + "'");
    corpus.documents.push_back(std::move(doc));
  }
  return corpus;
}

inline Corpus load_corpus(const std::string& path, Split split,
                          std::vector<std::string>* warnings = nullptr) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::io, "cannot open corpus file " + path);
  return parse_corpus(in, split, warnings);
}

inline nlohmann::ordered_json document_to_json(const Document& doc) {
  nlohmann::ordered_json j;
  j["doc_id"] = doc.doc_id;
  j["propositions"] = nlohmann::ordered_json::array();
  for (const auto& p : doc.propositions)
    j["propositions"].push_back({{"id", p.id}, {"text", p.text}, {"type", to_string(p.type)}});
  j["relations"] = nlohmann::ordered_json::array();
  for (const auto& r : doc.relations)
    j["relations"].push_back({{"head", r.head}, {"tail", r.tail}, {"label", to_string(r.label)}});
  return j;
}

inline std::string corpus_to_jsonl(const Corpus& corpus) {
  std::string out;
  for (const auto& d : corpus.documents) {
    out += document_to_json(d).dump();
    out += '\n';
  }
  return out;
}

inline void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorCode::io, "cannot write corpus file " + path);
  out << corpus_to_jsonl(corpus);
}

// ---------------------------------------------------------------------------
// Validation.

enum class Profile { basic, ampere };

struct Finding {
  std::string doc_id;
  std::string rule;
  std::string message;
};

struct ValidationReport {
  std::vector<Finding> errors;
  std::vector<Finding> warnings;
  bool ok() const { return errors.empty(); }
};

inline void validate_document(const Document& doc, Profile profile, ValidationReport& report) {
  auto err = [&](std::string rule, std::string msg) {
    report.errors.push_back({doc.doc_id, std::move(rule), std::move(msg)});
  };
  const int n = doc.size();
  for (int i = 0; i < n; ++i) {
    if (doc.propositions[i].id != i)
      err("positional-id", "proposition " + std::to_string(i) + " carries id " +
                               std::to_string(doc.propositions[i].id));
    if (trim(doc.propositions[i].text).empty())
      err("empty-text", "proposition " + std::to_string(i) + " has empty text");
  }
  std::set<std::pair<int, int>> pairs;
  for (const auto& r : doc.relations) {
    const std::string tag = std::to_string(r.tail) + "->" + std::to_string(r.head);
    if (r.head < 0 || r.head >= n || r.tail < 0 || r.tail >= n) {
      err("range", "relation " + tag + " outside [0," + std::to_string(n) + ")");
      continue;
    }
    if (r.head == r.tail) err("self-loop", "relation " + tag + " links a proposition to itself");
    if (!pairs.insert({r.head, r.tail}).second)
      report.warnings.push_back({doc.doc_id, "duplicate-relation", "relation " + tag + " repeated"});
  }
  if (profile != Profile::ampere) return;

  std::map<int, int> outgoing;
  for (const auto& r : doc.relations)
    if (r.tail >= 0 && r.tail < n) ++outgoing[r.tail];
  for (const auto& [tail, count] : outgoing)
    if (count > 1)
      err("single-outgoing", "proposition " + std::to_string(tail) + " supports/attacks " +
                                 std::to_string(count) + " propositions");
  for (const auto& r : doc.relations) {
    if (r.head < 0 || r.head >= n || r.tail < 0 || r.tail >= n) continue;
    const auto ht = doc.propositions[r.head].type;
    const auto tt = doc.propositions[r.tail].type;
    if (is_factual(ht) && is_subjective(tt))
      err("factual-head", "subjective proposition " + std::to_string(r.tail) + " (" +
                              std::string(to_string(tt)) + ") targets factual proposition " +
                              std::to_string(r.head) + " (" + std::string(to_string(ht)) + ")");
  }
}

inline ValidationReport validate(const Corpus& corpus, Profile profile) {
  ValidationReport report;
  std::unordered_set<std::string> ids;
  for (const auto& d : corpus.documents) {
    if (!ids.insert(d.doc_id).second)
      report.errors.push_back({d.doc_id, "duplicate-doc", "doc_id repeated within split"});
    validate_document(d, profile, report);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Statistics.

// Fraction of propositions targeted (head) by at least one relation.
inline double relation_density(const Corpus& corpus) {
  const std::size_t total = corpus.proposition_count();
  require(total > 0, ErrorCode::undefined_input, "relation_density: corpus has no propositions");
  std::size_t heads = 0;
  for (const auto& d : corpus.documents) {
    std::set<int> h;
    for (const auto& r : d.relations) h.insert(r.head);
    heads += h.size();
  }
  return static_cast<double>(heads) / static_cast<double>(total);
}

// Signed distance tail - head; positive means the tail follows the head.
inline std::map<int, std::size_t> distance_histogram(const Corpus& corpus) {
  std::map<int, std::size_t> hist;
  for (const auto& d : corpus.documents)
    for (const auto& r : d.relations) ++hist[r.tail - r.head];
  return hist;
}

// Share of relations with |tail - head| <= L. A corpus without relations is
// fully covered.
inline double window_coverage(const Corpus& corpus, int L) {
  require(L >= 1, ErrorCode::precondition, "window_coverage: L must be >= 1");
  std::size_t total = 0, inside = 0;
  for (const auto& d : corpus.documents)
    for (const auto& r : d.relations) {
      ++total;
      if (std::abs(r.tail - r.head) <= L) ++inside;
    }
  if (total == 0) return 1.0;
  return static_cast<double>(inside) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// Synthetic corpora.

struct SynthConfig {
  int n_docs = 100;
  int props_per_doc = 12;
  double relation_rate = 0.3;   // probability that a proposition is a tail
  double distance_skew = 0.7;   // probability that a tail follows its head
  double marker_plant_prob = 0.5;
  int vocab_size = 500;
  std::uint64_t seed = 1;
  double attack_rate = 0.0;     // share of relations labeled attack
  int max_distance = 20;
  int min_tokens = 4;
  int max_tokens = 8;
  std::string doc_prefix = "synth";
};

inline std::string synth_word(int index, int vocab_size) {
  int width = 3;
  for (int v = vocab_size - 1; v >= 1000; v /= 10) ++width;
  std::string digits = std::to_string(index);
  if (static_cast<int>(digits.size()) < width)
    digits.insert(0, static_cast<std::size_t>(width) - digits.size(), '0');
  return "w" + digits;
}

inline Corpus generate_synthetic(const SynthConfig& cfg) {
  require(cfg.n_docs >= 1 && cfg.props_per_doc >= 1 && cfg.vocab_size >= 1,
          ErrorCode::precondition, "generate_synthetic: counts must be >= 1");
  auto in01 = [](double p) { return p >= 0.0 && p <= 1.0; };
  require(in01(cfg.relation_rate) && in01(cfg.distance_skew) && in01(cfg.marker_plant_prob) &&
              in01(cfg.attack_rate),
          ErrorCode::precondition, "generate_synthetic: probabilities must lie in [0,1]");
  require(cfg.min_tokens >= 1 && cfg.max_tokens >= cfg.min_tokens && cfg.max_distance >= 1 &&
              cfg.max_distance <= 20,
          ErrorCode::precondition, "generate_synthetic: invalid length/distance bounds");

  Rng rng(derive_seed(cfg.seed, "corpus"));
  const auto& markers = default_markers();
  static const PropType kAnyType[] = {PropType::evaluation, PropType::request, PropType::fact,
                                      PropType::reference,  PropType::quote,   PropType::non_arg};
  Corpus corpus;
  corpus.split = Split::train;
  const int n = cfg.props_per_doc;

  for (int d = 0; d < cfg.n_docs; ++d) {
    Document doc;
    std::string num = std::to_string(d);
    if (num.size() < 5) num.insert(0, 5 - num.size(), '0');
    doc.doc_id = cfg.doc_prefix + "-" + std::to_string(cfg.seed) + "-" + num;

    std::vector<std::vector<std::string>> words(static_cast<std::size_t>(n));
    for (auto& w : words) {
      const int len = cfg.min_tokens + static_cast<int>(rng.index(
                                           static_cast<std::size_t>(cfg.max_tokens - cfg.min_tokens + 1)));
      for (int k = 0; k < len; ++k) {
        const double u = rng.uniform();
        const int idx = std::min(cfg.vocab_size - 1, static_cast<int>(u * u * cfg.vocab_size));
        w.push_back(synth_word(idx, cfg.vocab_size));
      }
    }

    // Each proposition is the tail of at most one relation.
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    rng.shuffle(order);
    for (int tail : order) {
      if (!rng.bernoulli(cfg.relation_rate)) continue;
      int dist = 1;
      while (dist < cfg.max_distance && rng.bernoulli(0.5)) ++dist;
      const bool after = rng.bernoulli(cfg.distance_skew);
      int head = after ? tail - dist : tail + dist;
      if (head < 0 || head >= n) head = after ? tail + dist : tail - dist;
      if (head < 0 || head >= n) continue;
      const Label label = rng.bernoulli(cfg.attack_rate) ? Label::attack : Label::support;
      doc.relations.push_back({head, tail, label});
    }
    std::sort(doc.relations.begin(), doc.relations.end(),
              [](const Relation& a, const Relation& b) {
                return std::pair(a.head, a.tail) < std::pair(b.head, b.tail);
              });

    std::vector<bool> is_head(static_cast<std::size_t>(n), false);
    for (const auto& r : doc.relations) is_head[static_cast<std::size_t>(r.head)] = true;
    for (const auto& r : doc.relations) {
      auto& tw = words[static_cast<std::size_t>(r.tail)];
      const auto& hw = words[static_cast<std::size_t>(r.head)];
      const std::string shared = hw[rng.index(hw.size())];
      tw.insert(tw.begin() + static_cast<std::ptrdiff_t>(rng.index(tw.size() + 1)), shared);
      if (rng.bernoulli(cfg.marker_plant_prob)) {
        std::string m = markers[rng.index(markers.size())].text;
        m[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(m[0])));
        tw.insert(tw.begin(), m);
      }
    }

    for (int i = 0; i < n; ++i) {
      Proposition p;
      p.id = i;
      std::string text;
      for (const auto& w : words[static_cast<std::size_t>(i)]) {
        if (!text.empty()) text += ' ';
        text += w;
      }
      p.text = text + ".";
      // Heads are always subjective so no relation can pair a factual head
      // with a subjective tail.
      p.type = is_head[static_cast<std::size_t>(i)]
                   ? (rng.bernoulli(0.7) ? PropType::evaluation : PropType::request)
                   : kAnyType[rng.index(6)];
      doc.propositions.push_back(std::move(p));
    }
    corpus.documents.push_back(std::move(doc));
  }
  return corpus;
}

}  // namespace argrel
