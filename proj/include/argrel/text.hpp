// Surface text utilities: the whitespace/punctuation tokenizer and the
// discourse-marker lexicon used by acquisition, statistics and the baseline.
#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "argrel/common.hpp"

namespace argrel {

// Lowercases ASCII, splits on whitespace and emits every ASCII punctuation
// character as its own token. Bytes >= 0x80 are kept verbatim inside words.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (c < 0x80 && std::isspace(c)) {
      flush();
    } else if (c < 0x80 && std::ispunct(c)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  flush();
  return out;
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

enum class MarkerClass { causal, contrast, elaboration };
inline constexpr int kNumMarkerClasses = 3;

struct Marker {
  std::string text;
  std::vector<std::string> tokens;
  MarkerClass cls;
};

inline constexpr std::string_view kMarkerLexiconVersion = "pdtb18-v1";

// The 18 discourse markers with their indicator class.
inline const std::vector<Marker>& default_markers() {
  static const std::vector<Marker> markers = [] {
    const std::pair<const char*, MarkerClass> raw[] = {
        {"because", MarkerClass::causal},          {"therefore", MarkerClass::causal},
        {"however", MarkerClass::contrast},        {"although", MarkerClass::contrast},
        {"though", MarkerClass::contrast},         {"nevertheless", MarkerClass::contrast},
        {"nonetheless", MarkerClass::contrast},    {"thus", MarkerClass::causal},
        {"hence", MarkerClass::causal},            {"consequently", MarkerClass::causal},
        {"for this reason", MarkerClass::causal},  {"due to", MarkerClass::causal},
        {"in particular", MarkerClass::elaboration}, {"particularly", MarkerClass::elaboration},
        {"specifically", MarkerClass::elaboration}, {"in fact", MarkerClass::elaboration},
        {"actually", MarkerClass::elaboration},    {"but", MarkerClass::contrast},
    };
    std::vector<Marker> v;
    for (const auto& [t, c] : raw) v.push_back({t, tokenize(t), c});
    return v;
  }();
  return markers;
}

// One marker per line, optionally followed by a tab and a class name
// (causal|contrast|elaboration). Lines without a class default to causal.
inline std::vector<Marker> load_markers(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::io, "cannot open marker file " + path);
  std::vector<Marker> v;
  std::string line;
  while (std::getline(in, line)) {
    std::string text = trim(line);
    if (text.empty() || text[0] == '#') continue;
    MarkerClass cls = MarkerClass::causal;
    if (const auto tab = text.find('\t'); tab != std::string::npos) {
      const std::string c = trim(text.substr(tab + 1));
      text = trim(text.substr(0, tab));
      if (c == "contrast") cls = MarkerClass::contrast;
      else if (c == "elaboration") cls = MarkerClass::elaboration;
      else if (c != "causal") fail(ErrorCode::parse, "unknown marker class '" + c + "'");
    }
    v.push_back({text, tokenize(text), cls});
  }
  return v;
}

inline bool contains_sequence(const std::vector<std::string>& tokens,
                              const std::vector<std::string>& needle) {
  if (needle.empty() || needle.size() > tokens.size()) return false;
  return std::search(tokens.begin(), tokens.end(), needle.begin(), needle.end()) !=
         tokens.end();
}

// Markers occurring in the text as whole token sequences.
inline std::set<std::string> match_markers(std::string_view text,
                                           const std::vector<Marker>& markers = default_markers()) {
  const auto tokens = tokenize(text);
  std::set<std::string> found;
  for (const auto& m : markers)
    if (contains_sequence(tokens, m.tokens)) found.insert(m.text);
  return found;
}

inline bool has_marker(std::string_view text,
                       const std::vector<Marker>& markers = default_markers()) {
  const auto tokens = tokenize(text);
  return std::any_of(markers.begin(), markers.end(),
                     [&](const Marker& m) { return contains_sequence(tokens, m.tokens); });
}

}  // namespace argrel
