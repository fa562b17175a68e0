#pragma once

// Knowledge triplets: term normalization, tolerant parsing of model output,
// and removal of noisy triplets.

#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "iimmr/error.hpp"
#include "iimmr/text.hpp"

namespace iimmr {

/// Lowercased token sequence. Two terms are equal iff their token sequences are.
struct NormalizedTerm {
  std::vector<std::string> tokens;

  bool empty() const { return tokens.empty(); }
  std::string str() const { return text::join(tokens, " "); }

  friend bool operator==(const NormalizedTerm&, const NormalizedTerm&) = default;
  friend auto operator<=>(const NormalizedTerm&, const NormalizedTerm&) = default;
};

using StopwordSet = std::set<std::string, std::less<>>;

namespace detail {

inline std::string strip_boundary_punct(std::string_view tok) {
  while (!tok.empty() && text::is_punct(tok.front())) tok.remove_prefix(1);
  while (!tok.empty() && text::is_punct(tok.back())) tok.remove_suffix(1);
  return std::string(tok);
}

// Trailing "es" goes when the stem ends in ss/x/z/ch/sh; otherwise a trailing
// "s" goes for tokens longer than three characters that do not end in
// ss/us/is. Every output of this function is a fixed point of it.
inline std::string fold_plural(std::string tok) {
  using text::ends_with;
  if (ends_with(tok, "es") && tok.size() > 3) {
    std::string_view stem(tok.data(), tok.size() - 2);
    if (ends_with(stem, "ss") || ends_with(stem, "x") || ends_with(stem, "z") ||
        ends_with(stem, "ch") || ends_with(stem, "sh")) {
      return std::string(stem);
    }
  }
  if (ends_with(tok, "s") && tok.size() > 3 && !ends_with(tok, "ss") && !ends_with(tok, "us") &&
      !ends_with(tok, "is")) {
    tok.pop_back();
  }
  return tok;
}

}  // namespace detail

/// Lowercase, split on whitespace, strip punctuation at token edges, fold
/// trivial plurals. Idempotent.
inline NormalizedTerm normalize_term(std::string_view input) {
  NormalizedTerm term;
  for (auto& raw : text::split_ws(text::lower(input))) {
    std::string tok = detail::strip_boundary_punct(raw);
    // Folding can expose new edge punctuation ("bottle's" -> "bottle'").
    for (;;) {
      std::string next = detail::strip_boundary_punct(detail::fold_plural(tok));
      if (next == tok) break;
      tok = std::move(next);
    }
    if (!tok.empty()) term.tokens.push_back(std::move(tok));
  }
  return term;
}

/// Function words that never form a triplet component on their own.
/// Prepositions and copulas are deliberately absent: they are legitimate
/// relation names ("on", "is").
inline const StopwordSet& default_stopwords() {
  static const StopwordSet words = {
      "a",     "an",    "the",   "and",   "or",    "but",  "nor",   "yet",   "so",
      "if",    "then",  "than",  "this",  "that",  "these", "those", "it",   "its",
      "itself", "he",   "him",   "his",   "she",   "her",  "hers",  "they",  "them",
      "their", "theirs", "we",   "us",    "our",   "you",  "your",  "i",     "me",
      "my",    "mine",  "some",  "any",   "each",  "every", "such", "very",  "just",
      "also",  "too",   "only",  "own",   "there", "here", "etc"};
  return words;
}

/// Interrogatives and auxiliaries dropped by the offline keyword heuristic.
inline const StopwordSet& question_function_words() {
  static const StopwordSet words = {
      "what", "which", "who",  "whom",  "whose", "where", "when", "why",  "how",
      "is",   "are",   "was",  "were",  "be",    "been",  "do",   "does", "did",
      "has",  "have",  "had",  "can",   "could", "will",  "would", "should", "of",
      "in",   "on",    "at",   "to",    "for",   "with",  "by",   "from", "kind",
      "type", "color", "many", "much",  "not",   "no",    "yes"};
  return words;
}

/// One token per line; blank lines and lines starting with '#' are ignored.
inline StopwordSet load_stopwords(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open stopword file: " + path);
  StopwordSet words;
  std::string line;
  while (std::getline(in, line)) {
    auto t = text::trim(line);
    if (t.empty() || t.front() == '#') continue;
    words.insert(text::lower(t));
  }
  if (words.empty()) throw ParseError("stopword file is empty: " + path);
  return words;
}

inline bool all_stopwords(const NormalizedTerm& term, const StopwordSet& stopwords) {
  for (const auto& t : term.tokens) {
    if (!stopwords.contains(t)) return false;
  }
  return true;
}

struct KnowledgeTriplet {
  NormalizedTerm subject;
  NormalizedTerm relation;
  NormalizedTerm object;
  std::string raw;

  static KnowledgeTriplet make(std::string_view s, std::string_view r, std::string_view o,
                               std::string raw = {}) {
    return {normalize_term(s), normalize_term(r), normalize_term(o), std::move(raw)};
  }

  bool has_empty_component() const {
    return subject.empty() || relation.empty() || object.empty();
  }

  // Canonical "(subject, relation, object)" rendering of the normalized terms.
  std::string render() const {
    return "(" + subject.str() + ", " + relation.str() + ", " + object.str() + ")";
  }

  // Components only; the raw source line does not participate.
  bool same_terms(const KnowledgeTriplet& o) const {
    return subject == o.subject && relation == o.relation && object == o.object;
  }
};

struct ParseIssue {
  std::size_t line = 0;  // 1-based
  std::string text;
  std::string reason;
};

struct TripletParse {
  std::vector<KnowledgeTriplet> triplets;
  std::vector<ParseIssue> issues;
};

namespace detail {

// Drops list decoration: "1.", "2)", "-", "*", "•".
inline std::string_view strip_list_marker(std::string_view line) {
  line = text::trim(line);
  std::size_t i = 0;
  while (i < line.size() && text::is_digit(line[i])) ++i;
  if (i > 0 && i < line.size() && (line[i] == '.' || line[i] == ')' || line[i] == ':')) {
    line.remove_prefix(i + 1);
  } else if (!line.empty() && (line.front() == '-' || line.front() == '*')) {
    line.remove_prefix(1);
  } else if (line.starts_with("\xE2\x80\xA2")) {
    line.remove_prefix(3);
  }
  return text::trim(line);
}

inline std::string unquote(std::string_view s) {
  s = text::trim(s);
  while (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front()) {
    s = text::trim(s.substr(1, s.size() - 2));
  }
  return std::string(s);
}

}  // namespace detail

/// Recognizes "(A, B, C)" and "A | B | C" lines. Anything else that is not
/// blank becomes a ParseIssue, never a triplet.
inline TripletParse parse_triplets(std::string_view input) {
  TripletParse out;
  auto lines = text::split_lines(input);
  for (std::size_t n = 0; n < lines.size(); ++n) {
    std::string_view line = detail::strip_list_marker(lines[n]);
    if (line.empty()) continue;

    std::vector<std::string> parts;
    auto open = line.find('(');
    auto close = line.rfind(')');
    if (open != std::string_view::npos && close != std::string_view::npos && close > open) {
      parts = text::split(line.substr(open + 1, close - open - 1), ',');
    } else if (line.find('|') != std::string_view::npos) {
      parts = text::split(line, '|');
    } else {
      out.issues.push_back({n + 1, std::string(lines[n]), "not triplet-shaped"});
      continue;
    }
    if (parts.size() != 3) {
      out.issues.push_back({n + 1, std::string(lines[n]),
                            "wrong arity: " + std::to_string(parts.size()) + " components"});
      continue;
    }
    out.triplets.push_back(KnowledgeTriplet::make(detail::unquote(parts[0]),
                                                  detail::unquote(parts[1]),
                                                  detail::unquote(parts[2]),
                                                  std::string(text::trim(lines[n]))));
  }
  return out;
}

inline std::string render_triplets(const std::vector<KnowledgeTriplet>& triplets) {
  std::string out;
  for (const auto& t : triplets) out += t.render() + "\n";
  return out;
}

/// Keeps triplets whose three components are non-empty and not made only of
/// stopwords. Survivors are copied untouched, in order.
inline std::vector<KnowledgeTriplet> filter_noisy(const std::vector<KnowledgeTriplet>& triplets,
                                                  const StopwordSet& stopwords = default_stopwords()) {
  if (stopwords.empty()) throw PreconditionError("filter_noisy: stopword set is empty");
  std::vector<KnowledgeTriplet> out;
  for (const auto& t : triplets) {
    if (t.has_empty_component()) continue;
    if (all_stopwords(t.subject, stopwords) || all_stopwords(t.relation, stopwords) ||
        all_stopwords(t.object, stopwords)) {
      continue;
    }
    out.push_back(t);
  }
  return out;
}

}  // namespace iimmr
