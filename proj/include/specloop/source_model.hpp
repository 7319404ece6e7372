#pragma once

#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <vector>

#include "specloop/errors.hpp"
#include "specloop/util.hpp"

namespace specloop {

/// The two kinds of specification gap a task can carry: a missing loop
/// invariant (marked in the source) or a missing contract on a callee method.
enum class GapKind { invariant, contract };

inline const char* gap_kind_name(GapKind kind) {
  return kind == GapKind::invariant ? "invariant" : "contract";
}

inline GapKind gap_kind_from_string(std::string_view s) {
  if (s == "invariant") return GapKind::invariant;
  if (s == "contract") return GapKind::contract;
  throw Error(ErrorCode::manifest, "unknown gap kind: " + std::string(s));
}

/// Exact marker that flags a missing loop invariant in a source file.
inline constexpr std::string_view kInvariantMarker = "//Add invariant here";

/// Location of the single specification gap in a document.
///
/// For an invariant gap, `line` is the marker line and `method_name` the
/// enclosing method. For a contract gap, `line` is the callee declaration
/// line, `method_name` the callee and `calling_method` the method whose
/// contract is to be proved.
struct GapSite {
  GapKind kind = GapKind::invariant;
  std::size_t line = 0;
  std::string method_name;
  std::string calling_method;
};

/// One JML comment block proposed by the oracle, ready to splice.
struct AnnotationCandidate {
  std::string jml_text;
  GapKind kind = GapKind::invariant;

  AnnotationCandidate() = default;
  AnnotationCandidate(std::string text, GapKind k) : jml_text(std::move(text)), kind(k) {
    if (jml_text.empty()) throw Error(ErrorCode::empty_block, "annotation candidate is empty");
  }

  bool operator==(const AnnotationCandidate&) const = default;
};

/// A partially annotated Java+JML source file with exactly one located gap.
struct AnnotatedDocument {
  std::string text;
  std::vector<std::string> lines;
  bool trailing_newline = false;
  GapSite gap;
};

namespace detail {

inline bool is_java_keyword(std::string_view token) {
  static const char* keywords[] = {"return", "new",  "throw",  "else",   "if",
                                   "while",  "for",  "switch", "case",   "do",
                                   "break",  "continue", "assert", "catch"};
  for (const char* k : keywords)
    if (token == k) return true;
  return false;
}

// A declaration line is `<modifiers/type tokens> <name> (` where the token
// before the name is not a statement keyword. No Java grammar: line anchors
// are all the orchestrator needs, the verifier does the real parsing.
inline std::optional<std::string> declaration_name(const std::string& line) {
  static const std::regex decl_re(
      R"(^\s*(?:@\w+\s+)*((?:[A-Za-z_][\w$<>\[\],\.]*\s+)+)([A-Za-z_]\w*)\s*\()");
  std::smatch m;
  if (!std::regex_search(line, m, decl_re)) return std::nullopt;
  std::istringstream tok(m[1].str());
  std::string t, last;
  while (tok >> t) {
    if (is_java_keyword(t)) return std::nullopt;
    last = t;
  }
  if (last.empty()) return std::nullopt;
  return m[2].str();
}

inline bool line_declares(const std::string& line, const std::string& name) {
  auto declared = declaration_name(line);
  return declared && *declared == name;
}

inline bool contains_call(const std::string& line, const std::string& name) {
  const std::regex call_re("\\b" + name + "\\s*\\(");
  return std::regex_search(line, call_re);
}

}  // namespace detail

/// Parses a source file and locates its single gap. An invariant gap is found
/// by scanning for the marker comment; a contract gap needs the callee method
/// name as a hint (gap locations come from the task manifest, not inference).
inline AnnotatedDocument parse_document(const std::string& source_text,
                                        const std::optional<std::string>& gap_hint = {}) {
  if (source_text.empty()) throw Error(ErrorCode::no_gap_found, "source text is empty");

  AnnotatedDocument doc;
  doc.text = source_text;
  auto split = split_lines(source_text);
  doc.lines = std::move(split.lines);
  doc.trailing_newline = split.trailing_newline;

  std::vector<std::size_t> marker_lines;
  for (std::size_t i = 0; i < doc.lines.size(); ++i)
    if (doc.lines[i].find(kInvariantMarker) != std::string::npos) marker_lines.push_back(i);

  if (marker_lines.size() > 1)
    throw Error(ErrorCode::multiple_gaps, "invariant marker appears " +
                                              std::to_string(marker_lines.size()) + " times");

  if (marker_lines.size() == 1) {
    doc.gap.kind = GapKind::invariant;
    doc.gap.line = marker_lines.front();
    // Enclosing method: nearest declaration above the marker.
    for (std::size_t i = doc.gap.line; i-- > 0;) {
      if (auto name = detail::declaration_name(doc.lines[i])) {
        doc.gap.method_name = *name;
        break;
      }
    }
    return doc;
  }

  if (gap_hint && !gap_hint->empty()) {
    std::vector<std::size_t> decl_lines;
    for (std::size_t i = 0; i < doc.lines.size(); ++i)
      if (detail::line_declares(doc.lines[i], *gap_hint)) decl_lines.push_back(i);
    if (decl_lines.empty())
      throw Error(ErrorCode::no_gap_found, "no declaration of method '" + *gap_hint + "'");
    if (decl_lines.size() > 1)
      throw Error(ErrorCode::multiple_gaps,
                  "method '" + *gap_hint + "' declared more than once");

    doc.gap.kind = GapKind::contract;
    doc.gap.line = decl_lines.front();
    doc.gap.method_name = *gap_hint;

    // Calling method: the declaration whose region contains a call to the
    // callee. Regions run from one declaration line to the next.
    std::vector<std::size_t> all_decls;
    for (std::size_t i = 0; i < doc.lines.size(); ++i)
      if (detail::declaration_name(doc.lines[i])) all_decls.push_back(i);
    for (std::size_t d = 0; d < all_decls.size(); ++d) {
      std::size_t begin = all_decls[d];
      if (begin == doc.gap.line) continue;
      std::size_t end = (d + 1 < all_decls.size()) ? all_decls[d + 1] : doc.lines.size();
      for (std::size_t i = begin; i < end; ++i) {
        if (detail::contains_call(doc.lines[i], *gap_hint)) {
          doc.gap.calling_method = *detail::declaration_name(doc.lines[begin]);
          break;
        }
      }
      if (!doc.gap.calling_method.empty()) break;
    }
    return doc;
  }

  throw Error(ErrorCode::no_gap_found, "no invariant marker and no gap hint");
}

/// Splices a candidate into the document's gap and returns the draft text.
///
/// Invariant gap: the marker line is replaced by the candidate, re-indented
/// to the marker's indentation. Contract gap: the candidate is inserted on
/// its own lines directly above the callee declaration. Everything else is
/// byte-for-byte the original, so removing the spliced lines restores it.
inline std::string splice(const AnnotatedDocument& doc, const AnnotationCandidate& cand) {
  if (cand.kind != doc.gap.kind)
    throw Error(ErrorCode::kind_mismatch,
                std::string("candidate kind ") + gap_kind_name(cand.kind) +
                    " does not match gap kind " + gap_kind_name(doc.gap.kind));

  auto cand_lines = split_lines(cand.jml_text).lines;
  if (cand_lines.empty()) cand_lines.emplace_back();

  const std::string indent = leading_whitespace(doc.lines.at(doc.gap.line));
  std::vector<std::string> indented;
  indented.reserve(cand_lines.size());
  for (const auto& line : cand_lines)
    indented.push_back(line.empty() ? line : indent + line);

  std::vector<std::string> out = doc.lines;
  if (doc.gap.kind == GapKind::invariant) {
    out.erase(out.begin() + static_cast<std::ptrdiff_t>(doc.gap.line));
    out.insert(out.begin() + static_cast<std::ptrdiff_t>(doc.gap.line), indented.begin(),
               indented.end());
  } else {
    out.insert(out.begin() + static_cast<std::ptrdiff_t>(doc.gap.line), indented.begin(),
               indented.end());
  }
  return join_lines(out, doc.trailing_newline);
}

/// Pulls the JML candidate out of an oracle answer: the content of the last
/// triple-backtick fenced block, trimmed. Reasoning prose around the block is
/// discarded. Answers may draft in early blocks and finalize in the last one.
inline AnnotationCandidate extract_annotation(const std::string& answer, GapKind kind) {
  auto lines = split_lines(answer).lines;
  std::optional<std::size_t> open;
  std::optional<std::pair<std::size_t, std::size_t>> last_block;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::string_view l = lines[i];
    std::size_t ws = l.find_first_not_of(" \t");
    if (ws == std::string_view::npos) continue;
    if (l.substr(ws).rfind("```", 0) != 0) continue;
    if (!open) {
      open = i;
    } else {
      last_block = {*open, i};
      open.reset();
    }
  }
  if (!last_block) throw Error(ErrorCode::no_fenced_block, "answer contains no fenced block");

  std::vector<std::string> content(lines.begin() + static_cast<std::ptrdiff_t>(last_block->first) + 1,
                                   lines.begin() + static_cast<std::ptrdiff_t>(last_block->second));
  std::string jml = trim(join_lines(content, false));
  if (jml.empty()) throw Error(ErrorCode::empty_block, "fenced block is empty");
  return AnnotationCandidate(jml, kind);
}

/// Advisory shape check. Warnings never block submission: the verifier is the
/// sole authority on whether a candidate is acceptable.
inline std::vector<std::string> validate_shape(const AnnotationCandidate& cand) {
  std::vector<std::string> warnings;
  const std::string& t = cand.jml_text;
  if (!(t.rfind("/*@", 0) == 0 || t.rfind("//@", 0) == 0))
    warnings.push_back("candidate does not start with a JML comment opener");
  if (cand.kind == GapKind::contract && t.find("normal_behavior") == std::string::npos)
    warnings.push_back("missing normal_behavior");
  if (cand.kind == GapKind::invariant && t.find("loop_invariant") == std::string::npos)
    warnings.push_back("missing loop_invariant");
  return warnings;
}

}  // namespace specloop
