#pragma once

// Proof-length metric for Lean 4 proofs and the line-window segmentation used
// to build retrieval queries.
//
// The lexer deliberately mirrors a small Python reference rather than Lean's
// grammar: characters are classified with Python's str.isalnum, tokens grow on
// alphanumerics and `._'`, every other non-space character is a token of its
// own, and a fixed list of operators is re-joined afterwards. Counting goes
// through the same join/splitlines round trip as the reference, so a blank
// line counts as one token and a trailing blank line is dropped.

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lean_refactor/detail/hash.hpp"
#include "lean_refactor/detail/unicode_alnum_table.hpp"
#include "lean_refactor/errors.hpp"

namespace lean_refactor {

inline constexpr std::size_t kProofLengthSentinel = 1'000'000'000;

namespace detail {

struct DecodedChar {
  char32_t cp;
  std::size_t size;  // bytes consumed
};

// Invalid sequences decode as U+FFFD covering one byte.
inline DecodedChar decode_utf8(std::string_view s, std::size_t i) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  if (b0 < 0x80) return {b0, 1};
  auto cont = [&](std::size_t k) -> int {
    if (i + k >= s.size()) return -1;
    const auto b = static_cast<unsigned char>(s[i + k]);
    return (b & 0xC0) == 0x80 ? (b & 0x3F) : -1;
  };
  if ((b0 & 0xE0) == 0xC0) {
    const int c1 = cont(1);
    if (c1 >= 0) {
      const char32_t cp = ((b0 & 0x1F) << 6) | c1;
      if (cp >= 0x80) return {cp, 2};
    }
  } else if ((b0 & 0xF0) == 0xE0) {
    const int c1 = cont(1), c2 = c1 >= 0 ? cont(2) : -1;
    if (c2 >= 0) {
      const char32_t cp = ((b0 & 0x0F) << 12) | (c1 << 6) | c2;
      if (cp >= 0x800 && (cp < 0xD800 || cp > 0xDFFF)) return {cp, 3};
    }
  } else if ((b0 & 0xF8) == 0xF0) {
    const int c1 = cont(1), c2 = c1 >= 0 ? cont(2) : -1, c3 = c2 >= 0 ? cont(3) : -1;
    if (c3 >= 0) {
      const char32_t cp = ((b0 & 0x07) << 18) | (c1 << 12) | (c2 << 6) | c3;
      if (cp >= 0x10000 && cp <= 0x10FFFF) return {cp, 4};
    }
  }
  return {0xFFFD, 1};
}

inline bool is_alnum(char32_t cp) {
  if (cp < 0x80) {
    return (cp >= '0' && cp <= '9') || (cp >= 'A' && cp <= 'Z') || (cp >= 'a' && cp <= 'z');
  }
  const auto& r = kAlnumRanges;
  auto it = std::upper_bound(r.begin(), r.end(), static_cast<std::uint32_t>(cp),
                             [](std::uint32_t v, const CodePointRange& range) { return v < range.first; });
  if (it == r.begin()) return false;
  --it;
  return cp <= it->last;
}

inline bool is_token_char(char32_t cp) { return is_alnum(cp) || cp == '.' || cp == '_' || cp == '\''; }

// Python str.splitlines boundaries. Returns the byte length of the line break
// starting at i, or 0.
inline std::size_t line_break_at(std::string_view s, std::size_t i) {
  const auto c = static_cast<unsigned char>(s[i]);
  switch (c) {
    case '\n': case 0x0B: case 0x0C: case 0x1C: case 0x1D: case 0x1E:
      return 1;
    case '\r':
      return (i + 1 < s.size() && s[i + 1] == '\n') ? 2 : 1;
    default:
      break;
  }
  if (c >= 0xC2) {
    const auto d = decode_utf8(s, i);
    if (d.cp == 0x85 || d.cp == 0x2028 || d.cp == 0x2029) return d.size;
  }
  return 0;
}

// Python `text.splitlines()` (keepends=False).
inline std::vector<std::string_view> python_splitlines(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t start = 0, i = 0;
  while (i < s.size()) {
    const std::size_t br = line_break_at(s, i);
    if (br == 0) {
      ++i;
      continue;
    }
    out.push_back(s.substr(start, i - start));
    i += br;
    start = i;
  }
  if (start < s.size()) out.push_back(s.substr(start));
  return out;
}

// Python `str.replace`: non-overlapping, left to right.
inline std::string replace_all(std::string_view s, std::string_view from, std::string_view to) {
  std::string out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t hit = s.find(from, pos);
    if (hit == std::string_view::npos) break;
    out.append(s.substr(pos, hit - pos));
    out.append(to);
    pos = hit + from.size();
  }
  out.append(s.substr(pos));
  return out;
}

inline bool is_ident_byte(char c) {
  const auto u = static_cast<unsigned char>(c);
  return (u >= '0' && u <= '9') || (u >= 'A' && u <= 'Z') || (u >= 'a' && u <= 'z') || c == '_' || c == '\'' ||
         c == '.' || c == '!' || c == '?' || u >= 0x80;
}

}  // namespace detail

// Re-joined after lexing, in this order.
inline constexpr std::array<std::string_view, 19> kLeanOperators{
    ":=", "!=", "&&", "-.", "->", "←", "..", "...", "::", ":>", "<;>", ";;", "==", "||", "=>", "<=", ">=", "⁻¹", "?_"};

struct CommentStripResult {
  std::string text;
  bool unterminated_block = false;
};

// `--` runs to end of line (the newline stays), `/- ... -/` nests, and string
// literals are copied through untouched. An unterminated block comment is
// stripped to end of input and flagged.
inline CommentStripResult strip_comments(std::string_view src) {
  CommentStripResult res;
  std::string& out = res.text;
  out.reserve(src.size());
  std::size_t i = 0;
  const std::size_t n = src.size();
  while (i < n) {
    const char c = src[i];
    if (c == '"') {
      out.push_back(c);
      ++i;
      while (i < n) {
        const char d = src[i];
        out.push_back(d);
        ++i;
        if (d == '\\' && i < n) {
          out.push_back(src[i]);
          ++i;
        } else if (d == '"') {
          break;
        }
      }
      continue;
    }
    if (c == '-' && i + 1 < n && src[i + 1] == '-') {
      while (i < n && src[i] != '\n') ++i;
      continue;
    }
    if (c == '/' && i + 1 < n && src[i + 1] == '-') {
      int depth = 1;
      i += 2;
      while (i < n && depth > 0) {
        if (src[i] == '/' && i + 1 < n && src[i + 1] == '-') {
          ++depth;
          i += 2;
        } else if (src[i] == '-' && i + 1 < n && src[i + 1] == '/') {
          --depth;
          i += 2;
        } else {
          ++i;
        }
      }
      if (depth > 0) res.unterminated_block = true;
      continue;
    }
    out.push_back(c);
    ++i;
  }
  return res;
}

inline std::string remove_comments(std::string_view src) { return strip_comments(src).text; }

struct DeclarationBounds {
  std::size_t header_start = 0;  // offset of the theorem/lemma/example keyword
  std::size_t decl_end = 0;      // offset just past the top-level `:=`
};

// Locates the first theorem/lemma/example keyword and the first `:=` after it
// at bracket depth zero over ()[]{}⟨⟩.
inline DeclarationBounds find_declaration(std::string_view text) {
  static constexpr std::array<std::string_view, 3> kKeywords{"theorem", "lemma", "example"};
  std::size_t header_start = std::string_view::npos;
  std::size_t header_end = std::string_view::npos;
  for (std::size_t i = 0; i < text.size() && header_end == std::string_view::npos; ++i) {
    if (i > 0 && detail::is_ident_byte(text[i - 1])) continue;
    for (auto kw : kKeywords) {
      if (text.substr(i, kw.size()) != kw) continue;
      const std::size_t after = i + kw.size();
      if (after < text.size() && detail::is_ident_byte(text[after])) continue;
      header_start = i;
      header_end = after;
      break;
    }
  }
  if (header_end == std::string_view::npos) {
    throw MalformedDeclaration("no theorem, lemma or example header");
  }
  int depth = 0;
  for (std::size_t i = header_end; i < text.size();) {
    const auto d = detail::decode_utf8(text, i);
    switch (d.cp) {
      case '(': case '[': case '{': case U'⟨':
        ++depth;
        break;
      case ')': case ']': case '}': case U'⟩':
        --depth;
        break;
      case ':':
        if (depth == 0 && i + 1 < text.size() && text[i + 1] == '=') return {header_start, i + 2};
        break;
      default:
        break;
    }
    i += d.size;
  }
  throw MalformedDeclaration("no top-level ':=' after the declaration header");
}

// Byte offset just past the declaration's top-level `:=`.
inline std::size_t split_declaration(std::string_view text) { return find_declaration(text).decl_end; }

struct TokenizedProof {
  // Tokens per line after the reference's join/splitlines round trip.
  std::vector<std::vector<std::string>> lines;
  std::size_t total = 0;

  // A blank line still contributes one (empty) token to the count.
  static std::size_t line_weight(const std::vector<std::string>& line) { return std::max<std::size_t>(1, line.size()); }
};

// Tokens of a single physical line, operators re-joined.
inline std::vector<std::string> lex_line(std::string_view line) {
  std::vector<std::string> tokens;
  std::string token;
  for (std::size_t i = 0; i < line.size();) {
    const auto d = detail::decode_utf8(line, i);
    const std::string_view raw = line.substr(i, d.size);
    i += d.size;
    if (d.cp == U' ') {
      if (!token.empty()) tokens.push_back(std::exchange(token, {}));
    } else if (detail::is_token_char(d.cp)) {
      token.append(raw);
    } else {
      if (!token.empty()) tokens.push_back(std::exchange(token, {}));
      tokens.emplace_back(raw);
    }
  }
  if (!token.empty()) tokens.push_back(std::move(token));
  if (tokens.empty()) return tokens;

  std::string joined = tokens.front();
  for (std::size_t k = 1; k < tokens.size(); ++k) joined += ' ' + tokens[k];
  for (auto op : kLeanOperators) {
    std::string spaced;
    std::size_t pos = 0;
    while (pos < op.size()) {
      const auto d = detail::decode_utf8(op, pos);
      if (!spaced.empty()) spaced += ' ';
      spaced.append(op.substr(pos, d.size));
      pos += d.size;
    }
    if (joined.find(spaced) != std::string::npos) joined = detail::replace_all(joined, spaced, op);
  }

  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t sp = joined.find(' ', start);
    out.emplace_back(joined.substr(start, sp - start));
    if (sp == std::string::npos) break;
    start = sp + 1;
  }
  return out;
}

inline TokenizedProof lex(std::string_view proof_text) {
  TokenizedProof result;
  for (auto line : detail::python_splitlines(proof_text)) result.lines.push_back(lex_line(line));
  // "\n".join(lines).splitlines() loses a trailing empty line.
  if (!result.lines.empty() && result.lines.back().empty()) result.lines.pop_back();
  for (const auto& l : result.lines) result.total += TokenizedProof::line_weight(l);
  return result;
}

// Proof slice of a full declaration, comments removed.
inline std::string proof_slice(std::string_view statement_and_proof) {
  const std::string stripped = remove_comments(statement_and_proof);
  return stripped.substr(split_declaration(stripped));
}

// Token count of the proof part of a declaration; kProofLengthSentinel when
// the declaration cannot be split.
inline std::size_t proof_length(std::string_view statement_and_proof) noexcept {
  try {
    return lex(proof_slice(statement_and_proof)).total;
  } catch (...) {
    return kProofLengthSentinel;
  }
}

// Statement text from the header keyword through the top-level `:=`, with
// comments removed and whitespace runs collapsed to one space. Empty when
// the declaration cannot be split.
inline std::string normalized_statement(std::string_view statement_and_proof) {
  const std::string stripped = remove_comments(statement_and_proof);
  DeclarationBounds b;
  try {
    b = find_declaration(stripped);
  } catch (const MalformedDeclaration&) {
    return {};
  }
  std::string out;
  bool space = false;
  for (char c : std::string_view(stripped).substr(b.header_start, b.decl_end - b.header_start)) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      space = !out.empty();
      continue;
    }
    if (space) out.push_back(' ');
    space = false;
    out.push_back(c);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Segmentation

struct ProofSpan {
  int line_start = 0;  // 1-based, inclusive; 0/0 only for an empty document
  int line_end = 0;
  std::string text;
  bool operator==(const ProofSpan&) const = default;
};

inline std::vector<std::string_view> split_lines(std::string_view doc) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < doc.size()) {
    const std::size_t nl = doc.find('\n', start);
    if (nl == std::string_view::npos) {
      lines.push_back(doc.substr(start));
      break;
    }
    lines.push_back(doc.substr(start, nl - start));
    start = nl + 1;
  }
  return lines;
}

inline std::string join_lines(std::span<const std::string_view> lines, int first, int last) {
  std::string out;
  for (int i = first; i <= last; ++i) {
    if (i > first) out += '\n';
    out.append(lines[static_cast<std::size_t>(i - 1)]);
  }
  return out;
}

inline ProofSpan make_span(std::string_view doc, int line_start, int line_end) {
  const auto lines = split_lines(doc);
  return {line_start, line_end, join_lines(lines, line_start, line_end)};
}

// Non-overlapping windows of each size, then the whole document; spans with
// the same (line_start, line_end) are kept once, first occurrence wins.
inline std::vector<ProofSpan> segment(std::string_view proof, std::span<const int> sizes) {
  if (sizes.empty()) throw Error("segment: at least one chunk size required");
  for (int s : sizes) {
    if (s < 1) throw Error("segment: chunk sizes must be >= 1");
  }
  const auto lines = split_lines(proof);
  const int n = static_cast<int>(lines.size());
  if (n == 0) return {ProofSpan{}};

  std::vector<ProofSpan> out;
  std::set<std::pair<int, int>> seen;
  auto add = [&](int a, int b) {
    if (seen.emplace(a, b).second) out.push_back({a, b, join_lines(lines, a, b)});
  };
  for (int size : sizes) {
    for (int start = 1; start <= n; start += size) add(start, std::min(n, start + size - 1));
  }
  add(1, n);
  return out;
}

// Shifts each boundary by an independent uniform integer in
// [-max_jitter, max_jitter], clamps to the document and restores
// line_start <= line_end by swapping.
inline ProofSpan jitter_boundaries(std::string_view doc, const ProofSpan& span, int max_jitter, std::uint64_t seed) {
  if (max_jitter < 0) throw Error("jitter_boundaries: max_jitter must be >= 0");
  const auto lines = split_lines(doc);
  const int n = static_cast<int>(lines.size());
  if (n == 0 || max_jitter == 0) return span;
  detail::SplitMix64 rng(seed);
  auto shift = [&](int v) {
    const auto delta = rng.next_int(-max_jitter, max_jitter);
    return static_cast<int>(std::clamp<std::int64_t>(v + delta, 1, n));
  };
  int a = shift(span.line_start);
  int b = shift(span.line_end);
  if (a > b) std::swap(a, b);
  return {a, b, join_lines(lines, a, b)};
}

}  // namespace lean_refactor
