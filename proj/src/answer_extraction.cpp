// Copyright 2026 The cotloop Authors
// SPDX-License-Identifier: Apache-2.0

// Answer extraction grammar. All scanning is byte-wise on UTF-8: ASCII bytes
// never occur inside multi-byte sequences, so ASCII letter tests are safe.

#include <algorithm>
#include <array>

#include "cotloop/cote_engine.hpp"
#include "cotloop/errors.hpp"
#include "cotloop/text.hpp"

namespace cotloop {

namespace {

bool at(std::string_view s, std::size_t pos, std::string_view tok) {
  return pos <= s.size() && s.substr(pos, tok.size()) == tok;
}

bool is_ascii_alpha(char c) { return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z'); }
bool is_ascii_alnum(char c) { return is_ascii_alpha(c) || (c >= '0' && c <= '9'); }
bool is_blank(char c) { return c == ' ' || c == '\t'; }

std::size_t skip_blanks(std::string_view s, std::size_t pos) {
  while (pos < s.size() && is_blank(s[pos])) ++pos;
  return pos;
}

// Filler between a marker and the answer: "：", "】", "is", "为", "**" ...
std::size_t skip_filler(std::string_view s, std::size_t pos) {
  static constexpr std::array<std::string_view, 17> kFiller = {
      "】", "]",  "：", ":",  "*", "为", "是", "应选",
      "选", "is", "Is", "IS", "=", "—",  "-",  "\xEF\xBC\x9D" /* ＝ */,
      "#"};
  for (;;) {
    pos = skip_blanks(s, pos);
    bool advanced = false;
    for (auto tok : kFiller) {
      if (at(s, pos, tok)) {
        // "is" must be a whole word.
        if (tok.size() == 2 && is_ascii_alpha(tok[0]) && pos + 2 < s.size() &&
            is_ascii_alpha(s[pos + 2])) {
          continue;
        }
        pos += tok.size();
        advanced = true;
        break;
      }
    }
    if (!advanced) return pos;
  }
}

std::size_t skip_openers(std::string_view s, std::size_t pos) {
  static constexpr std::array<std::string_view, 6> kOpen = {"\\boxed{", "（", "【", "(", "[", "{"};
  pos = skip_blanks(s, pos);
  for (auto tok : kOpen) {
    if (at(s, pos, tok)) return skip_blanks(s, pos + tok.size());
  }
  return pos;
}

std::size_t skip_separator(std::string_view s, std::size_t pos) {
  static constexpr std::array<std::string_view, 8> kSep = {",",  "，", "、", "/",
                                                           "和", "及", "&",  ";"};
  std::size_t p = skip_blanks(s, pos);
  for (auto tok : kSep) {
    if (at(s, p, tok)) {
      p = skip_blanks(s, p + tok.size());
      if (at(s, p, "and") && p + 3 < s.size() && !is_ascii_alpha(s[p + 3])) {
        p = skip_blanks(s, p + 3);
      }
      return p;
    }
  }
  if (at(s, p, "and") && p + 3 < s.size() && !is_ascii_alpha(s[p + 3])) {
    return skip_blanks(s, p + 3);
  }
  return std::string_view::npos;
}

// Reads a list of option letters ("B", "A, C", "AC", "(c)"). Returns the raw
// letters, empty if none.
std::string read_letters(std::string_view s, std::size_t pos, char last_label,
                         std::size_t* end = nullptr) {
  std::string letters;
  while (pos < s.size()) {
    const std::size_t b = pos;
    while (pos < s.size() && is_ascii_alpha(s[pos])) ++pos;
    if (pos == b) break;
    const std::string_view token = s.substr(b, pos - b);
    const bool upper = std::all_of(token.begin(), token.end(),
                                   [&](char c) { return c >= 'A' && c <= last_label; });
    const bool single_lower =
        token.size() == 1 && token[0] >= 'a' && token[0] <= last_label - 'A' + 'a';
    // A letter glued to digits ("B12") is not an option token.
    if ((!upper && !single_lower) || (pos < s.size() && is_ascii_alnum(s[pos]))) {
      pos = b;
      break;
    }
    for (char c : token) letters.push_back(static_cast<char>(c & ~0x20));
    const std::size_t next = skip_separator(s, pos);
    if (next == std::string_view::npos || next >= s.size() || !is_ascii_alpha(s[next])) break;
    pos = next;
  }
  if (end) *end = pos;
  return letters;
}

char last_label_of(const Question& q) {
  return q.options.empty() ? 'A' : static_cast<char>('A' + q.options.size() - 1);
}

struct MarkerHit {
  std::size_t start;  // where the chain of thought ends
  std::size_t after;  // first byte after the marker word
};

// All marker occurrences, in text order.
std::vector<MarkerHit> find_markers(std::string_view s) {
  std::vector<MarkerHit> hits;
  for (std::string_view m :
       {std::string_view("正确答案"), std::string_view("答案"), std::string_view("正确选项")}) {
    for (std::size_t p = s.find(m); p != std::string_view::npos; p = s.find(m, p + m.size())) {
      std::size_t start = p;
      if (m == "答案" && p >= 6 && at(s, p - 6, "正确")) continue;  // covered by 正确答案
      if (start >= 3 && at(s, start - 3, "【")) start -= 3;
      hits.push_back({start, p + m.size()});
    }
  }
  // "answer", case-insensitive, must be followed by a colon (after optional "is").
  std::string lower(s);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c + 32) : c; });
  for (std::size_t p = lower.find("answer"); p != std::string::npos;
       p = lower.find("answer", p + 6)) {
    if (p > 0 && is_ascii_alpha(lower[p - 1])) continue;
    std::size_t q = skip_blanks(lower, p + 6);
    if (at(lower, q, "is") && !is_ascii_alpha(q + 2 < lower.size() ? lower[q + 2] : ' ')) {
      q = skip_blanks(lower, q + 2);
    }
    while (at(lower, q, "*")) ++q;
    if (!at(lower, q, ":") && !at(lower, q, "：")) continue;
    std::size_t start = p;
    for (std::string_view prefix : {"the final ", "final ", "the "}) {
      if (start >= prefix.size() && at(lower, start - prefix.size(), prefix)) {
        start -= prefix.size();
        break;
      }
    }
    while (start > 0 && (lower[start - 1] == '*' || lower[start - 1] == '#')) --start;
    hits.push_back({start, p + 6});
  }
  std::sort(hits.begin(), hits.end(),
            [](const MarkerHit& a, const MarkerHit& b) { return a.after < b.after; });
  return hits;
}

std::string cot_before(std::string_view s, std::size_t end) {
  std::string cot = text::trim(s.substr(0, end));
  for (;;) {
    bool stripped = false;
    for (std::string_view tail : {"【", "[", "**", "#", "：", ":", "-"}) {
      if (cot.size() >= tail.size() &&
          cot.compare(cot.size() - tail.size(), tail.size(), tail) == 0) {
        cot = text::trim(std::string_view(cot).substr(0, cot.size() - tail.size()));
        stripped = true;
      }
    }
    if (!stripped) return cot;
  }
}

std::optional<Extraction> by_marker(std::string_view s, const Question& q) {
  auto hits = find_markers(s);
  for (auto it = hits.rbegin(); it != hits.rend(); ++it) {
    std::size_t pos = skip_filler(s, it->after);
    if (!q.is_mcq()) {
      auto eol = s.find('\n', pos);
      std::string ans =
          text::trim(s.substr(pos, eol == std::string_view::npos ? s.npos : eol - pos));
      while (!ans.empty() && (ans.back() == '.' || ans.back() == '*')) ans.pop_back();
      if (ans.size() >= 3 && ans.compare(ans.size() - 3, 3, "。") == 0) ans.resize(ans.size() - 3);
      ans = normalize_completion(ans);
      if (ans.empty()) continue;
      return Extraction{ans, cot_before(s, it->start), ExtractionRule::marker};
    }
    pos = skip_openers(s, pos);
    const std::string letters = read_letters(s, pos, last_label_of(q));
    if (letters.empty()) continue;
    return Extraction{normalize_answer(letters), cot_before(s, it->start), ExtractionRule::marker};
  }
  return std::nullopt;
}

std::optional<Extraction> by_bracket(std::string_view s, const Question& q) {
  struct Pair {
    std::string_view open, close;
  };
  static constexpr std::array<Pair, 6> kPairs = {
      {{"\\boxed{", "}"}, {"（", "）"}, {"【", "】"}, {"(", ")"}, {"[", "]"}, {"{", "}"}}};
  const char last = last_label_of(q);
  std::optional<std::pair<std::size_t, std::string>> best;
  for (const auto& pair : kPairs) {
    for (std::size_t p = s.find(pair.open); p != std::string_view::npos;
         p = s.find(pair.open, p + 1)) {
      if (best && p <= best->first) continue;
      const std::size_t content = p + pair.open.size();
      const std::size_t close = s.find(pair.close, content);
      if (close == std::string_view::npos || close - content > 24) continue;
      std::size_t end = 0;
      const std::string letters = read_letters(s, skip_blanks(s, content), last, &end);
      if (letters.empty() || skip_blanks(s, end) != close) continue;
      best = {p, letters};
    }
  }
  if (!best) return std::nullopt;
  return Extraction{normalize_answer(best->second), cot_before(s, best->first),
                    ExtractionRule::bracketed};
}

std::optional<Extraction> by_last_letter(std::string_view s, const Question& q) {
  const char last = last_label_of(q);
  std::size_t para = 0;
  const std::string trimmed = text::trim(s);
  std::string_view t(trimmed);
  if (auto p = t.rfind("\n\n"); p != std::string_view::npos) para = p + 2;
  for (std::size_t i = t.size(); i-- > para;) {
    const char c = t[i];
    if (c < 'A' || c > last) continue;
    const bool left_ok = i == 0 || !is_ascii_alnum(t[i - 1]);
    const bool right_ok = i + 1 >= t.size() || !is_ascii_alnum(t[i + 1]);
    if (left_ok && right_ok) {
      return Extraction{std::string(1, c), trimmed, ExtractionRule::last_letter};
    }
  }
  return std::nullopt;
}

}  // namespace

bool verify(std::string_view candidate, std::string_view ground_truth, Format format) {
  if (format == Format::fill_in_blank) {
    const auto a = normalize_completion(candidate);
    return !a.empty() && a == normalize_completion(ground_truth);
  }
  try {
    return normalize_answer(candidate) == normalize_answer(ground_truth);
  } catch (const Error&) {
    return false;
  }
}

Extraction extract(std::string_view response, const Question& question) {
  if (auto e = by_marker(response, question)) return *e;
  if (question.is_mcq()) {
    if (auto e = by_bracket(response, question)) return *e;
    if (auto e = by_last_letter(response, question)) return *e;
  }
  throw Error(Errc::ExtractionFailed, "no answer found in response");
}

std::string extract_answer(std::string_view response, const Question& question) {
  return extract(response, question).answer;
}

}  // namespace cotloop
