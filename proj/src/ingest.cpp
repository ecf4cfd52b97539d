// Copyright 2026 The cotloop Authors
// SPDX-License-Identifier: Apache-2.0

#include "cotloop/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <unordered_map>
#include <variant>

#include "cotloop/cote_engine.hpp"
#include "cotloop/errors.hpp"
#include "cotloop/files.hpp"
#include "cotloop/parallel.hpp"
#include "cotloop/text.hpp"

namespace cotloop {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Raw items

namespace {

Option option_from_string(std::string_view s) {
  const std::string t = text::trim(s);
  Option o{'?', t};
  if (t.empty()) return o;
  const char c = t[0];
  if (!((c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z'))) return o;
  std::string_view rest = std::string_view(t).substr(1);
  bool separated = false;
  for (std::string_view sep : {".", "、", "．", ":", "：", ")", "）", " "}) {
    if (rest.substr(0, sep.size()) == sep) {
      rest.remove_prefix(sep.size());
      separated = true;
      break;
    }
  }
  if (!separated) return o;
  return {static_cast<char>(c & ~0x20), text::trim(rest)};
}

bool looks_like_letter_answer(std::string_view answer) {
  const std::string t = text::trim(answer);
  if (t.empty() || t.size() > 16) return false;
  bool letter = false;
  for (char c : t) {
    if ((c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z')) {
      letter = true;
    } else if (c != ' ' && c != ',' && c != ';' && c != '/') {
      return false;
    }
  }
  return letter;
}

}  // namespace

RawItem raw_item_from_json(const json& j) {
  try {
    RawItem r;
    r.stem = j.value("stem", std::string());
    if (j.contains("answer") && !j["answer"].is_null()) {
      const auto& a = j["answer"];
      r.answer = a.is_string() ? a.get<std::string>() : a.dump();
    }
    if (j.contains("options")) {
      const auto& opts = j["options"];
      if (opts.is_array()) {
        for (const auto& o : opts) {
          if (o.is_string()) {
            r.options.push_back(option_from_string(o.get<std::string>()));
          } else {
            const auto label = o.value("label", std::string("?"));
            r.options.push_back({label.size() == 1 ? static_cast<char>(label[0] & ~0x20) : '?',
                                 o.value("text", std::string())});
          }
        }
      } else if (opts.is_object()) {
        for (const auto& [label, text] : opts.items()) {
          r.options.push_back({label.size() == 1 ? static_cast<char>(label[0] & ~0x20) : '?',
                               text.is_string() ? text.get<std::string>() : text.dump()});
        }
      }
    }
    r.source_uri = j.value("source_uri", std::string());
    if (j.contains("source_kind")) {
      r.source_kind = origin_from_string(j["source_kind"].get<std::string>());
    }
    if (j.contains("format") && !j["format"].is_null()) {
      r.format = format_from_string(j["format"].get<std::string>());
    }
    if (j.contains("subject") && j["subject"].is_string()) {
      try {
        r.subject = subject_from_string(j["subject"].get<std::string>());
      } catch (const Error&) {
        r.subject = Subject::other;
      }
    }
    if (j.contains("year") && j["year"].is_number_integer()) r.year = j["year"].get<int>();
    if (j.contains("unit") && j["unit"].is_number_integer()) r.unit = j["unit"].get<int>();
    return r;
  } catch (const json::exception& e) {
    throw Error(Errc::ParseError, std::string("raw item: ") + e.what());
  }
}

json to_json(const RawItem& r) {
  json options = json::array();
  for (const auto& o : r.options) {
    options.push_back({{"label", std::string(1, o.label)}, {"text", o.text}});
  }
  json j = {{"stem", r.stem},
            {"options", options},
            {"answer", r.answer},
            {"source_uri", r.source_uri},
            {"source_kind", to_string(r.source_kind)},
            {"subject", to_string(r.subject)}};
  if (r.format) j["format"] = to_string(*r.format);
  if (r.year) j["year"] = *r.year;
  if (r.unit) j["unit"] = *r.unit;
  return j;
}

std::vector<RawItem> read_raw_items(const fs::path& jsonl) {
  std::vector<RawItem> out;
  for (const auto& row : files::read_jsonl(jsonl)) out.push_back(raw_item_from_json(row));
  return out;
}

// ---------------------------------------------------------------------------
// Filtering

std::string_view to_string(RejectReason r) {
  switch (r) {
    case RejectReason::EmptyStem:
      return "EmptyStem";
    case RejectReason::MissingAnswer:
      return "MissingAnswer";
    case RejectReason::DuplicateLabels:
      return "DuplicateLabels";
    case RejectReason::TooFewOptions:
      return "TooFewOptions";
    case RejectReason::MalformedOptions:
      return "MalformedOptions";
    case RejectReason::AnswerNotInOptions:
      return "AnswerNotInOptions";
    case RejectReason::AnswerFormatMismatch:
      return "AnswerFormatMismatch";
    case RejectReason::FormatNotAllowed:
      return "FormatNotAllowed";
    case RejectReason::InvalidMetadata:
      return "InvalidMetadata";
  }
  return "";
}

namespace {

std::variant<Question, RejectReason> screen(const RawItem& item, const FilterPolicy& policy) {
  if (text::normalize(item.stem).empty()) return RejectReason::EmptyStem;
  if (text::normalize(item.answer).empty()) return RejectReason::MissingAnswer;

  Format format;
  if (item.format) {
    format = *item.format;
  } else if (item.options.empty() &&
             !(item.source_kind != Origin::textbook_qa && looks_like_letter_answer(item.answer))) {
    format = Format::fill_in_blank;
  } else {
    format = Format::mcq_single;
  }

  QuestionSpec spec;
  spec.stem = item.stem;
  spec.answer = item.answer;
  spec.subject = item.subject;
  spec.origin = item.source_kind;
  spec.year = item.year;
  spec.unit = item.unit;

  if (format != Format::fill_in_blank) {
    std::set<char> labels;
    for (const auto& o : item.options) {
      if (!labels.insert(o.label).second) return RejectReason::DuplicateLabels;
    }
    if (item.options.size() < std::max<std::size_t>(2, policy.min_options)) {
      return RejectReason::TooFewOptions;
    }
    for (std::size_t i = 0; i < item.options.size(); ++i) {
      if (item.options[i].label != static_cast<char>('A' + i) ||
          text::normalize(item.options[i].text).empty()) {
        return RejectReason::MalformedOptions;
      }
    }
    std::string key;
    try {
      key = normalize_answer(item.answer);
    } catch (const Error&) {
      return RejectReason::MissingAnswer;
    }
    const char last = static_cast<char>('A' + item.options.size() - 1);
    if (std::any_of(key.begin(), key.end(), [&](char c) { return c > last; })) {
      return RejectReason::AnswerNotInOptions;
    }
    if (!item.format) {
      format = key.size() > 1 ? Format::mcq_multi : Format::mcq_single;
    } else if (format == Format::mcq_single && key.size() != 1) {
      return RejectReason::AnswerFormatMismatch;
    }
    spec.options = item.options;
    spec.answer = key;
  }
  spec.format = format;

  if (std::find(policy.allowed_formats.begin(), policy.allowed_formats.end(), format) ==
      policy.allowed_formats.end()) {
    return RejectReason::FormatNotAllowed;
  }
  if (item.unit && (*item.unit < 1 || *item.unit > 4)) return RejectReason::InvalidMetadata;
  try {
    return make_question(spec);
  } catch (const Error&) {
    return RejectReason::MalformedOptions;
  }
}

}  // namespace

FilterResult filter_malformed(const std::vector<RawItem>& items, const FilterPolicy& policy) {
  FilterResult out;
  for (const auto& item : items) {
    auto r = screen(item, policy);
    if (auto* q = std::get_if<Question>(&r)) {
      out.accepted.push_back(std::move(*q));
    } else {
      out.rejected.push_back({item, std::get<RejectReason>(r)});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dedup

std::u32string similarity_key(std::string_view stem) {
  std::u32string out;
  for (char32_t c : text::to_u32(text::nfc(stem))) {
    if (text::is_space(c) || text::is_punct(c)) continue;
    out.push_back(text::fold_case(c));
  }
  return out;
}

namespace {

// Code points fit in 21 bits, so three of them pack losslessly into 63 bits.
// Keys shorter than a trigram set the top bit to stay distinct.
std::vector<std::uint64_t> grams_of(std::u32string_view key) {
  std::vector<std::uint64_t> g;
  if (key.empty()) return g;
  if (key.size() < 3) {
    std::uint64_t v = 1ULL << 63 | static_cast<std::uint64_t>(key.size()) << 42;
    for (std::size_t i = 0; i < key.size(); ++i) {
      v |= static_cast<std::uint64_t>(key[i]) << (21 * i);
    }
    g.push_back(v);
    return g;
  }
  g.reserve(key.size() - 2);
  for (std::size_t i = 0; i + 2 < key.size(); ++i) {
    g.push_back(static_cast<std::uint64_t>(key[i]) << 42 |
                static_cast<std::uint64_t>(key[i + 1]) << 21 | key[i + 2]);
  }
  std::sort(g.begin(), g.end());
  return g;
}

// Size of the multiset intersection of two sorted sequences.
template <typename T>
std::size_t overlap(const std::vector<T>& a, const std::vector<T>& b) {
  std::size_t i = 0, j = 0, n = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] < b[j]) {
      ++i;
    } else if (b[j] < a[i]) {
      ++j;
    } else {
      ++n, ++i, ++j;
    }
  }
  return n;
}

double jaccard(const std::vector<std::uint64_t>& a, const std::vector<std::uint64_t>& b) {
  if (a.empty() && b.empty()) return 1.0;
  const std::size_t inter = overlap(a, b);
  return static_cast<double>(inter) / static_cast<double>(a.size() + b.size() - inter);
}

int origin_rank(Origin o) {
  switch (o) {
    case Origin::real_exam:
      return 0;
    case Origin::hand_crafted:
      return 1;
    case Origin::mock_exam:
      return 2;
    case Origin::textbook_qa:
      return 3;
  }
  return 4;
}

struct DisjointSets {
  explicit DisjointSets(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a), b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
  std::vector<std::size_t> parent;
};

}  // namespace

double stem_similarity(std::u32string_view a, std::u32string_view b) {
  return jaccard(grams_of(a), grams_of(b));
}

bool survives_over(const Question& a, const Question& b) {
  const int ra = origin_rank(a.origin), rb = origin_rank(b.origin);
  if (ra != rb) return ra < rb;
  return a.id < b.id;
}

DedupResult dedup(const std::vector<Question>& items, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw Error(Errc::ConfigError, "dedup threshold must be in [0, 1]");
  }
  const std::size_t n = items.size();
  std::vector<std::vector<std::uint64_t>> grams(n);
  for (std::size_t i = 0; i < n; ++i) grams[i] = grams_of(similarity_key(items[i].stem));

  DisjointSets sets(n);
  if (threshold == 0.0) {
    for (std::size_t i = 1; i < n; ++i) sets.unite(0, i);
  } else {
    // Prefix filtering over (gram, occurrence) tokens, which turns multiset
    // Jaccard into plain set Jaccard. Tokens are ordered rarest first.
    std::map<std::pair<std::uint64_t, int>, std::uint32_t> token_ids;
    std::vector<std::vector<std::uint32_t>> tokens(n);
    for (std::size_t i = 0; i < n; ++i) {
      int occurrence = 0;
      for (std::size_t k = 0; k < grams[i].size(); ++k) {
        occurrence = (k > 0 && grams[i][k] == grams[i][k - 1]) ? occurrence + 1 : 0;
        auto [it, _] = token_ids.try_emplace({grams[i][k], occurrence},
                                             static_cast<std::uint32_t>(token_ids.size()));
        tokens[i].push_back(it->second);
      }
    }
    std::vector<std::uint32_t> df(token_ids.size(), 0);
    for (const auto& t : tokens) {
      for (auto id : t) ++df[id];
    }
    for (auto& t : tokens) {
      std::sort(t.begin(), t.end(), [&](std::uint32_t a, std::uint32_t b) {
        return df[a] != df[b] ? df[a] < df[b] : a < b;
      });
    }
    std::vector<std::size_t> empty_keys;
    std::unordered_map<std::uint32_t, std::vector<std::size_t>> postings;
    std::vector<std::size_t> seen(n, SIZE_MAX);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& t = tokens[i];
      if (t.empty()) {
        for (auto j : empty_keys) sets.unite(i, j);
        empty_keys.push_back(i);
        continue;
      }
      // A pair at similarity >= threshold shares at least ceil(t*|A|) tokens;
      // the epsilon only lengthens the prefix.
      const auto need =
          static_cast<std::size_t>(std::ceil(threshold * static_cast<double>(t.size()) - 1e-9));
      const std::size_t prefix = t.size() - std::min(need, t.size()) + 1;
      for (std::size_t p = 0; p < std::min(prefix, t.size()); ++p) {
        auto& list = postings[t[p]];
        for (auto j : list) {
          if (seen[j] == i) continue;
          seen[j] = i;
          const double lo = static_cast<double>(std::min(t.size(), tokens[j].size()));
          const double hi = static_cast<double>(std::max(t.size(), tokens[j].size()));
          if (lo / hi + 1e-12 < threshold) continue;
          if (jaccard(grams[i], grams[j]) >= threshold) sets.unite(i, j);
        }
        list.push_back(i);
      }
    }
  }

  std::vector<std::size_t> survivor(n, SIZE_MAX);
  for (std::size_t i = 0; i < n; ++i) {
    auto& s = survivor[sets.find(i)];
    if (s == SIZE_MAX || survives_over(items[i], items[s])) s = i;
  }
  DedupResult out;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t s = survivor[sets.find(i)];
    if (s == i) {
      out.kept.push_back(items[i]);
    } else {
      out.dropped.push_back({items[i].id, items[s].id, jaccard(grams[i], grams[s])});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Textbooks

std::vector<HeadingRule> default_heading_rules() {
  return {
      {std::regex(R"(^\s*第(?:[0-9]|一|二|三|四|五|六|七|八|九|十|百|零|〇|两)+章)"), 1},
      {std::regex(R"(^#{1,6}\s)"), 0},
  };
}

json to_json(const TextSegment& s) {
  return {{"book_id", s.book_id},
          {"chapter_path", s.chapter_path},
          {"text", s.text},
          {"char_count", s.char_count}};
}

namespace {

struct Chapter {
  std::vector<std::string> path;
  std::string body;
};

// Splits `book` into lines, keeping each line's terminator.
std::vector<std::string_view> lines_of(std::string_view book) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (pos < book.size()) {
    auto nl = book.find('\n', pos);
    const std::size_t end = nl == std::string_view::npos ? book.size() : nl + 1;
    out.push_back(book.substr(pos, end - pos));
    pos = end;
  }
  return out;
}

std::string strip_eol(std::string_view line) {
  while (!line.empty() && (line.back() == '\n' || line.back() == '\r')) line.remove_suffix(1);
  return std::string(line);
}

std::vector<Chapter> chapters_of(std::string_view book, const std::vector<HeadingRule>& rules) {
  std::vector<Chapter> chapters(1);
  std::vector<std::string> path;
  for (auto line : lines_of(book)) {
    const std::string bare = strip_eol(line);
    const HeadingRule* hit = nullptr;
    for (const auto& r : rules) {
      if (std::regex_search(bare, r.pattern)) {
        hit = &r;
        break;
      }
    }
    if (!hit) {
      chapters.back().body += line;
      continue;
    }
    std::string title = text::trim(bare);
    int level = hit->level;
    if (level == 0) {
      level = static_cast<int>(title.find_first_not_of('#'));
      title = text::trim(std::string_view(title).substr(static_cast<std::size_t>(level)));
    }
    path.resize(std::min(path.size(), static_cast<std::size_t>(std::max(level - 1, 0))));
    path.push_back(title);
    chapters.push_back({path, {}});
  }
  return chapters;
}

bool is_sentence_end(char32_t c) {
  switch (c) {
    case U'。':
    case U'！':
    case U'？':
    case U'；':
    case U'.':
    case U'!':
    case U'?':
    case U'\n':
      return true;
    default:
      return false;
  }
}

}  // namespace

std::string textbook_body(std::string_view book, const std::vector<HeadingRule>& headings) {
  std::string body;
  for (const auto& c : chapters_of(book, headings)) body += c.body;
  return body;
}

std::vector<TextSegment> segment_textbook(std::string_view book, std::string_view book_id,
                                          const SegmentOptions& options) {
  const std::size_t max = options.max_segment_chars, min = options.min_segment_chars;
  if (!(max > min && min > 0)) {
    throw Error(Errc::ConfigError, "segment sizes must satisfy max > min > 0");
  }
  const auto chapters = chapters_of(book, options.headings);
  bool any = false;
  for (const auto& c : chapters) any = any || !text::trim(c.body).empty();
  if (!any) throw Error(Errc::EmptyBook, "book '" + std::string(book_id) + "' has no body text");

  std::vector<TextSegment> out;
  for (const auto& chapter : chapters) {
    if (chapter.body.empty()) continue;
    const std::u32string body = text::to_u32(chapter.body);
    std::vector<std::u32string> pieces;
    std::size_t pos = 0;
    while (pos < body.size()) {
      if (body.size() - pos <= max) {
        pieces.push_back(body.substr(pos));
        break;
      }
      std::size_t cut = 0;
      for (std::size_t k = pos + max; k > pos; --k) {
        if (is_sentence_end(body[k - 1])) {
          cut = k;
          break;
        }
      }
      if (cut == 0) cut = pos + max;
      pieces.push_back(body.substr(pos, cut - pos));
      pos = cut;
    }
    // Short pieces merge forward while the result still fits.
    std::vector<std::u32string> merged;
    std::u32string carry;
    for (std::size_t i = 0; i < pieces.size(); ++i) {
      carry += pieces[i];
      const bool last = i + 1 == pieces.size();
      if (!last && carry.size() < min && carry.size() + pieces[i + 1].size() <= max) continue;
      merged.push_back(std::move(carry));
      carry.clear();
    }
    for (auto& m : merged) {
      TextSegment s;
      s.book_id = std::string(book_id);
      s.chapter_path = chapter.path;
      s.char_count = m.size();
      s.text = text::to_utf8(m);
      out.push_back(std::move(s));
    }
  }
  return out;
}

LineFilter LineFilter::generic() {
  LineFilter f;
  f.rules = {
      std::regex(R"(^\s*(?:-|—|–)?\s*[0-9]{1,4}\s*(?:-|—|–)?\s*$)"),
      std::regex(R"(^\s*第\s*[0-9]+\s*页(?:\s*(?:/|，|,)?\s*共\s*[0-9]+\s*页)?\s*$)"),
      std::regex(R"(^\s*(?:[Pp]age|P\.)\s*[0-9]+(?:\s*(?:/|of)\s*[0-9]+)?\s*$)"),
      std::regex(R"(^\s*[0-9]+\s*/\s*[0-9]+\s*$)"),
  };
  return f;
}

LineFilter LineFilter::from_rule_file(const fs::path& path) {
  LineFilter f = generic();
  const std::string body = files::read_text(path);
  int lineno = 0;
  for (auto line : lines_of(body)) {
    ++lineno;
    const std::string pattern = strip_eol(line);
    if (text::trim(pattern).empty()) continue;
    try {
      f.rules.emplace_back(pattern);
    } catch (const std::regex_error& e) {
      throw Error(Errc::ConfigError,
                  path.string() + ":" + std::to_string(lineno) + ": bad pattern: " + e.what());
    }
  }
  return f;
}

std::string LineFilter::apply(std::string_view input) const {
  const auto lines = lines_of(input);
  std::unordered_map<std::string, int> counts;
  if (running_head_min_repeats > 0) {
    for (auto line : lines) {
      const std::string t = text::trim(strip_eol(line));
      if (!t.empty() && text::codepoint_count(t) <= running_head_max_chars) ++counts[t];
    }
  }
  std::string out;
  for (auto line : lines) {
    const std::string bare = strip_eol(line);
    bool drop = std::any_of(rules.begin(), rules.end(),
                            [&](const std::regex& r) { return std::regex_search(bare, r); });
    if (!drop && running_head_min_repeats > 0) {
      auto it = counts.find(text::trim(bare));
      drop = it != counts.end() && it->second >= running_head_min_repeats;
    }
    if (!drop) out += line;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthesis

namespace {

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  for (std::size_t p = s.find(from); p != std::string::npos; p = s.find(from, p + to.size())) {
    s.replace(p, from.size(), to);
  }
}

std::string format_names(const std::vector<Format>& formats) {
  std::string out;
  for (auto f : formats) {
    if (!out.empty()) out += "、";
    switch (f) {
      case Format::mcq_single:
        out += "单项选择题";
        break;
      case Format::mcq_multi:
        out += "多项选择题";
        break;
      case Format::fill_in_blank:
        out += "填空题";
        break;
    }
  }
  return out;
}

}  // namespace

SynthesisTemplate SynthesisTemplate::default_template() {
  return {"你是中医药教材的命题专家，只依据给定材料出题，不引入材料以外的知识。",
          "请根据下面的教材片段编写{n_items}道难度不同的题目，题型：{format}。\n"
          "只输出一个JSON数组，不要输出其他文字。每个元素的格式为 "
          "{\"stem\": 题干, \"options\": {\"A\": 选项, ...}, \"answer\": 答案, \"format\": 题型}，"
          "其中题型取 mcq_single、mcq_multi 或 fill_in_blank；填空题的 options 为空对象，"
          "answer 为应填写的原文词语。\n\n教材片段：\n{segment_text}"};
}

void SynthesisTemplate::validate() const {
  for (std::string_view ph : {"{segment_text}", "{n_items}", "{format}"}) {
    if (user.find(ph) == std::string::npos) {
      throw Error(Errc::InvalidTemplate, "synthesis template lacks " + std::string(ph));
    }
  }
}

SynthesisTemplate SynthesisTemplate::from_json(const json& j) {
  SynthesisTemplate t;
  try {
    t.system = j.value("system", std::string());
    t.user = j.at("user").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidTemplate, std::string("synthesis template: ") + e.what());
  }
  t.validate();
  return t;
}

std::vector<RawItem> parse_synthesized(std::string_view reply, Origin origin) {
  const auto open = reply.find('[');
  const auto close = reply.rfind(']');
  if (open == std::string_view::npos || close == std::string_view::npos || close < open) {
    throw Error(Errc::NoParsableItems, "reply contains no JSON array");
  }
  json arr = json::parse(reply.substr(open, close - open + 1), nullptr, false);
  if (arr.is_discarded() || !arr.is_array()) {
    throw Error(Errc::NoParsableItems, "reply is not a valid JSON array");
  }
  std::vector<RawItem> out;
  for (const auto& el : arr) {
    if (!el.is_object()) continue;
    try {
      RawItem r = raw_item_from_json(el);
      r.source_kind = origin;
      out.push_back(std::move(r));
    } catch (const Error&) {
      // Items that do not fit the grammar are skipped.
    }
  }
  if (out.empty()) throw Error(Errc::NoParsableItems, "no item in the reply parses");
  return out;
}

std::vector<Question> synthesize_qa(const TextSegment& segment, Backend& backend,
                                    const SynthesisConfig& config) {
  config.prompt.validate();
  std::string user = config.prompt.user;
  replace_all(user, "{n_items}", std::to_string(config.n_items));
  replace_all(user, "{format}", format_names(config.formats));
  replace_all(user, "{segment_text}", segment.text);

  ChatRequest req;
  req.model = config.model;
  if (!config.prompt.system.empty()) req.messages.push_back({Role::system, config.prompt.system});
  req.messages.push_back({Role::user, user});
  req.temperature = config.temperature;
  req.max_tokens = 4096;
  req.seed = text::hash64(segment.book_id + '\x1f' + segment.text, config.seed);

  auto raw = parse_synthesized(backend.complete(req).text, Origin::textbook_qa);
  for (auto& r : raw) {
    r.subject = config.subject;
    if (r.source_uri.empty()) r.source_uri = segment.book_id;
  }
  FilterPolicy policy = config.policy;
  policy.allowed_formats = config.formats;
  auto accepted = filter_malformed(raw, policy).accepted;
  if (accepted.size() > config.n_items) accepted.resize(config.n_items);
  return accepted;
}

// ---------------------------------------------------------------------------
// Triage

TriageResult triage_by_model(const std::vector<Question>& items, Backend& backend,
                             const TriageConfig& config) {
  if (config.n_trials < 1) throw Error(Errc::ConfigError, "n_trials must be >= 1");
  const auto prompt = PromptTemplate::default_exam();
  std::vector<TriageEntry> entries(items.size());
  const int workers = config.workers > 0 ? config.workers : backend.policy().max_concurrency;
  parallel_for(items.size(), workers, [&](std::size_t i) {
    const Question& q = items[i];
    TriageEntry e{q, 0, config.n_trials, 0.0};
    for (int t = 0; t < config.n_trials; ++t) {
      ChatRequest req;
      req.model = config.model;
      req.messages = prompt.render(q);
      req.temperature = config.temperature;
      req.seed = attempt_seed(config.seed, q.id, t);
      const auto reply = backend.complete(req).text;
      try {
        if (verify(extract_answer(reply, q), q.answer_key, q.format)) ++e.correct;
      } catch (const Error& err) {
        if (err.code() != Errc::ExtractionFailed) throw;
      }
    }
    e.correct_rate = static_cast<double>(e.correct) / static_cast<double>(e.trials);
    entries[i] = std::move(e);
  });

  // Whole-percent granularity, half rounding down: pass iff c/n > thr - 0.005.
  const long long thr = std::llround(config.confidence_threshold * 100.0);
  TriageResult out;
  for (auto& e : entries) {
    const bool high = 200LL * e.correct > (2 * thr - 1) * static_cast<long long>(e.trials);
    (high ? out.high_confidence : out.flagged).push_back(std::move(e));
  }
  return out;
}

}  // namespace cotloop
