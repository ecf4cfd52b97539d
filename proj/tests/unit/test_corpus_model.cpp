// Copyright 2026 The cotloop Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <random>
#include <set>

#include "cotloop/corpus_model.hpp"
#include "cotloop/files.hpp"
#include "support.hpp"

using namespace cotloop;
using cotloop::testing::error_of;

namespace {

QuestionSpec four_option(std::string stem, std::string answer) {
  QuestionSpec spec;
  spec.stem = std::move(stem);
  spec.options = {{'A', "麻黄汤"}, {'B', "桂枝汤"}, {'C', "小柴胡汤"}, {'D', "白虎汤"}};
  spec.answer = std::move(answer);
  return spec;
}

}  // namespace

TEST_CASE("normalize_answer examples") {
  CHECK(normalize_answer("b") == "B");
  CHECK(normalize_answer(" C, A") == "AC");
  CHECK(normalize_answer("CA") == "AC");
  CHECK(normalize_answer("A,C") == "AC");
  CHECK(normalize_answer("ＢＤ") == "BD");
  CHECK(error_of([] { normalize_answer("——"); }) == Errc::NoLetterFound);
  CHECK(error_of([] { normalize_answer("   "); }) == Errc::NoLetterFound);
}

TEST_CASE("normalize_answer is idempotent") {
  std::mt19937 rng(11);
  const std::string alphabet = "abcdeABCDE ,.;、，（）()12";
  for (int i = 0; i < 2000; ++i) {
    std::string raw;
    const int len = 1 + static_cast<int>(rng() % 10);
    for (int j = 0; j < len; ++j) raw += alphabet[rng() % alphabet.size()];
    std::string once;
    try {
      once = normalize_answer(raw);
    } catch (const Error&) {
      continue;
    }
    CHECK(normalize_answer(once) == once);
  }
}

TEST_CASE("question_id determinism and whitespace normalization") {
  auto a = make_question(four_option("太阳病，发热恶寒，应选何方？", "A"));
  auto b = make_question(four_option("太阳病，发热恶寒，应选何方？", "A"));
  CHECK(a.id == b.id);
  CHECK(a.id.size() == 32);

  auto trailing = make_question(four_option("太阳病，发热恶寒，应选何方？  \n", "A"));
  CHECK(trailing.id == a.id);

  auto inner = make_question(four_option("太阳病，发热恶寒，  应选何方？", "A"));
  auto inner2 = make_question(four_option("太阳病，发热恶寒， 应选何方？", "A"));
  CHECK(inner.id == inner2.id);

  // NFC: "é" composed vs decomposed.
  QuestionSpec composed = four_option("caf\xC3\xA9", "A");
  QuestionSpec decomposed = four_option("cafe\xCC\x81", "A");
  CHECK(make_question(composed).id == make_question(decomposed).id);

  auto other_key = make_question(four_option("太阳病，发热恶寒，应选何方？", "B"));
  CHECK(other_key.id != a.id);
}

TEST_CASE("question_id has no collisions on a 1,000-item corpus; any option edit changes it") {
  auto corpus = cotloop::testing::synthetic_questions(1000, 99);
  std::set<std::string> ids;
  for (const auto& q : corpus) ids.insert(q.id);
  CHECK(ids.size() == corpus.size());

  std::set<std::string> edited_ids;
  for (const auto& q : corpus) {
    for (std::size_t o = 0; o < q.options.size(); ++o) {
      auto options = q.options;
      options[o].text += "改";
      const auto edited = question_id(q.stem, options, q.answer_key);
      CHECK(edited != q.id);
      edited_ids.insert(edited);
    }
  }
  // Edited variants are also pairwise distinct and disjoint from the originals.
  CHECK(edited_ids.size() == corpus.size() * 4);
  for (const auto& id : edited_ids) CHECK(ids.count(id) == 0);
}

TEST_CASE("make_question enforces invariants") {
  CHECK(error_of([] { make_question(four_option("", "A")); }) == Errc::InvalidQuestion);
  CHECK(error_of([] { make_question(four_option("stem", "E")); }) == Errc::InvalidQuestion);
  CHECK(error_of([] { make_question(four_option("stem", "——")); }) == Errc::InvalidQuestion);
  // mcq_single with two letters
  CHECK(error_of([] { make_question(four_option("stem", "AB")); }) == Errc::InvalidQuestion);
  auto multi = four_option("stem", "B,A");
  multi.format = Format::mcq_multi;
  CHECK(make_question(multi).answer_key == "AB");

  QuestionSpec gap = four_option("stem", "A");
  gap.options[2].label = 'D';
  CHECK(error_of([&] { make_question(gap); }) == Errc::InvalidQuestion);

  QuestionSpec one = four_option("stem", "A");
  one.options.resize(1);
  CHECK(error_of([&] { make_question(one); }) == Errc::InvalidQuestion);

  QuestionSpec fib;
  fib.stem = "《伤寒论》的作者是____。";
  fib.answer = "  张仲景 ";
  fib.format = Format::fill_in_blank;
  auto q = make_question(fib);
  CHECK(q.answer_key == "张仲景");
  CHECK(q.options.empty());

  auto tampered = make_question(four_option("stem", "A"));
  tampered.answer_key = "B";
  CHECK(error_of([&] { validate(tampered); }) == Errc::InvalidQuestion);
}

TEST_CASE("Question and QaDataset JSONL round-trip preserves value and hash") {
  cotloop::testing::TempDir dir;
  auto items = cotloop::testing::synthetic_questions(50, 3);
  QuestionSpec fib;
  fib.stem = "填空：____主表证。";
  fib.answer = "麻黄汤";
  fib.format = Format::fill_in_blank;
  fib.origin = Origin::textbook_qa;
  items.push_back(make_question(fib));

  for (const auto& q : items) CHECK(question_from_json(json::parse(to_json(q).dump())) == q);

  auto ds = make_dataset("v1", items);
  write_dataset(ds, dir / "qa.jsonl");
  auto back = read_dataset(dir / "qa.jsonl");
  CHECK(back.version == "v1");
  CHECK(back.items == ds.items);
  CHECK(back.manifest_hash == ds.manifest_hash);

  auto manifest = files::read_json(dir / "qa.manifest.json");
  CHECK(manifest["count"] == 51);
  CHECK(manifest["manifest_hash"] == ds.manifest_hash);

  // Hash is over the canonical (id-sorted) ordering.
  auto reversed = items;
  std::reverse(reversed.begin(), reversed.end());
  CHECK(make_dataset("v1", reversed).manifest_hash == ds.manifest_hash);

  auto dup = items;
  dup.push_back(items.front());
  CHECK(error_of([&] { make_dataset("v1", dup); }) == Errc::InvalidQuestion);
}

TEST_CASE("read_dataset rejects a manifest that disagrees with content") {
  cotloop::testing::TempDir dir;
  auto ds = make_dataset("v1", cotloop::testing::synthetic_questions(5));
  write_dataset(ds, dir / "qa.jsonl");
  auto manifest = files::read_json(dir / "qa.manifest.json");
  manifest["manifest_hash"] = std::string(64, '0');
  files::write_json_atomic(dir / "qa.manifest.json", manifest);
  CHECK(error_of([&] { read_dataset(dir / "qa.jsonl"); }) == Errc::ChecksumMismatch);
}

TEST_CASE("question_from_json rejects stale ids") {
  auto q = make_question(four_option("stem text", "C"));
  auto j = to_json(q);
  j["stem"] = "a different stem";
  CHECK(error_of([&] { question_from_json(j); }) == Errc::InvalidQuestion);
}

TEST_CASE("CandidateTrace and CotRecord JSON round-trip") {
  CandidateTrace t{"qid",
                   2,
                   "step 1",
                   "step 1\nAnswer: B",
                   std::string("B"),
                   true,
                   "m0",
                   {0.6, 1234567890123ULL}};
  CHECK(candidate_from_json(json::parse(to_json(t).dump())) == t);
  t.extracted_answer.reset();
  t.verified = false;
  CHECK(candidate_from_json(to_json(t)) == t);

  CotRecord r{"qid", "because", "B", RecordSource::expert, 3, "dr.li"};
  CHECK(record_from_json(to_json(r)) == r);
}
