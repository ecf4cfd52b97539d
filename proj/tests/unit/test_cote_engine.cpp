// Copyright 2026 The cotloop Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "cotloop/cote_engine.hpp"
#include "cotloop/files.hpp"
#include "cotloop/text.hpp"
#include "support.hpp"

#include <set>

using namespace cotloop;
using cotloop::testing::error_of;
using cotloop::testing::make_item;
using cotloop::testing::synthetic_questions;
using cotloop::testing::TempDir;

namespace {

BackendPolicy fast_policy(int concurrency = 4) {
  BackendPolicy p;
  p.max_concurrency = concurrency;
  p.retry.max_attempts = 2;
  p.retry.backoff_base = std::chrono::milliseconds(1);
  return p;
}

Question four_option(char answer = 'B') {
  return make_item(1, Subject::shang_han_lun, 1, 2012, answer);
}

Question multi(std::string answer) {
  QuestionSpec spec;
  spec.stem = "下列哪些属于八纲辨证？";
  for (char c = 'A'; c <= 'E'; ++c) spec.options.push_back({c, std::string("项") + c});
  spec.answer = std::move(answer);
  spec.format = Format::mcq_multi;
  return make_question(spec);
}

Question blank(std::string answer) {
  QuestionSpec spec;
  spec.stem = "《伤寒论》中治疗太阳中风的主方是____。";
  spec.answer = std::move(answer);
  spec.format = Format::fill_in_blank;
  return make_question(spec);
}

std::string wrong_letter(const Question& q) { return q.answer_key == "A" ? "B" : "A"; }

EngineConfig engine_config(int max_attempts = 3) {
  EngineConfig c;
  c.generation.max_attempts = max_attempts;
  c.generation.base_seed = 11;
  return c;
}

}  // namespace

TEST_CASE("extraction: worked examples") {
  const auto q = four_option();
  auto e = extract("……【答案】B", q);
  CHECK(e.answer == "B");
  CHECK(e.rule == ExtractionRule::marker);
  CHECK(e.chain_of_thought == "……");

  e = extract("the answer is (C).", q);
  CHECK(e.answer == "C");
  CHECK(e.rule == ExtractionRule::bracketed);
  CHECK(e.chain_of_thought == "the answer is");

  CHECK(error_of([&] { extract("I cannot determine the answer.", q); }) == Errc::ExtractionFailed);
}

TEST_CASE("extraction: marker variants") {
  const auto q = four_option();
  CHECK(extract_answer("分析略。\n答案：D", q) == "D");
  CHECK(extract_answer("分析略。答案为C。", q) == "C");
  CHECK(extract_answer("正确选项是 A", q) == "A");
  CHECK(extract_answer("步骤一……\nFinal Answer: b", q) == "B");
  CHECK(extract_answer("**Answer:** (D)", q) == "D");
  CHECK(extract_answer("The answer is: C", q) == "C");
  // The last marker wins; an unparsable one is skipped.
  CHECK(extract_answer("答案：A 似乎不对。\n答案：C", q) == "C");
  CHECK(extract_answer("答案：C\nAnswer: because of heat", q) == "C");
  // Letters beyond the option range are not answers.
  CHECK(error_of([&] { extract("Answer: F", q); }) == Errc::ExtractionFailed);

  auto e = extract("第一步：辨为太阳中风。\n第二步：选桂枝汤。\nAnswer: B", q);
  CHECK(e.chain_of_thought == "第一步：辨为太阳中风。\n第二步：选桂枝汤。");
}

TEST_CASE("extraction: multi-answer lists normalize to sorted letter sets") {
  const auto q = multi("ACE");
  CHECK(extract_answer("答案：E、A、C", q) == "ACE");
  CHECK(extract_answer("Answer: A, C and E", q) == "ACE");
  CHECK(extract_answer("故选【CA】", q) == "AC");
  CHECK(extract_answer("\\boxed{A,E}", q) == "AE");
}

TEST_CASE("extraction: bracket and last-letter fallbacks") {
  const auto q = four_option();
  CHECK(extract_answer("先排除(A)，再排除（B），最终为（D）", q) == "D");
  CHECK(extract_answer("比较各项。\n\n综合来看 C 最合适", q) == "C");
  // Only the final paragraph is searched by the last rule.
  CHECK(error_of([&] { extract("A 不对\n\n无法判断", q); }) == Errc::ExtractionFailed);
  auto e = extract("比较各项。\n\n选 C", q);
  CHECK(e.rule == ExtractionRule::last_letter);
  CHECK(e.chain_of_thought == "比较各项。\n\n选 C");
}

TEST_CASE("extraction: fill-in-the-blank uses the marker only") {
  const auto q = blank("桂枝汤");
  CHECK(extract_answer("太阳中风，营卫不和。\n答案：桂枝汤。", q) == "桂枝汤");
  CHECK(error_of([&] { extract("应为桂枝汤 (A)", q); }) == Errc::ExtractionFailed);
  CHECK(verify("  桂枝汤 ", q.answer_key, Format::fill_in_blank));
  CHECK_FALSE(verify("麻黄汤", q.answer_key, Format::fill_in_blank));
}

TEST_CASE("verify: letter-set equality") {
  CHECK(verify("B", "B"));
  CHECK_FALSE(verify("C", "B"));
  CHECK(verify("c, a", "AC", Format::mcq_multi));
  CHECK_FALSE(verify("A", "AC", Format::mcq_multi));
  CHECK_FALSE(verify("???", "A"));
}

TEST_CASE("prompt rendering carries stem, options and format") {
  const auto q = four_option();
  auto msgs = PromptTemplate::default_cot().render(q);
  REQUIRE(msgs.size() == 2);
  CHECK(msgs[0].role == Role::system);
  CHECK(msgs[1].content.rfind(q.stem, 0) == 0);
  CHECK(msgs[1].content.find("B. " + q.options[1].text) != std::string::npos);
  CHECK(error_of([] { PromptTemplate::from_json({{"user", "no placeholder"}}); }) ==
        Errc::InvalidTemplate);
  auto t = PromptTemplate::from_json(PromptTemplate::default_exam().to_json());
  CHECK(t.user == PromptTemplate::default_exam().user);
}

TEST_CASE("generate_candidates: always correct yields one trace") {
  const auto q = four_option('B');
  ScriptedBackend b("s", fast_policy());
  b.set_default("辨证后选择。\nAnswer: B");
  GenerationConfig g;
  g.max_attempts = 8;
  auto traces = generate_candidates(q, b, g);
  REQUIRE(traces.size() == 1);
  CHECK(traces[0].verified);
  CHECK(traces[0].sampling.temperature == doctest::Approx(0.6));
}

TEST_CASE("generate_candidates: always wrong exhausts the budget with distinct seeds") {
  const auto q = four_option('B');
  ScriptedBackend b("s", fast_policy());
  b.set_default("辨证后选择。\nAnswer: C");
  GenerationConfig g;
  g.max_attempts = 3;
  auto traces = generate_candidates(q, b, g);
  REQUIRE(traces.size() == 3);
  std::set<std::uint64_t> seeds;
  for (const auto& t : traces) {
    CHECK_FALSE(t.verified);
    CHECK(t.extracted_answer == "C");
    seeds.insert(t.sampling.seed);
  }
  CHECK(seeds.size() == 3);
}

TEST_CASE("generate_candidates: correct only on the second attempt") {
  const auto q = four_option('B');
  ScriptedBackend b("s", fast_policy());
  b.add_rule(q.stem, {"推理。\nAnswer: A", "推理。\nAnswer: B"});
  GenerationConfig g;
  g.max_attempts = 5;
  auto traces = generate_candidates(q, b, g);
  REQUIRE(traces.size() == 2);
  CHECK_FALSE(traces[0].verified);
  CHECK(traces[1].verified);
  CHECK(traces[1].attempt_index == 1);
}

TEST_CASE("a verified answer without reasoning is not acceptable") {
  const auto q = four_option('B');
  ScriptedBackend b("s", fast_policy());
  b.set_default("Answer: B");
  GenerationConfig g;
  g.max_attempts = 2;
  auto traces = generate_candidates(q, b, g);
  CHECK(traces.size() == 2);
  CHECK(traces[0].verified);
  CHECK_FALSE(acceptable(traces[0]));
}

TEST_CASE("run_iteration: 4 questions, 3 answered correctly") {
  std::vector<Question> subset;
  for (int i = 0; i < 4; ++i) subset.push_back(make_item(i, Subject::acupuncture, 1, 2016, 'C'));
  ScriptedBackend b("s", fast_policy());
  b.set_default("取穴分析。\nAnswer: C");
  b.add_rule(subset[2].stem, {"取穴分析。\nAnswer: D"});
  TempDir dir;
  CheckpointStore cp(dir / "ckpt.json");
  InMemoryHardCaseQueue queue;
  auto cfg = engine_config(3);
  cfg.rejects_path = dir / "rejects.jsonl";
  auto r = run_iteration(1, 0, subset, b, cfg, cp, queue);
  CHECK(r.dataset.records.size() == 3);
  REQUIRE(r.hard_cases.size() == 1);
  CHECK(r.hard_cases[0] == subset[2].id);
  CHECK(queue.list(HardCaseStatus::pending).size() == 1);
  CHECK(queue.get(subset[2].id)->attempts == 3);
  CHECK(r.dataset.stats.n_machine == 3);
  CHECK(r.dataset.stats.acceptance_rate == doctest::Approx(3.0 / 6.0));
  CHECK(r.dataset.stats.mean_attempts == doctest::Approx(6.0 / 4.0));
  CHECK(files::read_jsonl(dir / "rejects.jsonl").size() == 3);
  CHECK(r.state.questions.at(subset[2].id).status == QuestionStatus::expert_pending);
}

TEST_CASE("run_iteration: empty subset") {
  ScriptedBackend b("s", fast_policy());
  TempDir dir;
  CheckpointStore cp(dir / "ckpt.json");
  InMemoryHardCaseQueue queue;
  auto r = run_iteration(1, 0, {}, b, engine_config(), cp, queue);
  CHECK(r.dataset.records.empty());
  CHECK(r.hard_cases.empty());
  CHECK(b.counters().logical_requests == 0);
}

TEST_CASE("run_iteration: expert records resolved later join on resume") {
  std::vector<Question> subset = {four_option('B')};
  ScriptedBackend b("s", fast_policy());
  b.set_default("推理。\nAnswer: A");
  TempDir dir;
  CheckpointStore cp(dir / "ckpt.json");
  InMemoryHardCaseQueue queue;
  auto r = run_iteration(1, 0, subset, b, engine_config(2), cp, queue);
  REQUIRE(r.hard_cases.size() == 1);
  ExpertAnnotation ann{std::string(60, 'x'), "B", "dr.li"};
  annotate_hard_case(queue, subset[0].id, ann);
  const auto calls = b.counters().logical_requests;
  auto again = run_iteration(1, 0, subset, b, engine_config(2), cp, queue);
  CHECK(b.counters().logical_requests == calls);
  CHECK(again.hard_cases.empty());
  REQUIRE(again.dataset.records.size() == 1);
  CHECK(again.dataset.records[0].source == RecordSource::expert);
  CHECK(again.dataset.stats.n_expert == 1);
}

TEST_CASE("run_iteration rejects a checkpoint from another subset or model") {
  auto qs = synthetic_questions(6, 3);
  ScriptedBackend b("s", fast_policy());
  b.set_default("推理。\nAnswer: A");
  TempDir dir;
  CheckpointStore cp(dir / "ckpt.json");
  InMemoryHardCaseQueue queue;
  run_iteration(1, 0, qs, b, engine_config(1), cp, queue);
  std::vector<Question> other(qs.begin(), qs.begin() + 5);
  CHECK(error_of([&] { run_iteration(1, 0, other, b, engine_config(1), cp, queue); }) ==
        Errc::ChecksumMismatch);
  auto cfg = engine_config(1);
  cfg.generation.model = "m0+other";
  CHECK(error_of([&] { run_iteration(1, 0, qs, b, cfg, cp, queue); }) == Errc::ChecksumMismatch);
  CHECK(error_of([&] { run_iteration(2, 0, qs, b, engine_config(1), cp, queue); }) ==
        Errc::ChecksumMismatch);
}

TEST_CASE("crash and resume reproduces the uninterrupted dataset") {
  auto qs = synthetic_questions(120, 21);
  auto make_mock = [&] {
    auto m = std::make_unique<ImprovingMock>("mock", fast_policy(3), SuccessCurve({{0, 0.5}}), 5);
    m->index_questions(qs);
    return m;
  };
  auto cfg = engine_config(4);
  TempDir dir;

  auto reference_mock = make_mock();
  CheckpointStore ref_cp(dir / "ref.json");
  InMemoryHardCaseQueue ref_queue;
  const auto reference = run_iteration(1, 0, qs, *reference_mock, cfg, ref_cp, ref_queue);

  for (long budget : {0L, 37L, 150L}) {
    auto mock = make_mock();
    CheckpointStore cp(dir / ("crash" + std::to_string(budget) + ".json"));
    InMemoryHardCaseQueue queue;
    {
      cotloop::testing::CrashingBackend crashing(*mock, budget);
      CHECK(error_of([&] { run_iteration(1, 0, qs, crashing, cfg, cp, queue); }) ==
            Errc::ServerError);
    }
    auto saved = cp.load();
    REQUIRE(saved);
    for (const auto& [id, st] : saved->questions) {
      if (st.status == QuestionStatus::accepted) CHECK(st.records.size() == 1);
    }
    const auto resumed = run_iteration(1, 0, qs, *mock, cfg, cp, queue);
    CHECK(resumed.dataset.content_hash() == reference.dataset.content_hash());
    CHECK(resumed.dataset.stats == reference.dataset.stats);
    CHECK(resumed.hard_cases == reference.hard_cases);
  }
}

TEST_CASE("state machine is forward-only") {
  IterationState s;
  s.questions["q"] = {};
  CHECK(error_of([&] { s.transition("q", QuestionStatus::expert_done); }) ==
        Errc::InvalidTransition);
  s.transition("q", QuestionStatus::exhausted);
  s.transition("q", QuestionStatus::expert_pending);
  CHECK(error_of([&] { s.transition("q", QuestionStatus::pending); }) == Errc::InvalidTransition);
  s.transition("q", QuestionStatus::expert_done);
  CHECK(iteration_state_from_json(to_json(s)) == s);
}

TEST_CASE("expert admission") {
  const auto q = four_option('B');
  CHECK_NOTHROW(admit_expert_record(q, {std::string(200, 'a'), "B", "e"}, 1));
  CHECK(error_of([&] { admit_expert_record(q, {std::string(200, 'a'), "C", "e"}, 1); }) ==
        Errc::AnswerMismatch);
  CHECK(error_of([&] { admit_expert_record(q, {"abc", "B", "e"}, 1); }) == Errc::TooShort);
  // Minimum length counts characters, not bytes.
  std::string cot;
  for (int i = 0; i < 49; ++i) cot += "证";
  CHECK(error_of([&] { admit_expert_record(q, {cot, "B", "e"}, 1); }) == Errc::TooShort);
  cot += "治";
  auto r = admit_expert_record(q, {cot, "b", "e"}, 3);
  CHECK(r.source == RecordSource::expert);
  CHECK(r.iteration == 3);
  CHECK(r.final_answer == "B");

  InMemoryHardCaseQueue queue;
  CHECK(error_of([&] { annotate_hard_case(queue, q.id, {cot, "B", "e"}); }) == Errc::NotFound);
  queue.push({q, 1});
  annotate_hard_case(queue, q.id, {cot, "B", "e"});
  CHECK(error_of([&] { annotate_hard_case(queue, q.id, {cot, "B", "e"}); }) == Errc::Conflict);
  CHECK(hard_case_from_json(to_json(*queue.get(q.id))).record == queue.get(q.id)->record);
}

TEST_CASE("CoT dataset files round-trip and detect tampering") {
  auto qs = synthetic_questions(20, 4);
  ScriptedBackend b("s", fast_policy());
  b.set_default("推理。\nAnswer: A");
  TempDir dir;
  CheckpointStore cp(dir / "ckpt.json");
  InMemoryHardCaseQueue queue;
  auto r = run_iteration(2, 1, qs, b, engine_config(1), cp, queue);
  write_cot_dataset(r.dataset, dir / "cot");
  CHECK(read_cot_dataset(dir / "cot", 2) == r.dataset);
  CHECK(error_of([&] { read_cot_dataset(dir / "cot", 3); }) == Errc::MissingConstituent);
  files::append_line(cot_dataset_path(dir / "cot", 2), "{}");
  CHECK(error_of([&] { read_cot_dataset(dir / "cot", 2); }) == Errc::ChecksumMismatch);
}

// Properties over 500-question subsets with a partially correct scripted model.
TEST_CASE("soundness and completeness") {
  auto qs = synthetic_questions(500, 99);
  ScriptedBackend b("s", fast_policy(8));
  b.set_responder([&](const ChatRequest& req, int) {
    const auto h = text::hash64(req.user_text() + std::to_string(*req.seed));
    const Question* q = nullptr;
    for (const auto& c : qs) {
      if (req.user_text().rfind(c.stem, 0) == 0) q = &c;
    }
    const bool right = h % 10 < 6;
    return std::string("推理过程。\nAnswer: ") + (right ? q->answer_key : wrong_letter(*q));
  });
  TempDir dir;
  CheckpointStore cp(dir / "ckpt.json");
  InMemoryHardCaseQueue queue;
  auto r = run_iteration(1, 0, qs, b, engine_config(1), cp, queue);
  std::set<std::string> covered;
  for (const auto& rec : r.dataset.records) {
    const Question* q = nullptr;
    for (const auto& c : qs) {
      if (c.id == rec.question_id) q = &c;
    }
    REQUIRE(q);
    CHECK(verify(rec.final_answer, q->answer_key, q->format));
    CHECK_FALSE(rec.chain_of_thought.empty());
    covered.insert(rec.question_id);
  }
  for (const auto& id : r.hard_cases) covered.insert(id);
  CHECK(covered.size() == qs.size());
  CHECK(r.dataset.records.size() + r.hard_cases.size() == qs.size());
}

TEST_CASE("a more trained model never lowers the acceptance rate") {
  auto qs = synthetic_questions(500, 123);
  ImprovingMock mock("mock", fast_policy(8), SuccessCurve({{0, 0.3}, {1000, 0.9}}), 77);
  mock.index_questions(qs);
  double previous = -1.0;
  for (std::size_t size : {0u, 250u, 500u, 1000u}) {
    TempDir dir;
    CheckpointStore cp(dir / "ckpt.json");
    InMemoryHardCaseQueue queue;
    auto cfg = engine_config(1);
    cfg.generation.model = ImprovingMock::model_with_size("m0", size);
    const auto r = run_iteration(1, 0, qs, mock, cfg, cp, queue);
    INFO("size=" << size << " rate=" << r.dataset.stats.acceptance_rate);
    CHECK(r.dataset.stats.acceptance_rate >= previous - 0.03);
    previous = r.dataset.stats.acceptance_rate;
  }
}
