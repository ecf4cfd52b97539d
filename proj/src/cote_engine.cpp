// Copyright 2026 The cotloop Authors
// SPDX-License-Identifier: Apache-2.0

#include "cotloop/cote_engine.hpp"

#include <algorithm>

#include "cotloop/errors.hpp"
#include "cotloop/files.hpp"
#include "cotloop/parallel.hpp"
#include "cotloop/text.hpp"

namespace cotloop {

namespace fs = std::filesystem;

namespace {

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  for (std::size_t p = s.find(from); p != std::string::npos; p = s.find(from, p + to.size())) {
    s.replace(p, from.size(), to);
  }
}

std::string_view format_label(Format f) {
  switch (f) {
    case Format::mcq_single:
      return "单项选择题";
    case Format::mcq_multi:
      return "多项选择题";
    case Format::fill_in_blank:
      return "填空题";
  }
  return "";
}

}  // namespace

// ---------------------------------------------------------------------------
// Prompts

std::string render_options(const Question& q) {
  std::string out;
  for (const auto& o : q.options) {
    out += o.label;
    out += ". ";
    out += o.text;
    out += '\n';
  }
  if (!out.empty()) out.pop_back();
  return out;
}

PromptTemplate PromptTemplate::default_cot() {
  return {
      "你是一名中医执业医师资格考试的专家。请先逐步推理，写出完整的分析过程，"
      "最后单独一行以 \"Answer: <选项字母>\" 的格式给出答案；多选题列出全部正确字母，"
      "填空题在 \"Answer:\" 后直接写出答案。",
      "{stem}\n{options}\n题型：{format}"};
}

PromptTemplate PromptTemplate::default_exam() {
  return {"你正在参加中医执业医师资格考试。请作答，最后单独一行以 \"Answer: <答案>\" 给出答案。",
          "{stem}\n{options}\n题型：{format}"};
}

PromptTemplate PromptTemplate::from_json(const nlohmann::json& j) {
  PromptTemplate t;
  try {
    t.system = j.value("system", std::string());
    t.user = j.at("user").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidTemplate, std::string("prompt template: ") + e.what());
  }
  if (t.user.find("{stem}") == std::string::npos) {
    throw Error(Errc::InvalidTemplate, "user template must contain {stem}");
  }
  return t;
}

nlohmann::json PromptTemplate::to_json() const { return {{"system", system}, {"user", user}}; }

std::vector<ChatMessage> PromptTemplate::render(const Question& q) const {
  std::string u = user;
  std::string options = render_options(q);
  replace_all(u, "{stem}", q.stem);
  replace_all(u, "{options}", options);
  replace_all(u, "{format}", format_label(q.format));
  // A blank options line for fill-in-the-blank items.
  replace_all(u, "\n\n", "\n");
  std::vector<ChatMessage> out;
  if (!system.empty()) out.push_back({Role::system, system});
  out.push_back({Role::user, std::move(u)});
  return out;
}

// ---------------------------------------------------------------------------
// Generation

std::uint64_t attempt_seed(std::uint64_t base_seed, std::string_view question_id, int attempt) {
  std::string key(question_id);
  key += ':';
  key += std::to_string(attempt);
  return text::hash64(key, base_seed);
}

bool acceptable(const CandidateTrace& t) {
  return t.verified && !text::trim(t.chain_of_thought).empty();
}

std::vector<CandidateTrace> generate_candidates(const Question& question, Backend& backend,
                                                const GenerationConfig& config) {
  if (config.max_attempts < 1) throw Error(Errc::ConfigError, "max_attempts must be >= 1");
  std::vector<CandidateTrace> traces;
  const auto messages = config.prompt.render(question);
  for (int a = 0; a < config.max_attempts; ++a) {
    ChatRequest req;
    req.model = config.model;
    req.messages = messages;
    req.temperature = config.temperature;
    req.max_tokens = config.max_tokens;
    req.seed = attempt_seed(config.base_seed, question.id, a);
    const Completion c = backend.complete(req);

    CandidateTrace t;
    t.question_id = question.id;
    t.attempt_index = a;
    t.raw_response = c.text;
    t.backend_model = config.model.empty() ? backend.default_model() : config.model;
    t.sampling = {config.temperature, *req.seed};
    try {
      Extraction e = extract(c.text, question);
      t.verified = verify(e.answer, question.answer_key, question.format);
      t.extracted_answer = std::move(e.answer);
      t.chain_of_thought = std::move(e.chain_of_thought);
    } catch (const Error& e) {
      if (e.code() != Errc::ExtractionFailed) throw;
    }
    const bool ok = acceptable(t);
    traces.push_back(std::move(t));
    if (ok && config.stop_on_first_success) break;
  }
  return traces;
}

// ---------------------------------------------------------------------------
// Hard cases

std::string_view to_string(HardCaseStatus s) {
  return s == HardCaseStatus::pending ? "pending" : "done";
}

nlohmann::json to_json(const HardCase& h) {
  nlohmann::json j = {{"question", to_json(h.question)},
                      {"iteration", h.iteration},
                      {"status", to_string(h.status)},
                      {"attempts", h.attempts},
                      {"sample_rejected_cot", h.sample_rejected_cot}};
  if (h.record) j["record"] = to_json(*h.record);
  return j;
}

HardCase hard_case_from_json(const nlohmann::json& j) {
  try {
    HardCase h;
    h.question = question_from_json(j.at("question"));
    h.iteration = j.at("iteration").get<int>();
    const auto status = j.at("status").get<std::string>();
    if (status == "pending") {
      h.status = HardCaseStatus::pending;
    } else if (status == "done") {
      h.status = HardCaseStatus::done;
    } else {
      throw Error(Errc::ParseError, "unknown hard case status: " + status);
    }
    h.attempts = j.value("attempts", 0);
    h.sample_rejected_cot = j.value("sample_rejected_cot", std::string());
    if (j.contains("record") && !j["record"].is_null()) h.record = record_from_json(j["record"]);
    return h;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, std::string("hard case: ") + e.what());
  }
}

void InMemoryHardCaseQueue::push(const HardCase& hc) {
  std::lock_guard lock(mu_);
  cases_.try_emplace(hc.question.id, hc);
}

std::optional<HardCase> InMemoryHardCaseQueue::get(const std::string& question_id) const {
  std::lock_guard lock(mu_);
  auto it = cases_.find(question_id);
  if (it == cases_.end()) return std::nullopt;
  return it->second;
}

std::vector<HardCase> InMemoryHardCaseQueue::list(std::optional<HardCaseStatus> status) const {
  std::lock_guard lock(mu_);
  std::vector<HardCase> out;
  for (const auto& [id, hc] : cases_) {
    if (!status || hc.status == *status) out.push_back(hc);
  }
  return out;
}

bool InMemoryHardCaseQueue::resolve(const std::string& question_id, const CotRecord& record) {
  std::lock_guard lock(mu_);
  auto it = cases_.find(question_id);
  if (it == cases_.end() || it->second.status == HardCaseStatus::done) return false;
  it->second.status = HardCaseStatus::done;
  it->second.record = record;
  return true;
}

CotRecord admit_expert_record(const Question& question, const ExpertAnnotation& annotation,
                              int iteration, const AdmissionPolicy& policy) {
  if (!verify(annotation.final_answer, question.answer_key, question.format)) {
    throw Error(Errc::AnswerMismatch, "final answer does not match the answer key");
  }
  const std::string cot = text::trim(annotation.chain_of_thought);
  const std::size_t n = text::codepoint_count(cot);
  if (n < policy.min_cot_chars) {
    throw Error(Errc::TooShort, "chain of thought has " + std::to_string(n) +
                                    " characters, minimum is " +
                                    std::to_string(policy.min_cot_chars));
  }
  CotRecord r;
  r.question_id = question.id;
  r.chain_of_thought = cot;
  r.final_answer = question.answer_key;
  r.source = RecordSource::expert;
  r.iteration = iteration;
  r.created_by = annotation.annotator;
  return r;
}

CotRecord annotate_hard_case(HardCaseQueue& queue, const std::string& question_id,
                             const ExpertAnnotation& annotation, const AdmissionPolicy& policy) {
  auto hc = queue.get(question_id);
  if (!hc) throw Error(Errc::NotFound, "no hard case " + question_id);
  if (hc->status == HardCaseStatus::done) {
    throw Error(Errc::Conflict, "hard case " + question_id + " is already annotated");
  }
  CotRecord r = admit_expert_record(hc->question, annotation, hc->iteration, policy);
  if (!queue.resolve(question_id, r)) {
    throw Error(Errc::Conflict, "hard case " + question_id + " is already annotated");
  }
  return r;
}

// ---------------------------------------------------------------------------
// Iteration state

std::string_view to_string(QuestionStatus s) {
  switch (s) {
    case QuestionStatus::pending:
      return "pending";
    case QuestionStatus::accepted:
      return "accepted";
    case QuestionStatus::exhausted:
      return "exhausted";
    case QuestionStatus::expert_pending:
      return "expert_pending";
    case QuestionStatus::expert_done:
      return "expert_done";
  }
  return "";
}

QuestionStatus question_status_from_string(std::string_view s) {
  for (auto st : {QuestionStatus::pending, QuestionStatus::accepted, QuestionStatus::exhausted,
                  QuestionStatus::expert_pending, QuestionStatus::expert_done}) {
    if (to_string(st) == s) return st;
  }
  throw Error(Errc::ParseError, "unknown question status: " + std::string(s));
}

bool transition_allowed(QuestionStatus from, QuestionStatus to) {
  using S = QuestionStatus;
  return (from == S::pending && (to == S::accepted || to == S::exhausted)) ||
         (from == S::exhausted && to == S::expert_pending) ||
         (from == S::expert_pending && to == S::expert_done);
}

void IterationState::transition(const std::string& question_id, QuestionStatus to) {
  auto it = questions.find(question_id);
  if (it == questions.end()) throw Error(Errc::NotFound, "question not in subset: " + question_id);
  if (!transition_allowed(it->second.status, to)) {
    throw Error(Errc::InvalidTransition,
                std::string(to_string(it->second.status)) + " -> " + std::string(to_string(to)));
  }
  it->second.status = to;
}

std::string subset_hash(const std::vector<Question>& subset) {
  std::vector<std::string> ids;
  ids.reserve(subset.size());
  for (const auto& q : subset) ids.push_back(q.id);
  std::sort(ids.begin(), ids.end());
  std::string joined;
  for (const auto& id : ids) {
    joined += id;
    joined += '\n';
  }
  return text::sha256_hex(joined);
}

nlohmann::json to_json(const IterationState& s) {
  nlohmann::json qs = nlohmann::json::object();
  for (const auto& [id, st] : s.questions) {
    nlohmann::json records = nlohmann::json::array();
    for (const auto& r : st.records) records.push_back(to_json(r));
    qs[id] = {{"status", to_string(st.status)}, {"attempts", st.attempts}, {"records", records}};
  }
  return {{"iteration", s.iteration},
          {"subset_index", s.subset_index},
          {"subset_hash", s.subset_hash},
          {"model_ref", s.model_ref},
          {"seed", s.seed},
          {"questions", qs}};
}

IterationState iteration_state_from_json(const nlohmann::json& j) {
  try {
    IterationState s;
    s.iteration = j.at("iteration").get<int>();
    s.subset_index = j.at("subset_index").get<std::size_t>();
    s.subset_hash = j.at("subset_hash").get<std::string>();
    s.model_ref = j.at("model_ref").get<std::string>();
    s.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& [id, q] : j.at("questions").items()) {
      QuestionState st;
      st.status = question_status_from_string(q.at("status").get<std::string>());
      st.attempts = q.at("attempts").get<int>();
      for (const auto& r : q.at("records")) st.records.push_back(record_from_json(r));
      s.questions.emplace(id, std::move(st));
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, std::string("checkpoint: ") + e.what());
  }
}

std::optional<IterationState> CheckpointStore::load() const {
  if (!fs::exists(path_)) return std::nullopt;
  return iteration_state_from_json(files::read_json(path_));
}

void CheckpointStore::save(const IterationState& state) {
  std::lock_guard lock(mu_);
  files::write_json_atomic(path_, to_json(state));
}

// ---------------------------------------------------------------------------
// Datasets

std::string CotDataset::to_jsonl() const {
  std::string out;
  for (const auto& r : records) {
    out += to_json(r).dump();
    out += '\n';
  }
  return out;
}

std::string CotDataset::content_hash() const { return text::sha256_hex(to_jsonl()); }

fs::path cot_dataset_path(const fs::path& dir, int iteration) {
  return dir / ("iter_" + std::to_string(iteration) + ".jsonl");
}

namespace {

fs::path stats_path(const fs::path& dir, int iteration) {
  return dir / ("iter_" + std::to_string(iteration) + ".stats.json");
}

void sort_records(std::vector<CotRecord>& records) {
  std::stable_sort(records.begin(), records.end(), [](const CotRecord& a, const CotRecord& b) {
    if (a.question_id != b.question_id) return a.question_id < b.question_id;
    return a.source < b.source;
  });
}

}  // namespace

void write_cot_dataset(const CotDataset& ds, const fs::path& dir) {
  fs::create_directories(dir);
  const std::string body = ds.to_jsonl();
  files::write_atomic(cot_dataset_path(dir, ds.iteration), body);
  files::write_json_atomic(stats_path(dir, ds.iteration),
                           {{"iteration", ds.iteration},
                            {"n_machine", ds.stats.n_machine},
                            {"n_expert", ds.stats.n_expert},
                            {"acceptance_rate", ds.stats.acceptance_rate},
                            {"mean_attempts", ds.stats.mean_attempts},
                            {"content_hash", text::sha256_hex(body)},
                            {"count", ds.records.size()}});
}

CotDataset read_cot_dataset(const fs::path& dir, int iteration) {
  const auto body_path = cot_dataset_path(dir, iteration);
  const auto side_path = stats_path(dir, iteration);
  if (!fs::exists(body_path) || !fs::exists(side_path)) {
    throw Error(Errc::MissingConstituent, "CoT dataset for iteration " + std::to_string(iteration) +
                                              " not found in " + dir.string());
  }
  const std::string body = files::read_text(body_path);
  const auto side = files::read_json(side_path);
  if (side.value("content_hash", std::string()) != text::sha256_hex(body)) {
    throw Error(Errc::ChecksumMismatch, body_path.string() + " does not match its stats sidecar");
  }
  CotDataset ds;
  ds.iteration = iteration;
  for (const auto& row : files::read_jsonl(body_path)) ds.records.push_back(record_from_json(row));
  ds.stats.n_machine = side.value("n_machine", std::size_t{0});
  ds.stats.n_expert = side.value("n_expert", std::size_t{0});
  ds.stats.acceptance_rate = side.value("acceptance_rate", 0.0);
  ds.stats.mean_attempts = side.value("mean_attempts", 0.0);
  return ds;
}

CotDataset build_cot_dataset(const IterationState& state) {
  CotDataset ds;
  ds.iteration = state.iteration;
  std::size_t attempts = 0;
  for (const auto& [id, st] : state.questions) {
    attempts += static_cast<std::size_t>(st.attempts);
    if (st.status != QuestionStatus::accepted && st.status != QuestionStatus::expert_done) continue;
    for (const auto& r : st.records) {
      (r.source == RecordSource::machine ? ds.stats.n_machine : ds.stats.n_expert)++;
      ds.records.push_back(r);
    }
  }
  sort_records(ds.records);
  if (attempts > 0) {
    ds.stats.acceptance_rate =
        static_cast<double>(ds.stats.n_machine) / static_cast<double>(attempts);
  }
  if (!state.questions.empty()) {
    ds.stats.mean_attempts =
        static_cast<double>(attempts) / static_cast<double>(state.questions.size());
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Iteration driver

namespace {

class IterationRunner {
 public:
  IterationRunner(IterationState& state, const std::vector<Question>& subset, Backend& backend,
                  const EngineConfig& config, CheckpointStore& checkpoints,
                  HardCaseQueue& hard_cases)
      : state_(state),
        backend_(backend),
        config_(config),
        checkpoints_(checkpoints),
        hard_cases_(hard_cases) {
    for (const auto& q : subset) by_id_.emplace(q.id, &q);
  }

  // Moves questions left between exhausted and expert_pending by a crash
  // into the queue, and pulls in expert records resolved since.
  void sync_hard_cases() {
    bool changed = false;
    for (auto& [id, st] : state_.questions) {
      if (st.status == QuestionStatus::exhausted) {
        enqueue(*by_id_.at(id), st.attempts, {});
        state_.transition(id, QuestionStatus::expert_pending);
        changed = true;
      }
      if (st.status == QuestionStatus::expert_pending) {
        auto hc = hard_cases_.get(id);
        if (!hc) {
          enqueue(*by_id_.at(id), st.attempts, {});
        } else if (hc->status == HardCaseStatus::done && hc->record) {
          st.records = {*hc->record};
          state_.transition(id, QuestionStatus::expert_done);
          changed = true;
        }
      }
    }
    if (changed) checkpoints_.save(state_);
  }

  void run() {
    std::vector<const Question*> todo;
    for (const auto& [id, st] : state_.questions) {
      if (st.status == QuestionStatus::pending) todo.push_back(by_id_.at(id));
    }
    if (todo.empty()) return;
    const int workers = config_.workers > 0 ? config_.workers : backend_.policy().max_concurrency;
    parallel_for(todo.size(), workers, [&](std::size_t i) { process(*todo[i]); });
  }

 private:
  void process(const Question& q) {
    GenerationConfig gen = config_.generation;
    gen.model = state_.model_ref;
    gen.base_seed = state_.seed;
    const auto traces = generate_candidates(q, backend_, gen);

    std::vector<CotRecord> records;
    for (const auto& t : traces) {
      if (acceptable(t)) {
        if (records.empty() || config_.keep_all_verified) {
          records.push_back({q.id, t.chain_of_thought, q.answer_key, RecordSource::machine,
                             state_.iteration, t.backend_model});
        }
      } else if (config_.rejects_path) {
        std::lock_guard lock(rejects_mu_);
        files::append_line(*config_.rejects_path, to_json(t).dump());
      }
    }

    std::lock_guard lock(state_mu_);
    auto& st = state_.questions.at(q.id);
    st.attempts = static_cast<int>(traces.size());
    if (!records.empty()) {
      st.records = std::move(records);
      state_.transition(q.id, QuestionStatus::accepted);
      checkpoints_.save(state_);
      return;
    }
    state_.transition(q.id, QuestionStatus::exhausted);
    checkpoints_.save(state_);
    std::string sample;
    for (const auto& t : traces) {
      if (!t.raw_response.empty()) {
        sample = t.chain_of_thought.empty() ? t.raw_response : t.chain_of_thought;
        break;
      }
    }
    enqueue(q, st.attempts, sample);
    state_.transition(q.id, QuestionStatus::expert_pending);
    checkpoints_.save(state_);
  }

  void enqueue(const Question& q, int attempts, std::string sample) {
    HardCase hc;
    hc.question = q;
    hc.iteration = state_.iteration;
    hc.attempts = attempts;
    hc.sample_rejected_cot = std::move(sample);
    hard_cases_.push(hc);
  }

  IterationState& state_;
  Backend& backend_;
  const EngineConfig& config_;
  CheckpointStore& checkpoints_;
  HardCaseQueue& hard_cases_;
  std::map<std::string, const Question*> by_id_;
  std::mutex state_mu_;
  std::mutex rejects_mu_;
};

}  // namespace

IterationResult run_iteration(int iteration, std::size_t subset_index,
                              const std::vector<Question>& subset, Backend& backend,
                              const EngineConfig& config, CheckpointStore& checkpoints,
                              HardCaseQueue& hard_cases) {
  const std::string hash = subset_hash(subset);
  const std::string model =
      config.generation.model.empty() ? backend.default_model() : config.generation.model;

  IterationState state;
  if (auto saved = checkpoints.load()) {
    if (saved->iteration != iteration || saved->subset_hash != hash || saved->model_ref != model) {
      throw Error(Errc::ChecksumMismatch, "checkpoint " + checkpoints.path().string() +
                                              " belongs to a different iteration, subset or model");
    }
    state = std::move(*saved);
  } else {
    state.iteration = iteration;
    state.subset_index = subset_index;
    state.subset_hash = hash;
    state.model_ref = model;
    state.seed = config.generation.base_seed;
    for (const auto& q : subset) state.questions.emplace(q.id, QuestionState{});
    checkpoints.save(state);
  }

  IterationRunner runner(state, subset, backend, config, checkpoints, hard_cases);
  runner.sync_hard_cases();
  runner.run();

  IterationResult result;
  result.dataset = build_cot_dataset(state);
  for (const auto& [id, st] : state.questions) {
    if (st.status == QuestionStatus::expert_pending) result.hard_cases.push_back(id);
  }
  result.state = std::move(state);
  return result;
}

}  // namespace cotloop
