// Copyright 2026 The cotloop Authors
// SPDX-License-Identifier: Apache-2.0

#include "cotloop/pipeline.hpp"

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <set>

#include "cotloop/errors.hpp"
#include "cotloop/text.hpp"

namespace cotloop {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path resolve(const fs::path& base, const fs::path& p) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

std::string slug(std::string_view s) {
  std::string out;
  for (char c : s) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                    c == '-' || c == '.';
    out += ok ? c : '_';
  }
  if (out.size() > 60) out.resize(60);
  return out + "-" + text::sha256_hex(s).substr(0, 8);
}

std::string utc_stamp() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
  return buf;
}

template <typename T>
T parse_env(const char* name, const char* value) {
  try {
    if constexpr (std::is_same_v<T, int>) {
      return std::stoi(value);
    } else {
      return static_cast<T>(std::stoull(value));
    }
  } catch (const std::exception&) {
    throw Error(Errc::ConfigError, std::string(name) + " is not a number: " + value);
  }
}

EngineConfig engine_config_from_json(const json& j, const fs::path& base) {
  EngineConfig e;
  auto& g = e.generation;
  g.max_attempts = j.value("max_attempts", g.max_attempts);
  g.stop_on_first_success = j.value("stop_on_first_success", g.stop_on_first_success);
  g.temperature = j.value("temperature", g.temperature);
  g.max_tokens = j.value("max_tokens", g.max_tokens);
  g.base_seed = j.value("seed", g.base_seed);
  if (j.contains("prompt_template")) {
    const auto& t = j["prompt_template"];
    g.prompt = PromptTemplate::from_json(
        t.is_string() ? files::read_json(resolve(base, t.get<std::string>())) : t);
  }
  e.keep_all_verified = j.value("keep_all_verified", e.keep_all_verified);
  e.workers = j.value("workers", e.workers);
  e.admission.min_cot_chars = j.value("min_cot_chars", e.admission.min_cot_chars);
  if (g.max_attempts < 1) throw Error(Errc::ConfigError, "engine.max_attempts must be >= 1");
  return e;
}

json to_json(const EngineConfig& e) {
  const auto& g = e.generation;
  return {{"max_attempts", g.max_attempts},
          {"stop_on_first_success", g.stop_on_first_success},
          {"temperature", g.temperature},
          {"max_tokens", g.max_tokens},
          {"seed", g.base_seed},
          {"prompt_template", g.prompt.to_json()},
          {"keep_all_verified", e.keep_all_verified},
          {"workers", e.workers},
          {"min_cot_chars", e.admission.min_cot_chars}};
}

IngestConfig ingest_config_from_json(const json& j, const fs::path& base) {
  IngestConfig c;
  for (const auto& p : j.value("raw", json::array()))
    c.raw.push_back(resolve(base, p.get<std::string>()));
  for (const auto& t : j.value("textbooks", json::array())) {
    TextbookSource s;
    s.path = resolve(base, t.at("path").get<std::string>());
    s.book_id = t.value("book_id", s.path.stem().string());
    s.subject = subject_from_string(t.value("subject", std::string("other")));
    c.textbooks.push_back(std::move(s));
  }
  if (j.contains("line_rules")) c.line_rules = resolve(base, j["line_rules"].get<std::string>());
  c.dedup_threshold = j.value("dedup_threshold", c.dedup_threshold);
  c.filter.min_options = j.value("min_options", c.filter.min_options);
  if (j.contains("allowed_formats")) {
    c.filter.allowed_formats.clear();
    for (const auto& f : j["allowed_formats"])
      c.filter.allowed_formats.push_back(format_from_string(f.get<std::string>()));
  }
  c.segments.max_segment_chars = j.value("max_segment_chars", c.segments.max_segment_chars);
  c.segments.min_segment_chars = j.value("min_segment_chars", c.segments.min_segment_chars);
  c.items_per_segment = j.value("items_per_segment", c.items_per_segment);
  c.synthesis_backend = j.value("synthesis_backend", std::string());
  c.triage_backend = j.value("triage_backend", std::string());
  c.triage.n_trials = j.value("triage_trials", c.triage.n_trials);
  c.triage.confidence_threshold = j.value("confidence_threshold", c.triage.confidence_threshold);
  return c;
}

json to_json(const IngestConfig& c) {
  json raw = json::array();
  for (const auto& p : c.raw) raw.push_back(p.string());
  json books = json::array();
  for (const auto& t : c.textbooks) {
    books.push_back(
        {{"path", t.path.string()}, {"book_id", t.book_id}, {"subject", to_string(t.subject)}});
  }
  json j = {{"raw", raw},
            {"textbooks", books},
            {"dedup_threshold", c.dedup_threshold},
            {"min_options", c.filter.min_options},
            {"max_segment_chars", c.segments.max_segment_chars},
            {"min_segment_chars", c.segments.min_segment_chars},
            {"items_per_segment", c.items_per_segment},
            {"synthesis_backend", c.synthesis_backend},
            {"triage_backend", c.triage_backend},
            {"triage_trials", c.triage.n_trials},
            {"confidence_threshold", c.triage.confidence_threshold}};
  if (c.line_rules) j["line_rules"] = c.line_rules->string();
  return j;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

PlatformConfig PipelineConfig::platform_config() const {
  PlatformConfig p = platform;
  if (p.data_dir.empty()) p.data_dir = store;
  return p;
}

const BackendConfig& PipelineConfig::backend(const std::string& name) const {
  auto it = backends.find(name);
  if (it == backends.end()) throw Error(Errc::ConfigError, "no backend named '" + name + "'");
  return it->second;
}

void PipelineConfig::validate() const {
  if (iterations < 1) throw Error(Errc::ConfigError, "iterations (K) must be >= 1");
  if (partition.k_count < 1) throw Error(Errc::ConfigError, "partition.k_count must be >= 1");
  if (store.empty()) throw Error(Errc::ConfigError, "store path is empty");
  if (corpus.empty()) throw Error(Errc::ConfigError, "corpus path is empty");
  if (!generation_backend.empty()) backend(generation_backend);
  if (!ingest.synthesis_backend.empty()) backend(ingest.synthesis_backend);
  if (!ingest.triage_backend.empty()) backend(ingest.triage_backend);
}

PipelineConfig pipeline_config_from_json(const json& j, const fs::path& base) {
  PipelineConfig c;
  try {
    if (!j.is_object()) throw Error(Errc::ConfigError, "config must be a JSON object");
    c.corpus = resolve(base, j.value("corpus", c.corpus.string()));
    c.corpus_version = j.value("corpus_version", c.corpus_version);
    c.store = resolve(base, j.value("store", c.store.string()));
    if (j.contains("checkpoints"))
      c.checkpoints = resolve(base, j["checkpoints"].get<std::string>());
    if (j.contains("partition")) c.partition = partition_plan_from_json(j["partition"]);
    c.iterations = j.value("iterations", c.iterations);
    if (j.contains("engine")) c.engine = engine_config_from_json(j["engine"], base);
    if (j.contains("backends")) {
      for (const auto& b : j["backends"]) {
        json bj = b;
        if (bj.contains("script") && bj["script"].is_string()) {
          bj["script"] = resolve(base, bj["script"].get<std::string>()).string();
        }
        auto bc = backend_config_from_json(bj);
        const std::string name = bc.name;
        if (!c.backends.emplace(name, std::move(bc)).second) {
          throw Error(Errc::ConfigError, "duplicate backend name '" + name + "'");
        }
      }
    }
    c.generation_backend = j.value("generation_backend", std::string());
    if (c.generation_backend.empty() && c.backends.size() == 1) {
      c.generation_backend = c.backends.begin()->first;
    }
    c.base_model = j.value("base_model", c.base_model);
    if (j.contains("trainer")) c.trainer = trainer_config_from_json(j["trainer"]);
    if (j.contains("ingest")) c.ingest = ingest_config_from_json(j["ingest"], base);
    const json pj = j.value("platform", json::object());
    c.platform = platform_config_from_json(pj);
    if (!pj.contains("data_dir") && !std::getenv("COTLOOP_DATA_DIR")) {
      c.platform.data_dir.clear();
    } else {
      c.platform.data_dir = resolve(base, c.platform.data_dir);
    }
  } catch (const json::exception& e) {
    throw Error(Errc::ConfigError, std::string("config: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == Errc::ConfigError) throw;
    throw Error(Errc::ConfigError, e.what());
  }
  c.validate();
  return c;
}

void apply_overrides(PipelineConfig& c, const ConfigOverrides& o) {
  if (const char* v = std::getenv("COTLOOP_STORE")) c.store = v;
  if (const char* v = std::getenv("COTLOOP_CORPUS")) c.corpus = v;
  if (const char* v = std::getenv("COTLOOP_BACKEND")) c.generation_backend = v;
  if (const char* v = std::getenv("COTLOOP_K")) c.iterations = parse_env<int>("COTLOOP_K", v);
  std::optional<std::uint64_t> seed;
  if (const char* v = std::getenv("COTLOOP_SEED"))
    seed = parse_env<std::uint64_t>("COTLOOP_SEED", v);

  if (o.store) c.store = *o.store;
  if (o.corpus) c.corpus = *o.corpus;
  if (o.backend) c.generation_backend = *o.backend;
  if (o.iterations) c.iterations = *o.iterations;
  if (o.seed) seed = o.seed;
  if (seed) {
    c.partition.seed = *seed;
    c.engine.generation.base_seed = *seed;
  }
  c.validate();
}

PipelineConfig load_pipeline_config(const fs::path& path, const ConfigOverrides& overrides) {
  if (!fs::exists(path)) throw Error(Errc::ConfigError, "config file not found: " + path.string());
  json j;
  try {
    j = files::read_json(path);
  } catch (const Error& e) {
    throw Error(Errc::ConfigError, e.what());
  }
  auto c = pipeline_config_from_json(j, fs::absolute(path).parent_path());
  apply_overrides(c, overrides);
  return c;
}

json to_json(const PipelineConfig& c) {
  json backends = json::array();
  for (const auto& [_, b] : c.backends) backends.push_back(to_json(b));
  json j = {{"corpus", c.corpus.string()},
            {"corpus_version", c.corpus_version},
            {"store", c.store.string()},
            {"checkpoints", c.checkpoint_dir().string()},
            {"partition", to_json(c.partition)},
            {"iterations", c.iterations},
            {"engine", to_json(c.engine)},
            {"backends", backends},
            {"generation_backend", c.generation_backend},
            {"base_model", c.base_model},
            {"trainer", to_json(c.trainer)},
            {"ingest", to_json(c.ingest)},
            {"platform", to_json(c.platform_config())}};
  return j;
}

json to_json(const IngestSummary& s) {
  return {
      {"raw_items", s.raw_items},        {"synthesized", s.synthesized}, {"rejected", s.rejected},
      {"duplicates", s.duplicates},      {"flagged", s.flagged},         {"kept", s.kept},
      {"manifest_hash", s.manifest_hash}};
}

json to_json(const IterationSummary& s) {
  return {{"iteration", s.iteration},
          {"model", s.model},
          {"records", s.records},
          {"n_machine", s.stats.n_machine},
          {"n_expert", s.stats.n_expert},
          {"acceptance_rate", s.stats.acceptance_rate},
          {"mean_attempts", s.stats.mean_attempts},
          {"late_expert_records", s.late_expert_records},
          {"hard_cases", s.hard_cases},
          {"content_hash", s.content_hash},
          {"already_sealed", s.already_sealed}};
}

json to_json(const LoopStep& s) {
  return {{"iteration", to_json(s.iteration)},
          {"manifest", to_json(s.manifest)},
          {"model", to_json(s.model)}};
}

// ---------------------------------------------------------------------------
// Pipeline

namespace {

std::unique_ptr<files::LockFile> lock_store(const PipelineConfig& c) {
  c.validate();
  fs::create_directories(c.store);
  return std::make_unique<files::LockFile>(c.store / ".lock");
}

IterationSummary summarize(const CotDataset& ds, std::string model) {
  IterationSummary s;
  s.iteration = ds.iteration;
  s.model = std::move(model);
  s.records = ds.records.size();
  s.stats = ds.stats;
  s.content_hash = ds.content_hash();
  return s;
}

}  // namespace

fs::path write_config_snapshot(const PipelineConfig& config, const std::string& command) {
  const fs::path runs = config.store / "runs";
  fs::create_directories(runs);
  const fs::path path =
      runs / (utc_stamp() + "-" + std::to_string(::getpid()) + "-" + command + ".json");
  files::write_json_atomic(path, {{"command", command}, {"config", to_json(config)}});
  return path;
}

Pipeline::Pipeline(PipelineConfig config, const std::string& command)
    : config_(std::move(config)),
      lock_(lock_store(config_)),
      snapshot_(write_config_snapshot(config_, command)),
      sft_(config_.store / "sft"),
      kv_(config_.store / "platform.db"),
      queue_(kv_) {}

std::unique_ptr<Backend> Pipeline::make_named_backend(const std::string& name) {
  if (name.empty()) throw Error(Errc::ConfigError, "no backend selected");
  const auto& bc = config_.backend(name);
  return make_backend(bc, bc.kind == BackendKind::improving_mock ? &corpus().items : nullptr);
}

IngestSummary Pipeline::ingest() {
  const auto& ic = config_.ingest;
  if (ic.raw.empty() && ic.textbooks.empty()) {
    throw Error(Errc::ConfigError, "ingest needs at least one raw file or textbook");
  }
  IngestSummary s;
  std::vector<RawItem> raw;
  for (const auto& p : ic.raw) {
    auto items = read_raw_items(p);
    raw.insert(raw.end(), std::make_move_iterator(items.begin()),
               std::make_move_iterator(items.end()));
  }
  s.raw_items = raw.size();

  auto filtered = filter_malformed(raw, ic.filter);
  std::vector<Question> pool = std::move(filtered.accepted);
  s.rejected = filtered.rejected.size();

  if (!ic.textbooks.empty()) {
    auto backend = make_named_backend(ic.synthesis_backend);
    const LineFilter lines =
        ic.line_rules ? LineFilter::from_rule_file(*ic.line_rules) : LineFilter::generic();
    for (const auto& book : ic.textbooks) {
      const auto cleaned = lines.apply(files::read_text(book.path));
      for (const auto& seg : segment_textbook(cleaned, book.book_id, ic.segments)) {
        SynthesisConfig sc;
        sc.n_items = ic.items_per_segment;
        sc.subject = book.subject;
        sc.seed = config_.engine.generation.base_seed;
        sc.policy = ic.filter;
        auto qs = synthesize_qa(seg, *backend, sc);
        s.synthesized += qs.size();
        pool.insert(pool.end(), qs.begin(), qs.end());
      }
    }
  }

  auto deduped = dedup(pool, ic.dedup_threshold);
  s.duplicates = deduped.dropped.size();
  std::vector<Question> kept = std::move(deduped.kept);

  const fs::path out = config_.store / "ingest";
  fs::create_directories(out);
  std::vector<json> rows;
  for (const auto& r : filtered.rejected) {
    rows.push_back({{"reason", to_string(r.reason)}, {"item", to_json(r.item)}});
  }
  files::write_atomic(out / "rejected.jsonl", files::to_jsonl(rows));
  rows.clear();
  for (const auto& d : deduped.dropped) {
    rows.push_back({{"dropped", d.dropped_id}, {"kept", d.kept_id}, {"similarity", d.similarity}});
  }
  files::write_atomic(out / "duplicates.jsonl", files::to_jsonl(rows));

  if (!ic.triage_backend.empty()) {
    auto backend = make_named_backend(ic.triage_backend);
    TriageConfig tc = ic.triage;
    tc.seed = config_.engine.generation.base_seed;
    auto tr = triage_by_model(kept, *backend, tc);
    kept.clear();
    for (auto& e : tr.high_confidence) kept.push_back(std::move(e.question));
    rows.clear();
    for (const auto& e : tr.flagged) {
      rows.push_back({{"question", to_json(e.question)},
                      {"correct", e.correct},
                      {"trials", e.trials},
                      {"correct_rate", e.correct_rate}});
    }
    s.flagged = tr.flagged.size();
    files::write_atomic(out / "flagged.jsonl", files::to_jsonl(rows));
  }

  auto ds = make_dataset(config_.corpus_version, std::move(kept));
  if (config_.corpus.has_parent_path()) fs::create_directories(config_.corpus.parent_path());
  write_dataset(ds, config_.corpus);
  s.kept = ds.items.size();
  s.manifest_hash = ds.manifest_hash;
  corpus_ = std::move(ds);
  return s;
}

const QaDataset& Pipeline::corpus() {
  if (!corpus_) {
    if (!fs::exists(config_.corpus)) {
      throw Error(Errc::ConfigError, "corpus not found: " + config_.corpus.string());
    }
    corpus_ = read_dataset(config_.corpus, config_.corpus_version);
  }
  return *corpus_;
}

Partition Pipeline::partition() {
  const fs::path path = config_.store / "partition.json";
  const auto& ds = corpus();
  if (fs::exists(path)) {
    auto p = partition_from_json(files::read_json(path));
    if (p.dataset_hash != ds.manifest_hash) {
      throw Error(Errc::ChecksumMismatch, "partition.json was made for another corpus");
    }
    if (!(p.plan == config_.partition)) {
      throw Error(Errc::ChecksumMismatch, "partition.json was made with another plan");
    }
    return p;
  }
  auto p = cotloop::partition(ds, config_.partition);
  files::write_json_atomic(path, to_json(p));
  return p;
}

ModelRef Pipeline::generator_for(int k) {
  if (k < 1) throw Error(Errc::IterationGap, "iterations start at 1");
  if (k == 1) return ModelRef::base(config_.base_model);
  auto m = sft_.manifest(k - 1);
  if (!m) {
    throw Error(Errc::IterationGap,
                "iteration " + std::to_string(k - 1) + " is not aggregated yet");
  }
  auto model = sft_.model_for(*m);
  if (!model) {
    throw Error(Errc::IterationGap, "no model trained on manifest " + std::to_string(k - 1));
  }
  return *model;
}

std::string Pipeline::backend_model_id(const ModelRef& m) const {
  const auto it = config_.backends.find(config_.generation_backend);
  if (it != config_.backends.end() && it->second.kind == BackendKind::improving_mock &&
      !m.is_base()) {
    return ImprovingMock::model_with_size(m.id, m.training_records);
  }
  return m.id;
}

IterationSummary Pipeline::run_iteration(int k) {
  if (k < 1) throw Error(Errc::IterationGap, "iterations start at 1");
  const auto part = partition();
  if (k > static_cast<int>(part.subsets.size())) {
    throw Error(Errc::ConfigError, "iteration " + std::to_string(k) + " exceeds the " +
                                       std::to_string(part.subsets.size()) + " partition subsets");
  }
  if (sft_.has_cot_dataset(k)) {
    auto s = summarize(sft_.cot_dataset(k), {});
    s.already_sealed = true;
    return s;
  }
  const ModelRef gen = generator_for(k);
  const auto& ds = corpus();
  std::vector<Question> subset;
  for (const auto& id : part.subsets[k - 1]) {
    const Question* q = ds.find(id);
    if (!q) throw Error(Errc::ChecksumMismatch, "partition names unknown question " + id);
    subset.push_back(*q);
  }

  auto backend = make_named_backend(config_.generation_backend);
  EngineConfig ec = config_.engine;
  ec.generation.model = backend_model_id(gen);
  ec.rejects_path = config_.store / "rejects" / ("iter_" + std::to_string(k) + ".jsonl");
  fs::create_directories(ec.rejects_path->parent_path());
  fs::create_directories(config_.checkpoint_dir());
  CheckpointStore checkpoints(config_.checkpoint_dir() / ("iter_" + std::to_string(k) + ".json"));
  auto result = cotloop::run_iteration(k, static_cast<std::size_t>(k - 1), subset, *backend, ec,
                                       checkpoints, queue_);

  // Expert records resolved after their iteration was sealed.
  std::set<std::string> covered;
  for (int j = 1; j < k; ++j) {
    for (const auto& r : sft_.cot_dataset(j).records) covered.insert(r.question_id);
  }
  for (const auto& r : result.dataset.records) covered.insert(r.question_id);
  std::size_t late = 0;
  for (const auto& hc : queue_.list(HardCaseStatus::done)) {
    if (hc.iteration >= k || !hc.record || covered.count(hc.question.id)) continue;
    CotRecord r = *hc.record;
    r.iteration = k;
    result.dataset.records.push_back(std::move(r));
    ++late;
  }
  if (late > 0) {
    std::stable_sort(result.dataset.records.begin(), result.dataset.records.end(),
                     [](const CotRecord& a, const CotRecord& b) {
                       if (a.question_id != b.question_id) return a.question_id < b.question_id;
                       return a.source < b.source;
                     });
    result.dataset.stats.n_expert += late;
  }
  sft_.put_cot_dataset(result.dataset);

  auto s = summarize(result.dataset, ec.generation.model);
  s.late_expert_records = late;
  s.hard_cases = result.hard_cases.size();
  return s;
}

SftManifest Pipeline::aggregate(int k) { return sft_.aggregate(k, config_.base_model); }

fs::path Pipeline::export_sft(int k) {
  const auto m = aggregate(k);
  return sft_.export_sft(m, corpus());
}

ModelRef Pipeline::train(int k) {
  const auto m = aggregate(k);
  if (auto existing = sft_.model_for(m)) return *existing;
  auto trainer = make_trainer(config_.trainer);
  return sft_.train(ModelRef::base(config_.base_model), m, corpus(), *trainer);
}

std::vector<LoopStep> Pipeline::loop(int iterations) {
  if (iterations < 1) throw Error(Errc::ConfigError, "--iterations must be >= 1");
  partition();
  std::vector<LoopStep> steps;
  for (int k = 1; k <= iterations; ++k) {
    LoopStep step;
    step.iteration = run_iteration(k);
    step.manifest = aggregate(k);
    step.model = train(k);
    steps.push_back(std::move(step));
  }
  return steps;
}

ExamReport Pipeline::evaluate(const std::string& dataset, const std::string& backend_name,
                              const std::string& model, ExamMode mode, Grouping grouping) {
  QaDataset ds;
  if (fs::exists(dataset)) {
    ds = read_dataset(dataset);
    if (ds.version.empty()) ds.version = fs::path(dataset).stem().string();
  } else {
    Platform platform(config_.platform_config());
    ds = platform.dataset(dataset);
  }
  const auto& bc = config_.backend(backend_name);
  auto backend = make_backend(bc, bc.kind == BackendKind::improving_mock ? &ds.items : nullptr);

  ExamConfig ec;
  ec.mode = mode;
  ec.seed = config_.engine.generation.base_seed;
  ec.workers = config_.engine.workers;
  if (model == "latest") {
    const auto models = sft_.models();
    const ModelRef m = models.empty() ? ModelRef::base(config_.base_model) : models.back();
    ec.model = bc.kind == BackendKind::improving_mock && !m.is_base()
                   ? ImprovingMock::model_with_size(m.id, m.training_records)
                   : m.id;
  } else {
    ec.model = model;
  }
  const std::string model_id = ec.model.empty() ? backend->default_model() : ec.model;
  const fs::path dir = config_.store / "evals";
  fs::create_directories(dir);
  const std::string stem = slug(model_id + "__" + ds.version + "__" + std::string(to_string(mode)));
  ec.transcript_path = dir / (stem + ".transcript.jsonl");

  const auto run = run_exam(ds, *backend, ec);
  auto report = score(run, ds, grouping);
  files::write_json_atomic(dir / (stem + ".report.json"), to_json(report));
  return report;
}

std::vector<ExamReport> stored_reports(const fs::path& store) {
  std::vector<fs::path> paths;
  const fs::path dir = store / "evals";
  if (fs::exists(dir)) {
    for (const auto& e : fs::directory_iterator(dir)) {
      const auto name = e.path().filename().string();
      if (name.size() > 12 && name.compare(name.size() - 12, 12, ".report.json") == 0) {
        paths.push_back(e.path());
      }
    }
  }
  std::sort(paths.begin(), paths.end());
  std::vector<ExamReport> out;
  for (const auto& p : paths) out.push_back(exam_report_from_json(files::read_json(p)));
  return out;
}

}  // namespace cotloop
