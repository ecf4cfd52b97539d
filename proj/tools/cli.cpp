// Copyright 2026 The cotloop Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <pthread.h>
#include <signal.h>

#include <CLI11.hpp>
#include <atomic>
#include <cstdio>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <thread>

#include "cotloop/pipeline.hpp"

namespace cotloop::cli {

namespace fs = std::filesystem;
using nlohmann::json;

int exit_code_for(Errc code) {
  if (is_backend_error(code)) return kExitBackend;
  switch (code) {
    case Errc::ConfigError:
    case Errc::InvalidTemplate:
    case Errc::NonMonotoneCurve:
      return kExitConfig;
    case Errc::TrainerFailed:
    case Errc::TrainerTimeout:
    case Errc::IterationGap:
    case Errc::NotBaseModel:
    case Errc::MissingConstituent:
      return kExitTrainer;
    case Errc::ChecksumMismatch:
      return kExitChecksum;
    default:
      return kExitOther;
  }
}

namespace {

struct Globals {
  std::string config = "cotloop.json";
  std::optional<std::string> store;
  std::optional<std::string> corpus;
  std::optional<std::string> backend;
  std::optional<std::uint64_t> seed;
  bool json_output = false;
};

std::string rate(double r) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(4) << r;
  return s.str();
}

std::string describe(const IterationSummary& s) {
  std::ostringstream o;
  o << "iteration " << s.iteration << ": " << s.records << " records (" << s.stats.n_machine
    << " machine, " << s.stats.n_expert << " expert";
  if (s.late_expert_records > 0) o << ", " << s.late_expert_records << " carried over";
  o << "), acceptance " << rate(s.stats.acceptance_rate) << ", " << s.hard_cases << " hard cases";
  if (s.already_sealed) o << " [already sealed]";
  if (!s.model.empty()) o << ", model " << s.model;
  return o.str();
}

std::string describe(const ModelRef& m) {
  return "model " + m.id + " trained from " + m.lineage.base_model + " on " +
         std::to_string(m.training_records) + " records (manifest " +
         m.lineage.manifest_hash.substr(0, 12) + ")";
}

class Runner {
 public:
  Runner(const Globals& g, std::ostream& out, std::ostream& err) : g_(g), out_(out), err_(err) {}

  PipelineConfig config(std::optional<int> iterations = std::nullopt) const {
    ConfigOverrides o;
    if (g_.store) o.store = *g_.store;
    if (g_.corpus) o.corpus = *g_.corpus;
    o.backend = g_.backend;
    o.seed = g_.seed;
    o.iterations = iterations;
    return load_pipeline_config(g_.config, o);
  }

  void emit(const json& j, const std::string& human) {
    if (g_.json_output) {
      out_ << j.dump() << "\n";
    } else {
      out_ << human;
      if (!human.empty() && human.back() != '\n') out_ << "\n";
    }
  }

  void ingest() {
    Pipeline p(config(), "ingest");
    const auto s = p.ingest();
    std::ostringstream h;
    h << "kept " << s.kept << " questions from " << s.raw_items << " raw and " << s.synthesized
      << " synthesized items; " << s.rejected << " rejected, " << s.duplicates << " duplicates, "
      << s.flagged << " flagged\ncorpus " << p.config().corpus.string() << " " << s.manifest_hash;
    emit(to_json(s), h.str());
  }

  void partition() {
    Pipeline p(config(), "partition");
    const auto part = p.partition();
    std::ostringstream h;
    h << part.subsets.size() << " subsets (" << to_string(part.plan.strategy) << ", seed "
      << part.plan.seed << "), sizes";
    json sizes = json::array();
    for (const auto& s : part.subsets) {
      h << " " << s.size();
      sizes.push_back(s.size());
    }
    emit({{"plan", to_json(part.plan)}, {"dataset_hash", part.dataset_hash}, {"sizes", sizes}},
         h.str());
  }

  void run_iteration(int k) {
    Pipeline p(config(), "run-iteration");
    const auto s = p.run_iteration(k);
    emit(to_json(s), describe(s));
  }

  void export_sft(int k) {
    Pipeline p(config(), "export-sft");
    const auto path = p.export_sft(k);
    const auto m = *p.sft().manifest(k);
    emit({{"path", path.string()}, {"manifest", to_json(m)}},
         path.string() + " (" + std::to_string(m.total_records) + " records)");
  }

  void train(int k) {
    Pipeline p(config(), "train");
    const auto m = p.train(k);
    emit(to_json(m), describe(m));
  }

  void loop(std::optional<int> iterations) {
    auto cfg = config(iterations);
    const int n = cfg.iterations;
    Pipeline p(std::move(cfg), "loop");
    const auto steps = p.loop(n);
    json arr = json::array();
    std::string h;
    for (const auto& s : steps) {
      arr.push_back(to_json(s));
      h += describe(s.iteration) + "\n  manifest " + std::to_string(s.manifest.upto_iteration) +
           ": " + std::to_string(s.manifest.total_records) + " records\n  " + describe(s.model) +
           "\n";
    }
    emit({{"steps", arr}}, h);
  }

  void evaluate(const std::string& dataset, const std::string& backend, const std::string& model,
                const std::string& mode, const std::string& grouping, const std::string& format) {
    Pipeline p(config(), "evaluate");
    const auto report = p.evaluate(dataset, backend, model, exam_mode_from_string(mode),
                                   grouping_from_string(grouping));
    emit(to_json(report), render_report(report, report_format_from_string(format)));
  }

  void report(const std::string& format) {
    const auto cfg = config();
    write_config_snapshot(cfg, "report");
    SftStore sft(cfg.store / "sft");
    json manifests = json::array();
    std::ostringstream h;
    for (int k = 1; k <= sft.latest_manifest(); ++k) {
      const auto m = *sft.manifest(k);
      const auto model = sft.model_for(m);
      manifests.push_back({{"manifest", to_json(m)}, {"model", model ? to_json(*model) : json()}});
      h << "manifest " << k << ": " << m.total_records << " records, model "
        << (model ? model->id : std::string("(not trained)")) << "\n";
    }
    json reports = json::array();
    const auto fmt = report_format_from_string(format);
    for (const auto& r : stored_reports(cfg.store)) {
      reports.push_back(to_json(r));
      h << "\n" << r.model << " on " << r.dataset_version << "\n" << render_report(r, fmt);
    }
    if (manifests.empty() && reports.empty()) h << "nothing to report in " << cfg.store.string();
    emit({{"manifests", manifests}, {"reports", reports}}, h.str());
  }

  void serve(const std::string& host, std::optional<int> port, const std::string& release,
             const std::string& tag, const std::string& supersedes) {
    const auto cfg = config();
    write_config_snapshot(cfg, "serve");
    auto pc = cfg.platform_config();
    if (!host.empty()) pc.host = host;
    if (port) pc.port = *port;
    Platform platform(pc);
    if (!release.empty()) {
      if (tag.empty()) throw Error(Errc::ConfigError, "--release needs --tag");
      const auto ds = read_dataset(release);
      const auto v = platform.release_version(
          tag, ds.items,
          supersedes.empty() ? std::nullopt : std::optional<std::string>(supersedes));
      err_ << "released " << v.tag << " (" << v.item_ids.size() << " items)\n";
    }

    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);
    PlatformServer server(platform);
    std::atomic<bool> done{false};
    std::thread waiter([&] {
      int sig = 0;
      sigwait(&set, &sig);
      if (!done) server.stop();
    });
    struct Join {
      std::atomic<bool>& done;
      std::thread& t;
      ~Join() {
        done = true;
        pthread_kill(t.native_handle(), SIGTERM);
        t.join();
      }
    } join{done, waiter};

    const int bound = server.bind(pc.host, pc.port);
    emit({{"host", pc.host}, {"port", bound}},
         "listening on http://" + pc.host + ":" + std::to_string(bound));
    out_.flush();
    server.listen();
  }

 private:
  const Globals& g_;
  std::ostream& out_;
  std::ostream& err_;
};

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"cotloop: iterative chain-of-thought data pipeline and exam harness"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("-c,--config", g.config, "Pipeline config file (JSON)")->envname("COTLOOP_CONFIG");
  app.add_option("--store", g.store, "Store directory");
  app.add_option("--corpus", g.corpus, "Corpus JSONL");
  app.add_option("--generation-backend", g.backend, "Backend that generates candidates");
  app.add_option("--seed", g.seed, "Seed for partition and generation");
  app.add_flag("--json", g.json_output, "Machine-readable output on stdout");

  auto* ingest = app.add_subcommand("ingest", "Filter, deduplicate and write the corpus");
  auto* partition = app.add_subcommand("partition", "Split the corpus into K subsets");

  int k = 0;
  auto* run_iter = app.add_subcommand("run-iteration", "Generate and seal CoT dataset k");
  run_iter->add_option("--k", k, "Iteration")->required()->check(CLI::PositiveNumber);

  int upto = 0;
  auto* export_sft = app.add_subcommand("export-sft", "Export the cumulative set up to k");
  export_sft->add_option("--upto", upto, "Iteration")->required()->check(CLI::PositiveNumber);
  auto* train = app.add_subcommand("train", "Train the base model on manifest k");
  train->add_option("--upto", upto, "Iteration")->required()->check(CLI::PositiveNumber);

  std::optional<int> iterations;
  auto* loop = app.add_subcommand("loop", "Partition, then generate, aggregate and train K times");
  loop->add_option("--iterations", iterations, "K (default: config)");

  std::string dataset, backend, model, mode = "deterministic", grouping = "year",
                                       format = "markdown";
  auto* evaluate = app.add_subcommand("evaluate", "Run an exam and score it");
  evaluate->add_option("--dataset", dataset, "Corpus file or released version tag")->required();
  evaluate->add_option("--backend", backend, "Backend name from the config")->required();
  evaluate->add_option("--model", model, "Model id; 'latest' for the newest trained model");
  evaluate->add_option("--mode", mode, "deterministic | reasoning");
  evaluate->add_option("--grouping", grouping, "year | unit | year_unit | subject");
  evaluate->add_option("--format", format, "markdown | json | csv");

  auto* report = app.add_subcommand("report", "Show manifests, models and saved exam reports");
  report->add_option("--format", format, "markdown | json | csv");

  std::string host, release, tag, supersedes;
  std::optional<int> port;
  auto* serve = app.add_subcommand("serve", "Run the exam platform REST service");
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port (0 picks a free one)");
  serve->add_option("--release", release, "Release this corpus file before serving");
  serve->add_option("--tag", tag, "Version tag for --release");
  serve->add_option("--supersedes", supersedes, "Version the release supersedes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, out, err);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  Runner r(g, out, err);
  try {
    if (*ingest) r.ingest();
    if (*partition) r.partition();
    if (*run_iter) r.run_iteration(k);
    if (*export_sft) r.export_sft(upto);
    if (*train) r.train(upto);
    if (*loop) r.loop(iterations);
    if (*evaluate) r.evaluate(dataset, backend, model, mode, grouping, format);
    if (*report) r.report(format);
    if (*serve) r.serve(host, port, release, tag, supersedes);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    if (g.json_output) {
      out << json{{"error", {{"code", to_string(e.code())}, {"message", e.what()}}}}.dump() << "\n";
    }
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitOther;
  }
  return kExitOk;
}

}  // namespace cotloop::cli
