// Copyright 2026 The cotloop Authors
// SPDX-License-Identifier: Apache-2.0

// Thin bindings. Structured values cross the boundary as JSON text; the
// Python package decodes them.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "cli.hpp"
#include "cotloop/cote_engine.hpp"
#include "cotloop/eval_harness.hpp"
#include "cotloop/ingest.hpp"
#include "cotloop/partitioner.hpp"
#include "cotloop/text.hpp"

namespace py = pybind11;
using nlohmann::json;

namespace {

std::vector<cotloop::Question> questions_from(const std::string& text) {
  std::vector<cotloop::Question> out;
  for (const auto& j : json::parse(text)) out.push_back(cotloop::question_from_json(j));
  return out;
}

}  // namespace

PYBIND11_MODULE(_cotloop, m) {
  m.doc() = "cotloop native core";

  // Messages start with the error code, e.g. "IterationGap: ...".
  py::register_exception<cotloop::Error>(m, "CotloopError");

  m.def("normalize_answer", &cotloop::normalize_answer, py::arg("raw"));
  m.def(
      "make_question",
      [](const std::string& spec_json) {
        const auto j = json::parse(spec_json);
        cotloop::QuestionSpec spec;
        spec.stem = j.at("stem").get<std::string>();
        for (const auto& [label, text] : j.at("options").items()) {
          spec.options.push_back({label.at(0), text.get<std::string>()});
        }
        spec.answer = j.at("answer").get<std::string>();
        spec.format = cotloop::format_from_string(j.value("format", std::string("mcq_single")));
        spec.subject = cotloop::subject_from_string(j.value("subject", std::string("other")));
        spec.origin = cotloop::origin_from_string(j.value("origin", std::string("mock_exam")));
        if (j.contains("year")) spec.year = j["year"].get<int>();
        if (j.contains("unit")) spec.unit = j["unit"].get<int>();
        return cotloop::to_json(cotloop::make_question(spec)).dump();
      },
      py::arg("spec_json"));
  m.def(
      "verify",
      [](const std::string& candidate, const std::string& truth, const std::string& format) {
        return cotloop::verify(candidate, truth, cotloop::format_from_string(format));
      },
      py::arg("candidate"), py::arg("truth"), py::arg("format") = "mcq_single");
  m.def(
      "extract_answer",
      [](const std::string& response, const std::string& question_json) {
        return cotloop::extract_answer(response,
                                       cotloop::question_from_json(json::parse(question_json)));
      },
      py::arg("response"), py::arg("question_json"));
  m.def(
      "stem_similarity",
      [](const std::string& a, const std::string& b) {
        return cotloop::stem_similarity(cotloop::similarity_key(a), cotloop::similarity_key(b));
      },
      py::arg("a"), py::arg("b"));
  m.def(
      "dedup",
      [](const std::string& items_json, double threshold) {
        const auto res = cotloop::dedup(questions_from(items_json), threshold);
        std::vector<std::string> ids;
        for (const auto& q : res.kept) ids.push_back(q.id);
        return ids;
      },
      py::arg("items_json"), py::arg("threshold") = 0.9);
  m.def(
      "partition",
      [](const std::string& items_json, int k, const std::string& strategy, std::uint64_t seed) {
        auto ds = cotloop::make_dataset("py", questions_from(items_json));
        return cotloop::partition(ds, {k, cotloop::partition_strategy_from_string(strategy), seed})
            .subsets;
      },
      py::arg("items_json"), py::arg("k"), py::arg("strategy") = "stratified_by_subject",
      py::arg("seed") = 0);
  m.def(
      "score",
      [](std::uint64_t correct, std::uint64_t total) {
        return cotloop::format_score(cotloop::score_of(correct, total));
      },
      py::arg("correct"), py::arg("total"));
  m.def(
      "leakage_gap",
      [](const std::string& old_score, const std::string& new_score) {
        return cotloop::format_score(
            cotloop::leakage_gap(cotloop::parse_score(old_score), cotloop::parse_score(new_score)));
      },
      py::arg("old_score"), py::arg("new_score"));
  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::vector<std::string> full = {"cotloop"};
        full.insert(full.end(), args.begin(), args.end());
        std::vector<const char*> argv;
        for (const auto& a : full) argv.push_back(a.c_str());
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = cotloop::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"));
}
