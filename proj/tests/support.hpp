// Copyright 2026 The cotloop Authors
// SPDX-License-Identifier: Apache-2.0

// Shared helpers for the unit and acceptance suites.

#pragma once

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "cotloop/corpus_model.hpp"
#include "cotloop/errors.hpp"
#include "cotloop/llm_backend.hpp"

namespace cotloop::testing {

// Returns the error code thrown by `fn`, or nullopt if nothing was thrown.
inline std::optional<Errc> error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("cotloop-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

// Deterministic synthetic 4-option MCQ corpus; stems are unique per index.
inline std::vector<Question> synthetic_questions(int n, std::uint64_t seed = 7,
                                                 int option_count = 4) {
  std::mt19937_64 rng(seed);
  std::vector<Question> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    QuestionSpec spec;
    spec.stem = "病例" + std::to_string(i) + "：患者主诉症状编号 " + std::to_string(rng() % 100000) +
                "，应首选哪一项治法？";
    for (int o = 0; o < option_count; ++o) {
      spec.options.push_back({static_cast<char>('A' + o),
                              "选项" + std::to_string(i) + "-" + std::to_string(o)});
    }
    spec.answer = std::string(1, static_cast<char>('A' + rng() % option_count));
    spec.format = Format::mcq_single;
    spec.subject = static_cast<Subject>(rng() % kSubjectCount);
    spec.origin = Origin::mock_exam;
    spec.unit = static_cast<int>(1 + rng() % 4);
    spec.year = 2003 + static_cast<int>(rng() % 20);
    out.push_back(make_question(spec));
  }
  return out;
}

}  // namespace cotloop::testing

namespace cotloop::testing {

// One valid 4-option item with explicit stratification attributes.
inline Question make_item(int index, Subject subject, std::optional<int> unit,
                          std::optional<int> year, char answer = 'A',
                          Origin origin = Origin::real_exam) {
  QuestionSpec spec;
  spec.stem = "第" + std::to_string(index) + "题：下列哪项最符合该证候的治法？";
  for (int o = 0; o < 4; ++o) {
    spec.options.push_back({static_cast<char>('A' + o),
                            "治法" + std::to_string(index) + "-" + std::to_string(o)});
  }
  spec.answer = std::string(1, answer);
  spec.subject = subject;
  spec.unit = unit;
  spec.year = year;
  spec.origin = origin;
  return make_question(spec);
}

}  // namespace cotloop::testing

namespace cotloop::testing {

// Forwards to `inner` and fails every wire call after the first `budget`
// with a non-retryable error, simulating a process crash mid-iteration.
class CrashingBackend : public Backend {
 public:
  CrashingBackend(Backend& inner, long budget)
      : Backend("crashing", no_retry(inner.policy())), inner_(inner), budget_(budget) {}
  std::string default_model() const override { return inner_.default_model(); }

 protected:
  Completion attempt(const ChatRequest& request) override {
    if (budget_.fetch_sub(1) <= 0) throw Error(Errc::ServerError, "injected crash");
    return inner_.complete(request);
  }

 private:
  static BackendPolicy no_retry(BackendPolicy p) {
    p.retry.max_attempts = 1;
    return p;
  }
  Backend& inner_;
  std::atomic<long> budget_;
};

}  // namespace cotloop::testing
