// Copyright 2026 The cotloop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cotloop {

enum class Errc {
  // corpus
  NoLetterFound,
  InvalidQuestion,
  ParseError,
  // ingest
  EmptyBook,
  NoParsableItems,
  InvalidTemplate,
  // partitioner
  KExceedsDatasetSize,
  // backends
  RateLimited,
  Timeout,
  ProtocolError,
  AuthError,
  ServerError,
  NonMonotoneCurve,
  InvalidRequest,
  // engine
  ExtractionFailed,
  ChecksumMismatch,
  AnswerMismatch,
  TooShort,
  InvalidTransition,
  // sft store
  IterationGap,
  DuplicateQuestionConflict,
  MissingConstituent,
  NotBaseModel,
  TrainerFailed,
  TrainerTimeout,
  // harness
  EmptyGroup,
  EmptyKeySet,
  // platform
  NotFound,
  Conflict,
  Unauthorized,
  // cli
  ConfigError,
  LockHeld,
  Io,
};

std::string_view to_string(Errc code);

// True for the failure classes a model backend can raise.
bool is_backend_error(Errc code);

// True for the failures a retry may clear (timeouts, 429, 5xx).
bool is_transient(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace cotloop
