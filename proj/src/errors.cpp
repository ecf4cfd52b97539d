// Copyright 2026 The cotloop Authors
// SPDX-License-Identifier: Apache-2.0

#include "cotloop/errors.hpp"

namespace cotloop {

std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::NoLetterFound:
      return "NoLetterFound";
    case Errc::InvalidQuestion:
      return "InvalidQuestion";
    case Errc::ParseError:
      return "ParseError";
    case Errc::EmptyBook:
      return "EmptyBook";
    case Errc::NoParsableItems:
      return "NoParsableItems";
    case Errc::InvalidTemplate:
      return "InvalidTemplate";
    case Errc::KExceedsDatasetSize:
      return "KExceedsDatasetSize";
    case Errc::RateLimited:
      return "RateLimited";
    case Errc::Timeout:
      return "Timeout";
    case Errc::ProtocolError:
      return "ProtocolError";
    case Errc::AuthError:
      return "AuthError";
    case Errc::ServerError:
      return "ServerError";
    case Errc::NonMonotoneCurve:
      return "NonMonotoneCurve";
    case Errc::InvalidRequest:
      return "InvalidRequest";
    case Errc::ExtractionFailed:
      return "ExtractionFailed";
    case Errc::ChecksumMismatch:
      return "ChecksumMismatch";
    case Errc::AnswerMismatch:
      return "AnswerMismatch";
    case Errc::TooShort:
      return "TooShort";
    case Errc::InvalidTransition:
      return "InvalidTransition";
    case Errc::IterationGap:
      return "IterationGap";
    case Errc::DuplicateQuestionConflict:
      return "DuplicateQuestionConflict";
    case Errc::MissingConstituent:
      return "MissingConstituent";
    case Errc::NotBaseModel:
      return "NotBaseModel";
    case Errc::TrainerFailed:
      return "TrainerFailed";
    case Errc::TrainerTimeout:
      return "TrainerTimeout";
    case Errc::EmptyGroup:
      return "EmptyGroup";
    case Errc::EmptyKeySet:
      return "EmptyKeySet";
    case Errc::NotFound:
      return "NotFound";
    case Errc::Conflict:
      return "Conflict";
    case Errc::Unauthorized:
      return "Unauthorized";
    case Errc::ConfigError:
      return "ConfigError";
    case Errc::LockHeld:
      return "LockHeld";
    case Errc::Io:
      return "Io";
  }
  return "Unknown";
}

bool is_backend_error(Errc code) {
  switch (code) {
    case Errc::RateLimited:
    case Errc::Timeout:
    case Errc::ProtocolError:
    case Errc::AuthError:
    case Errc::ServerError:
    case Errc::InvalidRequest:
      return true;
    default:
      return false;
  }
}

bool is_transient(Errc code) {
  return code == Errc::RateLimited || code == Errc::Timeout || code == Errc::ServerError;
}

}  // namespace cotloop
