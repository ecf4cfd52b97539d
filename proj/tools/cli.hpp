// Copyright 2026 The cotloop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <ostream>

#include "cotloop/errors.hpp"

namespace cotloop::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitOther = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitBackend = 3;
inline constexpr int kExitTrainer = 4;
inline constexpr int kExitChecksum = 5;

int exit_code_for(Errc code);

// Parses argv and runs one subcommand. Results go to `out`, logs and
// errors to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cotloop::cli
