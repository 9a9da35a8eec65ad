// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "ssom/error.hpp"

namespace ssom::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

int exit_code(ErrorKind kind);

/// Runs one command. argv[0] is the program name. Diagnostics go to `err`
/// prefixed with their category, e.g. `error[data]: ...`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Markdown page listing every command, its flags and every config key.
std::string reference_page();

}  // namespace ssom::cli
