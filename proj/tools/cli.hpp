#pragma once

#include <iosfwd>

#include "hsrgan/core/error.hpp"

namespace hsrgan::cli {

// Exit code 0 is success; every error kind has its own code.
int exit_code(ErrorKind kind);
inline constexpr int kUsageExit = 64;

// Parses and runs one command. Results go to `out` as JSON lines; failures go
// to `err` as a single JSON object {error, message, exit_code}.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace hsrgan::cli
