#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dfr::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

// Parses and dispatches one invocation. args excludes the program name. Human-readable output
// goes to `out`, usage and error text to `err`; structured logs always go to stderr.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

// The --help text of a subcommand ("" for the top level).
std::string help_text(const std::string& subcommand);

}  // namespace dfr::cli
