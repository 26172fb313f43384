#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "cbert/model_config.hpp"

namespace cbert::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

// Runs `args[0]` (the command) with the remaining flags. Reports go to the
// run directory and a summary to `out`; diagnostics go to `err`.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Small configuration used when no model is given.
ModelConfig desk_config(FrontendMode mode);

const std::vector<std::string>& command_names();

}  // namespace cbert::cli
