#pragma once

#include <string>
#include <vector>

namespace redbert {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitFailure = 2;

// Runs one subcommand (gen-corpus, pretrain, finetune, eval, project).
// Returns 0 on success, 1 on a usage or configuration error, 2 on a data,
// I/O or training failure.
int cli_dispatch(int argc, char** argv);
int cli_dispatch(const std::vector<std::string>& args);  // args[0] is the program name

}  // namespace redbert
