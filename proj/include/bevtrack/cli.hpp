#pragma once

#include <ostream>

namespace bevtrack {

// Environment variable naming the default config file.
inline constexpr const char* kConfigEnv = "BEVTRACK_CONFIG";

// Subcommands: synth, prepare, train, track, evaluate-depth, evaluate-mot,
// export-bev, plot-bev. Returns 0 on success; 2 for usage and config errors,
// 1 for any other failure. One JSON log record per stage goes to `out`.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int cli_main(int argc, const char* const* argv);

}  // namespace bevtrack
