#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "signdet/detmetrics.hpp"

namespace signdet::cli {

inline constexpr int exit_ok = 0;
inline constexpr int exit_findings = 1; // validation findings or failed checks
inline constexpr int exit_usage = 2;

/// Environment variable naming the default dataset descriptor.
inline constexpr const char *config_env = "SIGNDET_CONFIG";

/// Runs one command line. `args` excludes the program name.
int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err);

/// Pairs `<truth_dir>/<id>.txt` labels with `<pred_dir>/<id>.txt`
/// predictions. Ids come from both directories, sorted; a side with no file
/// contributes nothing.
detmetrics::EvalSet load_eval_set(const std::filesystem::path &truth_dir,
                                  const std::filesystem::path &pred_dir);

} // namespace signdet::cli
