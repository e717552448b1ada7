#pragma once

#include <map>
#include <string>
#include <vector>

namespace tidm::cli {

inline constexpr const char* kToolVersion = "tidm 0.1.0";

enum ExitCode { ok = 0, usage = 1, invalid = 2, failure = 3 };

/// `key = value` lines; '#' starts a comment. Keys are normalised to
/// dashes ("batch_size" == "batch-size").
std::map<std::string, std::string> read_config(const std::string& path);

/// Full command line, e.g. {"tidm", "generate", "--prompt", "..."}.
int run(const std::vector<std::string>& args);

}  // namespace tidm::cli
