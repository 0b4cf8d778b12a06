// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace tinyforge {

/// Process exit codes of the command-line tool.
enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitInternal = 3 };

/// Flattens nested objects into dotted keys. Arrays become comma-separated
/// lists; scalars keep their JSON spelling (strings unquoted).
std::map<std::string, std::string> flatten_config(const nlohmann::json& j);

/// Every key a config file may set.
std::vector<std::string> config_keys();

/// Runs one invocation (`args` excludes the program name). Output goes to
/// `out`, diagnostics to `err`; the result is an ExitCode.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace tinyforge
