#pragma once

#include "run_config.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mixpinn::cli {

const std::vector<std::string>& command_names();

/// Runs one subcommand against a resolved config. Errors propagate as the
/// mixpinn exception taxonomy; the caller maps them to exit codes.
void run_command(const std::string& name, const RunConfig& config);

/// FNV-1a of a file's bytes.
std::uint64_t file_hash(const std::filesystem::path& path);

/// 0 ok, 1 usage, 2 data, 3 numerical.
int exit_code_for(const std::exception& error);

}  // namespace mixpinn::cli
