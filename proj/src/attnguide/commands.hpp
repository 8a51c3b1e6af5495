#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

// The three CLI commands, each taking a resolved JSON config (defaults +
// config file + flag overrides already merged). Every command writes a
// manifest echoing the full configuration; replaying a manifest reproduces
// the run's outputs byte for byte.

namespace attnguide::cli {

struct CommandResult {
    std::filesystem::path out_dir;
    nlohmann::json summary;
};

CommandResult cmd_train(const nlohmann::json& config);
CommandResult cmd_sample(const nlohmann::json& config);
CommandResult cmd_eval(const nlohmann::json& config);

}  // namespace attnguide::cli
