#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "attnguide/guidance.hpp"
#include "attnguide/prompt.hpp"

// JSON schema shared by config files and run manifests. A manifest is a valid
// config: replaying `--config manifest.json` reproduces the run byte-for-byte.

namespace attnguide::cli {

inline constexpr const char* kVersion = "attnguide 0.1.0";

nlohmann::json guidance_to_json(const GuidanceConfig& g);
GuidanceConfig guidance_from_json(const nlohmann::json& j);

nlohmann::json prompt_to_json(const PromptSpec& p);
PromptSpec prompt_from_json(const nlohmann::json& j);

nlohmann::json layout_to_json(const LayoutSpec& l);
LayoutSpec layout_from_json(const nlohmann::json& j);

// Parses a whitespace-separated vocabulary-word prompt, e.g.
// "red circle and blue square".
PromptSpec parse_prompt_words(const std::string& words, const std::vector<size_t>& subjects);

// Parses "token:x0,y0,x1,y1".
LayoutEntry parse_box_flag(const std::string& text);

// Reads a JSON file; if it is a manifest (has "command"/"config"), unwraps the
// inner config.
nlohmann::json load_config_file(const std::filesystem::path& path);

// Writes {version, command, config} to <out_dir>/manifest.json.
void write_manifest(const std::filesystem::path& out_dir, const std::string& command,
                    const nlohmann::json& resolved_config);

}  // namespace attnguide::cli
