#pragma once

#include <string>
#include <vector>

#include "cer/error.hpp"

namespace cer {

// Fixed prompt texts shipped with the tool. The same texts live under
// prompts/*.txt; a test pins the file bytes to these constants.
enum class PromptPreset { math_v1, open_domain_v1, math_v2, math_v3 };

PromptPreset parse_prompt_preset(const std::string& name);
std::string to_string(PromptPreset preset);
const std::vector<std::string>& prompt_preset_names();

// Raw preset text with the literal placeholder "<question>".
const std::string& prompt_preset_text(PromptPreset preset);

// Preset text with every "<question>" replaced by the question.
std::string render_prompt(PromptPreset preset, const std::string& question);

}  // namespace cer
