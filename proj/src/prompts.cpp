#include "cer/prompts.hpp"

namespace cer {
namespace {

const std::string kMathV1 =
    "**Objective**\n"
    "Carefully work through the problem step by step. For each step, perform any "
    "required reasoning and express the answer at the end of the step. Your response "
    "should be in the format Answer: [answer]. After completing the steps, provide "
    "the final answer based on the reasoning developed throughout the process.\n"
    "\n"
    "**Important Rules**\n"
    "1. Perform detailed analyses before concluding the answer.\n"
    "2. Express intermediate answers explicitly at the end of each step in the format "
    "Answer: [answer].\n"
    "3. Ensure that your response ends with: The final answer is [answer], where "
    "[answer] is the response to the problem.\n"
    "\n"
    "Q: <question>\n";

const std::string kOpenDomainV1 =
    "**Objective**\n"
    "Carefully work through the problem step by step, focusing only on the essential "
    "steps and limiting your response to five sentences. Your response should end "
    "with: The final answer is [answer], where [answer] is the response to the "
    "problem.\n"
    "Q: <question>\n";

const std::string kMathV2 =
    "**Objective**\n"
    "Carefully work through the problem step by step. For each step, perform any "
    "required reasoning, and express the response at the end of the step. Your "
    "response for each intermediate step should be in the format Response: "
    "[response]. After completing the steps, provide the final response based on the "
    "reasoning developed throughout the process.\n"
    "**Important Rules**\n"
    "Your response should end with: The final response is [response], where "
    "[response] is the final response to the problem.\n"
    "\n"
    "Q: <question>\n";

const std::string kMathV3 =
    "**Objective**\n"
    "Carefully work through the problem step by step. For each step, perform any "
    "required reasoning and express the answer at the end of the step. After "
    "completing the steps, provide the final answer based on the reasoning developed "
    "throughout the process.\n"
    "**Important Rules**\n"
    "Your response should end with The final answer is [answer], where [answer] is "
    "the final response to the problem.\n"
    "\n"
    "Q: <question>\n";

}  // namespace

PromptPreset parse_prompt_preset(const std::string& name) {
  if (name == "math_v1") return PromptPreset::math_v1;
  if (name == "open_domain_v1") return PromptPreset::open_domain_v1;
  if (name == "math_v2") return PromptPreset::math_v2;
  if (name == "math_v3") return PromptPreset::math_v3;
  throw Error("unknown prompt preset: " + name);
}

std::string to_string(PromptPreset preset) {
  switch (preset) {
    case PromptPreset::math_v1: return "math_v1";
    case PromptPreset::open_domain_v1: return "open_domain_v1";
    case PromptPreset::math_v2: return "math_v2";
    case PromptPreset::math_v3: return "math_v3";
  }
  return "?";
}

const std::vector<std::string>& prompt_preset_names() {
  static const std::vector<std::string> kNames = {"math_v1", "open_domain_v1",
                                                  "math_v2", "math_v3"};
  return kNames;
}

const std::string& prompt_preset_text(PromptPreset preset) {
  switch (preset) {
    case PromptPreset::math_v1: return kMathV1;
    case PromptPreset::open_domain_v1: return kOpenDomainV1;
    case PromptPreset::math_v2: return kMathV2;
    case PromptPreset::math_v3: return kMathV3;
  }
  return kMathV1;
}

std::string render_prompt(PromptPreset preset, const std::string& question) {
  std::string prompt = prompt_preset_text(preset);
  const std::string placeholder = "<question>";
  for (std::size_t pos = prompt.find(placeholder); pos != std::string::npos;
       pos = prompt.find(placeholder, pos + question.size())) {
    prompt.replace(pos, placeholder.size(), question);
  }
  return prompt;
}

}  // namespace cer
