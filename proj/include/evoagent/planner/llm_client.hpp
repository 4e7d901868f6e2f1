#pragma once

#include <optional>
#include <string>
#include <vector>

#include "evoagent/planner/planner.hpp"

namespace evoagent::plan {

// External planning service hook. Disabled by default; every failure mode
// (offline, timeout, malformed or invalid response) falls back to the
// rule-based plan and must never abort a run. Auth token, when needed, comes
// from EVOAGENT_LLM_TOKEN.
struct LlmConfig {
    bool enabled = false;
    std::string endpoint;            // e.g. http://127.0.0.1:8089
    std::string model = "default";
    double timeout_s = 10.0;
};

// Structured text prompt: task, inventory summary, recent failures.
std::string build_prompt(const cw::TaskSpec& task, const cw::EnvState& state,
                         const std::vector<std::string>& recent_failures);

// Response format: first line "PLAN", one subtask id per line, then "END".
// Returns nothing for any deviation from that shape.
std::optional<std::vector<std::string>> parse_plan_response(const std::string& body);

// Full proposal path: POST the prompt, parse, validate ids against the
// registry and the plan's topological invariant. Absent on any failure.
std::optional<Plan> llm_propose(const cw::TaskSpec& task, const cw::EnvState& state,
                                const std::vector<std::string>& recent_failures,
                                const LlmConfig& cfg, const SubtaskRegistry& registry);

}  // namespace evoagent::plan
