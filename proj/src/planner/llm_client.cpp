#include "evoagent/planner/llm_client.hpp"

#include <cstdio>
#include <cstdlib>
#include <sstream>

#include <httplib.h>

namespace evoagent::plan {

std::string build_prompt(const cw::TaskSpec& task, const cw::EnvState& state,
                         const std::vector<std::string>& recent_failures) {
    std::ostringstream os;
    os << "TASK " << task.name << " target=" << cw::item_name(task.target_item) << "\n";
    os << "INVENTORY";
    for (const auto& [item, cnt] : state.inventory) {
        os << " " << cw::item_name(item) << "=" << cnt;
    }
    os << "\nASSETS";
    for (const auto& item : state.assets) os << " " << cw::item_name(item);
    os << "\nFAILURES";
    for (const auto& f : recent_failures) os << " " << f;
    os << "\nRespond with PLAN, one subtask id per line, then END.\n";
    return os.str();
}

std::optional<std::vector<std::string>> parse_plan_response(const std::string& body) {
    std::istringstream is(body);
    std::string line;
    if (!std::getline(is, line)) return std::nullopt;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "PLAN") return std::nullopt;
    std::vector<std::string> ids;
    bool terminated = false;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line == "END") {
            terminated = true;
            break;
        }
        if (line.empty()) continue;
        ids.push_back(line);
    }
    if (!terminated) return std::nullopt;
    return ids;
}

std::optional<Plan> llm_propose(const cw::TaskSpec& task, const cw::EnvState& state,
                                const std::vector<std::string>& recent_failures,
                                const LlmConfig& cfg, const SubtaskRegistry& registry) {
    if (!cfg.enabled || cfg.endpoint.empty()) return std::nullopt;

    httplib::Client client(cfg.endpoint);
    client.set_connection_timeout(static_cast<time_t>(cfg.timeout_s),
                                  static_cast<time_t>((cfg.timeout_s - static_cast<time_t>(cfg.timeout_s)) * 1e6));
    client.set_read_timeout(static_cast<time_t>(cfg.timeout_s), 0);
    httplib::Headers headers;
    if (const char* token = std::getenv("EVOAGENT_LLM_TOKEN")) {
        headers.emplace("Authorization", std::string("Bearer ") + token);
    }
    headers.emplace("X-Model", cfg.model);

    const std::string prompt = build_prompt(task, state, recent_failures);
    auto res = client.Post("/propose", headers, prompt, "text/plain");
    if (!res || res->status != 200) {
        std::fprintf(stderr, "[planner] llm proposal failed (%s); using rule-based plan\n",
                     res ? std::to_string(res->status).c_str() : "no response");
        return std::nullopt;
    }

    const auto ids = parse_plan_response(res->body);
    if (!ids) {
        std::fprintf(stderr, "[planner] llm response malformed; using rule-based plan\n");
        return std::nullopt;
    }
    Plan plan;
    plan.task = task;
    plan.created_at_step = state.step_count;
    plan.provenance = Provenance::llm;
    for (const auto& id : *ids) {
        if (!registry.contains(id)) {
            std::fprintf(stderr, "[planner] llm proposed unknown subtask '%s'; rejected\n",
                         id.c_str());
            return std::nullopt;
        }
        plan.subtask_ids.push_back(id);
    }
    if (!plan_is_topologically_valid(plan, state, registry)) {
        std::fprintf(stderr, "[planner] llm plan violates the dependency order; rejected\n");
        return std::nullopt;
    }
    return plan;
}

}  // namespace evoagent::plan
