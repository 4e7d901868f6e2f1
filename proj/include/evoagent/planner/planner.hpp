#pragma once

#include <string>
#include <vector>

#include "evoagent/craftworld/env.hpp"
#include "evoagent/planner/subtask.hpp"
#include "evoagent/pool/pool.hpp"

namespace evoagent::plan {

enum class Provenance { rule_based, llm, replanned };

struct Plan {
    std::vector<std::string> subtask_ids;  // topological over the recipe DAG
    Provenance provenance = Provenance::rule_based;
    int created_at_step = 0;
    cw::TaskSpec task;  // carried so replanning can re-derive

    bool empty() const { return subtask_ids.empty(); }
};

// Backward-chains from the task target over the recipe table, pruning nodes
// already satisfied by inventory/assets. Frontier ties break by higher
// historical success rate, then lexicographic id. Pure in (state, task,
// stats).
Plan make_plan(const cw::EnvState& state, const cw::TaskSpec& task, const mep::PoolStats& stats,
               const SubtaskRegistry& registry);

// Re-derives from the current state. When the failed subtask would lead the
// new plan again and the frontier offers an alternative, the alternative goes
// first, so consecutive replans never repeat the identical failing prefix.
// Missing tool gates show up as repair chains automatically.
Plan replan_on_failure(const Plan& previous, const Subtask& failed, const cw::EnvState& state,
                       const mep::PoolStats& stats, const SubtaskRegistry& registry);

// Simulates the subtask sequence over an infinite-resource oracle state:
// every gather is assumed to find its tile, crafts need their inputs, tool
// gates need the tool. True iff execution reaches the task target.
bool plan_is_topologically_valid(const Plan& plan, const cw::EnvState& state,
                                 const SubtaskRegistry& registry);

}  // namespace evoagent::plan
