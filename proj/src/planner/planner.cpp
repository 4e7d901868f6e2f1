#include "evoagent/planner/planner.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "evoagent/core/errors.hpp"

namespace evoagent::plan {

namespace {

int held(const cw::EnvState& state, cw::Item item) {
    if (cw::is_tool(item)) return state.has_asset(item) ? 1 : 0;
    return state.count(item);
}

// Outstanding per-item demand after netting out what the agent already holds.
std::map<cw::Item, int> residual_demand(const cw::EnvState& state, cw::Item target) {
    const auto chain = cw::milestone_chain(target);
    std::map<cw::Item, int> demand;
    demand[target] = 1;
    std::map<cw::Item, int> net;
    for (auto it = chain.rbegin(); it != chain.rend(); ++it) {
        const cw::Item item = *it;
        const int want = demand.count(item) ? demand[item] : 0;
        const int short_by = std::max(0, want - held(state, item));
        net[item] = short_by;
        if (short_by <= 0) continue;
        const cw::Recipe& r = cw::recipe_for(item);
        if (!r.craftable) {
            if (r.gather_tool && !state.has_asset(*r.gather_tool)) {
                demand[*r.gather_tool] = std::max(demand[*r.gather_tool], 1);
            }
            continue;
        }
        const int batches = (short_by + r.yield - 1) / r.yield;
        for (const auto& [in, cnt] : r.inputs) demand[in] += batches * cnt;
    }
    std::map<cw::Item, int> needed;
    for (const auto& [item, n] : net) {
        if (n > 0) needed[item] = n;
    }
    return needed;
}

struct Node {
    const Subtask* subtask;
    std::vector<cw::Item> deps;  // needed items this node waits on
};

Plan emit_plan(const cw::EnvState& state, const cw::TaskSpec& task, const mep::PoolStats& stats,
               const SubtaskRegistry& registry, const std::string& avoid_first) {
    const auto needed = residual_demand(state, task.target_item);

    std::vector<Node> nodes;
    for (const auto& [item, cnt] : needed) {
        (void)cnt;
        Node n;
        n.subtask = &registry.for_target(item);
        const cw::Recipe& r = cw::recipe_for(item);
        if (r.craftable) {
            for (const auto& [in, c2] : r.inputs) {
                (void)c2;
                if (needed.count(in)) n.deps.push_back(in);
            }
        } else if (r.gather_tool && needed.count(*r.gather_tool)) {
            n.deps.push_back(*r.gather_tool);
        }
        nodes.push_back(std::move(n));
    }

    Plan out;
    out.task = task;
    out.created_at_step = state.step_count;
    std::set<cw::Item> done;
    std::vector<bool> emitted(nodes.size(), false);

    auto sr_of = [&](const std::string& id) {
        const auto* st = stats.find(id);
        return st ? st->success_rate() : 0.0;
    };

    for (size_t round = 0; round < nodes.size(); ++round) {
        // frontier: not yet emitted, all deps resolved
        std::vector<size_t> frontier;
        for (size_t i = 0; i < nodes.size(); ++i) {
            if (emitted[i]) continue;
            bool ready = true;
            for (cw::Item dep : nodes[i].deps) ready = ready && done.count(dep) > 0;
            if (ready) frontier.push_back(i);
        }
        if (frontier.empty()) throw PlanningError("recipe dependencies form a cycle");

        auto better = [&](size_t a, size_t b) {
            const double sa = sr_of(nodes[a].subtask->id);
            const double sb = sr_of(nodes[b].subtask->id);
            if (sa != sb) return sa > sb;
            return nodes[a].subtask->id < nodes[b].subtask->id;
        };
        std::sort(frontier.begin(), frontier.end(), better);
        size_t pick = frontier[0];
        if (round == 0 && !avoid_first.empty() && frontier.size() > 1 &&
            nodes[pick].subtask->id == avoid_first) {
            pick = frontier[1];
        }
        emitted[pick] = true;
        done.insert(nodes[pick].subtask->target);
        out.subtask_ids.push_back(nodes[pick].subtask->id);
    }
    return out;
}

}  // namespace

Plan make_plan(const cw::EnvState& state, const cw::TaskSpec& task, const mep::PoolStats& stats,
               const SubtaskRegistry& registry) {
    try {
        cw::recipe_for(task.target_item);
    } catch (const LookupError& e) {
        throw PlanningError(std::string("unreachable task target: ") + e.what());
    }
    Plan p = emit_plan(state, task, stats, registry, "");
    p.provenance = Provenance::rule_based;
    return p;
}

Plan replan_on_failure(const Plan& previous, const Subtask& failed, const cw::EnvState& state,
                       const mep::PoolStats& stats, const SubtaskRegistry& registry) {
    Plan p = emit_plan(state, previous.task, stats, registry, failed.id);
    p.provenance = Provenance::replanned;
    return p;
}

bool plan_is_topologically_valid(const Plan& plan, const cw::EnvState& state,
                                 const SubtaskRegistry& registry) {
    std::map<cw::Item, int> inv;
    std::set<cw::Item> assets = state.assets;
    for (const auto& [item, cnt] : state.inventory) inv[item] = cnt;

    constexpr int kPlenty = 99;  // oracle environment: resources never run out
    for (const auto& id : plan.subtask_ids) {
        const Subtask* st = registry.find(id);
        if (!st) return false;
        const cw::Recipe& r = cw::recipe_for(st->target);
        if (!r.craftable) {
            if (r.gather_tool && !assets.count(*r.gather_tool)) return false;
            inv[st->target] += kPlenty;
        } else {
            for (const auto& [in, cnt] : r.inputs) {
                if (inv[in] < cnt) return false;
            }
            if (r.tool) {
                assets.insert(st->target);
            } else {
                inv[st->target] += kPlenty * r.yield;
            }
        }
    }
    const cw::Item target = plan.task.target_item;
    return inv[target] > 0 || assets.count(target) > 0;
}

}  // namespace evoagent::plan
