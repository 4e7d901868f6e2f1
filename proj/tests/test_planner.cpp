#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <deque>
#include <queue>

#include "evoagent/core/errors.hpp"
#include "evoagent/planner/planner.hpp"

using namespace evoagent;
using namespace evoagent::plan;
using evoagent::cw::Item;

namespace {

const SubtaskRegistry& registry() {
    static SubtaskRegistry r;
    return r;
}

cw::EnvState bare_state() {
    cw::EnvState s;
    s.rows = s.cols = 9;
    s.grid.assign(81, cw::Tile::empty);
    s.agent_row = s.agent_col = 4;
    return s;
}

mep::PoolStats stats_with_sr(const std::string& id, int64_t total, int64_t success) {
    mep::PoolStats st;
    auto& row = st.by_subtask[id];
    row.episodes_total = total;
    row.episodes_success = success;
    row.steps_total = total * 10;
    row.steps_success = success * 10;
    row.completion_sum = static_cast<double>(success);
    return st;
}

// Walks to the nearest tile of a kind, gathering it; crafts are direct. The
// oracle executor used by the coverage property.
bool oracle_execute(const cw::CraftWorld& env, cw::EnvState& state, const Subtask& sub) {
    if (sub.kind == SubtaskKind::craft) {
        auto res = env.step(state, cw::Action{cw::ActionKind::craft, sub.target});
        state = std::move(res.state);
        return true;
    }
    const auto& recipe = cw::recipe_for(sub.target);
    REQUIRE(recipe.gather_tile.has_value());
    // BFS over non-wall tiles from the agent position
    const int rows = state.rows, cols = state.cols;
    std::vector<int> prev(static_cast<size_t>(rows) * cols, -1);
    std::vector<bool> seen(static_cast<size_t>(rows) * cols, false);
    std::queue<int> frontier;
    const int start = state.agent_row * cols + state.agent_col;
    frontier.push(start);
    seen[static_cast<size_t>(start)] = true;
    int found = -1;
    while (!frontier.empty() && found < 0) {
        const int cur = frontier.front();
        frontier.pop();
        if (state.grid[static_cast<size_t>(cur)] == *recipe.gather_tile) {
            found = cur;
            break;
        }
        const int r = cur / cols, c = cur % cols;
        const int drc[4][2] = {{-1, 0}, {1, 0}, {0, 1}, {0, -1}};
        for (const auto& d : drc) {
            const int nr = r + d[0], nc = c + d[1];
            if (nr < 0 || nr >= rows || nc < 0 || nc >= cols) continue;
            const int nxt = nr * cols + nc;
            if (seen[static_cast<size_t>(nxt)] || state.at(nr, nc) == cw::Tile::wall) continue;
            seen[static_cast<size_t>(nxt)] = true;
            prev[static_cast<size_t>(nxt)] = cur;
            frontier.push(nxt);
        }
    }
    if (found < 0) return false;
    std::deque<int> path;
    for (int cur = found; cur != start; cur = prev[static_cast<size_t>(cur)]) path.push_front(cur);
    for (int cell : path) {
        const int r = cell / cols, c = cell % cols;
        cw::ActionKind kind;
        if (r < state.agent_row) kind = cw::ActionKind::move_north;
        else if (r > state.agent_row) kind = cw::ActionKind::move_south;
        else if (c > state.agent_col) kind = cw::ActionKind::move_east;
        else kind = cw::ActionKind::move_west;
        auto res = env.step(state, cw::Action{kind});
        state = std::move(res.state);
    }
    auto res = env.step(state, cw::Action{cw::ActionKind::gather});
    state = std::move(res.state);
    return true;
}

}  // namespace

TEST_CASE("Stone plan from an empty inventory follows the recipe DAG") {
    const auto plan = make_plan(bare_state(), cw::task_by_name("Stone"), {}, registry());
    const std::vector<std::string> expected = {"gather_log",       "craft_planks",
                                               "craft_stick",      "craft_wooden_pickaxe",
                                               "gather_cobblestone", "craft_stone_pickaxe"};
    CHECK(plan.subtask_ids == expected);
    CHECK(plan.provenance == Provenance::rule_based);
}

TEST_CASE("satisfied nodes are pruned; tie-break is lexicographic without history") {
    auto state = bare_state();
    state.assets.insert(Item::wooden_pickaxe);
    const auto plan = make_plan(state, cw::task_by_name("Stone"), {}, registry());
    // wooden pickaxe chain pruned at the tool; cobblestone and log are both
    // frontier nodes, c < l lexicographically
    CHECK(plan.subtask_ids.front() == "gather_cobblestone");
    CHECK(std::find(plan.subtask_ids.begin(), plan.subtask_ids.end(),
                    std::string("craft_wooden_pickaxe")) == plan.subtask_ids.end());
    CHECK(plan.subtask_ids.back() == "craft_stone_pickaxe");
}

TEST_CASE("historical success rate outranks the lexicographic tie-break") {
    auto state = bare_state();
    state.assets.insert(Item::wooden_pickaxe);
    // gather_log has strong history, gather_cobblestone has a weak one
    auto stats = stats_with_sr("gather_log", 5, 5);
    stats.by_subtask["gather_cobblestone"].episodes_total = 5;
    stats.by_subtask["gather_cobblestone"].episodes_success = 1;
    const auto plan = make_plan(state, cw::task_by_name("Stone"), stats, registry());
    CHECK(plan.subtask_ids.front() == "gather_log");
}

TEST_CASE("planning is a pure function of (state, task, stats)") {
    const auto a = make_plan(bare_state(), cw::task_by_name("Diamond"), {}, registry());
    const auto b = make_plan(bare_state(), cw::task_by_name("Diamond"), {}, registry());
    CHECK(a.subtask_ids == b.subtask_ids);
}

TEST_CASE("every emitted plan is topologically valid") {
    Rng rng(17);
    for (int trial = 0; trial < 200; ++trial) {
        auto state = bare_state();
        // random partial progress
        for (int i = 0; i < cw::kNumItems; ++i) {
            const Item item = static_cast<Item>(i);
            if (cw::is_tool(item)) {
                if (rng.bernoulli(0.3)) state.assets.insert(item);
            } else if (rng.bernoulli(0.4)) {
                state.inventory[item] = rng.uniform_int(6);
                if (state.inventory[item] == 0) state.inventory.erase(item);
            }
        }
        const auto& task = cw::task_table()[static_cast<size_t>(rng.uniform_int(5))];
        const auto plan = make_plan(state, task, {}, registry());
        CHECK(plan_is_topologically_valid(plan, state, registry()));
    }
}

TEST_CASE("replanning repairs missing tool chains") {
    auto state = bare_state();
    // the agent lost its stone pickaxe chain mid-task
    Plan failing;
    failing.task = cw::task_by_name("Iron");
    failing.subtask_ids = {"gather_iron_ore", "craft_iron_ingot", "craft_iron_pickaxe"};
    const auto& failed = registry().by_id("gather_iron_ore");
    const auto repaired = replan_on_failure(failing, failed, state, {}, registry());
    CHECK(repaired.provenance == Provenance::replanned);
    const auto pos_of = [&](const std::string& id) {
        return std::find(repaired.subtask_ids.begin(), repaired.subtask_ids.end(), id) -
               repaired.subtask_ids.begin();
    };
    CHECK(pos_of("craft_stone_pickaxe") < pos_of("gather_iron_ore"));
    CHECK(plan_is_topologically_valid(repaired, state, registry()));
}

TEST_CASE("consecutive replans avoid the identical failing prefix when possible") {
    auto state = bare_state();
    state.assets.insert(Item::wooden_pickaxe);
    const auto first = make_plan(state, cw::task_by_name("Stone"), {}, registry());
    REQUIRE(first.subtask_ids.front() == "gather_cobblestone");
    const auto& failed = registry().by_id("gather_cobblestone");
    const auto second = replan_on_failure(first, failed, state, {}, registry());
    CHECK(second.subtask_ids.front() != "gather_cobblestone");
    CHECK(plan_is_topologically_valid(second, state, registry()));
}

TEST_CASE("retry is allowed when the failed subtask is the only frontier") {
    auto state = bare_state();
    const auto first = make_plan(state, cw::task_by_name("Wood"), {}, registry());
    REQUIRE(first.subtask_ids.front() == "gather_log");
    const auto& failed = registry().by_id("gather_log");
    int retries = 0;
    Plan current = first;
    for (int i = 0; i < 3; ++i) {
        current = replan_on_failure(current, failed, state, {}, registry());
        CHECK(current.provenance == Provenance::replanned);
        if (current.subtask_ids.front() == "gather_log") ++retries;
    }
    CHECK(retries == 3);  // nothing else can go first from an empty inventory
}

TEST_CASE("subtask embeddings are unit-norm indicators") {
    const auto planks = embed_subtask(Item::planks);
    // ones exactly at {planks, log} before normalization
    for (int i = 0; i < cw::kNumItems; ++i) {
        const Item item = static_cast<Item>(i);
        const bool expected = item == Item::planks || item == Item::log;
        CHECK((planks[static_cast<size_t>(i)] != 0.0) == expected);
    }
    double norm = 0.0;
    for (double v : planks) norm += v * v;
    CHECK(norm == doctest::Approx(1.0));
}

TEST_CASE("state/subtask cosine reference points") {
    // holding exactly the target and inputs of craft_planks
    cw::Observation obs;
    obs.inventory_vec.assign(cw::kNumItems, 0.0);
    obs.inventory_vec[static_cast<size_t>(Item::planks)] = 4.0 / 9.0;
    obs.inventory_vec[static_cast<size_t>(Item::log)] = 1.0 / 9.0;
    const auto st = embed_state(obs);
    CHECK(cosine(st, registry().by_id("craft_planks").embedding) == doctest::Approx(1.0));

    // disjoint feature sets
    cw::Observation other;
    other.inventory_vec.assign(cw::kNumItems, 0.0);
    other.inventory_vec[static_cast<size_t>(Item::diamond)] = 1.0 / 9.0;
    CHECK(cosine(embed_state(other), registry().by_id("craft_planks").embedding) ==
          doctest::Approx(0.0));
}

TEST_CASE("coverage: executing plans in a resource-abundant world completes every task") {
    for (const auto& task : cw::task_table()) {
        cw::EnvConfig cfg;
        cfg.rows = 16;
        cfg.cols = 16;
        cfg.density = {{cw::Tile::tree, 0.15},
                       {cw::Tile::stone, 0.15},
                       {cw::Tile::iron_ore, 0.10},
                       {cw::Tile::gold_ore, 0.06},
                       {cw::Tile::diamond_ore, 0.06}};
        const cw::CraftWorld env(cfg, task);
        auto [state, obs] = env.reset(1234);

        int guard = 0;
        while (!env.task_success(state) && guard < 300) {
            const auto plan = make_plan(state, task, {}, registry());
            REQUIRE(!plan.empty());
            REQUIRE(plan_is_topologically_valid(plan, state, registry()));
            REQUIRE(oracle_execute(env, state, registry().by_id(plan.subtask_ids.front())));
            ++guard;
        }
        CHECK(env.task_success(state));
    }
}
