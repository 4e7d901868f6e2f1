#include "evoagent/craftworld/items.hpp"

#include <algorithm>

#include "evoagent/core/errors.hpp"

namespace evoagent::cw {

namespace {

constexpr std::array<std::string_view, kNumItems> kItemNames = {
    "log",      "planks",     "stick",    "wooden_pickaxe", "cobblestone", "stone_pickaxe",
    "iron_ore", "iron_ingot", "iron_pickaxe", "gold_ore",   "gold_ingot",  "diamond",
};

constexpr std::array<std::string_view, kNumTiles> kTileNames = {
    "empty", "tree", "stone", "iron_ore", "gold_ore", "diamond_ore", "wall",
};

std::vector<Recipe> build_recipes() {
    std::vector<Recipe> t;
    auto craft = [&](Item out, std::map<Item, int> in, int yield, bool tool) {
        Recipe r;
        r.output = out;
        r.craftable = true;
        r.inputs = std::move(in);
        r.yield = yield;
        r.tool = tool;
        t.push_back(std::move(r));
    };
    auto gather = [&](Item out, Tile tile, std::optional<Item> tool) {
        Recipe r;
        r.output = out;
        r.gather_tile = tile;
        r.gather_tool = tool;
        t.push_back(std::move(r));
    };
    gather(Item::log, Tile::tree, std::nullopt);
    craft(Item::planks, {{Item::log, 1}}, 4, false);
    craft(Item::stick, {{Item::planks, 2}}, 4, false);
    craft(Item::wooden_pickaxe, {{Item::planks, 3}, {Item::stick, 2}}, 1, true);
    gather(Item::cobblestone, Tile::stone, Item::wooden_pickaxe);
    craft(Item::stone_pickaxe, {{Item::cobblestone, 3}, {Item::stick, 2}}, 1, true);
    gather(Item::iron_ore, Tile::iron_ore, Item::stone_pickaxe);
    craft(Item::iron_ingot, {{Item::iron_ore, 1}}, 1, false);
    craft(Item::iron_pickaxe, {{Item::iron_ingot, 3}, {Item::stick, 2}}, 1, true);
    gather(Item::gold_ore, Tile::gold_ore, Item::iron_pickaxe);
    craft(Item::gold_ingot, {{Item::gold_ore, 1}}, 1, false);
    gather(Item::diamond, Tile::diamond_ore, Item::iron_pickaxe);
    return t;
}

}  // namespace

std::string_view item_name(Item it) { return kItemNames[static_cast<size_t>(it)]; }

std::optional<Item> item_from_name(std::string_view name) {
    for (size_t i = 0; i < kItemNames.size(); ++i) {
        if (kItemNames[i] == name) return static_cast<Item>(i);
    }
    return std::nullopt;
}

std::string_view tile_name(Tile t) { return kTileNames[static_cast<size_t>(t)]; }

const std::vector<Recipe>& recipe_table() {
    static const std::vector<Recipe> table = build_recipes();
    return table;
}

const Recipe& recipe_for(Item it) {
    for (const auto& r : recipe_table()) {
        if (r.output == it) return r;
    }
    throw LookupError("no recipe row for item " + std::string(item_name(it)));
}

Requirements craft_requirements(Item it) {
    const Recipe& r = recipe_for(it);
    Requirements req;
    if (r.craftable) {
        req.inputs = r.inputs;
        req.tool = std::nullopt;
    } else {
        req.tool = r.gather_tool;
    }
    return req;
}

Requirements craft_requirements(std::string_view name) {
    auto it = item_from_name(name);
    if (!it) throw LookupError("unknown item " + std::string(name));
    return craft_requirements(*it);
}

const std::vector<TaskSpec>& task_table() {
    static const std::vector<TaskSpec> tasks = {
        {"Wood", Item::wooden_pickaxe, 1}, {"Stone", Item::stone_pickaxe, 2},
        {"Iron", Item::iron_pickaxe, 3},   {"Gold", Item::gold_ingot, 4},
        {"Diamond", Item::diamond, 5},
    };
    return tasks;
}

TaskSpec task_by_name(std::string_view name) {
    for (const auto& t : task_table()) {
        if (t.name == name) return t;
    }
    throw LookupError("unknown task " + std::string(name));
}

std::vector<Item> milestone_chain(Item target) {
    // Depth-first over inputs and tool gates, post-order, deduplicated.
    std::vector<Item> chain;
    auto seen = [&](Item x) { return std::find(chain.begin(), chain.end(), x) != chain.end(); };
    auto visit = [&](auto&& self, Item x) -> void {
        if (seen(x)) return;
        const Recipe& r = recipe_for(x);
        if (r.craftable) {
            for (const auto& [in, cnt] : r.inputs) {
                (void)cnt;
                self(self, in);
            }
        } else if (r.gather_tool) {
            self(self, *r.gather_tool);
        }
        if (!seen(x)) chain.push_back(x);
    };
    visit(visit, target);
    return chain;
}

std::map<Item, int> total_demand(Item target, int count) {
    // Accumulate demand in reverse topological order, then convert demand to
    // craft batches per item (ceil by yield) before expanding its inputs.
    std::vector<Item> order = milestone_chain(target);  // topological, target last
    std::map<Item, int> demand;
    demand[target] = count;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const Item item = *it;
        const int need = demand.count(item) ? demand[item] : 0;
        if (need <= 0) continue;
        const Recipe& r = recipe_for(item);
        if (!r.craftable) {
            // One reusable tool unlocks any number of gathers.
            if (r.gather_tool) demand[*r.gather_tool] = std::max(demand[*r.gather_tool], 1);
            continue;
        }
        const int batches = (need + r.yield - 1) / r.yield;
        for (const auto& [in, cnt] : r.inputs) demand[in] += batches * cnt;
    }
    return demand;
}

std::map<Tile, int> required_tiles(const TaskSpec& task) {
    std::map<Tile, int> tiles;
    const auto demand = total_demand(task.target_item, 1);
    for (const auto& [item, cnt] : demand) {
        const Recipe& r = recipe_for(item);
        if (!r.craftable && r.gather_tile) tiles[*r.gather_tile] += cnt;
    }
    return tiles;
}

bool is_tool(Item it) { return recipe_for(it).tool; }

}  // namespace evoagent::cw
