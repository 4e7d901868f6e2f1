#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace evoagent::cw {

// Canonical item order; inventory vectors, embeddings and snapshots all use
// these indices.
enum class Item : uint8_t {
    log = 0,
    planks,
    stick,
    wooden_pickaxe,
    cobblestone,
    stone_pickaxe,
    iron_ore,
    iron_ingot,
    iron_pickaxe,
    gold_ore,
    gold_ingot,
    diamond,
};

constexpr int kNumItems = 12;

enum class Tile : uint8_t { empty = 0, tree, stone, iron_ore, gold_ore, diamond_ore, wall };

constexpr int kNumTiles = 7;

std::string_view item_name(Item it);
std::optional<Item> item_from_name(std::string_view name);
std::string_view tile_name(Tile t);

// One row of the normative recipe table. Craft rows have inputs and a yield;
// gather rows have a source tile and possibly a tool gate. Tools land in the
// asset set instead of the inventory.
struct Recipe {
    Item output;
    bool craftable = false;                 // false => gather-only
    std::map<Item, int> inputs;             // consumed per craft
    int yield = 1;                          // produced per craft
    bool tool = false;                      // output goes to assets
    std::optional<Tile> gather_tile;        // tile that yields this item
    std::optional<Item> gather_tool;        // tool required to gather
};

const std::vector<Recipe>& recipe_table();
const Recipe& recipe_for(Item it);  // throws LookupError for items without a row

// Spec'd lookup surface: inputs map plus required tool (gather gate for raw
// items, none for craft rows in this table).
struct Requirements {
    std::map<Item, int> inputs;
    std::optional<Item> tool;
};
Requirements craft_requirements(Item it);
Requirements craft_requirements(std::string_view item_name);

struct TaskSpec {
    std::string name;   // Wood, Stone, Iron, Gold, Diamond
    Item target_item;
    int tier = 0;       // 1..5, declared in the task table
};

const std::vector<TaskSpec>& task_table();
TaskSpec task_by_name(std::string_view name);

// Ordered prerequisite chain for an item: every recipe-DAG node on the path
// to it (tool gates included), ending with the item itself. Drives the
// completion-ratio milestones.
std::vector<Item> milestone_chain(Item target);

// Total raw/per-item demand to produce `count` of `target` from nothing,
// accounting for craft yields. Keys cover every intermediate item.
std::map<Item, int> total_demand(Item target, int count = 1);

// Tiles that must exist on a map for the task to be completable, with the
// minimum counts implied by total_demand.
std::map<Tile, int> required_tiles(const TaskSpec& task);

bool is_tool(Item it);

}  // namespace evoagent::cw
