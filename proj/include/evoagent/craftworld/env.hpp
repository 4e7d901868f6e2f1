#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "evoagent/core/rng.hpp"
#include "evoagent/craftworld/items.hpp"

namespace evoagent::cw {

struct EnvConfig {
    int rows = 16;
    int cols = 16;
    int obs_radius = 2;  // (2r+1)^2 one-hot patch
    // Per-tile placement probability on interior cells.
    std::map<Tile, double> density = {
        {Tile::tree, 0.08},  {Tile::stone, 0.08},      {Tile::iron_ore, 0.04},
        {Tile::gold_ore, 0.02}, {Tile::diamond_ore, 0.01},
    };
    // Top up scarce resources so the active task is completable on every map.
    bool guarantee_task_resources = true;

    int obs_dim() const {
        const int w = 2 * obs_radius + 1;
        return w * w * kNumTiles + kNumItems + 1;
    }
};

enum class ActionKind : uint8_t { move_north = 0, move_south, move_east, move_west, gather, craft };

struct Action {
    ActionKind kind = ActionKind::move_north;
    Item craft_item = Item::planks;  // meaningful only for craft

    bool operator==(const Action&) const = default;
};

// Flat action indexing: 4 moves, gather, then one craft action per
// craftable recipe row (table order).
int action_space_size();
Action action_from_index(int idx);
int action_index(const Action& a);
std::string action_to_string(const Action& a);
Action action_from_string(const std::string& s);

struct EnvState {
    int rows = 0, cols = 0;
    std::vector<Tile> grid;  // row-major
    int agent_row = 0, agent_col = 0;
    std::map<Item, int> inventory;
    std::set<Item> assets;
    int step_count = 0;
    Rng rng_state;           // carried for reproducible auxiliary draws
    double last_reward = 0.0;

    Tile at(int r, int c) const { return grid[static_cast<size_t>(r) * cols + c]; }
    Tile& at(int r, int c) { return grid[static_cast<size_t>(r) * cols + c]; }
    int count(Item it) const {
        auto f = inventory.find(it);
        return f == inventory.end() ? 0 : f->second;
    }
    bool has_asset(Item it) const { return assets.count(it) > 0; }
};

// Fixed-length observation; every entry lies in [0,1].
struct Observation {
    std::vector<double> patch;          // (2r+1)^2 x tiles one-hot, cell-major
    std::vector<double> inventory_vec;  // kNumItems entries
    double last_reward = 0.0;           // scaled into [0,1]

    std::vector<double> to_vector() const;
    static Observation from_vector(const std::vector<double>& v, int obs_radius);
    size_t dim() const { return patch.size() + inventory_vec.size() + 1; }
};

double scale_reward_unit(double raw);     // raw reward -> [0,1] observation entry
double unscale_reward_unit(double unit);

struct StepResult {
    EnvState state;
    Observation obs;
    double reward = 0.0;
    int continue_flag = 1;
};

// Deterministic-given-seed crafting gridworld. The instance itself is
// immutable (config + task); all mutation flows through value-semantics
// EnvState, so instances can be shared across workers while each state is
// owned by exactly one rollout.
class CraftWorld {
public:
    CraftWorld(EnvConfig cfg, TaskSpec task);

    std::pair<EnvState, Observation> reset(uint64_t seed) const;
    StepResult step(const EnvState& state, const Action& action) const;
    Observation observe(const EnvState& state) const;
    bool task_success(const EnvState& state) const;

    const EnvConfig& config() const { return cfg_; }
    const TaskSpec& task() const { return task_; }

private:
    EnvConfig cfg_;
    TaskSpec task_;
};

bool task_success(const EnvState& state, const TaskSpec& task);

uint64_t state_hash(const EnvState& state);

// One line per step: self-describing key=value records.
void dump_trajectory_record(std::ostream& os, int t, uint64_t hash, const Action& a,
                            double reward, int continue_flag);

}  // namespace evoagent::cw
