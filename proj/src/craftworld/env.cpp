#include "evoagent/craftworld/env.hpp"

#include <algorithm>
#include <cstdio>

#include "evoagent/core/errors.hpp"
#include "evoagent/core/hash.hpp"

namespace evoagent::cw {

namespace {

std::vector<Item> craftable_items() {
    std::vector<Item> v;
    for (const auto& r : recipe_table()) {
        if (r.craftable) v.push_back(r.output);
    }
    return v;
}

const std::vector<Item>& craftables() {
    static const std::vector<Item> v = craftable_items();
    return v;
}

constexpr double kStepCost = -0.01;
constexpr double kTargetReward = 1.0;

}  // namespace

int action_space_size() { return 5 + static_cast<int>(craftables().size()); }

Action action_from_index(int idx) {
    if (idx < 0 || idx >= action_space_size()) throw ValidationError("action index out of range");
    Action a;
    if (idx < 5) {
        a.kind = static_cast<ActionKind>(idx);
    } else {
        a.kind = ActionKind::craft;
        a.craft_item = craftables()[static_cast<size_t>(idx - 5)];
    }
    return a;
}

int action_index(const Action& a) {
    if (a.kind != ActionKind::craft) return static_cast<int>(a.kind);
    const auto& c = craftables();
    for (size_t i = 0; i < c.size(); ++i) {
        if (c[i] == a.craft_item) return 5 + static_cast<int>(i);
    }
    throw ValidationError("craft action for non-craftable item");
}

std::string action_to_string(const Action& a) {
    switch (a.kind) {
        case ActionKind::move_north: return "move_north";
        case ActionKind::move_south: return "move_south";
        case ActionKind::move_east: return "move_east";
        case ActionKind::move_west: return "move_west";
        case ActionKind::gather: return "gather";
        case ActionKind::craft: return "craft(" + std::string(item_name(a.craft_item)) + ")";
    }
    return "?";
}

Action action_from_string(const std::string& s) {
    for (int i = 0; i < action_space_size(); ++i) {
        Action a = action_from_index(i);
        if (action_to_string(a) == s) return a;
    }
    throw ValidationError("unknown action " + s);
}

double scale_reward_unit(double raw) {
    // Raw rewards live in [-0.01, 1]; map onto [0,1].
    return std::clamp((raw + 0.01) / 1.01, 0.0, 1.0);
}

double unscale_reward_unit(double unit) { return unit * 1.01 - 0.01; }

std::vector<double> Observation::to_vector() const {
    std::vector<double> v;
    v.reserve(dim());
    v.insert(v.end(), patch.begin(), patch.end());
    v.insert(v.end(), inventory_vec.begin(), inventory_vec.end());
    v.push_back(last_reward);
    return v;
}

Observation Observation::from_vector(const std::vector<double>& v, int obs_radius) {
    const int w = 2 * obs_radius + 1;
    const size_t patch_len = static_cast<size_t>(w) * w * kNumTiles;
    if (v.size() != patch_len + kNumItems + 1) throw ShapeError("observation vector length mismatch");
    Observation o;
    o.patch.assign(v.begin(), v.begin() + static_cast<long>(patch_len));
    o.inventory_vec.assign(v.begin() + static_cast<long>(patch_len), v.end() - 1);
    o.last_reward = v.back();
    return o;
}

CraftWorld::CraftWorld(EnvConfig cfg, TaskSpec task) : cfg_(std::move(cfg)), task_(std::move(task)) {
    if (cfg_.rows < 7 || cfg_.cols < 7) throw ConfigError("grid must be at least 7x7");
    if (cfg_.obs_radius < 0) throw ConfigError("obs_radius must be >= 0");
    for (const auto& [tile, cnt] : required_tiles(task_)) {
        (void)cnt;
        auto it = cfg_.density.find(tile);
        if (it == cfg_.density.end() || it->second <= 0.0) {
            throw ConfigError("task " + task_.name + " needs tiles of kind " +
                              std::string(tile_name(tile)) + " but density is zero");
        }
    }
}

std::pair<EnvState, Observation> CraftWorld::reset(uint64_t seed) const {
    EnvState s;
    s.rows = cfg_.rows;
    s.cols = cfg_.cols;
    s.grid.assign(static_cast<size_t>(cfg_.rows) * cfg_.cols, Tile::empty);
    s.rng_state = Rng(derive_seed(seed, "craftworld-reset"));

    // Border walls; interior filled by density draws.
    for (int r = 0; r < s.rows; ++r) {
        for (int c = 0; c < s.cols; ++c) {
            if (r == 0 || c == 0 || r == s.rows - 1 || c == s.cols - 1) s.at(r, c) = Tile::wall;
        }
    }
    const std::array<Tile, 5> resource_order = {Tile::tree, Tile::stone, Tile::iron_ore,
                                                Tile::gold_ore, Tile::diamond_ore};
    for (int r = 1; r < s.rows - 1; ++r) {
        for (int c = 1; c < s.cols - 1; ++c) {
            const double u = s.rng_state.uniform01();
            double lo = 0.0;
            for (Tile t : resource_order) {
                auto it = cfg_.density.find(t);
                const double d = it == cfg_.density.end() ? 0.0 : it->second;
                if (u >= lo && u < lo + d) {
                    s.at(r, c) = t;
                    break;
                }
                lo += d;
            }
        }
    }

    if (cfg_.guarantee_task_resources) {
        for (const auto& [tile, need] : required_tiles(task_)) {
            int have = 0;
            for (Tile t : s.grid) have += (t == tile);
            int deficit = need - have;
            int guard = 0;
            while (deficit > 0 && guard < 10000) {
                const int r = 1 + s.rng_state.uniform_int(s.rows - 2);
                const int c = 1 + s.rng_state.uniform_int(s.cols - 2);
                if (s.at(r, c) == Tile::empty) {
                    s.at(r, c) = tile;
                    --deficit;
                }
                ++guard;
            }
            if (deficit > 0) throw ConfigError("could not place required resources; grid too dense");
        }
    }

    // Agent starts on a random empty interior cell.
    int guard = 0;
    for (;;) {
        const int r = 1 + s.rng_state.uniform_int(s.rows - 2);
        const int c = 1 + s.rng_state.uniform_int(s.cols - 2);
        if (s.at(r, c) == Tile::empty) {
            s.agent_row = r;
            s.agent_col = c;
            break;
        }
        if (++guard > 100000) throw ConfigError("no empty cell for agent start");
    }
    s.step_count = 0;
    s.last_reward = 0.0;
    return {s, observe(s)};
}

StepResult CraftWorld::step(const EnvState& state, const Action& action) const {
    StepResult out;
    out.state = state;
    EnvState& s = out.state;

    const int target_before = s.count(task_.target_item) + (s.has_asset(task_.target_item) ? 1 : 0);

    switch (action.kind) {
        case ActionKind::move_north:
        case ActionKind::move_south:
        case ActionKind::move_east:
        case ActionKind::move_west: {
            int dr = 0, dc = 0;
            if (action.kind == ActionKind::move_north) dr = -1;
            if (action.kind == ActionKind::move_south) dr = 1;
            if (action.kind == ActionKind::move_east) dc = 1;
            if (action.kind == ActionKind::move_west) dc = -1;
            const int nr = s.agent_row + dr;
            const int nc = s.agent_col + dc;
            if (nr >= 0 && nr < s.rows && nc >= 0 && nc < s.cols && s.at(nr, nc) != Tile::wall) {
                s.agent_row = nr;
                s.agent_col = nc;
            }
            break;
        }
        case ActionKind::gather: {
            const Tile t = s.at(s.agent_row, s.agent_col);
            for (const auto& r : recipe_table()) {
                if (r.gather_tile && *r.gather_tile == t) {
                    if (!r.gather_tool || s.has_asset(*r.gather_tool)) {
                        s.inventory[r.output] += 1;
                        s.at(s.agent_row, s.agent_col) = Tile::empty;
                    }
                    break;
                }
            }
            break;
        }
        case ActionKind::craft: {
            const Recipe* rec = nullptr;
            for (const auto& r : recipe_table()) {
                if (r.output == action.craft_item && r.craftable) rec = &r;
            }
            if (!rec) throw ValidationError("craft target not in recipe table: " +
                                            std::string(item_name(action.craft_item)));
            bool feasible = true;
            for (const auto& [in, cnt] : rec->inputs) {
                if (s.count(in) < cnt) feasible = false;
            }
            // Re-crafting a held tool is a no-op; assets are a set.
            if (rec->tool && s.has_asset(rec->output)) feasible = false;
            if (feasible) {
                for (const auto& [in, cnt] : rec->inputs) {
                    s.inventory[in] -= cnt;
                    if (s.inventory[in] == 0) s.inventory.erase(in);
                }
                if (rec->tool) {
                    s.assets.insert(rec->output);
                } else {
                    s.inventory[rec->output] += rec->yield;
                }
            }
            break;
        }
        default:
            throw ValidationError("malformed action kind");
    }

    s.step_count = state.step_count + 1;

    const int target_after = s.count(task_.target_item) + (s.has_asset(task_.target_item) ? 1 : 0);
    out.reward = target_after > target_before ? kTargetReward : kStepCost;
    out.continue_flag = evoagent::cw::task_success(s, task_) ? 0 : 1;
    s.last_reward = out.reward;
    out.obs = observe(s);
    return out;
}

Observation CraftWorld::observe(const EnvState& s) const {
    Observation o;
    const int r0 = cfg_.obs_radius;
    const int w = 2 * r0 + 1;
    o.patch.assign(static_cast<size_t>(w) * w * kNumTiles, 0.0);
    for (int dr = -r0; dr <= r0; ++dr) {
        for (int dc = -r0; dc <= r0; ++dc) {
            const int rr = s.agent_row + dr;
            const int cc = s.agent_col + dc;
            Tile t = Tile::wall;  // out of bounds reads as wall
            if (rr >= 0 && rr < s.rows && cc >= 0 && cc < s.cols) t = s.at(rr, cc);
            const size_t cell = static_cast<size_t>(dr + r0) * w + (dc + r0);
            o.patch[cell * kNumTiles + static_cast<size_t>(t)] = 1.0;
        }
    }
    o.inventory_vec.assign(kNumItems, 0.0);
    for (int i = 0; i < kNumItems; ++i) {
        const Item it = static_cast<Item>(i);
        if (is_tool(it)) {
            o.inventory_vec[i] = s.has_asset(it) ? 1.0 : 0.0;
        } else {
            o.inventory_vec[i] = std::min(s.count(it), 9) / 9.0;
        }
    }
    o.last_reward = scale_reward_unit(s.last_reward);
    return o;
}

bool CraftWorld::task_success(const EnvState& state) const {
    return evoagent::cw::task_success(state, task_);
}

bool task_success(const EnvState& state, const TaskSpec& task) {
    return state.count(task.target_item) >= 1 || state.has_asset(task.target_item);
}

uint64_t state_hash(const EnvState& s) {
    Fnv1a h;
    h.update_pod(s.rows);
    h.update_pod(s.cols);
    h.update(s.grid.data(), s.grid.size() * sizeof(Tile));
    h.update_pod(s.agent_row);
    h.update_pod(s.agent_col);
    for (const auto& [item, cnt] : s.inventory) {
        h.update_pod(item);
        h.update_pod(cnt);
    }
    for (const auto& item : s.assets) h.update_pod(item);
    h.update_pod(s.step_count);
    h.update(s.rng_state.words(), 4 * sizeof(uint64_t));
    return h.digest();
}

void dump_trajectory_record(std::ostream& os, int t, uint64_t hash, const Action& a,
                            double reward, int continue_flag) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "t=%d state=%s action=%s reward=%.6f continue=%d", t,
                  hex64(hash).c_str(), action_to_string(a).c_str(), reward, continue_flag);
    os << buf << '\n';
}

}  // namespace evoagent::cw
