#include "evoagent/planner/subtask.hpp"

#include <algorithm>
#include <cmath>

#include "evoagent/core/errors.hpp"
#include "evoagent/kernels/kernels.hpp"

namespace evoagent::plan {

namespace {

void normalize(std::vector<double>& v) {
    const double n = std::sqrt(kern::sum_sq(v.data(), v.size()));
    if (n > 0.0) kern::scale(v.data(), 1.0 / n, v.size());
}

}  // namespace

std::vector<double> embed_subtask(cw::Item target) {
    std::vector<double> v(cw::kNumItems, 0.0);
    v[static_cast<size_t>(target)] = 1.0;
    const auto req = cw::craft_requirements(target);
    for (const auto& [item, cnt] : req.inputs) {
        (void)cnt;
        v[static_cast<size_t>(item)] = 1.0;
    }
    if (req.tool) v[static_cast<size_t>(*req.tool)] = 1.0;
    normalize(v);
    return v;
}

std::vector<double> embed_state_inventory(std::span<const double> inventory_block) {
    if (inventory_block.size() != cw::kNumItems) throw ShapeError("inventory block length mismatch");
    std::vector<double> v(cw::kNumItems, 0.0);
    for (int i = 0; i < cw::kNumItems; ++i) {
        const cw::Item item = static_cast<cw::Item>(i);
        // Soft membership in "held": one unit of a stackable shows as 1/9, a
        // tool as a full bit. Real observations land exactly on {0,1};
        // decoded reconstructions interpolate, which keeps the goal-alignment
        // bonus continuous.
        const double raw = inventory_block[static_cast<size_t>(i)];
        const double member = cw::is_tool(item) ? raw : std::min(raw * 9.0, 1.0);
        v[static_cast<size_t>(i)] = std::clamp(member, 0.0, 1.0);
    }
    normalize(v);
    return v;
}

std::vector<double> embed_state(const cw::Observation& obs) {
    return embed_state_inventory(obs.inventory_vec);
}

double cosine(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ShapeError("cosine dimension mismatch");
    const double na = kern::sum_sq(a.data(), a.size());
    const double nb = kern::sum_sq(b.data(), b.size());
    if (na == 0.0 || nb == 0.0) return 0.0;
    return kern::dot(a.data(), b.data(), a.size()) / std::sqrt(na * nb);
}

SubtaskRegistry::SubtaskRegistry() {
    for (const auto& recipe : cw::recipe_table()) {
        Subtask st;
        st.target = recipe.output;
        st.kind = recipe.craftable ? SubtaskKind::craft : SubtaskKind::gather;
        st.id = std::string(recipe.craftable ? "craft_" : "gather_") +
                std::string(cw::item_name(recipe.output));
        st.tier = static_cast<int>(cw::milestone_chain(recipe.output).size());
        st.embedding = embed_subtask(recipe.output);
        subtasks_.push_back(std::move(st));
    }
}

const Subtask* SubtaskRegistry::find(const std::string& id) const {
    for (const auto& st : subtasks_) {
        if (st.id == id) return &st;
    }
    return nullptr;
}

const Subtask& SubtaskRegistry::by_id(const std::string& id) const {
    if (const Subtask* st = find(id)) return *st;
    throw LookupError("unknown subtask id " + id);
}

const Subtask& SubtaskRegistry::for_target(cw::Item item) const {
    for (const auto& st : subtasks_) {
        if (st.target == item) return st;
    }
    throw LookupError("no subtask for item " + std::string(cw::item_name(item)));
}

}  // namespace evoagent::plan
