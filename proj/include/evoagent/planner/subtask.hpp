#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "evoagent/craftworld/env.hpp"
#include "evoagent/pool/pool.hpp"

namespace evoagent::plan {

enum class SubtaskKind { gather, craft };

// Unit of planning: one gather/craft goal over the recipe DAG, with a fixed
// indicator embedding over the item basis (target + inputs + tool),
// L2-normalized.
struct Subtask {
    std::string id;
    cw::Item target;
    SubtaskKind kind = SubtaskKind::gather;
    int tier = 0;
    std::vector<double> embedding;  // kNumItems, unit norm
};

class SubtaskRegistry {
public:
    SubtaskRegistry();  // one subtask per recipe row

    const std::vector<Subtask>& all() const { return subtasks_; }
    const Subtask& by_id(const std::string& id) const;          // throws LookupError
    const Subtask* find(const std::string& id) const;           // nullptr if absent
    const Subtask& for_target(cw::Item item) const;             // throws LookupError
    bool contains(const std::string& id) const { return find(id) != nullptr; }

private:
    std::vector<Subtask> subtasks_;
};

// Indicator embedding over (target, inputs, tool); exposed for tests.
std::vector<double> embed_subtask(cw::Item target);

// Held-items indicator from an observation vector's inventory block. Works on
// real observations (exact 0/9..9/9 levels) and decoded ones (thresholded).
std::vector<double> embed_state(const cw::Observation& obs);
std::vector<double> embed_state_inventory(std::span<const double> inventory_block);

double cosine(std::span<const double> a, std::span<const double> b);

}  // namespace evoagent::plan
