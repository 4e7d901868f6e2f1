#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "evoagent/control/controller.hpp"
#include "evoagent/craftworld/env.hpp"
#include "evoagent/planner/llm_client.hpp"
#include "evoagent/reflect/reflector.hpp"
#include "evoagent/wm/model.hpp"

namespace evoagent::harness {

struct Toggles {
    bool planner = true;
    bool controller = true;
    bool reflector_stage1 = true;
    bool reflector_stage2 = true;
    bool continual_wm = true;
};

struct ModelConfig {
    int h_dim = 64;
    int z_dim = 16;
    int enc_hidden = 64;
    int dyn_hidden = 64;
    int dec_hidden = 64;
    double init_scale = 1.0;
    double lr = 1e-3;  // desk override; the reference value 4e-5 stays available
    double grad_clip = 0.3;
    std::string optimizer = "sgd";  // sgd | laprop
    double beta1 = 0.9;
    double beta2 = 0.99;
    wm::LossScales scales;
    double unimix = 0.01;  // accepted for config compatibility; inert with Gaussian latents
};

// Flat, typed key-value config with one section per module; unknown keys are
// load errors. [env.<Task>] sections override [env] per task.
struct RunConfig {
    std::vector<std::string> tasks = {"Wood"};
    std::vector<uint64_t> seeds = {0};
    int episodes_per_task = 50;
    int episode_step_budget = 1200;
    int train_every = 16;
    int train_steps = 1;
    // Environment steps of exploratory experience collected into the pool
    // before the first controlled episode (gather-heavy random walk).
    int prefill_steps = 0;
    int train_batch = 8;
    int train_length = 16;
    bool eval_after_each_task = false;
    int eval_episodes = 10;
    int workers = 1;
    std::string output_dir = "out";
    bool dump_trajectories = false;
    std::string save_model;  // optional snapshot path prefix
    std::string save_pool;

    Toggles toggles;
    cw::EnvConfig env;
    std::map<std::string, cw::EnvConfig> env_overrides;  // per task name
    ModelConfig model;
    ctl::ControlConfig control;
    refl::ReflectorConfig reflector;
    size_t pool_capacity = 100000;
    plan::LlmConfig llm;

    void validate() const;
    const cw::EnvConfig& env_for(const std::string& task_name) const;

    // Canonical serialization: every field, fixed order. Round-trips through
    // parse_config and feeds the manifest hash.
    std::string canonical_string() const;
    uint64_t config_hash() const;
};

RunConfig parse_config_text(const std::string& text);
RunConfig load_config(const std::string& path);
void write_config(const RunConfig& cfg, const std::string& path);

}  // namespace evoagent::harness
