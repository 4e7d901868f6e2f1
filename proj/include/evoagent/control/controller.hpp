#pragma once

#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "evoagent/craftworld/env.hpp"
#include "evoagent/planner/subtask.hpp"
#include "evoagent/pool/pool.hpp"
#include "evoagent/wm/model.hpp"

namespace evoagent::ctl {

struct ControlConfig {
    int horizon = 15;          // imagination horizon H
    int candidates = 64;       // sampled sequences K
    double gamma = 0.1;        // discount for sequence scoring
    double sigma = 0.9;        // self-verification similarity threshold
    int t_max = 400;           // step cap per subtask episode
    double alpha = 0.5;        // goal-alignment bonus weight
    bool verify_latent = false;  // verify on decoded model features instead of raw obs
    // Restrict candidate sequences to the active subtask's primitive
    // vocabulary (moves + gather, plus the subtask's own craft action).
    bool subtask_scoped_actions = false;
    int exhaustive_limit = 4096;
    double gamma_critic = 0.95;

    void validate() const;
};

enum class VerifyResult { Terminal, N_Terminal };

// The bare termination rule: similarity threshold or step cap.
VerifyResult verify_decision(double cos_sim, int t, const ControlConfig& cfg);

// Termination check on a live observation against the subtask embedding.
VerifyResult verify(const cw::Observation& obs, const plan::Subtask& subtask, int t,
                    const ControlConfig& cfg);

double discounted_score(std::span<const double> rewards, double gamma);

struct SelectResult {
    std::vector<int> actions;  // length H
    double score = 0.0;
    int candidate_index = 0;
    bool exhaustive = false;
};

// Shooting over the learned model: samples K uniform candidate sequences
// (exhaustive enumeration when |A|^H fits the limit), scores each by the
// discounted predicted reward plus the goal-alignment bonus, and returns the
// argmax (lowest candidate index on exact ties).
SelectResult select_actions(const wm::ModelParams& params, std::span<const double> h,
                            std::span<const double> z, const plan::Subtask& subtask,
                            const ControlConfig& cfg, uint64_t seed, int action_space);
// Same, over an explicit admissible action set (environment indices).
SelectResult select_actions(const wm::ModelParams& params, std::span<const double> h,
                            std::span<const double> z, const plan::Subtask& subtask,
                            const ControlConfig& cfg, uint64_t seed,
                            std::span<const int> actions);

// The subtask's primitive vocabulary: moves and gather, plus its craft action
// for craft subtasks.
std::vector<int> subtask_action_set(const plan::Subtask& subtask);

enum class Outcome { success, timeout };
enum class EndReason { similarity, step_cap, env_done, budget };

struct EpisodeResult {
    std::vector<mep::ExperienceEntry> trajectory;
    Outcome outcome = Outcome::timeout;
    EndReason end_reason = EndReason::step_cap;
    double completion = 0.0;
    bool task_done = false;  // the enclosing task target was acquired
};

// Receding-horizon episode for one subtask: encode, select, execute the first
// action, verify; on terminal, stamp the completion ratio and append the
// trajectory to the pool. step_budget caps steps below cfg.t_max when the
// enclosing episode is nearly out of budget; the hook (when set) runs after
// every environment step and may train on the pool.
EpisodeResult run_subtask_episode(const cw::CraftWorld& env, cw::EnvState& state,
                                  const plan::Subtask& subtask, wm::ModelParams& params,
                                  mep::ExperiencePool& pool, const ControlConfig& cfg,
                                  uint64_t seed, int64_t episode_id, int step_budget,
                                  const std::function<void()>& hook = nullptr,
                                  std::ostream* traj_dump = nullptr, int64_t stream_id = -1);

}  // namespace evoagent::ctl
