#pragma once

#include <string>
#include <vector>

#include "evoagent/planner/subtask.hpp"
#include "evoagent/pool/pool.hpp"
#include "evoagent/wm/model.hpp"

namespace evoagent::refl {

struct ReflectorConfig {
    double lambda1 = 0.25, lambda2 = 0.25, lambda3 = 0.25, lambda4 = 0.25;
    double eta1 = 1.0 / 3, eta2 = 1.0 / 3, eta3 = 1.0 / 3;
    double rho0 = 5e-3;
    double c_s = 0.3;
    double c_h = 0.5;
    double mu = 0.1;
    bool normalize_scores = true;
    bool stage1_enabled = true;
    bool stage2_enabled = true;
    bool continual_wm = true;  // Fisher anchor active in reflect_update
    size_t max_entries_per_subtask = 256;  // stage-2 candidate cap per subtask
    int kl_probe_entries = 32;             // stage-1 importance estimate cap
    bool full_grad_norm = false;           // score over all params, not just heads
    double reflect_lr = 1e-3;
    double clip_ratio = 0.3;
    double gamma_critic = 0.95;
    int critic_steps = 4;

    void validate() const;  // lambda and eta sums must be 1 within 1e-12
};

// rho_k = rho0 * exp(-c * k)
double rho_threshold(double rho0, double c, int k);

// x / (1 + x); maps unbounded nonnegative terms into [0,1).
double squash(double x);

// Read-only view of the archived model: a copy with theta <- theta_old.
wm::ModelParams old_model_view(const wm::ModelParams& params);

struct SubtaskScore {
    std::string subtask_id;
    double relevance = 0.0;   // cos(Emb_g, Emb_goal)
    double efficiency = 0.0;  // L_suc / L_all
    double importance = 0.0;  // squashed mean KL(old || new) over probe entries
    double completion = 0.0;  // mean episode completion
    double tau = 0.0;
};

SubtaskScore subtask_score(const plan::Subtask& g, const plan::Subtask& goal,
                           const mep::PoolStats& stats, const wm::ModelParams& params,
                           const std::vector<const mep::ExperienceEntry*>& probe_entries,
                           const ReflectorConfig& cfg);

// Thresholds normalized scores (divided by the round max when
// normalize_scores) at rho_k; returns selected indices in input order.
std::vector<size_t> select_by_threshold(const std::vector<double>& scores, double rho_k,
                                        bool normalize);

struct ExperienceScore {
    double td_error = 0.0;    // |delta_TD|
    double grad_norm = 0.0;   // prediction-loss gradient norm (head-restricted)
    double info_gain = 0.0;   // KL(new || old) prior predictions
    double epsilon = 0.0;
    bool valid = true;        // false when any term is non-finite
};

ExperienceScore experience_score(const mep::ExperienceEntry& e, const wm::ModelParams& params,
                                 const wm::ModelParams& params_old, const ReflectorConfig& cfg);

struct SelectedExperience {
    size_t index = 0;     // into the scored candidate list
    double epsilon = 0.0;
    double weight = 0.0;  // epsilon / max selected epsilon
};

std::vector<SelectedExperience> select_experiences(const std::vector<double>& epsilons, int k,
                                                   const ReflectorConfig& cfg);

// F_i = mean over entries of the squared per-parameter prediction gradient.
std::vector<double> fisher_diag(const wm::ModelParams& params,
                                const std::vector<const mep::ExperienceEntry*>& entries);

struct ReflectUpdateResult {
    double pred_loss = 0.0;  // sum_j w_j L_pred(h_j)
    double reg_loss = 0.0;   // mu * Omega(theta, theta_old)
    double grad_norm = 0.0;
    double applied_norm = 0.0;
    bool applied = false;
};

// One clipped gradient step on the weighted prediction loss plus the
// quadratic Fisher penalty. Empty selections are a warning-level no-op.
ReflectUpdateResult reflect_update(wm::ModelParams& params,
                                   const std::vector<const mep::ExperienceEntry*>& entries,
                                   const std::vector<double>& weights,
                                   const ReflectorConfig& cfg);

struct CurriculumRound {
    int k = 0;
    double rho_subtask = 0.0;
    double rho_exp = 0.0;
    std::vector<SubtaskScore> subtask_scores;            // every candidate
    std::vector<std::string> selected_subtasks;
    size_t candidates_scored = 0;
    size_t experiences_selected = 0;
    size_t entries_skipped = 0;  // non-finite scores
    double max_weight = 0.0;
    double pred_loss = 0.0;
    double reg_loss = 0.0;
    bool fallback_used = false;
    bool updated = false;
    // Copies of the selected experiences; task boundaries estimate the Fisher
    // diagonal from the final round's selection.
    std::vector<mep::ExperienceEntry> selected_entries;
};

// Full reflection pass: stage-1 subtask selection, stage-2 experience
// selection, critic refresh, then the world-model update. When stage 1
// selects nothing from a non-empty pool, the caller-provided most recent
// subtask is used instead.
CurriculumRound reflect(mep::ExperiencePool& pool, const plan::Subtask& goal,
                        wm::ModelParams& params, const ReflectorConfig& cfg, int k,
                        const plan::SubtaskRegistry& registry,
                        const std::string& most_recent_subtask_id);

}  // namespace evoagent::refl
