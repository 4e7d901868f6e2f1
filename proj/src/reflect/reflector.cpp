#include "evoagent/reflect/reflector.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>

#include "evoagent/core/errors.hpp"
#include "evoagent/kernels/kernels.hpp"

namespace evoagent::refl {

void ReflectorConfig::validate() const {
    const double lsum = lambda1 + lambda2 + lambda3 + lambda4;
    const double esum = eta1 + eta2 + eta3;
    if (std::abs(lsum - 1.0) > 1e-12) throw ConfigError("lambda weights must sum to 1");
    if (std::abs(esum - 1.0) > 1e-12) throw ConfigError("eta weights must sum to 1");
    if (rho0 <= 0.0 || c_s <= 0.0 || c_h <= 0.0) throw ConfigError("rho0, c_s, c_h must be positive");
    if (mu < 0.0) throw ConfigError("mu must be nonnegative");
}

double rho_threshold(double rho0, double c, int k) { return rho0 * std::exp(-c * k); }

double squash(double x) { return x / (1.0 + x); }

wm::ModelParams old_model_view(const wm::ModelParams& params) {
    wm::ModelParams old = params;
    std::memcpy(old.theta().data(), params.theta_old().data(), params.size() * sizeof(double));
    return old;
}

SubtaskScore subtask_score(const plan::Subtask& g, const plan::Subtask& goal,
                           const mep::PoolStats& stats, const wm::ModelParams& params,
                           const std::vector<const mep::ExperienceEntry*>& probe_entries,
                           const ReflectorConfig& cfg) {
    cfg.validate();
    SubtaskScore out;
    out.subtask_id = g.id;
    out.relevance = plan::cosine(g.embedding, goal.embedding);

    if (const auto* st = stats.find(g.id)) {
        out.efficiency = st->efficiency();
        out.completion = st->mean_completion();
    }

    if (!probe_entries.empty()) {
        const wm::ModelParams old = old_model_view(params);
        double kl_sum = 0.0;
        size_t used = 0;
        for (const auto* e : probe_entries) {
            if (used >= static_cast<size_t>(cfg.kl_probe_entries)) break;
            const auto ev_old = wm::eval_entry(old, *e);
            const auto ev_new = wm::eval_entry(params, *e);
            const double kl = wm::gaussian_kl(ev_old.prior_mu, ev_old.prior_sigma,
                                              ev_new.prior_mu, ev_new.prior_sigma);
            if (std::isfinite(kl)) {
                kl_sum += kl;
                ++used;
            }
        }
        if (used > 0) out.importance = squash(kl_sum / static_cast<double>(used));
    }

    out.tau = cfg.lambda1 * out.relevance + cfg.lambda2 * out.efficiency +
              cfg.lambda3 * out.importance + cfg.lambda4 * out.completion;
    return out;
}

std::vector<size_t> select_by_threshold(const std::vector<double>& scores, double rho_k,
                                        bool normalize) {
    std::vector<size_t> out;
    if (scores.empty()) return out;
    double max_score = *std::max_element(scores.begin(), scores.end());
    for (size_t i = 0; i < scores.size(); ++i) {
        double s = scores[i];
        if (normalize) s = max_score > 0.0 ? s / max_score : 0.0;
        if (s >= rho_k) out.push_back(i);
    }
    return out;
}

ExperienceScore experience_score(const mep::ExperienceEntry& e, const wm::ModelParams& params,
                                 const wm::ModelParams& params_old, const ReflectorConfig& cfg) {
    cfg.validate();
    ExperienceScore out;

    const auto ev_new = wm::eval_entry(params, e);
    wm::CriticTransition tr;
    tr.h = ev_new.h0;
    tr.z = ev_new.z0;
    tr.h_next = ev_new.h1;
    tr.z_next = ev_new.z1;
    tr.r = e.r;
    tr.done = e.done;
    out.td_error = std::abs(wm::td_error(params, tr, cfg.gamma_critic));

    const auto g = wm::entry_pred_grad(params, e);
    if (cfg.full_grad_norm) {
        out.grad_norm = std::sqrt(kern::sum_sq(g.data(), g.size()));
    } else {
        const auto span = params.prediction_head_span();
        out.grad_norm = std::sqrt(kern::sum_sq(g.data() + span.offset, span.len));
    }

    const auto ev_old = wm::eval_entry(params_old, e);
    out.info_gain = wm::gaussian_kl(ev_new.prior_mu, ev_new.prior_sigma, ev_old.prior_mu,
                                    ev_old.prior_sigma);

    if (!std::isfinite(out.td_error) || !std::isfinite(out.grad_norm) ||
        !std::isfinite(out.info_gain)) {
        out.valid = false;
        out.epsilon = 0.0;
        return out;
    }
    const double t1 = cfg.normalize_scores ? squash(out.td_error) : out.td_error;
    const double t2 = cfg.normalize_scores ? squash(out.grad_norm) : out.grad_norm;
    const double t3 = cfg.normalize_scores ? squash(out.info_gain) : out.info_gain;
    out.epsilon = cfg.eta1 * t1 + cfg.eta2 * t2 + cfg.eta3 * t3;
    return out;
}

std::vector<SelectedExperience> select_experiences(const std::vector<double>& epsilons, int k,
                                                   const ReflectorConfig& cfg) {
    const double rho_k = rho_threshold(cfg.rho0, cfg.c_h, k);
    const auto idx = select_by_threshold(epsilons, rho_k, cfg.normalize_scores);
    std::vector<SelectedExperience> out;
    if (idx.empty()) return out;
    double max_eps = 0.0;
    for (size_t i : idx) max_eps = std::max(max_eps, epsilons[i]);
    if (max_eps <= 0.0) return out;
    out.reserve(idx.size());
    for (size_t i : idx) {
        SelectedExperience sel;
        sel.index = i;
        sel.epsilon = epsilons[i];
        sel.weight = epsilons[i] / max_eps;
        out.push_back(sel);
    }
    return out;
}

std::vector<double> fisher_diag(const wm::ModelParams& params,
                                const std::vector<const mep::ExperienceEntry*>& entries) {
    std::vector<double> fisher(params.size(), 0.0);
    if (entries.empty()) return fisher;
    const double invn = 1.0 / static_cast<double>(entries.size());
    for (const auto* e : entries) {
        const auto g = wm::entry_pred_grad(params, *e);
        for (size_t i = 0; i < fisher.size(); ++i) fisher[i] += invn * g[i] * g[i];
    }
    return fisher;
}

ReflectUpdateResult reflect_update(wm::ModelParams& params,
                                   const std::vector<const mep::ExperienceEntry*>& entries,
                                   const std::vector<double>& weights,
                                   const ReflectorConfig& cfg) {
    cfg.validate();
    ReflectUpdateResult out;
    if (entries.empty()) {
        std::fprintf(stderr, "[reflector] empty experience selection; update skipped\n");
        return out;
    }
    if (entries.size() != weights.size()) throw ShapeError("weights/entries length mismatch");

    std::vector<double> g(params.size(), 0.0);
    for (size_t j = 0; j < entries.size(); ++j) {
        const auto ev = wm::eval_entry(params, *entries[j]);
        out.pred_loss += weights[j] * ev.pred_loss;
        const auto gj = wm::entry_pred_grad(params, *entries[j]);
        kern::axpy(weights[j], gj.data(), g.data(), g.size());
    }

    const auto theta = params.theta();
    const auto theta_old = params.theta_old();
    const auto fisher = params.fisher();
    if (cfg.mu != 0.0) {
        for (size_t i = 0; i < g.size(); ++i) {
            const double d = theta[i] - theta_old[i];
            out.reg_loss += cfg.mu * fisher[i] * d * d;
            g[i] += cfg.mu * 2.0 * fisher[i] * d;
        }
    }

    out.grad_norm = std::sqrt(kern::sum_sq(g.data(), g.size()));
    const double bound = cfg.clip_ratio * std::sqrt(kern::sum_sq(theta.data(), theta.size()));
    double scale = 1.0;
    if (out.grad_norm > bound) scale = out.grad_norm > 0.0 ? bound / out.grad_norm : 0.0;
    out.applied_norm = out.grad_norm * scale;
    kern::axpy(-cfg.reflect_lr * scale, g.data(), params.theta().data(), params.size());
    out.applied = true;
    return out;
}

CurriculumRound reflect(mep::ExperiencePool& pool, const plan::Subtask& goal,
                        wm::ModelParams& params, const ReflectorConfig& cfg, int k,
                        const plan::SubtaskRegistry& registry,
                        const std::string& most_recent_subtask_id) {
    cfg.validate();
    CurriculumRound round;
    round.k = k;
    round.rho_subtask = rho_threshold(cfg.rho0, cfg.c_s, k);
    round.rho_exp = rho_threshold(cfg.rho0, cfg.c_h, k);

    if (pool.size() == 0) return round;

    // stage 1 over subtasks present in the pool
    std::vector<const plan::Subtask*> candidates;
    for (const auto& [id, st] : pool.stats().by_subtask) {
        (void)st;
        if (const auto* g = registry.find(id)) candidates.push_back(g);
    }
    std::vector<double> taus;
    for (const auto* g : candidates) {
        const auto probe = pool.recent_by_subtask(g->id, static_cast<size_t>(cfg.kl_probe_entries));
        auto score = subtask_score(*g, goal, pool.stats(), params, probe, cfg);
        taus.push_back(score.tau);
        round.subtask_scores.push_back(std::move(score));
    }

    std::vector<std::string> selected_ids;
    if (!cfg.stage1_enabled) {
        for (const auto* g : candidates) selected_ids.push_back(g->id);  // stage-2-only ablation
    } else {
        for (size_t i : select_by_threshold(taus, round.rho_subtask, cfg.normalize_scores)) {
            selected_ids.push_back(candidates[i]->id);
        }
        if (selected_ids.empty() && registry.contains(most_recent_subtask_id)) {
            selected_ids.push_back(most_recent_subtask_id);
            round.fallback_used = true;
        }
    }
    round.selected_subtasks = selected_ids;

    // stage 2 over the selected subtasks' recent entries
    std::vector<const mep::ExperienceEntry*> pool_candidates;
    for (const auto& id : selected_ids) {
        const auto recent = pool.recent_by_subtask(id, cfg.max_entries_per_subtask);
        pool_candidates.insert(pool_candidates.end(), recent.begin(), recent.end());
    }
    round.candidates_scored = pool_candidates.size();
    if (pool_candidates.empty()) return round;

    // refresh the critic so TD errors track the current value estimates
    std::vector<wm::CriticTransition> transitions;
    transitions.reserve(pool_candidates.size());
    for (const auto* e : pool_candidates) transitions.push_back(wm::make_critic_transition(params, *e));
    for (int i = 0; i < cfg.critic_steps; ++i) {
        wm::critic_update(params, transitions, cfg.gamma_critic, cfg.reflect_lr);
    }

    std::vector<const mep::ExperienceEntry*> selected_entries;
    std::vector<double> weights;
    if (!cfg.stage2_enabled) {
        selected_entries = pool_candidates;  // stage-1-only ablation: uniform weights
        weights.assign(selected_entries.size(), 1.0);
        round.max_weight = selected_entries.empty() ? 0.0 : 1.0;
    } else {
        const wm::ModelParams old = old_model_view(params);
        std::vector<double> epsilons;
        std::vector<const mep::ExperienceEntry*> scored;
        for (const auto* e : pool_candidates) {
            const auto score = experience_score(*e, params, old, cfg);
            if (!score.valid) {
                ++round.entries_skipped;
                continue;
            }
            epsilons.push_back(score.epsilon);
            scored.push_back(e);
            pool.set_score_cache(e->subtask_id, e->episode_id, e->t, score.epsilon);
        }
        for (const auto& sel : select_experiences(epsilons, k, cfg)) {
            selected_entries.push_back(scored[sel.index]);
            weights.push_back(sel.weight);
            round.max_weight = std::max(round.max_weight, sel.weight);
        }
    }
    round.experiences_selected = selected_entries.size();
    round.selected_entries.reserve(selected_entries.size());
    for (const auto* e : selected_entries) round.selected_entries.push_back(*e);

    ReflectorConfig update_cfg = cfg;
    if (!cfg.continual_wm) update_cfg.mu = 0.0;  // anchor off without the continual WM
    const auto upd = reflect_update(params, selected_entries, weights, update_cfg);
    round.pred_loss = upd.pred_loss;
    round.reg_loss = upd.reg_loss;
    round.updated = upd.applied;
    return round;
}

}  // namespace evoagent::refl
