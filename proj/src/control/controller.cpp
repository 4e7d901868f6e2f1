#include "evoagent/control/controller.hpp"

#include <algorithm>
#include <cmath>

#include "evoagent/core/errors.hpp"
#include "evoagent/core/rng.hpp"

namespace evoagent::ctl {

void ControlConfig::validate() const {
    if (horizon < 1) throw ConfigError("horizon must be >= 1");
    if (candidates < 1) throw ConfigError("candidates must be >= 1");
    if (gamma < 0.0 || gamma > 1.0) throw ConfigError("gamma must lie in [0,1]");
    if (sigma <= 0.0 || sigma > 1.0) throw ConfigError("sigma must lie in (0,1]");
    if (t_max < 1) throw ConfigError("t_max must be >= 1");
}

VerifyResult verify_decision(double cos_sim, int t, const ControlConfig& cfg) {
    return (cos_sim >= cfg.sigma || t >= cfg.t_max) ? VerifyResult::Terminal
                                                    : VerifyResult::N_Terminal;
}

VerifyResult verify(const cw::Observation& obs, const plan::Subtask& subtask, int t,
                    const ControlConfig& cfg) {
    const auto state_emb = plan::embed_state(obs);
    return verify_decision(plan::cosine(state_emb, subtask.embedding), t, cfg);
}

double discounted_score(std::span<const double> rewards, double gamma) {
    double score = 0.0;
    double disc = 1.0;
    for (double r : rewards) {
        score += disc * r;
        disc *= gamma;
    }
    return score;
}

namespace {

// Enumerates index `c` as an H-digit base-A number, first action in the most
// significant digit so candidate order sorts by first action.
std::vector<int> nth_sequence(long c, int horizon, int actions) {
    std::vector<int> seq(static_cast<size_t>(horizon));
    for (int j = horizon - 1; j >= 0; --j) {
        seq[static_cast<size_t>(j)] = static_cast<int>(c % actions);
        c /= actions;
    }
    return seq;
}

}  // namespace

std::vector<int> subtask_action_set(const plan::Subtask& subtask) {
    std::vector<int> actions = {0, 1, 2, 3, 4};  // moves + gather
    if (subtask.kind == plan::SubtaskKind::craft) {
        actions.push_back(cw::action_index(cw::Action{cw::ActionKind::craft, subtask.target}));
    }
    return actions;
}

SelectResult select_actions(const wm::ModelParams& params, std::span<const double> h,
                            std::span<const double> z, const plan::Subtask& subtask,
                            const ControlConfig& cfg, uint64_t seed, int action_space) {
    std::vector<int> all(static_cast<size_t>(action_space));
    for (int a = 0; a < action_space; ++a) all[static_cast<size_t>(a)] = a;
    return select_actions(params, h, z, subtask, cfg, seed, std::span<const int>(all));
}

SelectResult select_actions(const wm::ModelParams& params, std::span<const double> h,
                            std::span<const double> z, const plan::Subtask& subtask,
                            const ControlConfig& cfg, uint64_t seed,
                            std::span<const int> actions) {
    cfg.validate();
    const int action_space = static_cast<int>(actions.size());
    if (action_space < 1) throw ConfigError("empty action space");
    const int H = cfg.horizon;

    // exhaustive when |A|^H fits, uniform shooting otherwise
    double combos = 1.0;
    bool exhaustive = true;
    for (int j = 0; j < H; ++j) {
        combos *= action_space;
        if (combos > cfg.exhaustive_limit) {
            exhaustive = false;
            break;
        }
    }
    std::vector<std::vector<int>> seqs;
    if (exhaustive) {
        const long total = static_cast<long>(combos);
        seqs.reserve(static_cast<size_t>(total));
        for (long c = 0; c < total; ++c) {
            auto seq = nth_sequence(c, H, action_space);
            for (auto& a : seq) a = actions[static_cast<size_t>(a)];
            seqs.push_back(std::move(seq));
        }
    } else {
        Rng rng(derive_seed(seed, "shooting"));
        seqs.resize(static_cast<size_t>(cfg.candidates));
        for (auto& s : seqs) {
            s.resize(static_cast<size_t>(H));
            for (auto& a : s) a = actions[static_cast<size_t>(rng.uniform_int(action_space))];
        }
    }

    Rng roll_rng(derive_seed(seed, "imagination"));
    const auto roll = wm::imagine_batch(params, h, z, seqs, roll_rng);
    const int K = roll.K;

    std::vector<double> scores(static_cast<size_t>(K), 0.0);
    double disc = 1.0;
    for (int j = 0; j < H; ++j) {
        const double* rj = roll.reward.data() + static_cast<size_t>(j) * K;
        if (cfg.alpha != 0.0) {
            const auto decoded = wm::decode_batch(
                params,
                std::span<const double>(roll.h.data() + static_cast<size_t>(j) * K * roll.h_dim,
                                        static_cast<size_t>(K) * roll.h_dim),
                std::span<const double>(roll.z.data() + static_cast<size_t>(j) * K * roll.z_dim,
                                        static_cast<size_t>(K) * roll.z_dim),
                K);
            const int obs_dim = params.dims().obs;
            const int patch_len = obs_dim - cw::kNumItems - 1;
            for (int k = 0; k < K; ++k) {
                const std::span<const double> inv(
                    decoded.data() + static_cast<size_t>(k) * obs_dim + patch_len, cw::kNumItems);
                const auto emb = plan::embed_state_inventory(inv);
                const double bonus = plan::cosine(emb, subtask.embedding);
                scores[static_cast<size_t>(k)] += disc * (rj[k] + cfg.alpha * bonus);
            }
        } else {
            for (int k = 0; k < K; ++k) scores[static_cast<size_t>(k)] += disc * rj[k];
        }
        disc *= cfg.gamma;
    }

    int best = 0;
    for (int k = 1; k < K; ++k) {
        if (scores[static_cast<size_t>(k)] > scores[static_cast<size_t>(best)]) best = k;
    }
    SelectResult out;
    out.actions = seqs[static_cast<size_t>(best)];
    out.score = scores[static_cast<size_t>(best)];
    out.candidate_index = best;
    out.exhaustive = exhaustive;
    return out;
}

EpisodeResult run_subtask_episode(const cw::CraftWorld& env, cw::EnvState& state,
                                  const plan::Subtask& subtask, wm::ModelParams& params,
                                  mep::ExperiencePool& pool, const ControlConfig& cfg,
                                  uint64_t seed, int64_t episode_id, int step_budget,
                                  const std::function<void()>& hook, std::ostream* traj_dump,
                                  int64_t stream_id) {
    cfg.validate();
    EpisodeResult out;
    const int budget = std::min(cfg.t_max, step_budget);
    if (budget <= 0) {
        out.end_reason = EndReason::budget;
        return out;
    }

    const int act_dim = cw::action_space_size();
    const auto& dims = params.dims();
    std::vector<double> hvec(static_cast<size_t>(dims.h), 0.0);
    Rng enc_rng(derive_seed(seed, "episode-encode"));

    const int target_before =
        state.count(subtask.target) + (state.has_asset(subtask.target) ? 1 : 0);

    for (int t = 1; t <= budget; ++t) {
        const cw::Observation obs = env.observe(state);
        const auto obs_vec = obs.to_vector();
        const auto post = wm::encode(params, hvec, obs_vec, enc_rng);

        SelectResult sel;
        if (cfg.subtask_scoped_actions) {
            const auto allowed = subtask_action_set(subtask);
            sel = select_actions(params, hvec, post.z, subtask, cfg,
                                 derive_seed(seed, "step-shooting", static_cast<uint64_t>(t)),
                                 std::span<const int>(allowed));
        } else {
            sel = select_actions(params, hvec, post.z, subtask, cfg,
                                 derive_seed(seed, "step-shooting", static_cast<uint64_t>(t)),
                                 act_dim);
        }
        const cw::Action action = cw::action_from_index(sel.actions.front());
        auto step = env.step(state, action);

        mep::ExperienceEntry entry;
        entry.s = obs;
        entry.a = action;
        entry.r = step.reward;
        entry.s_next = step.obs;
        entry.done = step.continue_flag == 0 ? 1 : 0;
        entry.episode_id = episode_id;
        entry.t = t - 1;
        entry.stream_id = stream_id;
        out.trajectory.push_back(std::move(entry));

        std::vector<double> a_onehot(static_cast<size_t>(act_dim), 0.0);
        a_onehot[static_cast<size_t>(sel.actions.front())] = 1.0;
        hvec = wm::sequence_step(params, hvec, post.z, a_onehot);
        state = std::move(step.state);
        if (traj_dump) {
            cw::dump_trajectory_record(*traj_dump, t - 1, cw::state_hash(state), action,
                                       step.reward, step.continue_flag);
        }

        if (hook) hook();

        double cos_sim;
        if (cfg.verify_latent) {
            // the model's own belief about the new state
            Rng mean_rng(0);
            const auto post_next = wm::encode(params, hvec, step.obs.to_vector(), mean_rng);
            const auto feat = wm::decode(params, hvec, post_next.mu);
            const int patch_len = dims.obs - cw::kNumItems - 1;
            const auto emb = plan::embed_state_inventory(
                std::span<const double>(feat.data() + patch_len, cw::kNumItems));
            cos_sim = plan::cosine(emb, subtask.embedding);
        } else {
            cos_sim = plan::cosine(plan::embed_state(step.obs), subtask.embedding);
        }

        const bool env_done = step.continue_flag == 0;
        const bool by_similarity = cos_sim >= cfg.sigma;
        if (verify_decision(cos_sim, t, cfg) == VerifyResult::Terminal || env_done) {
            const int target_after =
                state.count(subtask.target) + (state.has_asset(subtask.target) ? 1 : 0);
            const bool progress = target_after > target_before;
            out.outcome = (by_similarity && progress) ? Outcome::success : Outcome::timeout;
            out.end_reason = by_similarity ? EndReason::similarity
                                           : (env_done ? EndReason::env_done : EndReason::step_cap);
            out.task_done = env_done;
            break;
        }
        if (t == budget) out.end_reason = EndReason::budget;
    }

    out.completion = mep::completion_ratio(subtask.target, out.trajectory);
    if (!out.trajectory.empty()) {
        pool.append_trajectory(out.trajectory, subtask.id, out.completion);
    }
    return out;
}

}  // namespace evoagent::ctl
