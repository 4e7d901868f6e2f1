#include "evoagent/harness/runner.hpp"

#include <atomic>
#include <cstdlib>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <thread>

#include "evoagent/control/controller.hpp"
#include "evoagent/core/errors.hpp"
#include "evoagent/core/rng.hpp"
#include "evoagent/planner/llm_client.hpp"
#include "evoagent/planner/planner.hpp"
#include "evoagent/reflect/reflector.hpp"

namespace evoagent::harness {

namespace {

struct SeedOutcome {
    std::vector<TaskSeedMetrics> metrics;
    std::vector<EvalMetrics> eval;
    std::vector<RoundRecord> rounds;
    std::vector<LossRecord> losses;
};

struct TaskCounters {
    int64_t episodes = 0;
    int64_t successes = 0;
    int64_t steps = 0;
    int64_t success_steps = 0;
};

refl::ReflectorConfig runtime_reflector(const RunConfig& cfg) {
    refl::ReflectorConfig rc = cfg.reflector;
    rc.stage1_enabled = cfg.toggles.reflector_stage1;
    rc.stage2_enabled = cfg.toggles.reflector_stage2;
    rc.continual_wm = cfg.toggles.continual_wm;
    rc.gamma_critic = cfg.control.gamma_critic;
    return rc;
}

// Planner-guided execution without the learned controller: craft subtasks
// issue the craft action directly (no navigation needed), gather subtasks
// walk at random. Stand-in for the paper's policy-only ablation rows.
ctl::EpisodeResult scripted_subtask_episode(const cw::CraftWorld& env, cw::EnvState& state,
                                            const plan::Subtask& subtask,
                                            mep::ExperiencePool& pool,
                                            const ctl::ControlConfig& cfg, uint64_t seed,
                                            int64_t episode_id, int step_budget,
                                            std::ostream* traj_dump, int64_t stream_id) {
    ctl::EpisodeResult out;
    const int budget = std::min(cfg.t_max, step_budget);
    if (budget <= 0) {
        out.end_reason = ctl::EndReason::budget;
        return out;
    }
    Rng rng(derive_seed(seed, "scripted"));
    const int target_before =
        state.count(subtask.target) + (state.has_asset(subtask.target) ? 1 : 0);

    for (int t = 1; t <= budget; ++t) {
        const cw::Observation obs = env.observe(state);
        cw::Action action;
        if (subtask.kind == plan::SubtaskKind::craft) {
            action = cw::Action{cw::ActionKind::craft, subtask.target};
        } else {
            const int pick = rng.uniform_int(5);  // four moves + gather
            action = cw::action_from_index(pick);
        }
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
        state = std::move(step.state);
        if (traj_dump) {
            cw::dump_trajectory_record(*traj_dump, t - 1, cw::state_hash(state), action,
                                       step.reward, step.continue_flag);
        }

        const double cos_sim = plan::cosine(plan::embed_state(step.obs), subtask.embedding);
        const bool by_similarity = cos_sim >= cfg.sigma;
        const bool env_done = step.continue_flag == 0;
        if (ctl::verify_decision(cos_sim, t, cfg) == ctl::VerifyResult::Terminal || env_done) {
            const int target_after =
                state.count(subtask.target) + (state.has_asset(subtask.target) ? 1 : 0);
            out.outcome = (by_similarity && target_after > target_before)
                              ? ctl::Outcome::success
                              : ctl::Outcome::timeout;
            out.end_reason = by_similarity
                                 ? ctl::EndReason::similarity
                                 : (env_done ? ctl::EndReason::env_done : ctl::EndReason::step_cap);
            out.task_done = env_done;
            break;
        }
        if (t == budget) out.end_reason = ctl::EndReason::budget;
    }
    out.completion = mep::completion_ratio(subtask.target, out.trajectory);
    if (!out.trajectory.empty()) pool.append_trajectory(out.trajectory, subtask.id, out.completion);
    return out;
}

struct SeedRunState {
    wm::ModelParams params;
    wm::Optimizer optimizer;
    mep::ExperiencePool pool;
    int64_t episode_id = 0;
    int64_t stream_counter = 0;
    int64_t global_step = 0;
    int reflect_k = 0;
    std::vector<mep::ExperienceEntry> last_selection;

    SeedRunState(wm::ModelParams p, wm::Optimizer opt, size_t capacity)
        : params(std::move(p)), optimizer(std::move(opt)), pool(capacity) {}
};

// One task episode: plan, run subtask episodes, replan on failure, reflect at
// subtask boundaries. Returns success and steps used. learn=false freezes
// the model (no hook, no reflection) for evaluation passes.
struct EpisodeStats {
    bool success = false;
    int64_t steps = 0;
};

EpisodeStats run_task_episode(const RunConfig& cfg, const cw::CraftWorld& env,
                              const cw::TaskSpec& task, const plan::SubtaskRegistry& registry,
                              SeedRunState& st, mep::ExperiencePool& pool, uint64_t seed,
                              int phase, int episode_index, bool learn, SeedOutcome* out,
                              uint64_t run_seed, std::ostream* traj_dump = nullptr) {
    EpisodeStats stats;
    auto [state, obs0] = env.reset(derive_seed(seed, "reset", static_cast<uint64_t>(phase),
                                               static_cast<uint64_t>(episode_index)));
    const long budget = cfg.episode_step_budget;
    long used = 0;

    std::function<void()> hook;
    if (learn && cfg.toggles.controller && cfg.train_every > 0) {
        hook = [&]() {
            ++st.global_step;
            if (st.global_step % cfg.train_every != 0) return;
            for (int i = 0; i < cfg.train_steps; ++i) {
                try {
                    const auto batch = pool.sample_windows(
                        cfg.train_batch, cfg.train_length,
                        derive_seed(run_seed, "train", static_cast<uint64_t>(st.global_step),
                                    static_cast<uint64_t>(i)));
                    const auto tr = st.optimizer.step(st.params, batch, cfg.model.scales);
                    if (out) {
                        out->losses.push_back(LossRecord{run_seed, st.global_step, tr.breakdown});
                    }
                } catch (const BatchError&) {
                    return;  // not enough long episodes yet
                }
            }
        };
    }

    if (!cfg.toggles.planner && !cfg.toggles.controller) {
        // control-free random policy
        Rng rng(derive_seed(seed, "random", static_cast<uint64_t>(phase),
                            static_cast<uint64_t>(episode_index)));
        while (used < budget && !env.task_success(state)) {
            const auto action = cw::action_from_index(rng.uniform_int(cw::action_space_size()));
            auto step = env.step(state, action);
            state = std::move(step.state);
            if (traj_dump) {
                cw::dump_trajectory_record(*traj_dump, static_cast<int>(used), cw::state_hash(state),
                                           action, step.reward, step.continue_flag);
            }
            ++used;
        }
        stats.success = env.task_success(state);
        stats.steps = used;
        return stats;
    }

    const int64_t stream_id = st.stream_counter++;
    const plan::Subtask& goal = registry.for_target(task.target_item);
    const refl::ReflectorConfig rcfg = runtime_reflector(cfg);
    const bool reflect_on = learn && (cfg.toggles.reflector_stage1 || cfg.toggles.reflector_stage2);

    plan::Plan active;
    size_t pos = 0;
    std::map<std::string, int> fail_counts;
    int subtask_counter = 0;

    auto fresh_plan = [&]() {
        if (cfg.llm.enabled) {
            std::vector<std::string> failures;
            for (const auto& [id, n] : fail_counts) {
                if (n > 0) failures.push_back(id);
            }
            if (auto proposed = plan::llm_propose(task, state, failures, cfg.llm, registry)) {
                return *proposed;
            }
        }
        return plan::make_plan(state, task, pool.stats(), registry);
    };

    if (cfg.toggles.planner) {
        active = fresh_plan();
    } else {
        // controller without decomposition: the task target is the one subtask
        active.task = task;
        active.subtask_ids = {goal.id};
    }

    while (used < budget && !env.task_success(state)) {
        if (pos >= active.subtask_ids.size()) {
            if (!cfg.toggles.planner) {
                pos = 0;  // keep chasing the terminal subtask
            } else {
                active = fresh_plan();
                pos = 0;
                if (active.empty()) break;
            }
        }
        const plan::Subtask& sub = registry.by_id(active.subtask_ids[pos]);
        const uint64_t ep_seed = derive_seed(seed, "subtask", static_cast<uint64_t>(phase),
                                             static_cast<uint64_t>(episode_index * 1024 + subtask_counter));
        ++subtask_counter;

        ctl::EpisodeResult res;
        if (cfg.toggles.controller) {
            res = ctl::run_subtask_episode(env, state, sub, st.params, pool, cfg.control, ep_seed,
                                           st.episode_id++, static_cast<int>(budget - used), hook,
                                           traj_dump, stream_id);
        } else {
            res = scripted_subtask_episode(env, state, sub, pool, cfg.control, ep_seed,
                                           st.episode_id++, static_cast<int>(budget - used),
                                           traj_dump, stream_id);
        }
        used += static_cast<long>(res.trajectory.size());

        if (reflect_on && !res.trajectory.empty()) {
            auto round = refl::reflect(pool, goal, st.params, rcfg, st.reflect_k++, registry,
                                       sub.id);
            if (out) {
                RoundRecord rec;
                rec.task = task.name;
                rec.seed = run_seed;
                rec.k = round.k;
                rec.rho_subtask = round.rho_subtask;
                rec.rho_exp = round.rho_exp;
                rec.subtasks_selected = static_cast<int64_t>(round.selected_subtasks.size());
                rec.experiences_selected = static_cast<int64_t>(round.experiences_selected);
                rec.entries_skipped = static_cast<int64_t>(round.entries_skipped);
                rec.pred_loss = round.pred_loss;
                rec.reg_loss = round.reg_loss;
                rec.max_weight = round.max_weight;
                rec.fallback_used = round.fallback_used;
                out->rounds.push_back(std::move(rec));
            }
            if (!round.selected_entries.empty()) st.last_selection = std::move(round.selected_entries);
        }

        if (env.task_success(state)) break;
        if (res.outcome == ctl::Outcome::success) {
            fail_counts[sub.id] = 0;
            ++pos;
        } else if (cfg.toggles.planner) {
            fail_counts[sub.id] += 1;
            active = plan::replan_on_failure(active, sub, state, pool.stats(), registry);
            pos = 0;
        } else {
            pos = 0;
        }
        if (res.trajectory.empty()) break;  // out of budget
    }

    stats.success = env.task_success(state);
    stats.steps = used;
    return stats;
}

// Gather-heavy random walk filling the pool before any controlled episode;
// gives the world model informative transitions from step one.
void prefill_pool(const RunConfig& cfg, const cw::CraftWorld& env,
                  const plan::SubtaskRegistry& registry, SeedRunState& st, uint64_t seed) {
    if (cfg.prefill_steps <= 0 || !cfg.toggles.controller) return;
    const auto& goal = registry.for_target(env.task().target_item);
    Rng rng(derive_seed(seed, "prefill"));
    int collected = 0;
    int reset_idx = 0;
    while (collected < cfg.prefill_steps) {
        auto [state, obs0] = env.reset(derive_seed(seed, "prefill-reset", static_cast<uint64_t>(reset_idx++)));
        std::vector<mep::ExperienceEntry> traj;
        const int chunk = std::min(cfg.prefill_steps - collected, 150);
        for (int t = 0; t < chunk; ++t) {
            cw::Action action;
            const double u = rng.uniform01();
            if (u < 0.4) {
                action = cw::Action{cw::ActionKind::gather};
            } else if (u < 0.8) {
                action = cw::action_from_index(rng.uniform_int(4));
            } else {
                action = cw::action_from_index(5 + rng.uniform_int(cw::action_space_size() - 5));
            }
            const auto obs = env.observe(state);
            auto step = env.step(state, action);
            mep::ExperienceEntry e;
            e.s = obs;
            e.a = action;
            e.r = step.reward;
            e.s_next = step.obs;
            e.done = step.continue_flag == 0 ? 1 : 0;
            e.episode_id = st.episode_id;
            e.t = t;
            e.stream_id = st.stream_counter;
            traj.push_back(std::move(e));
            state = std::move(step.state);
            ++collected;
            if (step.continue_flag == 0) break;
        }
        const double completion = mep::completion_ratio(goal.target, traj);
        st.pool.append_trajectory(traj, goal.id, completion);
        ++st.episode_id;
        ++st.stream_counter;
    }
}

SeedOutcome run_seed(const RunConfig& cfg, uint64_t seed) {
    SeedOutcome out;
    plan::SubtaskRegistry registry;

    wm::ModelDims dims;
    dims.obs = cfg.env.obs_dim();
    dims.h = cfg.model.h_dim;
    dims.z = cfg.model.z_dim;
    dims.act = cw::action_space_size();
    dims.enc_hidden = cfg.model.enc_hidden;
    dims.dyn_hidden = cfg.model.dyn_hidden;
    dims.dec_hidden = cfg.model.dec_hidden;

    const auto opt_kind = cfg.model.optimizer == "laprop" ? wm::Optimizer::Kind::laprop
                                                           : wm::Optimizer::Kind::sgd;
    SeedRunState st(wm::ModelParams::init(dims, derive_seed(seed, "wm-init"), cfg.model.init_scale),
                    wm::Optimizer(opt_kind, cfg.model.lr, cfg.model.grad_clip, cfg.model.beta1,
                                  cfg.model.beta2),
                    cfg.pool_capacity);

    for (size_t phase = 0; phase < cfg.tasks.size(); ++phase) {
        const auto task = cw::task_by_name(cfg.tasks[phase]);
        const cw::CraftWorld env(cfg.env_for(task.name), task);
        if (phase == 0) prefill_pool(cfg, env, registry, st, seed);

        // task boundary: anchor the continual regularizer on the outgoing task
        if (phase > 0 && cfg.toggles.continual_wm) {
            std::vector<const mep::ExperienceEntry*> anchor;
            anchor.reserve(st.last_selection.size());
            for (const auto& e : st.last_selection) anchor.push_back(&e);
            st.params.set_fisher(refl::fisher_diag(st.params, anchor));
            st.params.archive_theta_old();
        }

        TaskCounters counters;
        for (int ep = 0; ep < cfg.episodes_per_task; ++ep) {
            std::ofstream traj;
            if (cfg.dump_trajectories) {
                const auto dir = std::filesystem::path(cfg.output_dir) / "trajectories";
                std::filesystem::create_directories(dir);
                traj.open(dir / ("seed" + std::to_string(seed) + "-" + task.name + "-ep" +
                                 std::to_string(ep) + ".txt"));
            }
            const auto stats = run_task_episode(cfg, env, task, registry, st, st.pool, seed,
                                                static_cast<int>(phase), ep, true, &out, seed,
                                                traj.is_open() ? &traj : nullptr);
            counters.episodes += 1;
            counters.successes += stats.success ? 1 : 0;
            counters.steps += stats.steps;
            counters.success_steps += stats.success ? stats.steps : 0;
            if (std::getenv("EVOAGENT_DEBUG_EPISODES")) {
                std::fprintf(stderr, "[seed %llu] %s ep %d: success=%d steps=%lld\n",
                             static_cast<unsigned long long>(seed), task.name.c_str(), ep,
                             stats.success ? 1 : 0, static_cast<long long>(stats.steps));
            }
        }

        TaskSeedMetrics m;
        m.task = task.name;
        m.seed = seed;
        m.episodes = counters.episodes;
        m.steps = counters.steps;
        m.sr = counters.episodes > 0 ? static_cast<double>(counters.successes) / counters.episodes
                                     : 0.0;
        m.ee = counters.steps > 0 ? static_cast<double>(counters.success_steps) / counters.steps
                                  : 0.0;
        out.metrics.push_back(std::move(m));

        if (cfg.eval_after_each_task && cfg.eval_episodes > 0) {
            for (size_t t2 = 0; t2 <= phase; ++t2) {
                const auto eval_task = cw::task_by_name(cfg.tasks[t2]);
                const cw::CraftWorld eval_env(cfg.env_for(eval_task.name), eval_task);
                mep::ExperiencePool scratch(cfg.pool_capacity);
                TaskCounters ec;
                for (int ep = 0; ep < cfg.eval_episodes; ++ep) {
                    const uint64_t eseed =
                        derive_seed(seed, "eval", phase * 100 + t2, static_cast<uint64_t>(ep));
                    const auto stats = run_task_episode(cfg, eval_env, eval_task, registry, st,
                                                        scratch, eseed, static_cast<int>(phase),
                                                        ep, false, nullptr, seed);
                    ec.episodes += 1;
                    ec.successes += stats.success ? 1 : 0;
                    ec.steps += stats.steps;
                    ec.success_steps += stats.success ? stats.steps : 0;
                }
                EvalMetrics e;
                e.phase = task.name;
                e.task = eval_task.name;
                e.seed = seed;
                e.sr = ec.episodes > 0 ? static_cast<double>(ec.successes) / ec.episodes : 0.0;
                e.ee = ec.steps > 0 ? static_cast<double>(ec.success_steps) / ec.steps : 0.0;
                out.eval.push_back(std::move(e));
            }
        }
    }

    if (!cfg.save_model.empty()) {
        st.params.save(cfg.save_model + "-seed" + std::to_string(seed) + ".bin");
    }
    if (!cfg.save_pool.empty()) {
        st.pool.snapshot(cfg.save_pool + "-seed" + std::to_string(seed) + ".bin");
    }
    return out;
}

}  // namespace

MetricsReport run(const RunConfig& cfg) {
    cfg.validate();
    // per-task env overrides must keep the observation layout fixed
    for (const auto& t : cfg.tasks) {
        if (cfg.env_for(t).obs_dim() != cfg.env.obs_dim()) {
            throw ConfigError("per-task env overrides must not change the observation size");
        }
    }

    std::vector<SeedOutcome> outcomes(cfg.seeds.size());
    const int workers = std::min<int>(cfg.workers, static_cast<int>(cfg.seeds.size()));
    if (workers <= 1) {
        for (size_t i = 0; i < cfg.seeds.size(); ++i) outcomes[i] = run_seed(cfg, cfg.seeds[i]);
    } else {
        std::atomic<size_t> next{0};
        std::vector<std::thread> threads;
        threads.reserve(static_cast<size_t>(workers));
        for (int w = 0; w < workers; ++w) {
            threads.emplace_back([&]() {
                for (;;) {
                    const size_t i = next.fetch_add(1);
                    if (i >= cfg.seeds.size()) return;
                    outcomes[i] = run_seed(cfg, cfg.seeds[i]);
                }
            });
        }
        for (auto& t : threads) t.join();
    }

    MetricsReport report;
    for (const auto& o : outcomes) {
        report.metrics.insert(report.metrics.end(), o.metrics.begin(), o.metrics.end());
        report.eval.insert(report.eval.end(), o.eval.begin(), o.eval.end());
        report.rounds.insert(report.rounds.end(), o.rounds.begin(), o.rounds.end());
        report.losses.insert(report.losses.end(), o.losses.begin(), o.losses.end());
    }
    return report;
}

std::vector<AblationRow> ablation_grid(const RunConfig& base) {
    struct RowSpec {
        const char* label;
        bool p, c, r1, r2, cwm;
    };
    const RowSpec rows[] = {
        {"none", false, false, false, false, false},
        {"P", true, false, false, false, false},
        {"P+C", true, true, false, false, false},
        {"P+C+R1", true, true, true, false, false},
        {"P+C+R2", true, true, false, true, false},
        {"P+C+R", true, true, true, true, false},
        {"P+C+R+CWM", true, true, true, true, true},
    };
    std::vector<AblationRow> out;
    for (const auto& r : rows) {
        AblationRow row;
        row.label = r.label;
        row.cfg = base;
        row.cfg.toggles.planner = r.p;
        row.cfg.toggles.controller = r.c;
        row.cfg.toggles.reflector_stage1 = r.r1;
        row.cfg.toggles.reflector_stage2 = r.r2;
        row.cfg.toggles.continual_wm = r.cwm;
        out.push_back(std::move(row));
    }
    return out;
}

std::vector<AblationRow> ablate(const RunConfig& base) {
    auto rows = ablation_grid(base);
    for (auto& row : rows) {
        std::fprintf(stderr, "[ablate] running %s\n", row.label.c_str());
        row.report = run(row.cfg);
    }
    return rows;
}

void emit_ablation(const std::vector<AblationRow>& rows, const std::string& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream summary(dir + "/ablation.csv");
    std::ofstream details(dir + "/ablation_details.csv");
    if (!summary || !details) throw IoError("cannot write ablation outputs");
    summary << "row,task,mean_SR,std_SR,mean_EE,std_EE,seeds\n";
    details << "row,task,seed,SR,EE\n";
    char buf[64];
    for (const auto& row : rows) {
        for (const auto& task : row.cfg.tasks) {
            const auto agg = aggregate_task(row.report, task);
            std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.6f,%.6f", agg.mean_sr, agg.std_sr,
                          agg.mean_ee, agg.std_ee);
            summary << row.label << "," << task << "," << buf << "," << agg.n << "\n";
        }
        for (const auto& m : row.report.metrics) {
            std::snprintf(buf, sizeof(buf), "%.6f,%.6f", m.sr, m.ee);
            details << row.label << "," << m.task << "," << m.seed << "," << buf << "\n";
        }
    }
}

EvalRunResult evaluate_model(const RunConfig& cfg, const wm::ModelParams& params,
                             const std::string& task_name, int episodes, uint64_t seed) {
    plan::SubtaskRegistry registry;
    const auto task = cw::task_by_name(task_name);
    const cw::CraftWorld env(cfg.env_for(task.name), task);
    SeedRunState st(params, wm::Optimizer(wm::Optimizer::Kind::sgd, cfg.model.lr), cfg.pool_capacity);
    mep::ExperiencePool scratch(cfg.pool_capacity);
    EvalRunResult out;
    int64_t success_steps = 0;
    int successes = 0;
    for (int ep = 0; ep < episodes; ++ep) {
        const auto stats = run_task_episode(cfg, env, task, registry, st, scratch,
                                            derive_seed(seed, "eval-cli", static_cast<uint64_t>(ep)),
                                            0, ep, false, nullptr, seed);
        out.episodes += 1;
        out.steps += stats.steps;
        successes += stats.success ? 1 : 0;
        success_steps += stats.success ? stats.steps : 0;
    }
    out.sr = out.episodes > 0 ? static_cast<double>(successes) / out.episodes : 0.0;
    out.ee = out.steps > 0 ? static_cast<double>(success_steps) / out.steps : 0.0;
    return out;
}

}  // namespace evoagent::harness
