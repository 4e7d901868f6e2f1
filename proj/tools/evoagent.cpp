#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>

#include <CLI11.hpp>

#include "evoagent/core/hash.hpp"
#include "evoagent/harness/runner.hpp"
#include "evoagent/pool/pool.hpp"
#include "evoagent/wm/params.hpp"

using namespace evoagent;

namespace {

harness::RunConfig load_or_default(const std::string& path) {
    harness::RunConfig cfg;
    if (!path.empty()) cfg = harness::load_config(path);
    if (const char* env_seed = std::getenv("EVOAGENT_SEED")) {
        cfg.seeds = {std::stoull(env_seed)};
    }
    return cfg;
}

int cmd_run(const std::string& config_path, int64_t seed_override, const std::string& out_dir,
            bool dump_traj) {
    harness::RunConfig cfg = load_or_default(config_path);
    if (seed_override >= 0) cfg.seeds = {static_cast<uint64_t>(seed_override)};
    if (!out_dir.empty()) cfg.output_dir = out_dir;
    if (dump_traj) cfg.dump_trajectories = true;
    cfg.validate();

    const auto report = harness::run(cfg);
    harness::emit(report, cfg, cfg.output_dir);

    for (const auto& task : cfg.tasks) {
        const auto agg = harness::aggregate_task(report, task);
        std::printf("%-8s SR %.4f +/- %.4f   EE %.4f +/- %.4f   (%d seeds)\n", task.c_str(),
                    agg.mean_sr, agg.std_sr, agg.mean_ee, agg.std_ee, agg.n);
    }
    std::printf("outputs written to %s (config %s)\n", cfg.output_dir.c_str(),
                hex64(cfg.config_hash()).c_str());
    return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& out_dir) {
    harness::RunConfig cfg = load_or_default(config_path);
    if (!out_dir.empty()) cfg.output_dir = out_dir;
    cfg.validate();

    const auto rows = harness::ablate(cfg);
    harness::emit_ablation(rows, cfg.output_dir);
    for (const auto& row : rows) {
        harness::emit(row.report, row.cfg,
                      (std::filesystem::path(cfg.output_dir) / row.label).string());
        for (const auto& task : row.cfg.tasks) {
            const auto agg = harness::aggregate_task(row.report, task);
            std::printf("%-10s %-8s SR %.4f +/- %.4f\n", row.label.c_str(), task.c_str(),
                        agg.mean_sr, agg.std_sr);
        }
    }
    return 0;
}

int cmd_inspect_pool(const std::string& snapshot, bool full, long limit) {
    const auto pool = mep::ExperiencePool::load(snapshot);
    std::printf("# pool capacity=%zu entries=%zu episodes=%zu hash=%s\n", pool.capacity(),
                pool.size(), pool.num_episodes(), hex64(pool.content_hash()).c_str());
    for (const auto& [id, st] : pool.stats().by_subtask) {
        std::printf("# subtask %s episodes=%lld successes=%lld steps=%lld SR=%.4f EE=%.4f\n",
                    id.c_str(), static_cast<long long>(st.episodes_total),
                    static_cast<long long>(st.episodes_success),
                    static_cast<long long>(st.steps_total), st.success_rate(), st.efficiency());
    }
    long printed = 0;
    for (const auto& epi : pool.episodes()) {
        for (const auto& e : epi.entries) {
            if (limit > 0 && printed >= limit) return 0;
            std::printf("%s\n", mep::entry_to_line(e, full).c_str());
            ++printed;
        }
    }
    return 0;
}

int cmd_eval(const std::string& model_path, const std::string& task, const std::string& config_path,
             int episodes, int64_t seed) {
    harness::RunConfig cfg = load_or_default(config_path);
    const auto params = wm::ModelParams::load(model_path);
    const auto result = harness::evaluate_model(cfg, params, task, episodes,
                                                seed >= 0 ? static_cast<uint64_t>(seed) : 0);
    std::printf("%s: SR %.4f EE %.4f over %d episodes (%lld steps)\n", task.c_str(), result.sr,
                result.ee, result.episodes, static_cast<long long>(result.steps));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"evoagent: closed-loop planning-control-reflection agent on CraftWorld"};
    app.require_subcommand(1);

    std::string config_path, out_dir, snapshot, model_path, task_name;
    int64_t seed = -1;
    int episodes = 10;
    bool dump_traj = false, full = false;
    long limit = 0;

    auto* run_cmd = app.add_subcommand("run", "run the configured task sequence");
    run_cmd->add_option("--config", config_path, "config file path");
    run_cmd->add_option("--seed", seed, "override the seed list with one seed");
    run_cmd->add_option("--out", out_dir, "output directory");
    run_cmd->add_flag("--dump-traj", dump_traj, "write per-episode trajectory dumps");

    auto* ablate_cmd = app.add_subcommand("ablate", "run the module-toggle grid");
    ablate_cmd->add_option("--config", config_path, "config file path");
    ablate_cmd->add_option("--out", out_dir, "output directory");

    auto* inspect_cmd = app.add_subcommand("inspect-pool", "print a pool snapshot");
    inspect_cmd->add_option("--snapshot", snapshot, "pool snapshot path")->required();
    inspect_cmd->add_flag("--full", full, "include full observation vectors");
    inspect_cmd->add_option("--limit", limit, "print at most N entries (0 = all)");

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a saved model on a task");
    eval_cmd->add_option("--model", model_path, "model snapshot path")->required();
    eval_cmd->add_option("--task", task_name, "task name")->required();
    eval_cmd->add_option("--config", config_path, "config file path");
    eval_cmd->add_option("--episodes", episodes, "evaluation episodes");
    eval_cmd->add_option("--seed", seed, "evaluation seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run_cmd->parsed()) return cmd_run(config_path, seed, out_dir, dump_traj);
        if (ablate_cmd->parsed()) return cmd_ablate(config_path, out_dir);
        if (inspect_cmd->parsed()) return cmd_inspect_pool(snapshot, full, limit);
        if (eval_cmd->parsed()) return cmd_eval(model_path, task_name, config_path, episodes, seed);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
