#pragma once

#include <string>
#include <utility>
#include <vector>

#include "evoagent/harness/config.hpp"
#include "evoagent/pool/pool.hpp"
#include "evoagent/wm/model.hpp"

namespace evoagent::harness {

struct TaskSeedMetrics {
    std::string task;
    uint64_t seed = 0;
    double sr = 0.0;
    double ee = 0.0;
    int64_t episodes = 0;
    int64_t steps = 0;
};

// Post-phase evaluation rows; phase names the task whose training just ended.
struct EvalMetrics {
    std::string phase;
    std::string task;
    uint64_t seed = 0;
    double sr = 0.0;
    double ee = 0.0;
};

struct RoundRecord {
    std::string task;
    uint64_t seed = 0;
    int k = 0;
    double rho_subtask = 0.0;
    double rho_exp = 0.0;
    int64_t subtasks_selected = 0;
    int64_t experiences_selected = 0;
    int64_t entries_skipped = 0;
    double pred_loss = 0.0;
    double reg_loss = 0.0;
    double max_weight = 0.0;
    bool fallback_used = false;
};

struct LossRecord {
    uint64_t seed = 0;
    int64_t global_step = 0;
    wm::LossBreakdown lb;
};

struct MetricsReport {
    std::vector<TaskSeedMetrics> metrics;
    std::vector<EvalMetrics> eval;
    std::vector<RoundRecord> rounds;
    std::vector<LossRecord> losses;
};

// SR = successful episodes over episodes, EE = successful steps over steps;
// zero denominators read as 0.
std::pair<double, double> compute_metrics(const mep::SubtaskStats& stats);

struct Aggregate {
    double mean_sr = 0.0, std_sr = 0.0;
    double mean_ee = 0.0, std_ee = 0.0;
    int n = 0;
};
Aggregate aggregate_task(const MetricsReport& report, const std::string& task);

// Writes metrics.csv, eval_metrics.csv, rounds.csv, losses.csv and
// manifest.txt under dir. Formats are stable; identical reports and configs
// produce byte-identical files.
void emit(const MetricsReport& report, const RunConfig& cfg, const std::string& dir);

// Inverse of the metrics.csv writer, for round-trip checks and the
// acceptance harness.
std::vector<TaskSeedMetrics> parse_metrics_csv(const std::string& path);
std::vector<EvalMetrics> parse_eval_csv(const std::string& path);

}  // namespace evoagent::harness
