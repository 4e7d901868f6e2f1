#pragma once

#include <string>
#include <vector>

#include "evoagent/harness/config.hpp"
#include "evoagent/harness/metrics.hpp"

namespace evoagent::harness {

// Full closed-loop run over the configured task sequence and seeds:
// plan -> per-subtask control episodes -> reflection, with world-model
// training interleaved every train_every environment steps. All randomness
// derives from the per-run seeds.
MetricsReport run(const RunConfig& cfg);

struct AblationRow {
    std::string label;
    RunConfig cfg;
    MetricsReport report;
};

// The seven-row toggle grid with shared seeds.
std::vector<AblationRow> ablation_grid(const RunConfig& base);
std::vector<AblationRow> ablate(const RunConfig& base);

// Writes ablation.csv (means) and ablation_details.csv (per seed) under dir.
void emit_ablation(const std::vector<AblationRow>& rows, const std::string& dir);

// Evaluation-only episodes with frozen parameters; used by the eval CLI.
struct EvalRunResult {
    double sr = 0.0;
    double ee = 0.0;
    int episodes = 0;
    int64_t steps = 0;
};
EvalRunResult evaluate_model(const RunConfig& cfg, const wm::ModelParams& params,
                             const std::string& task_name, int episodes, uint64_t seed);

}  // namespace evoagent::harness
