#include "evoagent/harness/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "evoagent/core/errors.hpp"
#include "evoagent/core/hash.hpp"

namespace evoagent::harness {

std::pair<double, double> compute_metrics(const mep::SubtaskStats& stats) {
    return {stats.success_rate(), stats.efficiency()};
}

Aggregate aggregate_task(const MetricsReport& report, const std::string& task) {
    Aggregate agg;
    std::vector<double> srs, ees;
    for (const auto& m : report.metrics) {
        if (m.task != task) continue;
        srs.push_back(m.sr);
        ees.push_back(m.ee);
    }
    agg.n = static_cast<int>(srs.size());
    if (agg.n == 0) return agg;
    for (size_t i = 0; i < srs.size(); ++i) {
        agg.mean_sr += srs[i] / agg.n;
        agg.mean_ee += ees[i] / agg.n;
    }
    for (size_t i = 0; i < srs.size(); ++i) {
        agg.std_sr += (srs[i] - agg.mean_sr) * (srs[i] - agg.mean_sr);
        agg.std_ee += (ees[i] - agg.mean_ee) * (ees[i] - agg.mean_ee);
    }
    agg.std_sr = std::sqrt(agg.std_sr / agg.n);
    agg.std_ee = std::sqrt(agg.std_ee / agg.n);
    return agg;
}

namespace {

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream is(line);
    std::string field;
    while (std::getline(is, field, ',')) out.push_back(field);
    return out;
}

}  // namespace

void emit(const MetricsReport& report, const RunConfig& cfg, const std::string& dir) {
    std::filesystem::create_directories(dir);

    {
        std::ofstream os(dir + "/metrics.csv");
        if (!os) throw IoError("cannot write metrics.csv");
        os << "task,seed,SR,EE,episodes,steps\n";
        for (const auto& m : report.metrics) {
            os << m.task << "," << m.seed << "," << num(m.sr) << "," << num(m.ee) << ","
               << m.episodes << "," << m.steps << "\n";
        }
    }
    {
        std::ofstream os(dir + "/eval_metrics.csv");
        if (!os) throw IoError("cannot write eval_metrics.csv");
        os << "phase,task,seed,SR,EE\n";
        for (const auto& e : report.eval) {
            os << e.phase << "," << e.task << "," << e.seed << "," << num(e.sr) << ","
               << num(e.ee) << "\n";
        }
    }
    {
        std::ofstream os(dir + "/rounds.csv");
        if (!os) throw IoError("cannot write rounds.csv");
        os << "task,seed,k,rho_subtask,rho_exp,subtasks_selected,experiences_selected,"
              "entries_skipped,pred_loss,reg_loss,max_weight,fallback\n";
        for (const auto& r : report.rounds) {
            os << r.task << "," << r.seed << "," << r.k << "," << num(r.rho_subtask) << ","
               << num(r.rho_exp) << "," << r.subtasks_selected << "," << r.experiences_selected
               << "," << r.entries_skipped << "," << num(r.pred_loss) << "," << num(r.reg_loss)
               << "," << num(r.max_weight) << "," << (r.fallback_used ? 1 : 0) << "\n";
        }
    }
    {
        std::ofstream os(dir + "/losses.csv");
        if (!os) throw IoError("cannot write losses.csv");
        os << "seed,step,recon,reward_nll,continue_nll,kl_dyn,kl_rep,total\n";
        for (const auto& l : report.losses) {
            os << l.seed << "," << l.global_step << "," << num(l.lb.recon) << ","
               << num(l.lb.reward_nll) << "," << num(l.lb.continue_nll) << "," << num(l.lb.kl_dyn)
               << "," << num(l.lb.kl_rep) << "," << num(l.lb.total) << "\n";
        }
    }
    {
        std::ofstream os(dir + "/manifest.txt");
        if (!os) throw IoError("cannot write manifest.txt");
        os << "config_hash = " << hex64(cfg.config_hash()) << "\n";
        os << "model_snapshot_version = 1\n";
        os << "pool_snapshot_version = 1\n";
        os << "metrics_format = 1\n";
        os << "seeds = " << cfg.seeds.size() << "\n";
        os << "tasks = ";
        for (size_t i = 0; i < cfg.tasks.size(); ++i) os << (i ? "," : "") << cfg.tasks[i];
        os << "\n";
    }
}

std::vector<TaskSeedMetrics> parse_metrics_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(is, line)) throw IoError("empty metrics file");
    if (line != "task,seed,SR,EE,episodes,steps") throw IoError("unexpected metrics header");
    std::vector<TaskSeedMetrics> out;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != 6) throw IoError("malformed metrics row: " + line);
        TaskSeedMetrics m;
        m.task = f[0];
        m.seed = std::stoull(f[1]);
        m.sr = std::stod(f[2]);
        m.ee = std::stod(f[3]);
        m.episodes = std::stoll(f[4]);
        m.steps = std::stoll(f[5]);
        out.push_back(std::move(m));
    }
    return out;
}

std::vector<EvalMetrics> parse_eval_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(is, line)) throw IoError("empty eval file");
    if (line != "phase,task,seed,SR,EE") throw IoError("unexpected eval header");
    std::vector<EvalMetrics> out;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != 5) throw IoError("malformed eval row: " + line);
        EvalMetrics e;
        e.phase = f[0];
        e.task = f[1];
        e.seed = std::stoull(f[2]);
        e.sr = std::stod(f[3]);
        e.ee = std::stod(f[4]);
        out.push_back(std::move(e));
    }
    return out;
}

}  // namespace evoagent::harness
