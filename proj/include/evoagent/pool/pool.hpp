#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "evoagent/craftworld/env.hpp"

namespace evoagent::mep {

// One annotated transition; the unit the curriculum scores and the world
// model trains on.
struct ExperienceEntry {
    cw::Observation s;
    cw::Action a;
    double r = 0.0;
    cw::Observation s_next;
    int done = 0;
    std::string subtask_id;
    double completion = 0.0;  // episode-wide subtask completion ratio
    int64_t episode_id = 0;
    int t = 0;
    // Environment stream this entry belongs to. Consecutive subtask episodes
    // of one task episode share a stream (the env never resets between them),
    // so window sampling may run across their boundary.
    int64_t stream_id = -1;
    std::optional<double> score_cache;       // last curriculum score
    std::vector<uint8_t> attachment;         // reserved for richer modalities
};

struct SubtaskStats {
    int64_t episodes_total = 0;
    int64_t episodes_success = 0;
    int64_t steps_total = 0;
    int64_t steps_success = 0;
    double completion_sum = 0.0;  // per-episode completions, for mean P(g)

    double success_rate() const {
        return episodes_total > 0 ? static_cast<double>(episodes_success) / episodes_total : 0.0;
    }
    double efficiency() const {
        return steps_total > 0 ? static_cast<double>(steps_success) / steps_total : 0.0;
    }
    double mean_completion() const {
        return episodes_total > 0 ? completion_sum / static_cast<double>(episodes_total) : 0.0;
    }
};

struct PoolStats {
    std::map<std::string, SubtaskStats> by_subtask;

    const SubtaskStats* find(const std::string& subtask_id) const {
        auto it = by_subtask.find(subtask_id);
        return it == by_subtask.end() ? nullptr : &it->second;
    }
};

// Training batch over B episode-contiguous windows of T positions. Position 0
// of an episode is the reset observation; rewards/continues at position q are
// the arrival values of the transition entering q.
struct Batch {
    int B = 0, T = 0;
    int obs_dim = 0, act_dim = 0;
    std::vector<double> obs;   // B*T*obs_dim
    std::vector<double> act;   // B*T*act_dim one-hot; zero where undefined
    std::vector<double> rew;   // B*T
    std::vector<double> cont;  // B*T, in {0,1}
    uint64_t noise_seed = 0;
    std::vector<std::pair<int64_t, int>> windows;  // (episode_id, start) provenance

    double* obs_at(int b, int t) { return obs.data() + (static_cast<size_t>(b) * T + t) * obs_dim; }
    const double* obs_at(int b, int t) const {
        return obs.data() + (static_cast<size_t>(b) * T + t) * obs_dim;
    }
    double* act_at(int b, int t) { return act.data() + (static_cast<size_t>(b) * T + t) * act_dim; }
    const double* act_at(int b, int t) const {
        return act.data() + (static_cast<size_t>(b) * T + t) * act_dim;
    }
    double rew_at(int b, int t) const { return rew[static_cast<size_t>(b) * T + t]; }
    double cont_at(int b, int t) const { return cont[static_cast<size_t>(b) * T + t]; }
};

// Throws BatchError when a window embeds an episode end anywhere but its last
// position (the contiguity contract for sequence training).
void validate_batch(const Batch& batch);

// Append-only transition store keyed by subtask, FIFO-evicted by whole
// episodes beyond capacity. Single writer, any number of concurrent readers
// of a const reference.
class ExperiencePool {
public:
    explicit ExperiencePool(size_t capacity = 100000) : capacity_(capacity) {}

    // Stamps subtask and completion on every entry. Entries must share
    // episode_id and have strictly increasing t.
    void append_trajectory(std::vector<ExperienceEntry> entries, const std::string& subtask_id,
                           double completion);

    std::vector<const ExperienceEntry*> query_by_subtask(const std::string& subtask_id) const;

    // Most recent episodes first own the tail; returns up to max_entries of
    // the newest entries for the subtask (all when max_entries == 0).
    std::vector<const ExperienceEntry*> recent_by_subtask(const std::string& subtask_id,
                                                          size_t max_entries) const;

    Batch sample_windows(int B, int T, uint64_t seed) const;

    void snapshot(const std::string& path) const;
    static ExperiencePool load(const std::string& path);

    size_t size() const { return total_entries_; }
    size_t capacity() const { return capacity_; }
    size_t num_episodes() const { return episodes_.size(); }
    const PoolStats& stats() const { return stats_; }
    PoolStats recompute_stats() const;

    uint64_t content_hash() const;

    struct Episode {
        int64_t episode_id = 0;
        int64_t stream_id = -1;
        std::string subtask_id;
        double completion = 0.0;
        bool success = false;
        std::vector<ExperienceEntry> entries;
    };
    const std::deque<Episode>& episodes() const { return episodes_; }

    void set_score_cache(const std::string& subtask_id, int64_t episode_id, int t, double score);

private:
    size_t capacity_;
    size_t total_entries_ = 0;
    std::deque<Episode> episodes_;
    PoolStats stats_;

    void evict_to_capacity();
};

// Fraction of the milestone chain toward subtask_target achieved by the
// trajectory: intermediate nodes count when ever held, the target itself only
// when held at the end.
double completion_ratio(cw::Item subtask_target, const std::vector<ExperienceEntry>& trajectory);

// Line format used by the inspect-pool CLI; field order documented in README.
std::string entry_to_line(const ExperienceEntry& e, bool full_vectors = false);

}  // namespace evoagent::mep
