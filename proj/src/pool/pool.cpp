#include "evoagent/pool/pool.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "evoagent/core/binio.hpp"
#include "evoagent/core/errors.hpp"
#include "evoagent/core/hash.hpp"
#include "evoagent/core/rng.hpp"

namespace evoagent::mep {

void validate_batch(const Batch& batch) {
    if (batch.B <= 0 || batch.T <= 0) throw BatchError("empty batch");
    const size_t bt = static_cast<size_t>(batch.B) * batch.T;
    if (batch.obs.size() != bt * batch.obs_dim || batch.act.size() != bt * batch.act_dim ||
        batch.rew.size() != bt || batch.cont.size() != bt) {
        throw BatchError("batch array sizes inconsistent with B/T/dims");
    }
    for (int b = 0; b < batch.B; ++b) {
        for (int t = 0; t + 1 < batch.T; ++t) {
            if (batch.cont_at(b, t) == 0.0) {
                throw BatchError("window crosses an episode boundary (continue=0 mid-window)");
            }
        }
    }
}

void ExperiencePool::append_trajectory(std::vector<ExperienceEntry> entries,
                                       const std::string& subtask_id, double completion) {
    if (entries.empty()) return;
    if (completion < 0.0 || completion > 1.0) throw ValidationError("completion outside [0,1]");
    const int64_t ep = entries.front().episode_id;
    const int64_t stream = entries.front().stream_id < 0 ? ep : entries.front().stream_id;
    int prev_t = entries.front().t - 1;
    for (auto& e : entries) {
        if (e.episode_id != ep) throw ValidationError("mixed episode_ids in one trajectory");
        if (e.t <= prev_t) throw ValidationError("entry step indices must strictly increase");
        prev_t = e.t;
        e.subtask_id = subtask_id;
        e.completion = completion;
        e.stream_id = stream;
    }

    Episode epi;
    epi.episode_id = ep;
    epi.stream_id = stream;
    epi.subtask_id = subtask_id;
    epi.completion = completion;
    epi.success = completion >= 1.0;
    epi.entries = std::move(entries);

    auto& st = stats_.by_subtask[subtask_id];
    st.episodes_total += 1;
    st.episodes_success += epi.success ? 1 : 0;
    st.steps_total += static_cast<int64_t>(epi.entries.size());
    st.steps_success += epi.success ? static_cast<int64_t>(epi.entries.size()) : 0;
    st.completion_sum += completion;

    total_entries_ += epi.entries.size();
    episodes_.push_back(std::move(epi));
    evict_to_capacity();
}

void ExperiencePool::evict_to_capacity() {
    while (total_entries_ > capacity_ && episodes_.size() > 1) {
        const Episode& old = episodes_.front();
        auto& st = stats_.by_subtask[old.subtask_id];
        st.episodes_total -= 1;
        st.episodes_success -= old.success ? 1 : 0;
        st.steps_total -= static_cast<int64_t>(old.entries.size());
        st.steps_success -= old.success ? static_cast<int64_t>(old.entries.size()) : 0;
        st.completion_sum -= old.completion;
        total_entries_ -= old.entries.size();
        episodes_.pop_front();
    }
}

std::vector<const ExperienceEntry*> ExperiencePool::query_by_subtask(
    const std::string& subtask_id) const {
    std::vector<const ExperienceEntry*> out;
    for (const auto& epi : episodes_) {
        if (epi.subtask_id != subtask_id) continue;
        for (const auto& e : epi.entries) out.push_back(&e);
    }
    return out;
}

std::vector<const ExperienceEntry*> ExperiencePool::recent_by_subtask(
    const std::string& subtask_id, size_t max_entries) const {
    auto all = query_by_subtask(subtask_id);
    if (max_entries > 0 && all.size() > max_entries) {
        all.erase(all.begin(), all.end() - static_cast<long>(max_entries));
    }
    return all;
}

Batch ExperiencePool::sample_windows(int B, int T, uint64_t seed) const {
    if (B <= 0 || T < 2) throw BatchError("need B >= 1 and T >= 2");
    // Adjacent episodes sharing a stream id are one uninterrupted environment
    // stream; windows may span their boundaries. A stream of N entries has
    // N+1 positions; streams shorter than T positions are skipped.
    struct Slot {
        std::vector<const ExperienceEntry*> entries;
        int starts = 0;  // number of valid window starts
    };
    std::vector<Slot> slots;
    {
        Slot current;
        int64_t current_stream = -1;
        auto flush = [&]() {
            const int n = static_cast<int>(current.entries.size());
            if (n + 1 >= T) {
                current.starts = n + 2 - T;
                slots.push_back(std::move(current));
            }
            current = Slot{};
        };
        for (const auto& epi : episodes_) {
            if (epi.stream_id != current_stream || current.entries.empty()) {
                if (!current.entries.empty()) flush();
                current_stream = epi.stream_id;
            }
            for (const auto& e : epi.entries) current.entries.push_back(&e);
        }
        if (!current.entries.empty()) flush();
    }
    long total = 0;
    for (const auto& s : slots) total += s.starts;
    if (total == 0) throw BatchError("no episode long enough for requested window length");

    const int obs_dim = static_cast<int>(episodes_.front().entries.front().s.dim());
    const int act_dim = cw::action_space_size();

    Batch batch;
    batch.B = B;
    batch.T = T;
    batch.obs_dim = obs_dim;
    batch.act_dim = act_dim;
    batch.obs.assign(static_cast<size_t>(B) * T * obs_dim, 0.0);
    batch.act.assign(static_cast<size_t>(B) * T * act_dim, 0.0);
    batch.rew.assign(static_cast<size_t>(B) * T, 0.0);
    batch.cont.assign(static_cast<size_t>(B) * T, 1.0);
    batch.noise_seed = derive_seed(seed, "batch-noise");

    Rng rng(derive_seed(seed, "window-sampling"));
    for (int b = 0; b < B; ++b) {
        long pick = static_cast<long>(rng.next_u64() % static_cast<uint64_t>(total));
        const Slot* slot = nullptr;
        int start = 0;
        for (const auto& s : slots) {
            if (pick < s.starts) {
                slot = &s;
                start = static_cast<int>(pick);
                break;
            }
            pick -= s.starts;
        }
        const auto& entries = slot->entries;
        const int n = static_cast<int>(entries.size());
        batch.windows.emplace_back(entries.front()->episode_id, start);
        for (int t = 0; t < T; ++t) {
            const int q = start + t;
            const std::vector<double> ov =
                q == 0 ? entries[0]->s.to_vector() : entries[q - 1]->s_next.to_vector();
            if (static_cast<int>(ov.size()) != obs_dim) throw BatchError("observation dim varies across pool");
            std::memcpy(batch.obs_at(b, t), ov.data(), sizeof(double) * ov.size());
            batch.rew[static_cast<size_t>(b) * T + t] = q == 0 ? 0.0 : entries[q - 1]->r;
            batch.cont[static_cast<size_t>(b) * T + t] = q == 0 ? 1.0 : 1.0 - entries[q - 1]->done;
            if (q <= n - 1) {
                batch.act_at(b, t)[cw::action_index(entries[q]->a)] = 1.0;
            }
        }
    }
    validate_batch(batch);
    return batch;
}

namespace {

void write_obs(std::ostream& os, const cw::Observation& o) {
    binio::write_f64_vec(os, o.patch);
    binio::write_f64_vec(os, o.inventory_vec);
    binio::write_f64(os, o.last_reward);
}

cw::Observation read_obs(std::istream& is) {
    cw::Observation o;
    o.patch = binio::read_f64_vec(is);
    o.inventory_vec = binio::read_f64_vec(is);
    o.last_reward = binio::read_f64(is);
    return o;
}

constexpr uint32_t kPoolVersion = 1;

}  // namespace

void ExperiencePool::snapshot(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");
    binio::write_magic(os, "EVMP");
    binio::write_le<uint32_t>(os, kPoolVersion);
    binio::write_le<uint64_t>(os, capacity_);
    binio::write_le<uint64_t>(os, episodes_.size());
    for (const auto& epi : episodes_) {
        binio::write_le<int64_t>(os, epi.episode_id);
        binio::write_le<int64_t>(os, epi.stream_id);
        binio::write_string(os, epi.subtask_id);
        binio::write_f64(os, epi.completion);
        binio::write_le<uint8_t>(os, epi.success ? 1 : 0);
        binio::write_le<uint64_t>(os, epi.entries.size());
        for (const auto& e : epi.entries) {
            write_obs(os, e.s);
            binio::write_le<int32_t>(os, cw::action_index(e.a));
            binio::write_f64(os, e.r);
            write_obs(os, e.s_next);
            binio::write_le<uint8_t>(os, static_cast<uint8_t>(e.done));
            binio::write_le<int32_t>(os, e.t);
            binio::write_le<uint8_t>(os, e.score_cache.has_value() ? 1 : 0);
            binio::write_f64(os, e.score_cache.value_or(0.0));
            binio::write_le<uint64_t>(os, e.attachment.size());
            os.write(reinterpret_cast<const char*>(e.attachment.data()),
                     static_cast<std::streamsize>(e.attachment.size()));
        }
    }
    if (!os) throw IoError("failed writing pool snapshot " + path);
}

ExperiencePool ExperiencePool::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    binio::expect_magic(is, "EVMP");
    const uint32_t version = binio::read_le<uint32_t>(is);
    if (version != kPoolVersion) throw IoError("unsupported pool snapshot version");
    ExperiencePool pool(binio::read_le<uint64_t>(is));
    const uint64_t n_episodes = binio::read_le<uint64_t>(is);
    for (uint64_t i = 0; i < n_episodes; ++i) {
        Episode epi;
        epi.episode_id = binio::read_le<int64_t>(is);
        epi.stream_id = binio::read_le<int64_t>(is);
        epi.subtask_id = binio::read_string(is);
        epi.completion = binio::read_f64(is);
        epi.success = binio::read_le<uint8_t>(is) != 0;
        const uint64_t n_entries = binio::read_le<uint64_t>(is);
        epi.entries.reserve(n_entries);
        for (uint64_t j = 0; j < n_entries; ++j) {
            ExperienceEntry e;
            e.s = read_obs(is);
            e.a = cw::action_from_index(binio::read_le<int32_t>(is));
            e.r = binio::read_f64(is);
            e.s_next = read_obs(is);
            e.done = binio::read_le<uint8_t>(is);
            e.t = binio::read_le<int32_t>(is);
            const bool has_score = binio::read_le<uint8_t>(is) != 0;
            const double score = binio::read_f64(is);
            if (has_score) e.score_cache = score;
            const uint64_t alen = binio::read_le<uint64_t>(is);
            e.attachment.resize(alen);
            is.read(reinterpret_cast<char*>(e.attachment.data()), static_cast<std::streamsize>(alen));
            e.subtask_id = epi.subtask_id;
            e.completion = epi.completion;
            e.episode_id = epi.episode_id;
            e.stream_id = epi.stream_id;
            epi.entries.push_back(std::move(e));
        }
        auto& st = pool.stats_.by_subtask[epi.subtask_id];
        st.episodes_total += 1;
        st.episodes_success += epi.success ? 1 : 0;
        st.steps_total += static_cast<int64_t>(epi.entries.size());
        st.steps_success += epi.success ? static_cast<int64_t>(epi.entries.size()) : 0;
        st.completion_sum += epi.completion;
        pool.total_entries_ += epi.entries.size();
        pool.episodes_.push_back(std::move(epi));
    }
    return pool;
}

PoolStats ExperiencePool::recompute_stats() const {
    PoolStats fresh;
    for (const auto& epi : episodes_) {
        auto& st = fresh.by_subtask[epi.subtask_id];
        st.episodes_total += 1;
        st.episodes_success += epi.success ? 1 : 0;
        st.steps_total += static_cast<int64_t>(epi.entries.size());
        st.steps_success += epi.success ? static_cast<int64_t>(epi.entries.size()) : 0;
        st.completion_sum += epi.completion;
    }
    return fresh;
}

uint64_t ExperiencePool::content_hash() const {
    Fnv1a h;
    h.update_pod(capacity_);
    for (const auto& epi : episodes_) {
        h.update_pod(epi.episode_id);
        h.update(epi.subtask_id);
        h.update_pod(epi.completion);
        for (const auto& e : epi.entries) {
            for (double v : e.s.to_vector()) h.update_pod(v);
            h.update_pod(cw::action_index(e.a));
            h.update_pod(e.r);
            for (double v : e.s_next.to_vector()) h.update_pod(v);
            h.update_pod(e.done);
            h.update_pod(e.t);
        }
    }
    return h.digest();
}

void ExperiencePool::set_score_cache(const std::string& subtask_id, int64_t episode_id, int t,
                                     double score) {
    for (auto& epi : episodes_) {
        if (epi.episode_id != episode_id || epi.subtask_id != subtask_id) continue;
        for (auto& e : epi.entries) {
            if (e.t == t) {
                e.score_cache = score;
                return;
            }
        }
    }
}

double completion_ratio(cw::Item subtask_target, const std::vector<ExperienceEntry>& trajectory) {
    const auto chain = cw::milestone_chain(subtask_target);
    if (trajectory.empty() || chain.empty()) return 0.0;

    auto held_in = [](const cw::Observation& o, cw::Item it) {
        return o.inventory_vec[static_cast<size_t>(it)] > 0.5 / 9.0;
    };

    int achieved = 0;
    for (cw::Item m : chain) {
        if (m == subtask_target) {
            // The target milestone mirrors task_success: held at the end.
            if (held_in(trajectory.back().s_next, m)) achieved += 1;
            continue;
        }
        bool ever = held_in(trajectory.front().s, m);
        for (const auto& e : trajectory) {
            if (ever) break;
            ever = held_in(e.s_next, m);
        }
        if (ever) achieved += 1;
    }
    return static_cast<double>(achieved) / static_cast<double>(chain.size());
}

std::string entry_to_line(const ExperienceEntry& e, bool full_vectors) {
    std::ostringstream os;
    char buf[160];
    Fnv1a hs, hn;
    for (double v : e.s.to_vector()) hs.update_pod(v);
    for (double v : e.s_next.to_vector()) hn.update_pod(v);
    std::snprintf(buf, sizeof(buf), "episode=%lld t=%d subtask=%s action=%s reward=%.6f done=%d completion=%.6f",
                  static_cast<long long>(e.episode_id), e.t, e.subtask_id.c_str(),
                  cw::action_to_string(e.a).c_str(), e.r, e.done, e.completion);
    os << buf;
    if (e.score_cache) {
        std::snprintf(buf, sizeof(buf), " score=%.10g", *e.score_cache);
        os << buf;
    }
    os << " s_hash=" << hex64(hs.digest()) << " s_next_hash=" << hex64(hn.digest());
    if (full_vectors) {
        os << " s=[";
        const auto sv = e.s.to_vector();
        for (size_t i = 0; i < sv.size(); ++i) os << (i ? "," : "") << sv[i];
        os << "] s_next=[";
        const auto nv = e.s_next.to_vector();
        for (size_t i = 0; i < nv.size(); ++i) os << (i ? "," : "") << nv[i];
        os << "]";
    }
    return os.str();
}

}  // namespace evoagent::mep
