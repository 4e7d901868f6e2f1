#include "evoagent/harness/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "evoagent/core/errors.hpp"
#include "evoagent/core/hash.hpp"

namespace evoagent::harness {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    size_t b = s.find_last_not_of(" \t\r");
    if (a == std::string::npos) return "";
    return s.substr(a, b - a + 1);
}

using Sections = std::map<std::string, std::map<std::string, std::string>>;

Sections tokenize(const std::string& text) {
    Sections out;
    std::istringstream is(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash_pos = line.find('#');
        if (hash_pos != std::string::npos) line = line.substr(0, hash_pos);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError("unterminated section at line " + std::to_string(lineno));
            section = trim(line.substr(1, line.size() - 2));
            out[section];
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("expected key=value at line " + std::to_string(lineno));
        if (section.empty()) throw ConfigError("key outside any section at line " + std::to_string(lineno));
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("empty key at line " + std::to_string(lineno));
        if (out[section].count(key)) throw ConfigError("duplicate key " + key + " in [" + section + "]");
        out[section][key] = value;
    }
    return out;
}

// Typed extraction with consumption tracking; leftovers are errors.
class SectionReader {
public:
    SectionReader(const Sections& all, const std::string& name) : name_(name) {
        auto it = all.find(name);
        if (it != all.end()) kv_ = it->second;
    }

    bool has(const std::string& key) const { return kv_.count(key) > 0; }

    std::string str(const std::string& key, const std::string& fallback) {
        consumed_.insert(key);
        auto it = kv_.find(key);
        return it == kv_.end() ? fallback : it->second;
    }
    int integer(const std::string& key, int fallback) {
        consumed_.insert(key);
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        try {
            size_t pos = 0;
            const int v = std::stoi(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("trailing junk");
            return v;
        } catch (const std::exception&) {
            throw ConfigError("[" + name_ + "] " + key + ": not an integer: " + it->second);
        }
    }
    double real(const std::string& key, double fallback) {
        consumed_.insert(key);
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        try {
            size_t pos = 0;
            const double v = std::stod(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("trailing junk");
            return v;
        } catch (const std::exception&) {
            throw ConfigError("[" + name_ + "] " + key + ": not a number: " + it->second);
        }
    }
    bool boolean(const std::string& key, bool fallback) {
        consumed_.insert(key);
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        if (it->second == "true") return true;
        if (it->second == "false") return false;
        throw ConfigError("[" + name_ + "] " + key + ": expected true/false, got " + it->second);
    }
    std::vector<std::string> str_list(const std::string& key, std::vector<std::string> fallback) {
        consumed_.insert(key);
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        std::vector<std::string> out;
        std::istringstream is(it->second);
        std::string item;
        while (std::getline(is, item, ',')) {
            item = trim(item);
            if (!item.empty()) out.push_back(item);
        }
        return out;
    }
    std::vector<uint64_t> u64_list(const std::string& key, std::vector<uint64_t> fallback) {
        const auto strs = str_list(key, {});
        if (strs.empty() && !has(key)) return fallback;
        std::vector<uint64_t> out;
        for (const auto& s : strs) {
            try {
                out.push_back(std::stoull(s));
            } catch (const std::exception&) {
                throw ConfigError("[" + name_ + "] " + key + ": not an integer seed: " + s);
            }
        }
        return out;
    }

    void finish() const {
        for (const auto& [key, value] : kv_) {
            (void)value;
            if (!consumed_.count(key)) {
                throw ConfigError("unknown key '" + key + "' in section [" + name_ + "]");
            }
        }
    }

private:
    std::string name_;
    std::map<std::string, std::string> kv_;
    std::set<std::string> consumed_;
};

cw::EnvConfig read_env(SectionReader& r, const cw::EnvConfig& base) {
    cw::EnvConfig env = base;
    env.rows = r.integer("rows", base.rows);
    env.cols = r.integer("cols", base.cols);
    env.obs_radius = r.integer("obs_radius", base.obs_radius);
    env.density[cw::Tile::tree] = r.real("density_tree", base.density.at(cw::Tile::tree));
    env.density[cw::Tile::stone] = r.real("density_stone", base.density.at(cw::Tile::stone));
    env.density[cw::Tile::iron_ore] = r.real("density_iron", base.density.at(cw::Tile::iron_ore));
    env.density[cw::Tile::gold_ore] = r.real("density_gold", base.density.at(cw::Tile::gold_ore));
    env.density[cw::Tile::diamond_ore] =
        r.real("density_diamond", base.density.at(cw::Tile::diamond_ore));
    env.guarantee_task_resources = r.boolean("guarantee_resources", base.guarantee_task_resources);
    r.finish();
    return env;
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void emit_env(std::ostringstream& os, const std::string& section, const cw::EnvConfig& env) {
    os << "[" << section << "]\n";
    os << "rows = " << env.rows << "\n";
    os << "cols = " << env.cols << "\n";
    os << "obs_radius = " << env.obs_radius << "\n";
    os << "density_tree = " << fmt(env.density.at(cw::Tile::tree)) << "\n";
    os << "density_stone = " << fmt(env.density.at(cw::Tile::stone)) << "\n";
    os << "density_iron = " << fmt(env.density.at(cw::Tile::iron_ore)) << "\n";
    os << "density_gold = " << fmt(env.density.at(cw::Tile::gold_ore)) << "\n";
    os << "density_diamond = " << fmt(env.density.at(cw::Tile::diamond_ore)) << "\n";
    os << "guarantee_resources = " << (env.guarantee_task_resources ? "true" : "false") << "\n";
}

}  // namespace

void RunConfig::validate() const {
    if (tasks.empty()) throw ConfigError("task sequence is empty");
    for (const auto& t : tasks) cw::task_by_name(t);  // throws LookupError on bad names
    if (seeds.empty()) throw ConfigError("seed list is empty");
    if (episodes_per_task < 1) throw ConfigError("episodes_per_task must be >= 1");
    if (episode_step_budget < 1) throw ConfigError("episode_step_budget must be >= 1");
    if (train_every < 0) throw ConfigError("train_every must be >= 0");
    if (workers < 1) throw ConfigError("workers must be >= 1");
    if (toggles.continual_wm && !(toggles.reflector_stage1 || toggles.reflector_stage2)) {
        throw ConfigError("continual_wm requires a reflector stage enabled");
    }
    control.validate();
    reflector.validate();
}

const cw::EnvConfig& RunConfig::env_for(const std::string& task_name) const {
    auto it = env_overrides.find(task_name);
    return it == env_overrides.end() ? env : it->second;
}

RunConfig parse_config_text(const std::string& text) {
    const Sections sections = tokenize(text);
    const std::set<std::string> known = {"run", "toggles", "env", "model", "control", "reflector",
                                         "pool", "llm"};
    for (const auto& [name, kv] : sections) {
        (void)kv;
        if (known.count(name)) continue;
        if (name.rfind("env.", 0) == 0) continue;
        throw ConfigError("unknown section [" + name + "]");
    }

    RunConfig cfg;
    {
        SectionReader r(sections, "run");
        cfg.tasks = r.str_list("tasks", cfg.tasks);
        cfg.seeds = r.u64_list("seeds", cfg.seeds);
        cfg.episodes_per_task = r.integer("episodes_per_task", cfg.episodes_per_task);
        cfg.episode_step_budget = r.integer("episode_step_budget", cfg.episode_step_budget);
        cfg.train_every = r.integer("train_every", cfg.train_every);
        cfg.train_steps = r.integer("train_steps", cfg.train_steps);
        cfg.prefill_steps = r.integer("prefill_steps", cfg.prefill_steps);
        cfg.train_batch = r.integer("train_batch", cfg.train_batch);
        cfg.train_length = r.integer("train_length", cfg.train_length);
        cfg.eval_after_each_task = r.boolean("eval_after_each_task", cfg.eval_after_each_task);
        cfg.eval_episodes = r.integer("eval_episodes", cfg.eval_episodes);
        cfg.workers = r.integer("workers", cfg.workers);
        cfg.output_dir = r.str("output_dir", cfg.output_dir);
        cfg.dump_trajectories = r.boolean("dump_trajectories", cfg.dump_trajectories);
        cfg.save_model = r.str("save_model", cfg.save_model);
        cfg.save_pool = r.str("save_pool", cfg.save_pool);
        r.finish();
    }
    {
        SectionReader r(sections, "toggles");
        cfg.toggles.planner = r.boolean("planner", cfg.toggles.planner);
        cfg.toggles.controller = r.boolean("controller", cfg.toggles.controller);
        cfg.toggles.reflector_stage1 = r.boolean("reflector_stage1", cfg.toggles.reflector_stage1);
        cfg.toggles.reflector_stage2 = r.boolean("reflector_stage2", cfg.toggles.reflector_stage2);
        cfg.toggles.continual_wm = r.boolean("continual_wm", cfg.toggles.continual_wm);
        r.finish();
    }
    {
        SectionReader r(sections, "env");
        cfg.env = read_env(r, cfg.env);
    }
    for (const auto& [name, kv] : sections) {
        (void)kv;
        if (name.rfind("env.", 0) != 0) continue;
        const std::string task = name.substr(4);
        cw::task_by_name(task);
        SectionReader r(sections, name);
        cfg.env_overrides[task] = read_env(r, cfg.env);
    }
    {
        SectionReader r(sections, "model");
        cfg.model.h_dim = r.integer("h_dim", cfg.model.h_dim);
        cfg.model.z_dim = r.integer("z_dim", cfg.model.z_dim);
        cfg.model.enc_hidden = r.integer("enc_hidden", cfg.model.enc_hidden);
        cfg.model.dyn_hidden = r.integer("dyn_hidden", cfg.model.dyn_hidden);
        cfg.model.dec_hidden = r.integer("dec_hidden", cfg.model.dec_hidden);
        cfg.model.init_scale = r.real("init_scale", cfg.model.init_scale);
        cfg.model.lr = r.real("lr", cfg.model.lr);
        cfg.model.grad_clip = r.real("grad_clip", cfg.model.grad_clip);
        cfg.model.optimizer = r.str("optimizer", cfg.model.optimizer);
        if (cfg.model.optimizer != "sgd" && cfg.model.optimizer != "laprop") {
            throw ConfigError("optimizer must be sgd or laprop");
        }
        cfg.model.beta1 = r.real("beta1", cfg.model.beta1);
        cfg.model.beta2 = r.real("beta2", cfg.model.beta2);
        cfg.model.scales.beta_pred = r.real("beta_pred", cfg.model.scales.beta_pred);
        cfg.model.scales.beta_dyn = r.real("beta_dyn", cfg.model.scales.beta_dyn);
        cfg.model.scales.beta_rep = r.real("beta_rep", cfg.model.scales.beta_rep);
        cfg.model.scales.free_nats = r.real("free_nats", cfg.model.scales.free_nats);
        cfg.model.unimix = r.real("unimix", cfg.model.unimix);
        r.finish();
    }
    {
        SectionReader r(sections, "control");
        cfg.control.horizon = r.integer("horizon", cfg.control.horizon);
        cfg.control.candidates = r.integer("candidates", cfg.control.candidates);
        cfg.control.gamma = r.real("gamma", cfg.control.gamma);
        cfg.control.sigma = r.real("sigma", cfg.control.sigma);
        cfg.control.t_max = r.integer("t_max", cfg.control.t_max);
        cfg.control.alpha = r.real("alpha", cfg.control.alpha);
        cfg.control.verify_latent = r.boolean("verify_latent", cfg.control.verify_latent);
        cfg.control.subtask_scoped_actions =
            r.boolean("subtask_scoped_actions", cfg.control.subtask_scoped_actions);
        cfg.control.exhaustive_limit = r.integer("exhaustive_limit", cfg.control.exhaustive_limit);
        cfg.control.gamma_critic = r.real("gamma_critic", cfg.control.gamma_critic);
        r.finish();
    }
    {
        SectionReader r(sections, "reflector");
        auto& rf = cfg.reflector;
        rf.lambda1 = r.real("lambda1", rf.lambda1);
        rf.lambda2 = r.real("lambda2", rf.lambda2);
        rf.lambda3 = r.real("lambda3", rf.lambda3);
        rf.lambda4 = r.real("lambda4", rf.lambda4);
        rf.eta1 = r.real("eta1", rf.eta1);
        rf.eta2 = r.real("eta2", rf.eta2);
        rf.eta3 = r.real("eta3", rf.eta3);
        rf.rho0 = r.real("rho0", rf.rho0);
        rf.c_s = r.real("c_s", rf.c_s);
        rf.c_h = r.real("c_h", rf.c_h);
        rf.mu = r.real("mu", rf.mu);
        rf.normalize_scores = r.boolean("normalize_scores", rf.normalize_scores);
        rf.max_entries_per_subtask =
            static_cast<size_t>(r.integer("max_entries_per_subtask",
                                          static_cast<int>(rf.max_entries_per_subtask)));
        rf.kl_probe_entries = r.integer("kl_probe_entries", rf.kl_probe_entries);
        rf.full_grad_norm = r.boolean("full_grad_norm", rf.full_grad_norm);
        rf.reflect_lr = r.real("reflect_lr", rf.reflect_lr);
        rf.critic_steps = r.integer("critic_steps", rf.critic_steps);
        r.finish();
    }
    {
        SectionReader r(sections, "pool");
        cfg.pool_capacity = static_cast<size_t>(r.integer("capacity", static_cast<int>(cfg.pool_capacity)));
        r.finish();
    }
    {
        SectionReader r(sections, "llm");
        cfg.llm.enabled = r.boolean("enabled", cfg.llm.enabled);
        cfg.llm.endpoint = r.str("endpoint", cfg.llm.endpoint);
        cfg.llm.model = r.str("model", cfg.llm.model);
        cfg.llm.timeout_s = r.real("timeout_s", cfg.llm.timeout_s);
        r.finish();
    }

    // keep reflector toggles consistent with the ablation switches
    cfg.reflector.stage1_enabled = cfg.toggles.reflector_stage1;
    cfg.reflector.stage2_enabled = cfg.toggles.reflector_stage2;
    cfg.reflector.continual_wm = cfg.toggles.continual_wm;
    cfg.reflector.gamma_critic = cfg.control.gamma_critic;
    cfg.validate();
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config " + path);
    std::ostringstream buf;
    buf << is.rdbuf();
    return parse_config_text(buf.str());
}

std::string RunConfig::canonical_string() const {
    std::ostringstream os;
    os << "[run]\n";
    os << "tasks = ";
    for (size_t i = 0; i < tasks.size(); ++i) os << (i ? "," : "") << tasks[i];
    os << "\nseeds = ";
    for (size_t i = 0; i < seeds.size(); ++i) os << (i ? "," : "") << seeds[i];
    os << "\n";
    os << "episodes_per_task = " << episodes_per_task << "\n";
    os << "episode_step_budget = " << episode_step_budget << "\n";
    os << "train_every = " << train_every << "\n";
    os << "train_steps = " << train_steps << "\n";
    os << "prefill_steps = " << prefill_steps << "\n";
    os << "train_batch = " << train_batch << "\n";
    os << "train_length = " << train_length << "\n";
    os << "eval_after_each_task = " << (eval_after_each_task ? "true" : "false") << "\n";
    os << "eval_episodes = " << eval_episodes << "\n";
    os << "workers = " << workers << "\n";
    os << "output_dir = " << output_dir << "\n";
    os << "dump_trajectories = " << (dump_trajectories ? "true" : "false") << "\n";
    os << "save_model = " << save_model << "\n";
    os << "save_pool = " << save_pool << "\n";
    os << "[toggles]\n";
    os << "planner = " << (toggles.planner ? "true" : "false") << "\n";
    os << "controller = " << (toggles.controller ? "true" : "false") << "\n";
    os << "reflector_stage1 = " << (toggles.reflector_stage1 ? "true" : "false") << "\n";
    os << "reflector_stage2 = " << (toggles.reflector_stage2 ? "true" : "false") << "\n";
    os << "continual_wm = " << (toggles.continual_wm ? "true" : "false") << "\n";
    emit_env(os, "env", env);
    for (const auto& [task, override_env] : env_overrides) emit_env(os, "env." + task, override_env);
    os << "[model]\n";
    os << "h_dim = " << model.h_dim << "\n";
    os << "z_dim = " << model.z_dim << "\n";
    os << "enc_hidden = " << model.enc_hidden << "\n";
    os << "dyn_hidden = " << model.dyn_hidden << "\n";
    os << "dec_hidden = " << model.dec_hidden << "\n";
    os << "init_scale = " << fmt(model.init_scale) << "\n";
    os << "lr = " << fmt(model.lr) << "\n";
    os << "grad_clip = " << fmt(model.grad_clip) << "\n";
    os << "optimizer = " << model.optimizer << "\n";
    os << "beta1 = " << fmt(model.beta1) << "\n";
    os << "beta2 = " << fmt(model.beta2) << "\n";
    os << "beta_pred = " << fmt(model.scales.beta_pred) << "\n";
    os << "beta_dyn = " << fmt(model.scales.beta_dyn) << "\n";
    os << "beta_rep = " << fmt(model.scales.beta_rep) << "\n";
    os << "free_nats = " << fmt(model.scales.free_nats) << "\n";
    os << "unimix = " << fmt(model.unimix) << "\n";
    os << "[control]\n";
    os << "horizon = " << control.horizon << "\n";
    os << "candidates = " << control.candidates << "\n";
    os << "gamma = " << fmt(control.gamma) << "\n";
    os << "sigma = " << fmt(control.sigma) << "\n";
    os << "t_max = " << control.t_max << "\n";
    os << "alpha = " << fmt(control.alpha) << "\n";
    os << "verify_latent = " << (control.verify_latent ? "true" : "false") << "\n";
    os << "subtask_scoped_actions = " << (control.subtask_scoped_actions ? "true" : "false")
       << "\n";
    os << "exhaustive_limit = " << control.exhaustive_limit << "\n";
    os << "gamma_critic = " << fmt(control.gamma_critic) << "\n";
    os << "[reflector]\n";
    os << "lambda1 = " << fmt(reflector.lambda1) << "\n";
    os << "lambda2 = " << fmt(reflector.lambda2) << "\n";
    os << "lambda3 = " << fmt(reflector.lambda3) << "\n";
    os << "lambda4 = " << fmt(reflector.lambda4) << "\n";
    os << "eta1 = " << fmt(reflector.eta1) << "\n";
    os << "eta2 = " << fmt(reflector.eta2) << "\n";
    os << "eta3 = " << fmt(reflector.eta3) << "\n";
    os << "rho0 = " << fmt(reflector.rho0) << "\n";
    os << "c_s = " << fmt(reflector.c_s) << "\n";
    os << "c_h = " << fmt(reflector.c_h) << "\n";
    os << "mu = " << fmt(reflector.mu) << "\n";
    os << "normalize_scores = " << (reflector.normalize_scores ? "true" : "false") << "\n";
    os << "max_entries_per_subtask = " << reflector.max_entries_per_subtask << "\n";
    os << "kl_probe_entries = " << reflector.kl_probe_entries << "\n";
    os << "full_grad_norm = " << (reflector.full_grad_norm ? "true" : "false") << "\n";
    os << "reflect_lr = " << fmt(reflector.reflect_lr) << "\n";
    os << "critic_steps = " << reflector.critic_steps << "\n";
    os << "[pool]\n";
    os << "capacity = " << pool_capacity << "\n";
    os << "[llm]\n";
    os << "enabled = " << (llm.enabled ? "true" : "false") << "\n";
    os << "endpoint = " << llm.endpoint << "\n";
    os << "model = " << llm.model << "\n";
    os << "timeout_s = " << fmt(llm.timeout_s) << "\n";
    return os.str();
}

uint64_t RunConfig::config_hash() const { return fnv1a(canonical_string()); }

void write_config(const RunConfig& cfg, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write config " + path);
    os << cfg.canonical_string();
}

}  // namespace evoagent::harness
