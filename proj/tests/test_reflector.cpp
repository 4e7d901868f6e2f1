#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "evoagent/core/errors.hpp"
#include "evoagent/kernels/kernels.hpp"
#include "evoagent/reflect/reflector.hpp"
#include "test_util.hpp"

using namespace evoagent;
using namespace evoagent::refl;
using evoagent::cw::Item;

namespace {

const plan::SubtaskRegistry& registry() {
    static plan::SubtaskRegistry r;
    return r;
}

wm::ModelDims tiny_dims() {
    wm::ModelDims d;
    d.obs = cw::EnvConfig{9, 9, 1}.obs_dim();
    d.h = 10;
    d.z = 4;
    d.act = cw::action_space_size();
    d.enc_hidden = 8;
    d.dyn_hidden = 8;
    d.dec_hidden = 8;
    return d;
}

cw::Observation obs_with(std::initializer_list<std::pair<Item, int>> items, uint64_t noise_seed) {
    cw::Observation o;
    Rng rng(noise_seed);
    o.patch.assign(9 * cw::kNumTiles, 0.0);
    for (int cell = 0; cell < 9; ++cell) {
        o.patch[static_cast<size_t>(cell) * cw::kNumTiles + rng.uniform_int(cw::kNumTiles)] = 1.0;
    }
    o.inventory_vec.assign(cw::kNumItems, 0.0);
    for (const auto& [it, cnt] : items) {
        o.inventory_vec[static_cast<size_t>(it)] =
            cw::is_tool(it) ? (cnt > 0 ? 1.0 : 0.0) : std::min(cnt, 9) / 9.0;
    }
    o.last_reward = rng.uniform01();
    return o;
}

mep::ExperienceEntry make_entry(uint64_t seed, int t = 0, int64_t ep = 0) {
    mep::ExperienceEntry e;
    e.s = obs_with({{Item::log, static_cast<int>(seed % 3)}}, seed);
    e.s_next = obs_with({{Item::log, static_cast<int>(seed % 3) + 1}}, seed + 1);
    e.a = cw::action_from_index(static_cast<int>(seed % cw::action_space_size()));
    e.r = (seed % 5 == 0) ? 1.0 : -0.01;
    e.done = seed % 4 == 0;
    e.episode_id = ep;
    e.t = t;
    return e;
}

}  // namespace

TEST_CASE("threshold schedule matches rho0*exp(-ck)") {
    CHECK(rho_threshold(5e-3, 0.3, 0) == 5e-3);
    CHECK(rho_threshold(5e-3, 0.3, 1) == doctest::Approx(3.7040911034085895e-3).epsilon(1e-12));
    CHECK(rho_threshold(5e-3, 0.5, 2) == doctest::Approx(1.8393972058572116e-3).epsilon(1e-12));
    for (int k = 0; k < 20; ++k) {
        CHECK(rho_threshold(5e-3, 0.3, k + 1) < rho_threshold(5e-3, 0.3, k));
        CHECK(rho_threshold(5e-3, 0.5, k + 1) / rho_threshold(5e-3, 0.5, k) ==
              doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
        CHECK(rho_threshold(5e-3, 0.3, k) > 0.0);
    }
}

TEST_CASE("subtask score reference fixtures") {
    ReflectorConfig cfg;
    auto params = wm::ModelParams::init(tiny_dims(), 3);

    SUBCASE("all terms at one gives 0.75") {
        const auto& goal = registry().by_id("gather_log");
        mep::PoolStats stats;
        auto& st = stats.by_subtask["gather_log"];
        st.episodes_total = 2;
        st.episodes_success = 2;
        st.steps_total = 40;
        st.steps_success = 40;
        st.completion_sum = 2.0;
        // no probe entries: importance term 0, theta == theta_old anyway
        const auto score = subtask_score(goal, goal, stats, params, {}, cfg);
        CHECK(score.relevance == doctest::Approx(1.0));
        CHECK(score.efficiency == doctest::Approx(1.0));
        CHECK(score.importance == 0.0);
        CHECK(score.completion == doctest::Approx(1.0));
        CHECK(score.tau == doctest::Approx(0.75));
    }
    SUBCASE("all terms zero gives zero") {
        const auto& g = registry().by_id("craft_iron_ingot");
        const auto& goal = registry().by_id("gather_log");  // disjoint features
        const auto score = subtask_score(g, goal, {}, params, {}, cfg);
        CHECK(score.tau == 0.0);
    }
    SUBCASE("hand-computed mixed fixture gives 0.1875") {
        const auto& g = registry().by_id("craft_iron_ingot");
        const auto& goal = registry().by_id("gather_log");
        mep::PoolStats stats;
        auto& st = stats.by_subtask["craft_iron_ingot"];
        st.episodes_total = 4;
        st.steps_total = 200;
        st.steps_success = 50;
        st.completion_sum = 2.0;  // mean completion 0.5
        const auto score = subtask_score(g, goal, stats, params, {}, cfg);
        CHECK(score.tau == doctest::Approx(0.1875).epsilon(1e-12));
    }
}

TEST_CASE("identical old and new parameters give zero importance and info gain") {
    auto params = wm::ModelParams::init(tiny_dims(), 5);
    params.archive_theta_old();
    const auto e = make_entry(11);
    ReflectorConfig cfg;
    const auto old = old_model_view(params);
    const auto score = experience_score(e, params, old, cfg);
    CHECK(score.info_gain == 0.0);
}

TEST_CASE("experience score weighted-combination fixture (squashing off)") {
    // eta = 1/3 each, |td|=0.3, grad term 0.6, kl term 0 -> epsilon = 0.3
    ReflectorConfig cfg;
    cfg.normalize_scores = false;
    const double eps = cfg.eta1 * 0.3 + cfg.eta2 * 0.6 + cfg.eta3 * 0.0;
    CHECK(eps == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("experience score matches an independent straight-line recomputation") {
    auto params = wm::ModelParams::init(tiny_dims(), 21);
    // make old genuinely different
    {
        auto th = params.theta();
        params.archive_theta_old();
        for (size_t i = 0; i < th.size(); i += 3) th[i] += 0.01;
    }
    ReflectorConfig cfg;
    cfg.normalize_scores = true;

    const auto d = params.dims();
    const auto old = old_model_view(params);

    for (uint64_t trial = 0; trial < 8; ++trial) {
        const auto e = make_entry(100 + trial);
        const auto got = experience_score(e, params, old, cfg);

        // ---- straight-line recomputation, no shared engine code ----
        auto matvec = [](std::span<const double> W, const std::vector<double>& x, int rows,
                         std::span<const double> b) {
            std::vector<double> y(static_cast<size_t>(rows));
            const int cols = static_cast<int>(x.size());
            for (int r = 0; r < rows; ++r) {
                double acc = b.empty() ? 0.0 : b[static_cast<size_t>(r)];
                for (int c = 0; c < cols; ++c) acc += W[static_cast<size_t>(r) * cols + c] * x[static_cast<size_t>(c)];
                y[static_cast<size_t>(r)] = acc;
            }
            return y;
        };
        auto tanh_all = [](std::vector<double> v) {
            for (auto& x : v) x = std::tanh(x);
            return v;
        };
        auto forward = [&](const wm::ModelParams& m, const mep::ExperienceEntry& entry) {
            // position 0: h=0, z = posterior mean of s
            const auto sv = entry.s.to_vector();
            std::vector<double> h0(static_cast<size_t>(d.h), 0.0);
            std::vector<double> x0(h0.begin(), h0.end());
            x0.insert(x0.end(), sv.begin(), sv.end());
            const auto ue0 = tanh_all(matvec(m.seg(wm::Seg::enc_w1), x0, d.enc_hidden,
                                             m.seg(wm::Seg::enc_b1)));
            const auto qq0 = matvec(m.seg(wm::Seg::enc_w2), ue0, 2 * d.z, m.seg(wm::Seg::enc_b2));
            std::vector<double> z0(qq0.begin(), qq0.begin() + d.z);
            // position 1: sequence step with the action one-hot
            std::vector<double> xs(h0.begin(), h0.end());
            xs.insert(xs.end(), z0.begin(), z0.end());
            std::vector<double> onehot(static_cast<size_t>(d.act), 0.0);
            onehot[static_cast<size_t>(cw::action_index(entry.a))] = 1.0;
            xs.insert(xs.end(), onehot.begin(), onehot.end());
            const auto gate_raw = matvec(m.seg(wm::Seg::seq_wg), xs, d.h, m.seg(wm::Seg::seq_bg));
            const auto cand = tanh_all(matvec(m.seg(wm::Seg::seq_wc), xs, d.h, m.seg(wm::Seg::seq_bc)));
            std::vector<double> h1(static_cast<size_t>(d.h));
            for (int i = 0; i < d.h; ++i) {
                const double g = 1.0 / (1.0 + std::exp(-gate_raw[static_cast<size_t>(i)]));
                h1[static_cast<size_t>(i)] = (1.0 - g) * h0[static_cast<size_t>(i)] + g * cand[static_cast<size_t>(i)];
            }
            const auto nv = entry.s_next.to_vector();
            std::vector<double> x1(h1.begin(), h1.end());
            x1.insert(x1.end(), nv.begin(), nv.end());
            const auto ue1 = tanh_all(matvec(m.seg(wm::Seg::enc_w1), x1, d.enc_hidden,
                                             m.seg(wm::Seg::enc_b1)));
            const auto qq1 = matvec(m.seg(wm::Seg::enc_w2), ue1, 2 * d.z, m.seg(wm::Seg::enc_b2));
            std::vector<double> z1(qq1.begin(), qq1.begin() + d.z);
            // prior at position 1
            const auto up = tanh_all(matvec(m.seg(wm::Seg::dyn_w1), h1, d.dyn_hidden,
                                            m.seg(wm::Seg::dyn_b1)));
            const auto pp = matvec(m.seg(wm::Seg::dyn_w2), up, 2 * d.z, m.seg(wm::Seg::dyn_b2));
            struct Out {
                std::vector<double> h1, z1, pmu, psig;
            } o;
            o.h1 = h1;
            o.z1 = z1;
            o.pmu.assign(pp.begin(), pp.begin() + d.z);
            o.psig.resize(static_cast<size_t>(d.z));
            for (int i = 0; i < d.z; ++i) {
                const double raw = pp[static_cast<size_t>(d.z + i)];
                const double sp = raw > 0 ? raw + std::log1p(std::exp(-raw)) : std::log1p(std::exp(raw));
                o.psig[static_cast<size_t>(i)] = sp + 1e-3;
            }
            // z0 needed for the critic V(s)
            o.z1.swap(o.z1);
            return std::make_pair(o, z0);
        };

        const auto [fwd_new, z0_new] = forward(params, e);
        const auto [fwd_old, z0_old] = forward(old, e);
        (void)z0_old;

        // TD error from the critic head weights
        auto value = [&](const std::vector<double>& h, const std::vector<double>& z) {
            double v = params.seg(wm::Seg::val_b)[0];
            const auto w = params.seg(wm::Seg::val_w);
            for (int i = 0; i < d.h; ++i) v += w[static_cast<size_t>(i)] * h[static_cast<size_t>(i)];
            for (int i = 0; i < d.z; ++i) v += w[static_cast<size_t>(d.h + i)] * z[static_cast<size_t>(i)];
            return v;
        };
        const std::vector<double> h0(static_cast<size_t>(d.h), 0.0);
        const double td = e.r +
                          cfg.gamma_critic * (1.0 - e.done) * value(fwd_new.h1, fwd_new.z1) -
                          value(h0, z0_new);

        // head-restricted gradient norm: decoder + reward + continue at (h1, z1)
        std::vector<double> xd(fwd_new.h1.begin(), fwd_new.h1.end());
        xd.insert(xd.end(), fwd_new.z1.begin(), fwd_new.z1.end());
        const auto ud = tanh_all(matvec(params.seg(wm::Seg::dec_w1), xd, d.dec_hidden,
                                        params.seg(wm::Seg::dec_b1)));
        const auto ologit = matvec(params.seg(wm::Seg::dec_w2), ud, d.obs,
                                   params.seg(wm::Seg::dec_b2));
        const auto nv = e.s_next.to_vector();
        double grad_sq = 0.0;
        std::vector<double> dol(static_cast<size_t>(d.obs));
        for (int i = 0; i < d.obs; ++i) {
            const double oh = 1.0 / (1.0 + std::exp(-ologit[static_cast<size_t>(i)]));
            dol[static_cast<size_t>(i)] = (oh - nv[static_cast<size_t>(i)]) * oh * (1.0 - oh);
        }
        // dec_w2, dec_b2
        for (int i = 0; i < d.obs; ++i) {
            for (int jj = 0; jj < d.dec_hidden; ++jj) {
                const double gw = dol[static_cast<size_t>(i)] * ud[static_cast<size_t>(jj)];
                grad_sq += gw * gw;
            }
            grad_sq += dol[static_cast<size_t>(i)] * dol[static_cast<size_t>(i)];
        }
        // dec_w1, dec_b1
        for (int jj = 0; jj < d.dec_hidden; ++jj) {
            double dud = 0.0;
            for (int i = 0; i < d.obs; ++i) {
                dud += dol[static_cast<size_t>(i)] *
                       params.seg(wm::Seg::dec_w2)[static_cast<size_t>(i) * d.dec_hidden + jj];
            }
            dud *= 1.0 - ud[static_cast<size_t>(jj)] * ud[static_cast<size_t>(jj)];
            for (size_t c = 0; c < xd.size(); ++c) grad_sq += dud * xd[c] * dud * xd[c];
            grad_sq += dud * dud;
        }
        // reward head
        double rhat = params.seg(wm::Seg::rew_b)[0];
        for (size_t c = 0; c < xd.size(); ++c) rhat += params.seg(wm::Seg::rew_w)[c] * xd[c];
        const double dr = rhat - e.r;
        for (size_t c = 0; c < xd.size(); ++c) grad_sq += dr * xd[c] * dr * xd[c];
        grad_sq += dr * dr;
        // continue head
        double cl = params.seg(wm::Seg::con_b)[0];
        for (size_t c = 0; c < xd.size(); ++c) cl += params.seg(wm::Seg::con_w)[c] * xd[c];
        const double dc = 1.0 / (1.0 + std::exp(-cl)) - (1.0 - e.done);
        for (size_t c = 0; c < xd.size(); ++c) grad_sq += dc * xd[c] * dc * xd[c];
        grad_sq += dc * dc;
        const double grad_norm = std::sqrt(grad_sq);

        // info gain KL(new || old) between prior Gaussians
        double kl = 0.0;
        for (int i = 0; i < d.z; ++i) {
            const double mq = fwd_new.pmu[static_cast<size_t>(i)], sq = fwd_new.psig[static_cast<size_t>(i)];
            const double mp = fwd_old.pmu[static_cast<size_t>(i)], sp = fwd_old.psig[static_cast<size_t>(i)];
            kl += std::log(sp / sq) + (sq * sq + (mq - mp) * (mq - mp)) / (2.0 * sp * sp) - 0.5;
        }

        auto sqz = [](double x) { return x / (1.0 + x); };
        const double expected = cfg.eta1 * sqz(std::abs(td)) + cfg.eta2 * sqz(grad_norm) +
                                cfg.eta3 * sqz(kl);
        CHECK(got.epsilon == doctest::Approx(expected).epsilon(1e-10));
    }
}

TEST_CASE("experience selection weights follow eps / max eps") {
    ReflectorConfig cfg;
    cfg.normalize_scores = false;
    SUBCASE("single selected entry carries weight 1") {
        const auto sel = select_experiences({0.42}, 0, cfg);
        REQUIRE(sel.size() == 1);
        CHECK(sel[0].weight == 1.0);
    }
    SUBCASE("{0.2, 0.4} both selected gives weights {0.5, 1.0}") {
        const auto sel = select_experiences({0.2, 0.4}, 0, cfg);
        REQUIRE(sel.size() == 2);
        CHECK(sel[0].weight == doctest::Approx(0.5));
        CHECK(sel[1].weight == doctest::Approx(1.0));
    }
    SUBCASE("weights lie in (0,1] and the max is exactly 1") {
        Rng rng(9);
        for (int trial = 0; trial < 50; ++trial) {
            std::vector<double> eps(static_cast<size_t>(1 + rng.uniform_int(20)));
            for (auto& v : eps) v = rng.uniform01();
            const auto sel = select_experiences(eps, rng.uniform_int(5), cfg);
            double max_w = 0.0;
            for (const auto& s : sel) {
                CHECK(s.weight > 0.0);
                CHECK(s.weight <= 1.0);
                max_w = std::max(max_w, s.weight);
            }
            if (!sel.empty()) CHECK(max_w == 1.0);
        }
    }
}

TEST_CASE("selection is monotone in the round index for fixed scores") {
    ReflectorConfig cfg;
    Rng rng(31);
    std::vector<double> scores(12);
    for (auto& s : scores) s = rng.uniform01() * 0.01;
    std::set<size_t> prev;
    for (int k = 0; k < 8; ++k) {
        const auto sel = select_by_threshold(scores, rho_threshold(cfg.rho0, cfg.c_s, k),
                                             cfg.normalize_scores);
        std::set<size_t> cur(sel.begin(), sel.end());
        for (size_t i : prev) CHECK(cur.count(i) == 1);
        prev = cur;
    }
}

TEST_CASE("all-zero scores select nothing") {
    ReflectorConfig cfg;
    CHECK(select_by_threshold({0.0, 0.0, 0.0}, rho_threshold(cfg.rho0, cfg.c_s, 0), true).empty());
}

TEST_CASE("fisher diagonal properties") {
    auto params = wm::ModelParams::init(tiny_dims(), 41);
    const auto e1 = make_entry(7);
    const auto e2 = make_entry(8);

    SUBCASE("single entry equals the squared gradient exactly") {
        const auto f = fisher_diag(params, {&e1});
        const auto g = wm::entry_pred_grad(params, e1);
        for (size_t i = 0; i < f.size(); ++i) CHECK(f[i] == g[i] * g[i]);
    }
    SUBCASE("two entries equal the elementwise mean of the singles") {
        const auto f12 = fisher_diag(params, {&e1, &e2});
        const auto f1 = fisher_diag(params, {&e1});
        const auto f2 = fisher_diag(params, {&e2});
        for (size_t i = 0; i < f12.size(); ++i) {
            CHECK(f12[i] == doctest::Approx(0.5 * (f1[i] + f2[i])).epsilon(1e-12));
        }
    }
    SUBCASE("zero gradients give a zero diagonal") {
        auto zero = wm::ModelParams::zeros(tiny_dims());
        zero.seg(wm::Seg::con_b)[0] = 40.0;  // continue exact
        mep::ExperienceEntry e;
        e.s.patch.assign(9 * cw::kNumTiles, 0.5);
        e.s.inventory_vec.assign(cw::kNumItems, 0.5);
        e.s.last_reward = 0.5;
        e.s_next = e.s;
        e.a = cw::action_from_index(0);
        e.r = 0.0;   // reward head at zero weights is exact
        e.done = 0;  // continue target 1 met exactly
        const auto f = fisher_diag(zero, {&e});
        for (double v : f) CHECK(v == 0.0);
    }
}

TEST_CASE("reflect_update honours the anchor") {
    auto params = wm::ModelParams::init(tiny_dims(), 51);
    params.archive_theta_old();
    std::vector<double> fisher(params.size(), 1.0);
    params.set_fisher(fisher);
    const auto e = make_entry(13);
    ReflectorConfig cfg;
    cfg.reflect_lr = 1e-3;

    SUBCASE("at theta == theta_old the penalty and its gradient vanish") {
        auto with_mu = params;
        cfg.mu = 1e6;
        const auto r1 = reflect_update(with_mu, {&e}, {1.0}, cfg);
        auto without_mu = params;
        cfg.mu = 0.0;
        const auto r2 = reflect_update(without_mu, {&e}, {1.0}, cfg);
        CHECK(r1.reg_loss == 0.0);
        CHECK(with_mu.bitwise_equal(without_mu));
        CHECK(r1.pred_loss == r2.pred_loss);
    }

    SUBCASE("mu=0 reduces to the weighted prediction step") {
        cfg.mu = 0.0;
        auto p = params;
        const auto res = reflect_update(p, {&e}, {0.7}, cfg);
        const auto g = wm::entry_pred_grad(params, e);
        // reconstruct the expected update by hand
        std::vector<double> expected(params.theta().begin(), params.theta().end());
        double norm = 0.0;
        for (size_t i = 0; i < g.size(); ++i) norm += 0.7 * g[i] * 0.7 * g[i];
        norm = std::sqrt(norm);
        const double bound = cfg.clip_ratio * std::sqrt(kern::sum_sq(expected.data(), expected.size()));
        const double scale = norm > bound ? bound / norm : 1.0;
        for (size_t i = 0; i < g.size(); ++i) expected[i] -= cfg.reflect_lr * scale * 0.7 * g[i];
        for (size_t i = 0; i < g.size(); ++i) {
            CHECK(p.theta()[i] == doctest::Approx(expected[i]).epsilon(1e-12));
        }
        CHECK(res.applied);
    }

    SUBCASE("regularizer gradient matches finite differences on a small block") {
        // displace theta from the anchor
        auto p = params;
        {
            auto th = p.theta();
            Rng rng(5);
            for (size_t i = 0; i < th.size(); ++i) th[i] += 0.01 * rng.normal();
        }
        cfg.mu = 0.37;
        const auto theta = p.theta();
        const auto theta_old = p.theta_old();
        for (size_t i = 0; i < 10; ++i) {
            const double d = theta[i] - theta_old[i];
            const double analytic = cfg.mu * 2.0 * p.fisher()[i] * d;
            const double h = 1e-6;
            auto omega = [&](double shift) {
                const double dd = d + shift;
                return cfg.mu * p.fisher()[i] * dd * dd;
            };
            const double fd = (omega(h) - omega(-h)) / (2.0 * h);
            CHECK(analytic == doctest::Approx(fd).epsilon(1e-6));
        }
    }

    SUBCASE("a strong anchor with an exactly opposing displacement freezes the step") {
        cfg.mu = 1e3;
        const auto g = wm::entry_pred_grad(params, e);
        auto p = params;
        // place theta_old so the penalty gradient cancels the prediction term
        auto told = p.theta_old();
        for (size_t i = 0; i < told.size(); ++i) {
            told[i] = p.theta()[i] + g[i] / (2.0 * cfg.mu);
        }
        const auto before = std::vector<double>(p.theta().begin(), p.theta().end());
        reflect_update(p, {&e}, {1.0}, cfg);
        double moved = 0.0;
        for (size_t i = 0; i < before.size(); ++i) {
            const double diff = p.theta()[i] - before[i];
            moved += diff * diff;
        }
        const double unreg_step = cfg.reflect_lr * std::sqrt(kern::sum_sq(g.data(), g.size()));
        CHECK(std::sqrt(moved) < 0.01 * unreg_step);
    }

    SUBCASE("empty selection is a no-op") {
        auto p = params;
        const auto res = reflect_update(p, {}, {}, cfg);
        CHECK_FALSE(res.applied);
        CHECK(p.bitwise_equal(params));
    }
}

TEST_CASE("reflect pass over a populated pool") {
    auto params = wm::ModelParams::init(tiny_dims(), 61);
    params.archive_theta_old();
    mep::ExperiencePool pool(10000);
    for (int64_t ep = 0; ep < 3; ++ep) {
        std::vector<mep::ExperienceEntry> traj;
        for (int t = 0; t < 6; ++t) traj.push_back(make_entry(static_cast<uint64_t>(ep * 10 + t), t, ep));
        pool.append_trajectory(traj, ep % 2 ? "gather_log" : "craft_planks", ep % 2 ? 1.0 : 0.5);
    }
    ReflectorConfig cfg;
    cfg.kl_probe_entries = 4;
    cfg.max_entries_per_subtask = 8;
    const auto& goal = registry().by_id("craft_wooden_pickaxe");

    SUBCASE("empty pool is a no-op round") {
        mep::ExperiencePool empty_pool(100);
        auto p = params;
        const auto round = reflect(empty_pool, goal, p, cfg, 0, registry(), "gather_log");
        CHECK_FALSE(round.updated);
        CHECK(round.selected_subtasks.empty());
        CHECK(p.bitwise_equal(params));
    }

    SUBCASE("rounds are reproducible bit-exactly") {
        auto p1 = params;
        auto p2 = params;
        auto pool2 = pool;
        const auto r1 = reflect(pool, goal, p1, cfg, 2, registry(), "gather_log");
        const auto r2 = reflect(pool2, goal, p2, cfg, 2, registry(), "gather_log");
        CHECK(r1.pred_loss == r2.pred_loss);
        CHECK(r1.reg_loss == r2.reg_loss);
        CHECK(r1.selected_subtasks == r2.selected_subtasks);
        CHECK(r1.experiences_selected == r2.experiences_selected);
        CHECK(p1.bitwise_equal(p2));
        CHECK(r1.rho_subtask == rho_threshold(cfg.rho0, cfg.c_s, 2));
        CHECK(r1.rho_exp == rho_threshold(cfg.rho0, cfg.c_h, 2));
    }

    SUBCASE("stage-2-only ablation selects every candidate subtask") {
        auto p = params;
        ReflectorConfig r2only = cfg;
        r2only.stage1_enabled = false;
        const auto round = reflect(pool, goal, p, r2only, 0, registry(), "gather_log");
        CHECK(round.selected_subtasks.size() == pool.stats().by_subtask.size());
    }

    SUBCASE("stage-2 selection equals brute force on small pools") {
        auto p = params;
        const int k = 1;
        // reproduce the internal pipeline by hand
        auto probe_params = p;  // reflect updates the critic first
        std::vector<const mep::ExperienceEntry*> candidates;
        for (const auto& [id, st] : pool.stats().by_subtask) {
            (void)st;
            // assume stage 1 selects everything at these scores; verify below
            const auto recent = pool.recent_by_subtask(id, cfg.max_entries_per_subtask);
            candidates.insert(candidates.end(), recent.begin(), recent.end());
        }
        std::vector<wm::CriticTransition> trs;
        for (const auto* e : candidates) trs.push_back(wm::make_critic_transition(probe_params, *e));
        for (int i = 0; i < cfg.critic_steps; ++i) {
            wm::critic_update(probe_params, trs, cfg.gamma_critic, cfg.reflect_lr);
        }
        const auto old = old_model_view(probe_params);
        std::vector<double> eps;
        for (const auto* e : candidates) {
            eps.push_back(experience_score(*e, probe_params, old, cfg).epsilon);
        }
        const auto expected_sel = select_experiences(eps, k, cfg);

        const auto round = reflect(pool, goal, p, cfg, k, registry(), "gather_log");
        CHECK(round.selected_subtasks.size() == pool.stats().by_subtask.size());
        CHECK(round.experiences_selected == expected_sel.size());
        double expected_max_w = 0.0;
        for (const auto& s : expected_sel) expected_max_w = std::max(expected_max_w, s.weight);
        CHECK(round.max_weight == doctest::Approx(expected_max_w).epsilon(1e-12));
    }
}

TEST_CASE("config weight sums are validated") {
    ReflectorConfig cfg;
    cfg.lambda1 = 0.5;  // sum now 1.25
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.lambda1 = 0.25;
    cfg.eta1 = 0.5;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
