#include "evoagent/control/mdp.hpp"

#include <algorithm>
#include <cmath>

#include "evoagent/core/errors.hpp"
#include "evoagent/core/rng.hpp"

namespace evoagent::ctl {

int TabularMDP::successor(int s, int a) const {
    for (int s2 = 0; s2 < n_states; ++s2) {
        if (p(s, a, s2) == 1.0) return s2;
    }
    throw ValidationError("transition row is not one-hot");
}

void TabularMDP::validate() const {
    if (n_states <= 0 || n_actions <= 0) throw ValidationError("empty MDP");
    if (P.size() != static_cast<size_t>(n_states) * n_actions * n_states ||
        R.size() != static_cast<size_t>(n_states) * n_actions) {
        throw ValidationError("MDP table sizes inconsistent");
    }
    for (int s = 0; s < n_states; ++s) {
        for (int a = 0; a < n_actions; ++a) {
            double sum = 0.0;
            for (int s2 = 0; s2 < n_states; ++s2) {
                const double v = p(s, a, s2);
                if (v < 0.0) throw ValidationError("negative transition probability");
                sum += v;
            }
            if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("transition row does not sum to 1");
        }
    }
}

std::vector<double> q_values(const TabularMDP& mdp, const std::vector<double>& V, int s) {
    std::vector<double> q(static_cast<size_t>(mdp.n_actions));
    for (int a = 0; a < mdp.n_actions; ++a) {
        double ev = 0.0;
        for (int s2 = 0; s2 < mdp.n_states; ++s2) ev += mdp.p(s, a, s2) * V[static_cast<size_t>(s2)];
        q[static_cast<size_t>(a)] = mdp.r(s, a) + mdp.gamma * ev;
    }
    return q;
}

ValueIterationResult value_iteration(const TabularMDP& mdp, double tol) {
    mdp.validate();
    if (mdp.gamma >= 1.0) throw ValidationError("value iteration needs gamma < 1");
    ValueIterationResult out;
    out.V.assign(static_cast<size_t>(mdp.n_states), 0.0);
    std::vector<double> next(out.V.size());
    for (;;) {
        ++out.iterations;
        double delta = 0.0;
        for (int s = 0; s < mdp.n_states; ++s) {
            const auto q = q_values(mdp, out.V, s);
            next[static_cast<size_t>(s)] = *std::max_element(q.begin(), q.end());
            delta = std::max(delta, std::abs(next[static_cast<size_t>(s)] - out.V[static_cast<size_t>(s)]));
        }
        out.V = next;
        if (delta < tol) break;
        if (out.iterations > 1000000) throw NumericError("value iteration failed to converge");
    }
    out.greedy.assign(static_cast<size_t>(mdp.n_states), 0);
    for (int s = 0; s < mdp.n_states; ++s) {
        const auto q = q_values(mdp, out.V, s);
        int best = 0;
        for (int a = 1; a < mdp.n_actions; ++a) {
            if (q[static_cast<size_t>(a)] > q[static_cast<size_t>(best)]) best = a;
        }
        out.greedy[static_cast<size_t>(s)] = best;
    }
    return out;
}

double bellman_residual(const TabularMDP& mdp, const std::vector<double>& V) {
    double worst = 0.0;
    for (int s = 0; s < mdp.n_states; ++s) {
        const auto q = q_values(mdp, V, s);
        const double vs = *std::max_element(q.begin(), q.end());
        worst = std::max(worst, std::abs(vs - V[static_cast<size_t>(s)]));
    }
    return worst;
}

TabularMDP random_deterministic_mdp(int n_states, int n_actions, double gamma, uint64_t seed) {
    Rng rng(derive_seed(seed, "det-mdp"));
    TabularMDP mdp;
    mdp.n_states = n_states;
    mdp.n_actions = n_actions;
    mdp.gamma = gamma;
    mdp.P.assign(static_cast<size_t>(n_states) * n_actions * n_states, 0.0);
    mdp.R.resize(static_cast<size_t>(n_states) * n_actions);
    for (int s = 0; s < n_states; ++s) {
        for (int a = 0; a < n_actions; ++a) {
            const int s2 = rng.uniform_int(n_states);
            mdp.P[(static_cast<size_t>(s) * n_actions + a) * n_states + s2] = 1.0;
            mdp.R[static_cast<size_t>(s) * n_actions + a] = rng.uniform01();
        }
    }
    return mdp;
}

TabularMDP random_stochastic_mdp(int n_states, int n_actions, double gamma, uint64_t seed) {
    Rng rng(derive_seed(seed, "stoch-mdp"));
    TabularMDP mdp;
    mdp.n_states = n_states;
    mdp.n_actions = n_actions;
    mdp.gamma = gamma;
    mdp.P.resize(static_cast<size_t>(n_states) * n_actions * n_states);
    mdp.R.resize(static_cast<size_t>(n_states) * n_actions);
    for (int s = 0; s < n_states; ++s) {
        for (int a = 0; a < n_actions; ++a) {
            double sum = 0.0;
            std::vector<double> row(static_cast<size_t>(n_states));
            for (auto& v : row) {
                v = -std::log(1.0 - rng.uniform01() + 1e-12);
                sum += v;
            }
            for (int s2 = 0; s2 < n_states; ++s2) {
                mdp.P[(static_cast<size_t>(s) * n_actions + a) * n_states + s2] = row[static_cast<size_t>(s2)] / sum;
            }
            // renormalize the tail against rounding
            double total = 0.0;
            for (int s2 = 0; s2 < n_states; ++s2) total += mdp.p(s, a, s2);
            for (int s2 = 0; s2 < n_states; ++s2) {
                mdp.P[(static_cast<size_t>(s) * n_actions + a) * n_states + s2] /= total;
            }
            mdp.R[static_cast<size_t>(s) * n_actions + a] = rng.uniform01();
        }
    }
    return mdp;
}

}  // namespace evoagent::ctl
