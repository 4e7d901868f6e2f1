#pragma once

#include <cstdint>
#include <vector>

namespace evoagent::ctl {

// Dense tabular MDP used as the planning oracle in tests and acceptance.
struct TabularMDP {
    int n_states = 0;
    int n_actions = 0;
    std::vector<double> P;  // [s][a][s'] row-major
    std::vector<double> R;  // [s][a]
    double gamma = 0.9;

    double p(int s, int a, int s2) const {
        return P[(static_cast<size_t>(s) * n_actions + a) * n_states + s2];
    }
    double r(int s, int a) const { return R[static_cast<size_t>(s) * n_actions + a]; }
    // Deterministic MDPs store one-hot rows; returns the successor.
    int successor(int s, int a) const;
    void validate() const;  // each P row sums to 1 within 1e-9
};

struct ValueIterationResult {
    std::vector<double> V;
    std::vector<int> greedy;  // argmax_a Q(s,a), lowest index on ties
    int iterations = 0;
};

ValueIterationResult value_iteration(const TabularMDP& mdp, double tol);

std::vector<double> q_values(const TabularMDP& mdp, const std::vector<double>& V, int s);

double bellman_residual(const TabularMDP& mdp, const std::vector<double>& V);

// Deterministic random MDP: one-hot transitions, rewards uniform in [0,1].
TabularMDP random_deterministic_mdp(int n_states, int n_actions, double gamma, uint64_t seed);

// Stochastic random MDP with Dirichlet-ish rows for the Monte-Carlo checks.
TabularMDP random_stochastic_mdp(int n_states, int n_actions, double gamma, uint64_t seed);

}  // namespace evoagent::ctl
