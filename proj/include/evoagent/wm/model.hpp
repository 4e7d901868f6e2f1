#pragma once

#include <span>
#include <vector>

#include "evoagent/core/rng.hpp"
#include "evoagent/pool/pool.hpp"
#include "evoagent/wm/params.hpp"

namespace evoagent::wm {

constexpr double kSigmaMin = 1e-3;

struct LossScales {
    double beta_pred = 1.0;
    double beta_dyn = 1.0;
    double beta_rep = 0.1;
    double free_nats = 1.0;
};

struct LossBreakdown {
    double recon = 0.0;
    double reward_nll = 0.0;
    double continue_nll = 0.0;
    double kl_dyn = 0.0;
    double kl_rep = 0.0;
    double total = 0.0;
};

struct GaussianSample {
    std::vector<double> mu;
    std::vector<double> sigma;
    std::vector<double> z;
};

// Diagonal-Gaussian KL(q || p).
double gaussian_kl(std::span<const double> mu_q, std::span<const double> sigma_q,
                   std::span<const double> mu_p, std::span<const double> sigma_p);

// --- single-state heads (thin wrappers over the batched kernels) ---

GaussianSample encode(const ModelParams& p, std::span<const double> h,
                      std::span<const double> obs, Rng& rng);
GaussianSample prior(const ModelParams& p, std::span<const double> h, Rng& rng);
std::vector<double> sequence_step(const ModelParams& p, std::span<const double> h,
                                  std::span<const double> z, std::span<const double> act_onehot);
std::vector<double> decode(const ModelParams& p, std::span<const double> h,
                           std::span<const double> z);
// K rows at once; h_rows is K*h, z_rows is K*z, result K*obs.
std::vector<double> decode_batch(const ModelParams& p, std::span<const double> h_rows,
                                 std::span<const double> z_rows, int K);
double predict_reward(const ModelParams& p, std::span<const double> h, std::span<const double> z);
double predict_continue(const ModelParams& p, std::span<const double> h,
                        std::span<const double> z);
double critic_value(const ModelParams& p, std::span<const double> h, std::span<const double> z);

// --- training ---

LossBreakdown loss(const ModelParams& p, const mep::Batch& batch,
                   const LossScales& scales = {});

struct GradResult {
    std::vector<double> grad;  // same length as theta
    LossBreakdown breakdown;
};
GradResult grad(const ModelParams& p, const mep::Batch& batch, const LossScales& scales = {});

struct TrainResult {
    LossBreakdown breakdown;
    double grad_norm = 0.0;
    double clip_bound = 0.0;
    double applied_norm = 0.0;
};
// Gradient descent step with global-norm clipping at clip_ratio * ||theta||.
TrainResult train_step(ModelParams& p, const mep::Batch& batch, double lr,
                       const LossScales& scales = {}, double clip_ratio = 0.3);

// Pluggable optimizer over the flat parameter vector. sgd reproduces
// train_step exactly; laprop applies decoupled adaptive scaling with bias
// correction after the same global-norm clip.
class Optimizer {
public:
    enum class Kind { sgd, laprop };

    Optimizer(Kind kind, double lr, double clip_ratio = 0.3, double beta1 = 0.9,
              double beta2 = 0.99, double eps = 1e-20)
        : kind_(kind), lr_(lr), clip_ratio_(clip_ratio), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    TrainResult step(ModelParams& p, const mep::Batch& batch, const LossScales& scales = {});
    // Applies one update from an externally computed gradient.
    void apply(ModelParams& p, std::span<const double> gradient);

    Kind kind() const { return kind_; }
    double lr() const { return lr_; }

private:
    Kind kind_;
    double lr_;
    double clip_ratio_;
    double beta1_, beta2_, eps_;
    int64_t step_count_ = 0;
    std::vector<double> m_, s_;
};

// --- imagination ---

struct ImaginedStep {
    std::vector<double> h;
    std::vector<double> z;
    double reward = 0.0;
    double cont_prob = 0.0;
};

std::vector<ImaginedStep> imagine(const ModelParams& p, std::span<const double> h0,
                                  std::span<const double> z0, const std::vector<int>& actions,
                                  Rng& rng);

// Rolls K candidate action sequences in lockstep; used by the shooting
// controller. Layout per step: H[k*h], Z[k*z], reward[k], cont[k].
struct BatchRollout {
    int K = 0, H = 0;
    int h_dim = 0, z_dim = 0;
    std::vector<double> h;        // H * K * h_dim
    std::vector<double> z;        // H * K * z_dim
    std::vector<double> reward;   // H * K
    std::vector<double> cont;     // H * K
};
BatchRollout imagine_batch(const ModelParams& p, std::span<const double> h0,
                           std::span<const double> z0,
                           const std::vector<std::vector<int>>& action_seqs, Rng& rng);

// --- per-entry prediction loss (shared by reflector scoring, Fisher and the
// curriculum update). Deterministic: posterior means, no sampling. ---

struct EntryEval {
    double pred_loss = 0.0;
    // latents along the 2-position unroll
    std::vector<double> h0, z0, h1, z1;
    // prior Gaussian at position 1 (the model's transition prediction)
    std::vector<double> prior_mu, prior_sigma;
};
EntryEval eval_entry(const ModelParams& p, const mep::ExperienceEntry& e);

// Full-theta gradient of the per-entry prediction loss.
std::vector<double> entry_pred_grad(const ModelParams& p, const mep::ExperienceEntry& e);

// --- critic ---

struct CriticTransition {
    std::vector<double> h, z, h_next, z_next;
    double r = 0.0;
    int done = 0;
};
CriticTransition make_critic_transition(const ModelParams& p, const mep::ExperienceEntry& e);
double td_error(const ModelParams& p, const CriticTransition& tr, double gamma_c);
// One squared-TD(0) gradient step on the critic head; targets fixed.
// Returns the mean squared TD error before the update.
double critic_update(ModelParams& p, const std::vector<CriticTransition>& transitions,
                     double gamma_c, double lr);

// Engine options; the public ops above are fixed configurations of this.
struct LossOptions {
    LossScales scales;
    bool mean_latents = false;
    bool pred_only_last = false;
    bool include_kl = true;
    bool per_step_sum = false;  // sum over steps instead of mean over B*T
};
LossBreakdown run_loss(const ModelParams& p, const mep::Batch& batch, const LossOptions& opt,
                       std::vector<double>* grad_out);

}  // namespace evoagent::wm
