#include "evoagent/wm/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "evoagent/core/errors.hpp"
#include "evoagent/kernels/kernels.hpp"

namespace evoagent::wm {

using kern::logistic;
using kern::softplus;

namespace {

double bce_from_logit(double logit, double target) {
    return std::max(logit, 0.0) - logit * target + std::log1p(std::exp(-std::abs(logit)));
}

void check_finite(double v, const char* term) {
    if (!std::isfinite(v)) throw NumericError(std::string(term) + " is not finite");
}

// Noise for the reparameterized posterior; order fixed (b, t, i) so that loss
// and grad see identical draws for a given batch.
std::vector<double> make_noise(uint64_t seed, int B, int T, int z) {
    Rng rng(seed);
    std::vector<double> eps(static_cast<size_t>(B) * T * z);
    for (int b = 0; b < B; ++b) {
        for (int t = 0; t < T; ++t) {
            for (int i = 0; i < z; ++i) {
                eps[(static_cast<size_t>(t) * B + b) * z + i] = rng.normal();
            }
        }
    }
    return eps;
}

struct Cache {
    int B = 0, T = 0;
    ModelDims d;
    // all arrays are T-major: array + t*B*dim
    std::vector<double> H, GATE, CAND, XS;
    std::vector<double> UP, PMU, PSRAW, PSIG;
    std::vector<double> XE, UE, QMU, QSRAW, QSIG, EPS, Z;
    std::vector<double> XD, UD, OHAT;
    std::vector<double> RHAT, CLOGIT, KLRAW;

    double* at(std::vector<double>& a, int t, int dim) { return a.data() + static_cast<size_t>(t) * B * dim; }
    const double* at(const std::vector<double>& a, int t, int dim) const {
        return a.data() + static_cast<size_t>(t) * B * dim;
    }
};

}  // namespace

double gaussian_kl(std::span<const double> mu_q, std::span<const double> sigma_q,
                   std::span<const double> mu_p, std::span<const double> sigma_p) {
    if (mu_q.size() != sigma_q.size() || mu_q.size() != mu_p.size() ||
        mu_q.size() != sigma_p.size()) {
        throw ShapeError("gaussian_kl dimension mismatch");
    }
    double kl = 0.0;
    for (size_t i = 0; i < mu_q.size(); ++i) {
        const double vp = sigma_p[i] * sigma_p[i];
        const double dm = mu_q[i] - mu_p[i];
        kl += std::log(sigma_p[i] / sigma_q[i]) +
              (sigma_q[i] * sigma_q[i] + dm * dm) / (2.0 * vp) - 0.5;
    }
    return kl;
}

// ---------------------------------------------------------------------------
// single-state heads
// ---------------------------------------------------------------------------

namespace {

GaussianSample gaussian_head(const ModelParams& p, Seg w1s, Seg b1s, Seg w2s, Seg b2s,
                             int hidden, std::span<const double> x, Rng& rng, bool sample) {
    const int z = p.dims().z;
    std::vector<double> u(static_cast<size_t>(hidden));
    kern::matmul_nt(x.data(), p.seg_ptr(w1s), p.seg_ptr(b1s), u.data(), 1, hidden, x.size());
    kern::tanh_vec(u.data(), u.data(), u.size());
    std::vector<double> qq(static_cast<size_t>(2) * z);
    kern::matmul_nt(u.data(), p.seg_ptr(w2s), p.seg_ptr(b2s), qq.data(), 1, 2 * z, hidden);
    GaussianSample out;
    out.mu.assign(qq.begin(), qq.begin() + z);
    out.sigma.resize(z);
    for (int i = 0; i < z; ++i) out.sigma[static_cast<size_t>(i)] = softplus(qq[static_cast<size_t>(z) + i]) + kSigmaMin;
    out.z.resize(z);
    for (int i = 0; i < z; ++i) {
        const double eps = sample ? rng.normal() : 0.0;
        out.z[static_cast<size_t>(i)] = out.mu[static_cast<size_t>(i)] + out.sigma[static_cast<size_t>(i)] * eps;
    }
    return out;
}

}  // namespace

GaussianSample encode(const ModelParams& p, std::span<const double> h,
                      std::span<const double> obs, Rng& rng) {
    const auto& d = p.dims();
    if (static_cast<int>(h.size()) != d.h || static_cast<int>(obs.size()) != d.obs)
        throw ShapeError("encode input dims mismatch");
    std::vector<double> x;
    x.reserve(h.size() + obs.size());
    x.insert(x.end(), h.begin(), h.end());
    x.insert(x.end(), obs.begin(), obs.end());
    return gaussian_head(p, Seg::enc_w1, Seg::enc_b1, Seg::enc_w2, Seg::enc_b2, d.enc_hidden, x,
                         rng, true);
}

GaussianSample prior(const ModelParams& p, std::span<const double> h, Rng& rng) {
    const auto& d = p.dims();
    if (static_cast<int>(h.size()) != d.h) throw ShapeError("prior input dims mismatch");
    return gaussian_head(p, Seg::dyn_w1, Seg::dyn_b1, Seg::dyn_w2, Seg::dyn_b2, d.dyn_hidden, h,
                         rng, true);
}

std::vector<double> sequence_step(const ModelParams& p, std::span<const double> h,
                                  std::span<const double> z, std::span<const double> act_onehot) {
    const auto& d = p.dims();
    if (static_cast<int>(h.size()) != d.h || static_cast<int>(z.size()) != d.z ||
        static_cast<int>(act_onehot.size()) != d.act) {
        throw ShapeError("sequence_step input dims mismatch");
    }
    std::vector<double> x;
    x.reserve(h.size() + z.size() + act_onehot.size());
    x.insert(x.end(), h.begin(), h.end());
    x.insert(x.end(), z.begin(), z.end());
    x.insert(x.end(), act_onehot.begin(), act_onehot.end());
    std::vector<double> gate(static_cast<size_t>(d.h)), cand(static_cast<size_t>(d.h));
    kern::matmul_nt(x.data(), p.seg_ptr(Seg::seq_wg), p.seg_ptr(Seg::seq_bg), gate.data(), 1, d.h,
                    x.size());
    kern::matmul_nt(x.data(), p.seg_ptr(Seg::seq_wc), p.seg_ptr(Seg::seq_bc), cand.data(), 1, d.h,
                    x.size());
    std::vector<double> out(static_cast<size_t>(d.h));
    for (int i = 0; i < d.h; ++i) {
        const double g = logistic(gate[static_cast<size_t>(i)]);
        out[static_cast<size_t>(i)] = (1.0 - g) * h[static_cast<size_t>(i)] + g * std::tanh(cand[static_cast<size_t>(i)]);
    }
    return out;
}

namespace {

std::vector<double> concat_hz(std::span<const double> h, std::span<const double> z) {
    std::vector<double> x;
    x.reserve(h.size() + z.size());
    x.insert(x.end(), h.begin(), h.end());
    x.insert(x.end(), z.begin(), z.end());
    return x;
}

double linear_head(const ModelParams& p, Seg w, Seg b, std::span<const double> h,
                   std::span<const double> z) {
    const auto& d = p.dims();
    if (static_cast<int>(h.size()) != d.h || static_cast<int>(z.size()) != d.z)
        throw ShapeError("head input dims mismatch");
    const auto x = concat_hz(h, z);
    return kern::dot(p.seg_ptr(w), x.data(), x.size()) + p.seg(b)[0];
}

}  // namespace

std::vector<double> decode(const ModelParams& p, std::span<const double> h,
                           std::span<const double> z) {
    const auto& d = p.dims();
    if (static_cast<int>(h.size()) != d.h || static_cast<int>(z.size()) != d.z)
        throw ShapeError("decode input dims mismatch");
    const auto x = concat_hz(h, z);
    std::vector<double> u(static_cast<size_t>(d.dec_hidden));
    kern::matmul_nt(x.data(), p.seg_ptr(Seg::dec_w1), p.seg_ptr(Seg::dec_b1), u.data(), 1,
                    d.dec_hidden, x.size());
    kern::tanh_vec(u.data(), u.data(), u.size());
    std::vector<double> o(static_cast<size_t>(d.obs));
    kern::matmul_nt(u.data(), p.seg_ptr(Seg::dec_w2), p.seg_ptr(Seg::dec_b2), o.data(), 1, d.obs,
                    d.dec_hidden);
    kern::logistic_vec(o.data(), o.data(), o.size());
    return o;
}

std::vector<double> decode_batch(const ModelParams& p, std::span<const double> h_rows,
                                 std::span<const double> z_rows, int K) {
    const ModelDims& d = p.dims();
    if (h_rows.size() != static_cast<size_t>(K) * d.h || z_rows.size() != static_cast<size_t>(K) * d.z)
        throw ShapeError("decode_batch input dims mismatch");
    const int hz = d.h + d.z;
    std::vector<double> x(static_cast<size_t>(K) * hz);
    for (int k = 0; k < K; ++k) {
        std::memcpy(x.data() + static_cast<size_t>(k) * hz, h_rows.data() + static_cast<size_t>(k) * d.h,
                    sizeof(double) * d.h);
        std::memcpy(x.data() + static_cast<size_t>(k) * hz + d.h,
                    z_rows.data() + static_cast<size_t>(k) * d.z, sizeof(double) * d.z);
    }
    std::vector<double> u(static_cast<size_t>(K) * d.dec_hidden);
    kern::matmul_nt(x.data(), p.seg_ptr(Seg::dec_w1), p.seg_ptr(Seg::dec_b1), u.data(), K,
                    d.dec_hidden, hz);
    kern::tanh_vec(u.data(), u.data(), u.size());
    std::vector<double> o(static_cast<size_t>(K) * d.obs);
    kern::matmul_nt(u.data(), p.seg_ptr(Seg::dec_w2), p.seg_ptr(Seg::dec_b2), o.data(), K, d.obs,
                    d.dec_hidden);
    kern::logistic_vec(o.data(), o.data(), o.size());
    return o;
}

double predict_reward(const ModelParams& p, std::span<const double> h, std::span<const double> z) {
    return linear_head(p, Seg::rew_w, Seg::rew_b, h, z);
}

double predict_continue(const ModelParams& p, std::span<const double> h,
                        std::span<const double> z) {
    return logistic(linear_head(p, Seg::con_w, Seg::con_b, h, z));
}

double critic_value(const ModelParams& p, std::span<const double> h, std::span<const double> z) {
    return linear_head(p, Seg::val_w, Seg::val_b, h, z);
}

// ---------------------------------------------------------------------------
// batched loss/grad engine
// ---------------------------------------------------------------------------

namespace {

struct EngineTrace {
    // latents per (t, b); prior Gaussians per (t, b)
    std::vector<double> H, Z, PMU, PSIG;
};

LossBreakdown engine(const ModelParams& p, const mep::Batch& batch, const LossOptions& opt,
                     std::vector<double>* grad_out, EngineTrace* trace) {
    const ModelDims& d = p.dims();
    if (batch.obs_dim != d.obs || batch.act_dim != d.act)
        throw ShapeError("batch dims do not match model dims");
    mep::validate_batch(batch);

    const int B = batch.B, T = batch.T;
    const int h = d.h, z = d.z, obs = d.obs;
    const int seq_in = d.h + d.z + d.act;
    const int hz = d.h + d.z;
    const double wstep = opt.per_step_sum ? 1.0 : 1.0 / (static_cast<double>(B) * T);

    Cache c;
    c.B = B;
    c.T = T;
    c.d = d;
    const size_t TB = static_cast<size_t>(T) * B;
    c.H.assign(TB * h, 0.0);
    c.GATE.assign(TB * h, 0.0);
    c.CAND.assign(TB * h, 0.0);
    c.XS.assign(TB * seq_in, 0.0);
    c.UP.assign(TB * d.dyn_hidden, 0.0);
    c.PMU.assign(TB * z, 0.0);
    c.PSRAW.assign(TB * z, 0.0);
    c.PSIG.assign(TB * z, 0.0);
    c.XE.assign(TB * (h + obs), 0.0);
    c.UE.assign(TB * d.enc_hidden, 0.0);
    c.QMU.assign(TB * z, 0.0);
    c.QSRAW.assign(TB * z, 0.0);
    c.QSIG.assign(TB * z, 0.0);
    c.Z.assign(TB * z, 0.0);
    c.XD.assign(TB * hz, 0.0);
    c.UD.assign(TB * d.dec_hidden, 0.0);
    c.OHAT.assign(TB * obs, 0.0);
    c.RHAT.assign(TB, 0.0);
    c.CLOGIT.assign(TB, 0.0);
    c.KLRAW.assign(TB, 0.0);
    c.EPS = opt.mean_latents ? std::vector<double>(TB * z, 0.0)
                             : make_noise(batch.noise_seed, B, T, z);

    std::vector<double> tmp2z(static_cast<size_t>(B) * 2 * z);

    // ---- forward ----
    for (int t = 0; t < T; ++t) {
        double* H_t = c.at(c.H, t, h);
        if (t > 0) {
            double* XS_t = c.at(c.XS, t, seq_in);
            const double* H_prev = c.at(c.H, t - 1, h);
            const double* Z_prev = c.at(c.Z, t - 1, z);
            for (int b = 0; b < B; ++b) {
                double* row = XS_t + static_cast<size_t>(b) * seq_in;
                std::memcpy(row, H_prev + static_cast<size_t>(b) * h, sizeof(double) * h);
                std::memcpy(row + h, Z_prev + static_cast<size_t>(b) * z, sizeof(double) * z);
                std::memcpy(row + h + z, batch.act_at(b, t - 1), sizeof(double) * d.act);
            }
            double* GATE_t = c.at(c.GATE, t, h);
            double* CAND_t = c.at(c.CAND, t, h);
            kern::matmul_nt(XS_t, p.seg_ptr(Seg::seq_wg), p.seg_ptr(Seg::seq_bg), GATE_t, B, h,
                            seq_in);
            kern::matmul_nt(XS_t, p.seg_ptr(Seg::seq_wc), p.seg_ptr(Seg::seq_bc), CAND_t, B, h,
                            seq_in);
            kern::logistic_vec(GATE_t, GATE_t, static_cast<size_t>(B) * h);
            kern::tanh_vec(CAND_t, CAND_t, static_cast<size_t>(B) * h);
            for (size_t i = 0; i < static_cast<size_t>(B) * h; ++i) {
                H_t[i] = (1.0 - GATE_t[i]) * H_prev[i] + GATE_t[i] * CAND_t[i];
            }
        }

        // prior
        double* UP_t = c.at(c.UP, t, d.dyn_hidden);
        kern::matmul_nt(H_t, p.seg_ptr(Seg::dyn_w1), p.seg_ptr(Seg::dyn_b1), UP_t, B, d.dyn_hidden,
                        h);
        kern::tanh_vec(UP_t, UP_t, static_cast<size_t>(B) * d.dyn_hidden);
        kern::matmul_nt(UP_t, p.seg_ptr(Seg::dyn_w2), p.seg_ptr(Seg::dyn_b2), tmp2z.data(), B,
                        2 * z, d.dyn_hidden);
        double* PMU_t = c.at(c.PMU, t, z);
        double* PSRAW_t = c.at(c.PSRAW, t, z);
        double* PSIG_t = c.at(c.PSIG, t, z);
        for (int b = 0; b < B; ++b) {
            for (int i = 0; i < z; ++i) {
                PMU_t[static_cast<size_t>(b) * z + i] = tmp2z[static_cast<size_t>(b) * 2 * z + i];
                const double raw = tmp2z[static_cast<size_t>(b) * 2 * z + z + i];
                PSRAW_t[static_cast<size_t>(b) * z + i] = raw;
                PSIG_t[static_cast<size_t>(b) * z + i] = softplus(raw) + kSigmaMin;
            }
        }

        // posterior
        double* XE_t = c.at(c.XE, t, h + obs);
        for (int b = 0; b < B; ++b) {
            double* row = XE_t + static_cast<size_t>(b) * (h + obs);
            std::memcpy(row, H_t + static_cast<size_t>(b) * h, sizeof(double) * h);
            std::memcpy(row + h, batch.obs_at(b, t), sizeof(double) * obs);
        }
        double* UE_t = c.at(c.UE, t, d.enc_hidden);
        kern::matmul_nt(XE_t, p.seg_ptr(Seg::enc_w1), p.seg_ptr(Seg::enc_b1), UE_t, B,
                        d.enc_hidden, h + obs);
        kern::tanh_vec(UE_t, UE_t, static_cast<size_t>(B) * d.enc_hidden);
        kern::matmul_nt(UE_t, p.seg_ptr(Seg::enc_w2), p.seg_ptr(Seg::enc_b2), tmp2z.data(), B,
                        2 * z, d.enc_hidden);
        double* QMU_t = c.at(c.QMU, t, z);
        double* QSRAW_t = c.at(c.QSRAW, t, z);
        double* QSIG_t = c.at(c.QSIG, t, z);
        double* Z_t = c.at(c.Z, t, z);
        const double* EPS_t = c.at(c.EPS, t, z);
        for (int b = 0; b < B; ++b) {
            for (int i = 0; i < z; ++i) {
                const size_t k = static_cast<size_t>(b) * z + i;
                QMU_t[k] = tmp2z[static_cast<size_t>(b) * 2 * z + i];
                const double raw = tmp2z[static_cast<size_t>(b) * 2 * z + z + i];
                QSRAW_t[k] = raw;
                QSIG_t[k] = softplus(raw) + kSigmaMin;
                Z_t[k] = QMU_t[k] + QSIG_t[k] * EPS_t[k];
            }
        }

        // decoder + scalar heads
        double* XD_t = c.at(c.XD, t, hz);
        for (int b = 0; b < B; ++b) {
            double* row = XD_t + static_cast<size_t>(b) * hz;
            std::memcpy(row, H_t + static_cast<size_t>(b) * h, sizeof(double) * h);
            std::memcpy(row + h, Z_t + static_cast<size_t>(b) * z, sizeof(double) * z);
        }
        double* UD_t = c.at(c.UD, t, d.dec_hidden);
        kern::matmul_nt(XD_t, p.seg_ptr(Seg::dec_w1), p.seg_ptr(Seg::dec_b1), UD_t, B,
                        d.dec_hidden, hz);
        kern::tanh_vec(UD_t, UD_t, static_cast<size_t>(B) * d.dec_hidden);
        double* OHAT_t = c.at(c.OHAT, t, obs);
        kern::matmul_nt(UD_t, p.seg_ptr(Seg::dec_w2), p.seg_ptr(Seg::dec_b2), OHAT_t, B, obs,
                        d.dec_hidden);
        kern::logistic_vec(OHAT_t, OHAT_t, static_cast<size_t>(B) * obs);
        double* RHAT_t = c.at(c.RHAT, t, 1);
        double* CLOGIT_t = c.at(c.CLOGIT, t, 1);
        kern::matmul_nt(XD_t, p.seg_ptr(Seg::rew_w), p.seg_ptr(Seg::rew_b), RHAT_t, B, 1, hz);
        kern::matmul_nt(XD_t, p.seg_ptr(Seg::con_w), p.seg_ptr(Seg::con_b), CLOGIT_t, B, 1, hz);

        // per-step KL(post || prior)
        double* KLRAW_t = c.at(c.KLRAW, t, 1);
        for (int b = 0; b < B; ++b) {
            const size_t o0 = static_cast<size_t>(b) * z;
            KLRAW_t[b] = gaussian_kl({QMU_t + o0, static_cast<size_t>(z)},
                                     {QSIG_t + o0, static_cast<size_t>(z)},
                                     {PMU_t + o0, static_cast<size_t>(z)},
                                     {PSIG_t + o0, static_cast<size_t>(z)});
        }
    }

    // ---- loss terms ----
    LossBreakdown lb;
    for (int t = 0; t < T; ++t) {
        const bool pred_here = !opt.pred_only_last || t == T - 1;
        const double* OHAT_t = c.at(c.OHAT, t, obs);
        const double* RHAT_t = c.at(c.RHAT, t, 1);
        const double* CLOGIT_t = c.at(c.CLOGIT, t, 1);
        const double* KLRAW_t = c.at(c.KLRAW, t, 1);
        for (int b = 0; b < B; ++b) {
            if (pred_here) {
                const double* o = batch.obs_at(b, t);
                const double* oh = OHAT_t + static_cast<size_t>(b) * obs;
                double rec = 0.0;
                for (int i = 0; i < obs; ++i) {
                    const double e = oh[i] - o[i];
                    rec += 0.5 * e * e;
                }
                lb.recon += wstep * rec;
                const double re = RHAT_t[b] - batch.rew_at(b, t);
                lb.reward_nll += wstep * 0.5 * re * re;
                lb.continue_nll += wstep * bce_from_logit(CLOGIT_t[b], batch.cont_at(b, t));
            }
            if (opt.include_kl) {
                const double klc = std::max(opt.scales.free_nats, KLRAW_t[b]);
                lb.kl_dyn += wstep * klc;
                lb.kl_rep += wstep * klc;
            }
        }
    }
    lb.total = opt.scales.beta_pred * (lb.recon + lb.reward_nll + lb.continue_nll) +
               opt.scales.beta_dyn * lb.kl_dyn + opt.scales.beta_rep * lb.kl_rep;
    check_finite(lb.recon, "recon");
    check_finite(lb.reward_nll, "reward_nll");
    check_finite(lb.continue_nll, "continue_nll");
    check_finite(lb.kl_dyn, "kl_dyn");
    check_finite(lb.kl_rep, "kl_rep");

    if (trace) {
        trace->H = c.H;
        trace->Z = c.Z;
        trace->PMU = c.PMU;
        trace->PSIG = c.PSIG;
    }
    if (!grad_out) return lb;

    // ---- backward ----
    std::vector<double>& g = *grad_out;
    g.assign(p.size(), 0.0);
    auto gseg = [&](Seg s) { return g.data() + p.segment(s).offset; };

    std::vector<double> dH(static_cast<size_t>(B) * h), dHcarry(static_cast<size_t>(B) * h, 0.0);
    std::vector<double> dZcarry(static_cast<size_t>(B) * z, 0.0);
    std::vector<double> dXD(static_cast<size_t>(B) * hz);
    std::vector<double> dOL(static_cast<size_t>(B) * obs);
    std::vector<double> dUD(static_cast<size_t>(B) * d.dec_hidden);
    std::vector<double> dScalar(static_cast<size_t>(B));
    std::vector<double> dQQ(static_cast<size_t>(B) * 2 * z);
    std::vector<double> dUE(static_cast<size_t>(B) * d.enc_hidden);
    std::vector<double> dXE(static_cast<size_t>(B) * (h + obs));
    std::vector<double> dPP(static_cast<size_t>(B) * 2 * z);
    std::vector<double> dUP(static_cast<size_t>(B) * d.dyn_hidden);
    std::vector<double> dGATEraw(static_cast<size_t>(B) * h), dCANDraw(static_cast<size_t>(B) * h);
    std::vector<double> dXS(static_cast<size_t>(B) * seq_in);

    const double bpred = opt.scales.beta_pred;

    for (int t = T - 1; t >= 0; --t) {
        const bool pred_here = !opt.pred_only_last || t == T - 1;
        const double* H_t = c.at(c.H, t, h);
        const double* Z_t = c.at(c.Z, t, z);
        const double* XD_t = c.at(c.XD, t, hz);
        const double* UD_t = c.at(c.UD, t, d.dec_hidden);
        const double* OHAT_t = c.at(c.OHAT, t, obs);
        const double* UE_t = c.at(c.UE, t, d.enc_hidden);
        const double* XE_t = c.at(c.XE, t, h + obs);
        const double* UP_t = c.at(c.UP, t, d.dyn_hidden);
        const double* PMU_t = c.at(c.PMU, t, z);
        const double* PSRAW_t = c.at(c.PSRAW, t, z);
        const double* PSIG_t = c.at(c.PSIG, t, z);
        const double* QMU_t = c.at(c.QMU, t, z);
        const double* QSRAW_t = c.at(c.QSRAW, t, z);
        const double* QSIG_t = c.at(c.QSIG, t, z);
        const double* EPS_t = c.at(c.EPS, t, z);
        const double* KLRAW_t = c.at(c.KLRAW, t, 1);

        std::swap(dH, dHcarry);                 // gradient flowing into H[t] from t+1
        std::fill(dHcarry.begin(), dHcarry.end(), 0.0);
        std::fill(dXD.begin(), dXD.end(), 0.0);

        if (pred_here) {
            // decoder
            for (int b = 0; b < B; ++b) {
                const double* o = batch.obs_at(b, t);
                for (int i = 0; i < obs; ++i) {
                    const size_t k = static_cast<size_t>(b) * obs + i;
                    const double oh = OHAT_t[k];
                    dOL[k] = wstep * bpred * (oh - o[i]) * oh * (1.0 - oh);
                }
            }
            kern::accum_outer(dOL.data(), UD_t, gseg(Seg::dec_w2), B, obs, d.dec_hidden);
            kern::accum_colsum(dOL.data(), gseg(Seg::dec_b2), B, obs);
            std::fill(dUD.begin(), dUD.end(), 0.0);
            kern::matmul_nn_accum(dOL.data(), p.seg_ptr(Seg::dec_w2), dUD.data(), B, obs,
                                  d.dec_hidden);
            for (size_t k = 0; k < dUD.size(); ++k) dUD[k] *= 1.0 - UD_t[k] * UD_t[k];
            kern::accum_outer(dUD.data(), XD_t, gseg(Seg::dec_w1), B, d.dec_hidden, hz);
            kern::accum_colsum(dUD.data(), gseg(Seg::dec_b1), B, d.dec_hidden);
            kern::matmul_nn_accum(dUD.data(), p.seg_ptr(Seg::dec_w1), dXD.data(), B, d.dec_hidden,
                                  hz);

            // reward head
            const double* RHAT_t = c.at(c.RHAT, t, 1);
            for (int b = 0; b < B; ++b)
                dScalar[static_cast<size_t>(b)] = wstep * bpred * (RHAT_t[b] - batch.rew_at(b, t));
            kern::accum_outer(dScalar.data(), XD_t, gseg(Seg::rew_w), B, 1, hz);
            kern::accum_colsum(dScalar.data(), gseg(Seg::rew_b), B, 1);
            kern::matmul_nn_accum(dScalar.data(), p.seg_ptr(Seg::rew_w), dXD.data(), B, 1, hz);

            // continue head
            const double* CLOGIT_t = c.at(c.CLOGIT, t, 1);
            for (int b = 0; b < B; ++b)
                dScalar[static_cast<size_t>(b)] =
                    wstep * bpred * (logistic(CLOGIT_t[b]) - batch.cont_at(b, t));
            kern::accum_outer(dScalar.data(), XD_t, gseg(Seg::con_w), B, 1, hz);
            kern::accum_colsum(dScalar.data(), gseg(Seg::con_b), B, 1);
            kern::matmul_nn_accum(dScalar.data(), p.seg_ptr(Seg::con_w), dXD.data(), B, 1, hz);
        }

        // KL: dyn side trains the prior (and through h the sequence model),
        // rep side trains the posterior. Steps under the free-nats floor are
        // flat and contribute nothing.
        std::fill(dPP.begin(), dPP.end(), 0.0);
        std::fill(dQQ.begin(), dQQ.end(), 0.0);
        if (opt.include_kl) {
            for (int b = 0; b < B; ++b) {
                if (KLRAW_t[b] <= opt.scales.free_nats) continue;
                for (int i = 0; i < z; ++i) {
                    const size_t k = static_cast<size_t>(b) * z + i;
                    const double pm = PMU_t[k], ps = PSIG_t[k];
                    const double qm = QMU_t[k], qs = QSIG_t[k];
                    const double ps2 = ps * ps;
                    const double dm = qm - pm;
                    // prior side (beta_dyn)
                    const double dpmu = wstep * opt.scales.beta_dyn * (pm - qm) / ps2;
                    const double dpsig = wstep * opt.scales.beta_dyn *
                                         (1.0 / ps - (qs * qs + dm * dm) / (ps2 * ps));
                    dPP[static_cast<size_t>(b) * 2 * z + i] += dpmu;
                    dPP[static_cast<size_t>(b) * 2 * z + z + i] += dpsig * logistic(PSRAW_t[k]);
                    // posterior side (beta_rep)
                    const double dqmu = wstep * opt.scales.beta_rep * dm / ps2;
                    const double dqsig =
                        wstep * opt.scales.beta_rep * (-1.0 / qs + qs / ps2);
                    dQQ[static_cast<size_t>(b) * 2 * z + i] += dqmu;
                    dQQ[static_cast<size_t>(b) * 2 * z + z + i] += dqsig * logistic(QSRAW_t[k]);
                }
            }
        }

        // z gradient: decoder/head path plus the next step's sequence input.
        for (int b = 0; b < B; ++b) {
            for (int i = 0; i < z; ++i) {
                const size_t k = static_cast<size_t>(b) * z + i;
                const double dz = dXD[static_cast<size_t>(b) * hz + h + i] + dZcarry[k];
                dQQ[static_cast<size_t>(b) * 2 * z + i] += dz;  // z = mu + sigma*eps
                if (!opt.mean_latents) {
                    dQQ[static_cast<size_t>(b) * 2 * z + z + i] +=
                        dz * EPS_t[k] * logistic(QSRAW_t[k]);
                }
            }
        }
        std::fill(dZcarry.begin(), dZcarry.end(), 0.0);

        // encoder backward
        kern::accum_outer(dQQ.data(), UE_t, gseg(Seg::enc_w2), B, 2 * z, d.enc_hidden);
        kern::accum_colsum(dQQ.data(), gseg(Seg::enc_b2), B, 2 * z);
        std::fill(dUE.begin(), dUE.end(), 0.0);
        kern::matmul_nn_accum(dQQ.data(), p.seg_ptr(Seg::enc_w2), dUE.data(), B, 2 * z,
                              d.enc_hidden);
        for (size_t k = 0; k < dUE.size(); ++k) dUE[k] *= 1.0 - UE_t[k] * UE_t[k];
        kern::accum_outer(dUE.data(), XE_t, gseg(Seg::enc_w1), B, d.enc_hidden, h + obs);
        kern::accum_colsum(dUE.data(), gseg(Seg::enc_b1), B, d.enc_hidden);
        std::fill(dXE.begin(), dXE.end(), 0.0);
        kern::matmul_nn_accum(dUE.data(), p.seg_ptr(Seg::enc_w1), dXE.data(), B, d.enc_hidden,
                              h + obs);
        for (int b = 0; b < B; ++b) {
            kern::axpy(1.0, dXE.data() + static_cast<size_t>(b) * (h + obs),
                       dH.data() + static_cast<size_t>(b) * h, h);
        }

        // prior backward
        kern::accum_outer(dPP.data(), UP_t, gseg(Seg::dyn_w2), B, 2 * z, d.dyn_hidden);
        kern::accum_colsum(dPP.data(), gseg(Seg::dyn_b2), B, 2 * z);
        std::fill(dUP.begin(), dUP.end(), 0.0);
        kern::matmul_nn_accum(dPP.data(), p.seg_ptr(Seg::dyn_w2), dUP.data(), B, 2 * z,
                              d.dyn_hidden);
        for (size_t k = 0; k < dUP.size(); ++k) dUP[k] *= 1.0 - UP_t[k] * UP_t[k];
        kern::accum_outer(dUP.data(), H_t, gseg(Seg::dyn_w1), B, d.dyn_hidden, h);
        kern::accum_colsum(dUP.data(), gseg(Seg::dyn_b1), B, d.dyn_hidden);
        kern::matmul_nn_accum(dUP.data(), p.seg_ptr(Seg::dyn_w1), dH.data(), B, d.dyn_hidden, h);

        // h part of the decoder/head input
        for (int b = 0; b < B; ++b) {
            kern::axpy(1.0, dXD.data() + static_cast<size_t>(b) * hz,
                       dH.data() + static_cast<size_t>(b) * h, h);
        }

        // sequence backward into t-1
        if (t > 0) {
            const double* GATE_t = c.at(c.GATE, t, h);
            const double* CAND_t = c.at(c.CAND, t, h);
            const double* H_prev = c.at(c.H, t - 1, h);
            const double* XS_t = c.at(c.XS, t, seq_in);
            for (size_t k = 0; k < static_cast<size_t>(B) * h; ++k) {
                const double g_ = GATE_t[k];
                const double dgate = dH[k] * (CAND_t[k] - H_prev[k]);
                dCANDraw[k] = dH[k] * g_ * (1.0 - CAND_t[k] * CAND_t[k]);
                dGATEraw[k] = dgate * g_ * (1.0 - g_);
                dHcarry[k] += dH[k] * (1.0 - g_);
            }
            kern::accum_outer(dCANDraw.data(), XS_t, gseg(Seg::seq_wc), B, h, seq_in);
            kern::accum_colsum(dCANDraw.data(), gseg(Seg::seq_bc), B, h);
            kern::accum_outer(dGATEraw.data(), XS_t, gseg(Seg::seq_wg), B, h, seq_in);
            kern::accum_colsum(dGATEraw.data(), gseg(Seg::seq_bg), B, h);
            std::fill(dXS.begin(), dXS.end(), 0.0);
            kern::matmul_nn_accum(dCANDraw.data(), p.seg_ptr(Seg::seq_wc), dXS.data(), B, h,
                                  seq_in);
            kern::matmul_nn_accum(dGATEraw.data(), p.seg_ptr(Seg::seq_wg), dXS.data(), B, h,
                                  seq_in);
            for (int b = 0; b < B; ++b) {
                const double* row = dXS.data() + static_cast<size_t>(b) * seq_in;
                kern::axpy(1.0, row, dHcarry.data() + static_cast<size_t>(b) * h, h);
                kern::axpy(1.0, row + h, dZcarry.data() + static_cast<size_t>(b) * z, z);
            }
        }
    }
    return lb;
}

}  // namespace

LossBreakdown run_loss(const ModelParams& p, const mep::Batch& batch, const LossOptions& opt,
                       std::vector<double>* grad_out) {
    return engine(p, batch, opt, grad_out, nullptr);
}

LossBreakdown loss(const ModelParams& p, const mep::Batch& batch, const LossScales& scales) {
    LossOptions opt;
    opt.scales = scales;
    return engine(p, batch, opt, nullptr, nullptr);
}

GradResult grad(const ModelParams& p, const mep::Batch& batch, const LossScales& scales) {
    LossOptions opt;
    opt.scales = scales;
    GradResult out;
    out.breakdown = engine(p, batch, opt, &out.grad, nullptr);
    return out;
}

TrainResult train_step(ModelParams& p, const mep::Batch& batch, double lr,
                       const LossScales& scales, double clip_ratio) {
    GradResult gr = grad(p, batch, scales);
    TrainResult tr;
    tr.breakdown = gr.breakdown;
    tr.grad_norm = std::sqrt(kern::sum_sq(gr.grad.data(), gr.grad.size()));
    const double theta_norm = std::sqrt(kern::sum_sq(p.theta().data(), p.size()));
    tr.clip_bound = clip_ratio * theta_norm;
    double scale = 1.0;
    if (tr.grad_norm > tr.clip_bound) {
        scale = tr.grad_norm > 0.0 ? tr.clip_bound / tr.grad_norm : 0.0;
    }
    tr.applied_norm = tr.grad_norm * scale;
    kern::axpy(-lr * scale, gr.grad.data(), p.theta().data(), p.size());
    return tr;
}

void Optimizer::apply(ModelParams& p, std::span<const double> gradient) {
    if (gradient.size() != p.size()) throw ShapeError("gradient length mismatch");
    std::vector<double> g(gradient.begin(), gradient.end());
    const double gnorm = std::sqrt(kern::sum_sq(g.data(), g.size()));
    const double bound = clip_ratio_ * std::sqrt(kern::sum_sq(p.theta().data(), p.size()));
    if (gnorm > bound && gnorm > 0.0) kern::scale(g.data(), bound / gnorm, g.size());

    if (kind_ == Kind::sgd) {
        kern::axpy(-lr_, g.data(), p.theta().data(), p.size());
        return;
    }
    if (m_.size() != p.size()) {
        m_.assign(p.size(), 0.0);
        s_.assign(p.size(), 0.0);
        step_count_ = 0;
    }
    ++step_count_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
    auto theta = p.theta();
    for (size_t i = 0; i < g.size(); ++i) {
        s_[i] = beta2_ * s_[i] + (1.0 - beta2_) * g[i] * g[i];
        const double scaled = g[i] / (std::sqrt(s_[i] / c2) + eps_);
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * scaled;
        theta[i] -= lr_ * (m_[i] / c1);
    }
}

TrainResult Optimizer::step(ModelParams& p, const mep::Batch& batch, const LossScales& scales) {
    GradResult gr = grad(p, batch, scales);
    TrainResult tr;
    tr.breakdown = gr.breakdown;
    tr.grad_norm = std::sqrt(kern::sum_sq(gr.grad.data(), gr.grad.size()));
    tr.clip_bound = clip_ratio_ * std::sqrt(kern::sum_sq(p.theta().data(), p.size()));
    tr.applied_norm = std::min(tr.grad_norm, tr.clip_bound);
    apply(p, gr.grad);
    return tr;
}

// ---------------------------------------------------------------------------
// imagination
// ---------------------------------------------------------------------------

std::vector<ImaginedStep> imagine(const ModelParams& p, std::span<const double> h0,
                                  std::span<const double> z0, const std::vector<int>& actions,
                                  Rng& rng) {
    std::vector<std::vector<int>> seqs(1, actions);
    BatchRollout roll = imagine_batch(p, h0, z0, seqs, rng);
    std::vector<ImaginedStep> out;
    out.reserve(actions.size());
    for (int j = 0; j < roll.H; ++j) {
        ImaginedStep st;
        st.h.assign(roll.h.begin() + static_cast<long>(static_cast<size_t>(j) * roll.h_dim),
                    roll.h.begin() + static_cast<long>(static_cast<size_t>(j + 1) * roll.h_dim));
        st.z.assign(roll.z.begin() + static_cast<long>(static_cast<size_t>(j) * roll.z_dim),
                    roll.z.begin() + static_cast<long>(static_cast<size_t>(j + 1) * roll.z_dim));
        st.reward = roll.reward[static_cast<size_t>(j)];
        st.cont_prob = roll.cont[static_cast<size_t>(j)];
        out.push_back(std::move(st));
    }
    return out;
}

BatchRollout imagine_batch(const ModelParams& p, std::span<const double> h0,
                           std::span<const double> z0,
                           const std::vector<std::vector<int>>& action_seqs, Rng& rng) {
    const ModelDims& d = p.dims();
    if (static_cast<int>(h0.size()) != d.h || static_cast<int>(z0.size()) != d.z)
        throw ShapeError("imagine start latent dims mismatch");
    const int K = static_cast<int>(action_seqs.size());
    if (K == 0) throw ShapeError("no action sequences");
    const int H = static_cast<int>(action_seqs.front().size());
    if (H < 1) throw ShapeError("imagination horizon must be >= 1");
    for (const auto& s : action_seqs) {
        if (static_cast<int>(s.size()) != H) throw ShapeError("ragged action sequences");
    }

    BatchRollout roll;
    roll.K = K;
    roll.H = H;
    roll.h_dim = d.h;
    roll.z_dim = d.z;
    roll.h.resize(static_cast<size_t>(H) * K * d.h);
    roll.z.resize(static_cast<size_t>(H) * K * d.z);
    roll.reward.resize(static_cast<size_t>(H) * K);
    roll.cont.resize(static_cast<size_t>(H) * K);

    const int seq_in = d.h + d.z + d.act;
    const int hz = d.h + d.z;
    std::vector<double> Hc(static_cast<size_t>(K) * d.h), Zc(static_cast<size_t>(K) * d.z);
    for (int k = 0; k < K; ++k) {
        std::memcpy(Hc.data() + static_cast<size_t>(k) * d.h, h0.data(), sizeof(double) * d.h);
        std::memcpy(Zc.data() + static_cast<size_t>(k) * d.z, z0.data(), sizeof(double) * d.z);
    }
    std::vector<double> XS(static_cast<size_t>(K) * seq_in, 0.0);
    std::vector<double> GATE(static_cast<size_t>(K) * d.h), CAND(static_cast<size_t>(K) * d.h);
    std::vector<double> UP(static_cast<size_t>(K) * d.dyn_hidden);
    std::vector<double> PP(static_cast<size_t>(K) * 2 * d.z);
    std::vector<double> XDH(static_cast<size_t>(K) * hz);

    for (int j = 0; j < H; ++j) {
        for (int k = 0; k < K; ++k) {
            double* row = XS.data() + static_cast<size_t>(k) * seq_in;
            std::memcpy(row, Hc.data() + static_cast<size_t>(k) * d.h, sizeof(double) * d.h);
            std::memcpy(row + d.h, Zc.data() + static_cast<size_t>(k) * d.z, sizeof(double) * d.z);
            std::fill(row + d.h + d.z, row + seq_in, 0.0);
            const int a = action_seqs[static_cast<size_t>(k)][static_cast<size_t>(j)];
            if (a < 0 || a >= d.act) throw ShapeError("action index out of range in imagination");
            row[d.h + d.z + a] = 1.0;
        }
        kern::matmul_nt(XS.data(), p.seg_ptr(Seg::seq_wg), p.seg_ptr(Seg::seq_bg), GATE.data(), K,
                        d.h, seq_in);
        kern::matmul_nt(XS.data(), p.seg_ptr(Seg::seq_wc), p.seg_ptr(Seg::seq_bc), CAND.data(), K,
                        d.h, seq_in);
        kern::logistic_vec(GATE.data(), GATE.data(), GATE.size());
        kern::tanh_vec(CAND.data(), CAND.data(), CAND.size());
        for (size_t k = 0; k < Hc.size(); ++k) {
            Hc[k] = (1.0 - GATE[k]) * Hc[k] + GATE[k] * CAND[k];
        }
        kern::matmul_nt(Hc.data(), p.seg_ptr(Seg::dyn_w1), p.seg_ptr(Seg::dyn_b1), UP.data(), K,
                        d.dyn_hidden, d.h);
        kern::tanh_vec(UP.data(), UP.data(), UP.size());
        kern::matmul_nt(UP.data(), p.seg_ptr(Seg::dyn_w2), p.seg_ptr(Seg::dyn_b2), PP.data(), K,
                        2 * d.z, d.dyn_hidden);
        for (int k = 0; k < K; ++k) {
            for (int i = 0; i < d.z; ++i) {
                const double mu = PP[static_cast<size_t>(k) * 2 * d.z + i];
                const double sig = softplus(PP[static_cast<size_t>(k) * 2 * d.z + d.z + i]) + kSigmaMin;
                Zc[static_cast<size_t>(k) * d.z + i] = mu + sig * rng.normal();
            }
        }
        for (int k = 0; k < K; ++k) {
            double* row = XDH.data() + static_cast<size_t>(k) * hz;
            std::memcpy(row, Hc.data() + static_cast<size_t>(k) * d.h, sizeof(double) * d.h);
            std::memcpy(row + d.h, Zc.data() + static_cast<size_t>(k) * d.z, sizeof(double) * d.z);
        }
        double* rj = roll.reward.data() + static_cast<size_t>(j) * K;
        double* cj = roll.cont.data() + static_cast<size_t>(j) * K;
        kern::matmul_nt(XDH.data(), p.seg_ptr(Seg::rew_w), p.seg_ptr(Seg::rew_b), rj, K, 1, hz);
        kern::matmul_nt(XDH.data(), p.seg_ptr(Seg::con_w), p.seg_ptr(Seg::con_b), cj, K, 1, hz);
        for (int k = 0; k < K; ++k) cj[k] = logistic(cj[k]);
        std::memcpy(roll.h.data() + static_cast<size_t>(j) * K * d.h, Hc.data(),
                    sizeof(double) * Hc.size());
        std::memcpy(roll.z.data() + static_cast<size_t>(j) * K * d.z, Zc.data(),
                    sizeof(double) * Zc.size());
    }
    return roll;
}

// ---------------------------------------------------------------------------
// per-entry evaluation
// ---------------------------------------------------------------------------

namespace {

mep::Batch entry_batch(const ModelParams& p, const mep::ExperienceEntry& e) {
    mep::Batch b;
    b.B = 1;
    b.T = 2;
    b.obs_dim = p.dims().obs;
    b.act_dim = p.dims().act;
    const auto sv = e.s.to_vector();
    const auto nv = e.s_next.to_vector();
    if (static_cast<int>(sv.size()) != b.obs_dim)
        throw ShapeError("entry observation dim does not match model");
    b.obs.resize(static_cast<size_t>(2) * b.obs_dim);
    std::memcpy(b.obs.data(), sv.data(), sizeof(double) * sv.size());
    std::memcpy(b.obs.data() + b.obs_dim, nv.data(), sizeof(double) * nv.size());
    b.act.assign(static_cast<size_t>(2) * b.act_dim, 0.0);
    const int a_idx = cw::action_index(e.a);
    if (a_idx >= b.act_dim) throw ShapeError("entry action index exceeds model action dim");
    b.act[static_cast<size_t>(a_idx)] = 1.0;
    b.rew = {0.0, e.r};
    b.cont = {1.0, 1.0 - e.done};
    b.noise_seed = 0;
    return b;
}

LossOptions entry_options() {
    LossOptions opt;
    opt.scales.beta_pred = 1.0;
    opt.scales.beta_dyn = 0.0;
    opt.scales.beta_rep = 0.0;
    opt.mean_latents = true;
    opt.pred_only_last = true;
    opt.include_kl = false;
    opt.per_step_sum = true;
    return opt;
}

}  // namespace

EntryEval eval_entry(const ModelParams& p, const mep::ExperienceEntry& e) {
    const mep::Batch b = entry_batch(p, e);
    EngineTrace trace;
    const LossBreakdown lb = engine(p, b, entry_options(), nullptr, &trace);
    const ModelDims& d = p.dims();
    EntryEval out;
    out.pred_loss = lb.recon + lb.reward_nll + lb.continue_nll;
    out.h0.assign(trace.H.begin(), trace.H.begin() + d.h);
    out.z0.assign(trace.Z.begin(), trace.Z.begin() + d.z);
    out.h1.assign(trace.H.begin() + d.h, trace.H.begin() + 2 * d.h);
    out.z1.assign(trace.Z.begin() + d.z, trace.Z.begin() + 2 * d.z);
    out.prior_mu.assign(trace.PMU.begin() + d.z, trace.PMU.begin() + 2 * d.z);
    out.prior_sigma.assign(trace.PSIG.begin() + d.z, trace.PSIG.begin() + 2 * d.z);
    return out;
}

std::vector<double> entry_pred_grad(const ModelParams& p, const mep::ExperienceEntry& e) {
    const mep::Batch b = entry_batch(p, e);
    std::vector<double> g;
    engine(p, b, entry_options(), &g, nullptr);
    return g;
}

// ---------------------------------------------------------------------------
// critic
// ---------------------------------------------------------------------------

CriticTransition make_critic_transition(const ModelParams& p, const mep::ExperienceEntry& e) {
    const EntryEval ev = eval_entry(p, e);
    CriticTransition tr;
    tr.h = ev.h0;
    tr.z = ev.z0;
    tr.h_next = ev.h1;
    tr.z_next = ev.z1;
    tr.r = e.r;
    tr.done = e.done;
    return tr;
}

double td_error(const ModelParams& p, const CriticTransition& tr, double gamma_c) {
    const double v = critic_value(p, tr.h, tr.z);
    const double vn = critic_value(p, tr.h_next, tr.z_next);
    return tr.r + gamma_c * (1.0 - tr.done) * vn - v;
}

double critic_update(ModelParams& p, const std::vector<CriticTransition>& transitions,
                     double gamma_c, double lr) {
    if (transitions.empty()) return 0.0;
    const ModelDims& d = p.dims();
    const int hz = d.h + d.z;
    std::vector<double> gw(static_cast<size_t>(hz), 0.0);
    double gb = 0.0;
    double mse = 0.0;
    const double invn = 1.0 / static_cast<double>(transitions.size());
    for (const auto& tr : transitions) {
        const double delta = td_error(p, tr, gamma_c);
        mse += delta * delta * invn;
        // d(delta^2)/dV(s) = -2*delta with the bootstrap target held fixed
        const double coeff = -2.0 * delta * invn;
        for (int i = 0; i < d.h; ++i) gw[static_cast<size_t>(i)] += coeff * tr.h[static_cast<size_t>(i)];
        for (int i = 0; i < d.z; ++i) gw[static_cast<size_t>(d.h) + i] += coeff * tr.z[static_cast<size_t>(i)];
        gb += coeff;
    }
    auto w = p.seg(Seg::val_w);
    kern::axpy(-lr, gw.data(), w.data(), w.size());
    p.seg(Seg::val_b)[0] -= lr * gb;
    return mse;
}

}  // namespace evoagent::wm
