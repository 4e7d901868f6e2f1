#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace evoagent::wm {

struct ModelDims {
    int obs = 0;
    int h = 64;
    int z = 16;
    int act = 0;
    int enc_hidden = 64;
    int dyn_hidden = 64;
    int dec_hidden = 64;

    bool operator==(const ModelDims&) const = default;
};

// Every trainable tensor, in flat-theta order. The decoder/reward/continue
// block is contiguous so the reflector can restrict gradient norms to the
// prediction heads with one span.
enum class Seg : int {
    enc_w1 = 0, enc_b1, enc_w2, enc_b2,
    seq_wc, seq_bc, seq_wg, seq_bg,
    dyn_w1, dyn_b1, dyn_w2, dyn_b2,
    dec_w1, dec_b1, dec_w2, dec_b2,
    rew_w, rew_b,
    con_w, con_b,
    val_w, val_b,
    count
};

constexpr int kNumSegs = static_cast<int>(Seg::count);

std::string_view seg_name(Seg s);

struct Segment {
    size_t offset = 0;
    size_t len = 0;
};

// Flat parameter vector for all heads plus the Fisher diagonal and the
// archived anchor used by the continual-learning regularizer.
class ModelParams {
public:
    ModelParams() = default;

    static ModelParams init(const ModelDims& dims, uint64_t seed, double init_scale = 1.0);
    static ModelParams zeros(const ModelDims& dims);

    const ModelDims& dims() const { return dims_; }
    size_t size() const { return theta_.size(); }

    std::span<double> theta() { return theta_; }
    std::span<const double> theta() const { return theta_; }
    std::span<double> fisher() { return fisher_; }
    std::span<const double> fisher() const { return fisher_; }
    std::span<double> theta_old() { return theta_old_; }
    std::span<const double> theta_old() const { return theta_old_; }

    const Segment& segment(Seg s) const { return layout_[static_cast<size_t>(s)]; }
    std::span<double> seg(Seg s) {
        const auto& g = segment(s);
        return std::span<double>(theta_.data() + g.offset, g.len);
    }
    std::span<const double> seg(Seg s) const {
        const auto& g = segment(s);
        return std::span<const double>(theta_.data() + g.offset, g.len);
    }
    const double* seg_ptr(Seg s) const { return theta_.data() + segment(s).offset; }

    // [offset, offset+len) covering decoder + reward + continue heads.
    Segment prediction_head_span() const;

    void archive_theta_old() { theta_old_ = theta_; }
    void set_fisher(std::vector<double> f);

    void save(const std::string& path) const;
    static ModelParams load(const std::string& path);

    bool bitwise_equal(const ModelParams& other) const;

private:
    ModelDims dims_;
    std::vector<double> theta_;
    std::vector<double> fisher_;
    std::vector<double> theta_old_;
    std::array<Segment, kNumSegs> layout_{};

    void build_layout();
};

}  // namespace evoagent::wm
