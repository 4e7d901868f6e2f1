#include "evoagent/wm/params.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "evoagent/core/binio.hpp"
#include "evoagent/core/errors.hpp"
#include "evoagent/core/rng.hpp"

namespace evoagent::wm {

namespace {

constexpr std::array<std::string_view, kNumSegs> kSegNames = {
    "enc_w1", "enc_b1", "enc_w2", "enc_b2", "seq_wc", "seq_bc", "seq_wg", "seq_bg",
    "dyn_w1", "dyn_b1", "dyn_w2", "dyn_b2", "dec_w1", "dec_b1", "dec_w2", "dec_b2",
    "rew_w",  "rew_b",  "con_w",  "con_b",  "val_w",  "val_b",
};

struct SegShape {
    size_t rows, cols;  // cols == 1 for bias/vector segments
};

std::array<SegShape, kNumSegs> seg_shapes(const ModelDims& d) {
    const size_t h = d.h, z = d.z, obs = d.obs, act = d.act;
    const size_t he = d.enc_hidden, hp = d.dyn_hidden, hd = d.dec_hidden;
    const size_t seq_in = h + z + act;
    return {{
        {he, h + obs}, {he, 1}, {2 * z, he}, {2 * z, 1},          // encoder
        {h, seq_in},   {h, 1},  {h, seq_in}, {h, 1},              // sequence
        {hp, h},       {hp, 1}, {2 * z, hp}, {2 * z, 1},          // dynamics
        {hd, h + z},   {hd, 1}, {obs, hd},   {obs, 1},            // decoder
        {1, h + z},    {1, 1},                                     // reward
        {1, h + z},    {1, 1},                                     // continue
        {1, h + z},    {1, 1},                                     // critic
    }};
}

constexpr uint32_t kModelVersion = 1;

}  // namespace

std::string_view seg_name(Seg s) { return kSegNames[static_cast<size_t>(s)]; }

void ModelParams::build_layout() {
    const auto shapes = seg_shapes(dims_);
    size_t off = 0;
    for (int i = 0; i < kNumSegs; ++i) {
        const size_t len = shapes[static_cast<size_t>(i)].rows * shapes[static_cast<size_t>(i)].cols;
        layout_[static_cast<size_t>(i)] = {off, len};
        off += len;
    }
    theta_.assign(off, 0.0);
    fisher_.assign(off, 0.0);
    theta_old_.assign(off, 0.0);
}

ModelParams ModelParams::zeros(const ModelDims& dims) {
    if (dims.obs <= 0 || dims.h <= 0 || dims.z <= 0 || dims.act <= 0)
        throw ShapeError("model dims must be positive");
    ModelParams p;
    p.dims_ = dims;
    p.build_layout();
    return p;
}

ModelParams ModelParams::init(const ModelDims& dims, uint64_t seed, double init_scale) {
    ModelParams p = zeros(dims);
    Rng rng(derive_seed(seed, "wm-init"));
    const auto shapes = seg_shapes(dims);
    for (int i = 0; i < kNumSegs; ++i) {
        const auto& sh = shapes[static_cast<size_t>(i)];
        if (sh.cols == 1) continue;  // biases stay zero
        auto w = p.seg(static_cast<Seg>(i));
        const double scale = init_scale / std::sqrt(static_cast<double>(sh.cols));
        for (auto& v : w) v = scale * rng.normal();
    }
    p.theta_old_ = p.theta_;
    return p;
}

Segment ModelParams::prediction_head_span() const {
    const auto& first = segment(Seg::dec_w1);
    const auto& last = segment(Seg::con_b);
    return {first.offset, last.offset + last.len - first.offset};
}

void ModelParams::set_fisher(std::vector<double> f) {
    if (f.size() != theta_.size()) throw ShapeError("fisher length mismatch");
    fisher_ = std::move(f);
}

void ModelParams::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");
    binio::write_magic(os, "EVWM");
    binio::write_le<uint32_t>(os, kModelVersion);
    binio::write_le<int32_t>(os, dims_.obs);
    binio::write_le<int32_t>(os, dims_.h);
    binio::write_le<int32_t>(os, dims_.z);
    binio::write_le<int32_t>(os, dims_.act);
    binio::write_le<int32_t>(os, dims_.enc_hidden);
    binio::write_le<int32_t>(os, dims_.dyn_hidden);
    binio::write_le<int32_t>(os, dims_.dec_hidden);
    binio::write_le<uint32_t>(os, kNumSegs);
    for (int i = 0; i < kNumSegs; ++i) {
        binio::write_string(os, std::string(seg_name(static_cast<Seg>(i))));
        binio::write_le<uint64_t>(os, layout_[static_cast<size_t>(i)].offset);
        binio::write_le<uint64_t>(os, layout_[static_cast<size_t>(i)].len);
    }
    binio::write_f64_vec(os, theta_);
    binio::write_f64_vec(os, fisher_);
    binio::write_f64_vec(os, theta_old_);
    if (!os) throw IoError("failed writing model snapshot " + path);
}

ModelParams ModelParams::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    binio::expect_magic(is, "EVWM");
    const uint32_t version = binio::read_le<uint32_t>(is);
    if (version != kModelVersion) throw IoError("unsupported model snapshot version");
    ModelDims d;
    d.obs = binio::read_le<int32_t>(is);
    d.h = binio::read_le<int32_t>(is);
    d.z = binio::read_le<int32_t>(is);
    d.act = binio::read_le<int32_t>(is);
    d.enc_hidden = binio::read_le<int32_t>(is);
    d.dyn_hidden = binio::read_le<int32_t>(is);
    d.dec_hidden = binio::read_le<int32_t>(is);
    ModelParams p = zeros(d);
    const uint32_t nsegs = binio::read_le<uint32_t>(is);
    if (nsegs != kNumSegs) throw IoError("segment count mismatch in snapshot");
    for (uint32_t i = 0; i < nsegs; ++i) {
        const std::string name = binio::read_string(is);
        const uint64_t off = binio::read_le<uint64_t>(is);
        const uint64_t len = binio::read_le<uint64_t>(is);
        if (name != seg_name(static_cast<Seg>(i)) || off != p.layout_[i].offset ||
            len != p.layout_[i].len) {
            throw IoError("snapshot layout does not match model dims");
        }
    }
    p.theta_ = binio::read_f64_vec(is);
    p.fisher_ = binio::read_f64_vec(is);
    p.theta_old_ = binio::read_f64_vec(is);
    if (p.theta_.size() != p.fisher_.size() || p.theta_.size() != p.theta_old_.size())
        throw IoError("snapshot vector lengths inconsistent");
    return p;
}

bool ModelParams::bitwise_equal(const ModelParams& other) const {
    auto eq = [](const std::vector<double>& a, const std::vector<double>& b) {
        return a.size() == b.size() &&
               (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
    };
    return dims_ == other.dims_ && eq(theta_, other.theta_) && eq(fisher_, other.fisher_) &&
           eq(theta_old_, other.theta_old_);
}

}  // namespace evoagent::wm
