#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "shapeformer/heads.hpp"
#include "shapeformer/nn/layers.hpp"
#include "shapeformer/rng.hpp"
#include "shapeformer/synth.hpp"

// Helpers shared by unit tests and the acceptance checks.
namespace shapeformer::test_support {

using namespace shapeformer::nn;

inline Tensor random_const(Rng& rng, const Shape& shape, double s = 1.0) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = s * rng.normal();
    return Tensor::constant(shape, v);
}

inline void randomize(ParameterSet& ps, std::uint64_t seed, double s = 0.5) {
    Rng rng(seed);
    for (auto& p : ps.items()) {
        for (auto& x : p.tensor.mutable_values()) x = s * rng.normal();
    }
}

// Dense row-major helpers for the hand-written oracle.
using Mat = std::vector<std::vector<double>>;

inline Mat to_mat(const Tensor& t, int rows, int cols) {
    Mat m(rows, std::vector<double>(cols));
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m[r][c] = t[static_cast<std::size_t>(r) * cols + c];
    return m;
}

inline Mat mm(const Mat& a, const Mat& b) {
    Mat out(a.size(), std::vector<double>(b[0].size(), 0.0));
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t k = 0; k < b.size(); ++k)
            for (std::size_t j = 0; j < b[0].size(); ++j) out[i][j] += a[i][k] * b[k][j];
    return out;
}

inline Mat layer_norm(const Mat& x, const Tensor& gamma, const Tensor& beta) {
    Mat out = x;
    for (std::size_t r = 0; r < x.size(); ++r) {
        const double n = static_cast<double>(x[r].size());
        double mu = 0, var = 0;
        for (double v : x[r]) mu += v;
        mu /= n;
        for (double v : x[r]) var += (v - mu) * (v - mu);
        var /= n;
        for (std::size_t c = 0; c < x[r].size(); ++c)
            out[r][c] = gamma[c] * (x[r][c] - mu) / std::sqrt(var + 1e-5) + beta[c];
    }
    return out;
}

inline Mat attend(const Attention& a, const Mat& q_in, const Mat& kv_in, const std::vector<double>& key_bias) {
    const int d = static_cast<int>(q_in[0].size());
    const Mat q = mm(q_in, to_mat(a.wq[0], d, d));
    const Mat k = mm(kv_in, to_mat(a.wk[0], d, d));
    const Mat v = mm(kv_in, to_mat(a.wv[0], d, d));
    Mat out(q.size(), std::vector<double>(d, 0.0));
    for (std::size_t i = 0; i < q.size(); ++i) {
        std::vector<double> logit(k.size());
        for (std::size_t j = 0; j < k.size(); ++j) {
            double s = 0;
            for (int c = 0; c < d; ++c) s += q[i][c] * k[j][c];
            logit[j] = s / std::sqrt(static_cast<double>(d)) + (key_bias.empty() ? 0.0 : key_bias[j]);
        }
        const double mx = *std::max_element(logit.begin(), logit.end());
        double z = 0;
        for (auto& l : logit) z += (l = std::exp(l - mx));
        for (std::size_t j = 0; j < k.size(); ++j)
            for (int c = 0; c < d; ++c) out[i][c] += logit[j] / z * v[j][c];
    }
    return out;
}

inline Mat add_mat(const Mat& a, const Mat& b) {
    Mat out = a;
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a[i].size(); ++j) out[i][j] += b[i][j];
    return out;
}

// Straight-line pre-norm decoder layer without FFN.
inline Mat oracle_layer(const DecoderLayer& l, Mat x, const Mat& memory, const std::vector<double>& bias) {
    auto self = [&](const Mat& in) {
        const Mat n = layer_norm(in, l.norm_self.gamma, l.norm_self.beta);
        return add_mat(in, attend(l.self_attn, n, n, {}));
    };
    auto cross = [&](const Mat& in) {
        const Mat n = layer_norm(in, l.norm_cross.gamma, l.norm_cross.beta);
        return add_mat(in, attend(l.cross_attn, n, memory, bias));
    };
    if (l.order == DecoderLayer::Order::SelfThenCross) return cross(self(x));
    return self(cross(x));
}

inline Mat tokens_of(const Tensor& chw) {
    const int c = chw.dim(0), hw = chw.dim(1) * chw.dim(2);
    Mat m(hw, std::vector<double>(c));
    for (int t = 0; t < hw; ++t)
        for (int ch = 0; ch < c; ++ch) m[t][ch] = chw[static_cast<std::size_t>(ch) * hw + t];
    return m;
}

inline BinaryMask rect(int size, int x0, int y0, int x1, int y1) {
    BinaryMask m(size, size);
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) m.set(y, x, 1);
    return m;
}

// Two overlapping rectangles on a 16 x 16 canvas, the second one in front.
inline SceneRecord micro_scene() {
    const std::vector<BinaryMask> amodal{rect(16, 1, 2, 10, 12), rect(16, 6, 5, 15, 14)};
    const auto quartets = compose_quartets(amodal);
    SceneRecord s;
    s.height = s.width = 16;
    s.image.assign(256, 20);
    for (std::size_t i = 0; i < amodal.size(); ++i) {
        InstanceRecord inst;
        inst.box = amodal[i].bounding_box();
        inst.category = static_cast<int>(i);
        inst.quartet = quartets[i];
        for (int p = 0; p < 256; ++p)
            if (quartets[i].visible.data()[p]) s.image[p] = static_cast<std::uint8_t>(120 + 100 * i);
        s.instances.push_back(inst);
    }
    return s;
}

inline void jitter_biases(ParameterSet& ps, std::uint64_t seed) {
    Rng rng(seed);
    for (auto& p : ps.items()) {
        if (p.name.ends_with(".bias") || p.name.ends_with(".beta"))
            for (auto& x : p.tensor.mutable_values()) x = 0.1 * rng.normal();
    }
}

} // namespace shapeformer::test_support
