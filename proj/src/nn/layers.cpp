#include "shapeformer/nn/layers.hpp"

#include <cmath>
#include <cstring>

#include "shapeformer/errors.hpp"
#include "shapeformer/rng.hpp"

namespace shapeformer::nn {

Tensor ParameterSet::add(const std::string& name, const Shape& shape, Init init) {
    if (find(name)) throw ConfigError("duplicate parameter path: " + name);
    std::vector<double> values(shape_numel(shape));
    Rng rng(mix_seed(seed_, fnv1a(name)));
    for (auto& v : values) {
        switch (init.kind) {
        case InitKind::Zeros: v = 0.0; break;
        case InitKind::Ones: v = 1.0; break;
        case InitKind::Uniform: v = rng.uniform(-init.scale, init.scale); break;
        case InitKind::Normal: v = init.scale * rng.normal(); break;
        }
    }
    Tensor t = Tensor::leaf(shape, std::move(values));
    params_.push_back({name, t});
    return t;
}

const Parameter* ParameterSet::find(const std::string& name) const {
    for (const auto& p : params_) {
        if (p.name == name) return &p;
    }
    return nullptr;
}

std::vector<Tensor> ParameterSet::tensors() const {
    std::vector<Tensor> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.tensor);
    return out;
}

std::vector<Tensor> ParameterSet::tensors_with_prefix(const std::string& prefix) const {
    std::vector<Tensor> out;
    for (const auto& p : params_) {
        if (p.name.starts_with(prefix)) out.push_back(p.tensor);
    }
    return out;
}

void ParameterSet::zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
}

std::size_t ParameterSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
}

std::uint64_t ParameterSet::hash() const { return hash_prefix(""); }

std::uint64_t ParameterSet::hash_prefix(const std::string& prefix) const {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (const auto& p : params_) {
        if (!p.name.starts_with(prefix)) continue;
        h = fnv1a(p.name, h);
        h = fnv1a(shape_str(p.tensor.shape()), h);
        for (double v : p.tensor.values()) {
            char bytes[sizeof(double)];
            std::memcpy(bytes, &v, sizeof v);
            h = fnv1a(std::string_view(bytes, sizeof bytes), h);
        }
    }
    return h;
}

Linear::Linear(ParameterSet& ps, const std::string& name, int in, int out, bool with_bias) {
    const double bound = std::sqrt(6.0 / (in + out));
    weight = ps.add(name + ".weight", {in, out}, Init::uniform(bound));
    if (with_bias) bias = ps.add(name + ".bias", {out}, Init::zeros());
}

Tensor Linear::operator()(const Tensor& x) const {
    Tensor y = matmul(x, weight);
    return bias.defined() ? add_row_bias(y, bias) : y;
}

Conv2d::Conv2d(ParameterSet& ps, const std::string& name, int in, int out, int kernel, int s,
               int pad)
    : stride(s), padding(pad) {
    const double bound = std::sqrt(6.0 / (in * kernel * kernel));
    weight = ps.add(name + ".weight", {out, in, kernel, kernel}, Init::uniform(bound));
    bias = ps.add(name + ".bias", {out}, Init::zeros());
}

Tensor Conv2d::operator()(const Tensor& x) const { return conv2d(x, weight, bias, stride, padding); }

ConvTranspose2d::ConvTranspose2d(ParameterSet& ps, const std::string& name, int in, int out,
                                 int kernel, int s)
    : stride(s) {
    const double bound = std::sqrt(6.0 / in);
    weight = ps.add(name + ".weight", {in, out, kernel, kernel}, Init::uniform(bound));
    bias = ps.add(name + ".bias", {out}, Init::zeros());
}

Tensor ConvTranspose2d::operator()(const Tensor& x) const {
    return conv_transpose2d(x, weight, bias, stride);
}

LayerNorm::LayerNorm(ParameterSet& ps, const std::string& name, int dim) {
    gamma = ps.add(name + ".gamma", {dim}, Init::ones());
    beta = ps.add(name + ".beta", {dim}, Init::zeros());
}

Tensor LayerNorm::operator()(const Tensor& x) const { return layer_norm_rows(x, gamma, beta); }

Mlp::Mlp(ParameterSet& ps, const std::string& name, std::vector<int> dims) {
    if (dims.size() < 2) throw ConfigError("MLP needs at least input and output widths");
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        layers.emplace_back(ps, name + ".fc" + std::to_string(i), dims[i], dims[i + 1]);
    }
}

Tensor Mlp::operator()(const Tensor& x) const {
    Tensor h = x;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        h = layers[i](h);
        if (i + 1 < layers.size()) h = relu(h);
    }
    return h;
}

Attention::Attention(ParameterSet& ps, const std::string& name, AttentionOptions o) : opts(o) {
    if (o.heads < 1 || o.dim % o.heads != 0) {
        throw ConfigError("attention dim must be divisible by the head count");
    }
    const int dh = o.dim / o.heads;
    const double bound = std::sqrt(6.0 / (o.dim + dh));
    for (int h = 0; h < o.heads; ++h) {
        const std::string suffix = o.heads == 1 ? "" : "." + std::to_string(h);
        wq.push_back(ps.add(name + ".wq" + suffix, {o.dim, dh}, Init::uniform(bound)));
        wk.push_back(ps.add(name + ".wk" + suffix, {o.dim, dh}, Init::uniform(bound)));
        wv.push_back(ps.add(name + ".wv" + suffix, {o.dim, dh}, Init::uniform(bound)));
    }
}

Tensor Attention::operator()(const Tensor& queries, const Tensor& keys, const Tensor& values,
                             std::span<const double> bias, std::vector<double>* weights_out) const {
    const int nq = queries.dim(0);
    const int nk = keys.dim(0);
    if (values.dim(0) != nk) throw ShapeError("attention: keys and values differ in length");
    if (!bias.empty() && bias.size() != static_cast<std::size_t>(nq) * nk) {
        throw ShapeError("attention: bias must be queries x keys");
    }
    const int dh = opts.dim / opts.heads;
    const double logit_scale = opts.scale ? 1.0 / std::sqrt(static_cast<double>(dh)) : 1.0;
    if (weights_out) weights_out->assign(static_cast<std::size_t>(nq) * nk, 0.0);

    std::vector<Tensor> head_outputs;
    for (int h = 0; h < opts.heads; ++h) {
        const Tensor q = matmul(queries, wq[h]);
        const Tensor k = matmul(keys, wk[h]);
        const Tensor v = matmul(values, wv[h]);
        Tensor logits = matmul(q, transpose(k));
        if (opts.scale) logits = scale(logits, logit_scale);
        if (!bias.empty()) logits = add_constant(logits, bias);
        const Tensor w = softmax_rows(logits);
        if (weights_out) {
            for (std::size_t i = 0; i < w.numel(); ++i) (*weights_out)[i] += w[i] / opts.heads;
        }
        head_outputs.push_back(matmul(w, v));
    }
    if (opts.heads == 1) return head_outputs[0];
    std::vector<Tensor> cols;
    for (auto& o : head_outputs) cols.push_back(transpose(o));
    return transpose(concat_rows(cols));
}

std::vector<double> repeat_bias_rows(std::span<const double> key_bias, int query_rows) {
    std::vector<double> out;
    out.reserve(key_bias.size() * query_rows);
    for (int r = 0; r < query_rows; ++r) out.insert(out.end(), key_bias.begin(), key_bias.end());
    return out;
}

std::vector<double> sinusoidal_positions(int h, int w, int dim) {
    std::vector<double> out(static_cast<std::size_t>(h) * w * dim, 0.0);
    const int half = dim / 2;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double* row = out.data() + static_cast<std::size_t>(y * w + x) * dim;
            for (int i = 0; i < half; ++i) {
                const double freq = std::pow(10000.0, -2.0 * (i / 2) / std::max(1, half));
                const double pos = (i % 2 == 0 ? y : x) * freq;
                row[2 * i] = std::sin(pos);
                if (2 * i + 1 < dim) row[2 * i + 1] = std::cos(pos);
            }
        }
    }
    return out;
}

Tensor to_tokens(const Tensor& chw) {
    if (chw.rank() != 3) throw ShapeError("to_tokens expects [C, H, W]");
    return transpose(reshape(chw, {chw.dim(0), chw.dim(1) * chw.dim(2)}));
}

} // namespace shapeformer::nn
