#include "shapeformer/heads.hpp"

#include "shapeformer/errors.hpp"
#include "shapeformer/mask.hpp"
#include "shapeformer/retriever.hpp"

namespace shapeformer {

using namespace nn;

MaskFeatureBranch::MaskFeatureBranch(ParameterSet& ps, const std::string& name, int dim) {
    conv0 = Conv2d(ps, name + ".conv0", dim, dim, 3, 1, 1);
    conv1 = Conv2d(ps, name + ".conv1", dim, dim, 3, 1, 1);
    conv2 = Conv2d(ps, name + ".conv2", dim, dim, 3, 1, 1);
    deconv = ConvTranspose2d(ps, name + ".deconv", dim, dim, 2, 2);
    proj = Conv2d(ps, name + ".proj", dim, dim, 1, 1, 0);
}

MaskFeatureBranch::Output MaskFeatureBranch::operator()(const Tensor& roi) const {
    Output out;
    out.f = relu(conv2(relu(conv1(relu(conv0(roi))))));
    out.e = proj(relu(deconv(out.f)));
    return out;
}

DecoderOptions DecoderOptions::from(const ModelOptions& m) {
    DecoderOptions d;
    d.dim = m.embed_dim;
    d.heads = m.num_heads;
    d.scale = m.attn_scale;
    d.pre_norm = m.pre_norm;
    d.ffn = m.ffn;
    d.ffn_dim = m.ffn_dim;
    d.positional_encoding = m.positional_encoding;
    return d;
}

DecoderLayer::DecoderLayer(ParameterSet& ps, const std::string& name, const DecoderOptions& o,
                           Order ord)
    : opts(o), order(ord) {
    const AttentionOptions ao{o.dim, o.heads, o.scale};
    self_attn = Attention(ps, name + ".self", ao);
    cross_attn = Attention(ps, name + ".cross", ao);
    norm_self = LayerNorm(ps, name + ".norm_self", o.dim);
    norm_cross = LayerNorm(ps, name + ".norm_cross", o.dim);
    if (o.ffn) {
        norm_ffn = LayerNorm(ps, name + ".norm_ffn", o.dim);
        ffn = Mlp(ps, name + ".ffn", {o.dim, o.ffn_dim, o.dim});
    }
}

Tensor DecoderLayer::self_block(const Tensor& x) const {
    if (opts.pre_norm) {
        const Tensor n = norm_self(x);
        return add(x, self_attn(n, n, n));
    }
    return norm_self(add(x, self_attn(x, x, x)));
}

Tensor DecoderLayer::cross_block(const Tensor& x, const Tensor& keys, const Tensor& values,
                                 std::span<const double> bias, std::vector<double>* weights) const {
    std::vector<double> full_bias;
    if (!bias.empty()) full_bias = repeat_bias_rows(bias, x.dim(0));
    if (opts.pre_norm) return add(x, cross_attn(norm_cross(x), keys, values, full_bias, weights));
    return norm_cross(add(x, cross_attn(x, keys, values, full_bias, weights)));
}

Tensor DecoderLayer::ffn_block(const Tensor& x) const {
    if (!opts.ffn) return x;
    if (opts.pre_norm) return add(x, ffn(norm_ffn(x)));
    return norm_ffn(add(x, ffn(x)));
}

Tensor DecoderLayer::operator()(const Tensor& queries, const Tensor& memory,
                                std::span<const double> positions, std::span<const double> cross_bias,
                                std::vector<double>* cross_weights) const {
    if (queries.rank() != 2 || queries.dim(1) != opts.dim || memory.rank() != 2 ||
        memory.dim(1) != opts.dim) {
        throw ShapeError("decoder layer: queries and memory must be [n, " + std::to_string(opts.dim) + "]");
    }
    if (!cross_bias.empty() && cross_bias.size() != static_cast<std::size_t>(memory.dim(0))) {
        throw ShapeError("decoder layer: bias must have one entry per memory token");
    }
    const Tensor keys = positions.empty() ? memory : add_constant(memory, positions);
    Tensor x = queries;
    if (order == Order::SelfThenCross) {
        x = self_block(x);
        x = cross_block(x, keys, memory, cross_bias, cross_weights);
    } else {
        x = cross_block(x, keys, memory, cross_bias, cross_weights);
        x = self_block(x);
    }
    return ffn_block(x);
}

Tensor extract_masks(const Tensor& x, const Tensor& e) {
    if (x.rank() != 2 || e.rank() != 3 || x.dim(1) != e.dim(0)) {
        throw ShapeError("extract_masks: embedding " + shape_str(x.shape()) + " vs pixel features " +
                         shape_str(e.shape()));
    }
    return sigmoid(matmul(x, reshape(e, {e.dim(0), e.dim(1) * e.dim(2)})));
}

int argmax(std::span<const double> values) {
    int best = 0;
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (values[i] > values[best]) best = static_cast<int>(i);
    }
    return best;
}

namespace {

std::vector<DecoderLayer> make_layers(ParameterSet& ps, const std::string& name, int count,
                                      const DecoderOptions& o, DecoderLayer::Order order) {
    std::vector<DecoderLayer> layers;
    for (int l = 0; l < count; ++l) layers.emplace_back(ps, name + ".dec" + std::to_string(l), o, order);
    return layers;
}

std::vector<double> positions_for(const DecoderOptions& o, int roi) {
    if (!o.positional_encoding) return {};
    return sinusoidal_positions(roi, roi, o.dim);
}

Tensor run_decoder(const std::vector<DecoderLayer>& layers, Tensor x, const Tensor& f, int roi,
                   std::span<const double> bias, std::vector<double>* attention) {
    if (f.rank() != 3 || f.dim(1) != roi || f.dim(2) != roi) {
        throw ShapeError("decoder memory must be [C, " + std::to_string(roi) + ", " +
                         std::to_string(roi) + "], got " + shape_str(f.shape()));
    }
    const Tensor memory = to_tokens(f);
    const auto positions = layers.empty() ? std::vector<double>{} : positions_for(layers[0].opts, roi);
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const bool last = l + 1 == layers.size();
        x = layers[l](x, memory, positions, bias, last ? attention : nullptr);
    }
    return x;
}

void check_roi(const Tensor& roi, int dim, int size) {
    if (roi.rank() != 3 || roi.dim(0) != dim || roi.dim(1) != size || roi.dim(2) != size) {
        throw ShapeError("RoI feature must be [" + std::to_string(dim) + ", " + std::to_string(size) +
                         ", " + std::to_string(size) + "], got " + shape_str(roi.shape()));
    }
}

} // namespace

VisOccHead::VisOccHead(ParameterSet& ps, const ModelOptions& opts, bool bidir, const std::string& name)
    : dopts(DecoderOptions::from(opts)), bidirectional(bidir), roi_size(opts.roi_size) {
    const int c = opts.embed_dim;
    features = MaskFeatureBranch(ps, name, c);
    q_v = ps.add(name + ".q_v", {1, c}, Init::normal(1.0));
    q_o = ps.add(name + ".q_o", {1, c}, Init::normal(1.0));
    if (bidirectional) {
        q_a = ps.add(name + ".q_a", {1, c}, Init::normal(1.0));
        q_p = ps.add(name + ".q_p", {1, c}, Init::normal(1.0));
    }
    layers = make_layers(ps, name, opts.vis_layers, dopts, DecoderLayer::Order::SelfThenCross);
    classifier = Mlp(ps, name + ".cls", {c, c, c, opts.num_categories});
}

MaskFeatureBranch::Output VisOccHead::vis_features(const Tensor& roi) const {
    check_roi(roi, dopts.dim, roi_size);
    return features(roi);
}

Tensor VisOccHead::decode(const Tensor& f_v, std::vector<double>* attention) const {
    std::vector<Tensor> qs{q_v, q_o};
    if (bidirectional) {
        qs.push_back(q_a);
        qs.push_back(q_p);
    }
    return run_decoder(layers, concat_rows(qs), f_v, roi_size, {}, attention);
}

Tensor VisOccHead::classify(const Tensor& x_v) const { return softmax_rows(classifier(x_v)); }

VisOccOutput VisOccHead::operator()(const Tensor& roi) const {
    const auto feats = vis_features(roi);
    VisOccOutput out;
    const Tensor x = decode(feats.f, &out.attention);
    const Tensor masks = extract_masks(x, feats.e);
    out.x_v = slice_rows(x, 0, 1);
    out.x_o = slice_rows(x, 1, 2);
    out.m_v = slice_rows(masks, 0, 1);
    out.m_o = slice_rows(masks, 1, 2);
    if (bidirectional) {
        out.x_a = slice_rows(x, 2, 3);
        out.x_p = slice_rows(x, 3, 4);
        out.m_a = slice_rows(masks, 2, 3);
        out.m_p = slice_rows(masks, 3, 4);
    }
    out.probs = classify(out.x_v);
    out.category = static_cast<int>(frozen({static_cast<double>(argmax(out.probs.values()))})[0]);
    return out;
}

AttnBias prior_to_bias(const ShapePrior& prior, int roi_size) {
    const BinaryMask binary = threshold_mask(prior.soft, prior.size, prior.size, kMaskThreshold);
    const BinaryMask cells = crop_resize_mask(binary, {0, 0, prior.size, prior.size}, roi_size, roi_size);
    AttnBias bias;
    bias.grid.resize(cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) bias.grid[i] = cells.data()[i] ? 0.0 : kMaskedLogit;
    if (!cells.any()) {
        std::fill(bias.grid.begin(), bias.grid.end(), 0.0);
        bias.fallback = true;
    }
    return bias;
}

SpaHead::SpaHead(ParameterSet& ps, const ModelOptions& opts, const std::string& name)
    : dopts(DecoderOptions::from(opts)), stop_gradient(opts.stop_gradient), roi_size(opts.roi_size) {
    const int c = opts.embed_dim;
    mlp_a = Mlp(ps, name + ".mlp_a", {c, c, c});
    mlp_p = Mlp(ps, name + ".mlp_p", {c, c, c});
    features = MaskFeatureBranch(ps, name, c);
    layers = make_layers(ps, name, opts.amodal_layers, dopts, DecoderLayer::Order::CrossThenSelf);
}

MaskFeatureBranch::Output SpaHead::amodal_features(const Tensor& roi) const {
    check_roi(roi, dopts.dim, roi_size);
    return features(roi);
}

Tensor SpaHead::decode(const Tensor& queries, const Tensor& f_a, std::span<const double> bias,
                       std::vector<double>* attention) const {
    if (!bias.empty() && bias.size() != static_cast<std::size_t>(roi_size) * roi_size) {
        throw ShapeError("SPA bias must have H_r * W_r entries");
    }
    return run_decoder(layers, queries, f_a, roi_size, bias, attention);
}

SpaOutput SpaHead::operator()(const Tensor& x_v, const Tensor& x_o, const Tensor& roi,
                              std::span<const double> bias) const {
    const Tensor xv = stop_gradient ? detach(x_v) : x_v;
    const Tensor xo = stop_gradient ? detach(x_o) : x_o;
    const auto feats = amodal_features(roi);
    SpaOutput out;
    const Tensor z = decode(concat_rows({mlp_a(xv), mlp_p(xo)}), feats.f, bias, &out.attention);
    const Tensor masks = extract_masks(z, feats.e);
    out.z_a = slice_rows(z, 0, 1);
    out.z_p = slice_rows(z, 1, 2);
    out.m_a = slice_rows(masks, 0, 1);
    out.m_p = slice_rows(masks, 1, 2);
    return out;
}

} // namespace shapeformer
