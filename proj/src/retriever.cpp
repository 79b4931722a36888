#include "shapeformer/retriever.hpp"

#include <cmath>
#include <fstream>

#include "shapeformer/errors.hpp"
#include "shapeformer/nn/checkpoint.hpp"
#include "shapeformer/rng.hpp"

namespace shapeformer {

using namespace nn;

QuantizeResult quantize(std::span<const double> latents, int v, std::span<const double> codebook) {
    if (v <= 0 || latents.size() % v != 0 || codebook.size() % v != 0 || codebook.empty()) {
        throw ShapeError("quantize: latents/codebook are not multiples of the codeword size");
    }
    const std::size_t m = latents.size() / v, k = codebook.size() / v;
    std::vector<double> book_norm(k);
    for (std::size_t j = 0; j < k; ++j) {
        double s = 0;
        for (int d = 0; d < v; ++d) s += codebook[j * v + d] * codebook[j * v + d];
        book_norm[j] = std::sqrt(s);
    }
    QuantizeResult out;
    out.indices.resize(m);
    out.codewords.resize(m * v);
    for (std::size_t i = 0; i < m; ++i) {
        const double* e = latents.data() + i * v;
        double en = 0;
        for (int d = 0; d < v; ++d) en += e[d] * e[d];
        en = std::sqrt(en);
        int best = 0;
        double best_sim = -2.0;
        for (std::size_t j = 0; j < k; ++j) {
            double sim = 0.0;
            if (en > 0.0 && book_norm[j] > 0.0) {
                double dot = 0;
                for (int d = 0; d < v; ++d) dot += e[d] * codebook[j * v + d];
                sim = dot / (en * book_norm[j]);
            }
            if (sim > best_sim) {
                best_sim = sim;
                best = static_cast<int>(j);
            }
        }
        out.indices[i] = best;
        std::copy_n(codebook.data() + static_cast<std::size_t>(best) * v, v, out.codewords.data() + i * v);
    }
    return out;
}

CatSpRetriever::CatSpRetriever(const RetrieverOptions& opts, std::uint64_t seed)
    : opts_(opts), net_(seed), books_(seed) {
    if (opts.resolution % 8 != 0 || opts.resolution / 8 != opts.grid) {
        throw ConfigError("retriever grid must be resolution / 8");
    }
    if (opts.num_categories < 1 || opts.codebook_size < 1 || opts.codeword_dim < 1) {
        throw ConfigError("retriever sizes must be positive");
    }
    const int ch = opts.channels, v = opts.codeword_dim;
    enc0_ = Conv2d(net_, "enc0", 1, ch, 3, 1, 1);
    enc1_ = Conv2d(net_, "enc1", ch, 2 * ch, 3, 2, 1);
    enc2_ = Conv2d(net_, "enc2", 2 * ch, 2 * ch, 3, 2, 1);
    enc3_ = Conv2d(net_, "enc3", 2 * ch, v, 3, 2, 1);
    dec_in_ = Conv2d(net_, "dec_in", v, 2 * ch, 3, 1, 1);
    up0_ = ConvTranspose2d(net_, "up0", 2 * ch, 2 * ch, 2, 2);
    up1_ = ConvTranspose2d(net_, "up1", 2 * ch, ch, 2, 2);
    up2_ = ConvTranspose2d(net_, "up2", ch, ch, 2, 2);
    dec_out_ = Conv2d(net_, "dec_out", ch, 1, 3, 1, 1);

    const int books = opts.per_category ? opts.num_categories : 1;
    for (int j = 0; j < books; ++j) {
        Tensor cb = books_.add("codebook." + std::to_string(j), {opts.codebook_size, v}, Init::normal(1.0));
        auto vals = cb.mutable_values();
        for (int r = 0; r < opts.codebook_size; ++r) {
            double n = 0;
            for (int d = 0; d < v; ++d) n += vals[r * v + d] * vals[r * v + d];
            n = std::sqrt(n);
            for (int d = 0; d < v; ++d) vals[r * v + d] /= n;
        }
        codebooks_.push_back(cb);
    }
}

std::vector<Tensor> CatSpRetriever::trainable() const {
    auto out = net_.tensors();
    for (const auto& cb : codebooks_) out.push_back(cb);
    return out;
}

int CatSpRetriever::codebook_id(int category) const {
    if (category < 0 || category >= opts_.num_categories) {
        throw UnknownCategory("category " + std::to_string(category) + " outside [0, " +
                              std::to_string(opts_.num_categories) + ")");
    }
    return opts_.per_category ? category : 0;
}

const Tensor& CatSpRetriever::codebook(int category) const { return codebooks_[codebook_id(category)]; }
Tensor& CatSpRetriever::codebook(int category) { return codebooks_[codebook_id(category)]; }

Tensor CatSpRetriever::mask_input(const BinaryMask& mask) const {
    const int r = opts_.resolution;
    BinaryMask m = mask;
    if (m.height() != r || m.width() != r) {
        if (m.empty_canvas()) throw ShapeError("retriever input mask has no pixels");
        m = crop_resize_mask(mask, {0, 0, mask.width(), mask.height()}, r, r);
    }
    std::vector<double> v(m.data().begin(), m.data().end());
    return Tensor::constant({1, r, r}, std::move(v));
}

Tensor CatSpRetriever::encode(const Tensor& input) const {
    const int r = opts_.resolution;
    if (input.rank() != 3 || input.dim(0) != 1 || input.dim(1) != r || input.dim(2) != r) {
        throw ShapeError("retriever encoder expects [1, " + std::to_string(r) + ", " +
                         std::to_string(r) + "], got " + shape_str(input.shape()));
    }
    Tensor x = relu(enc0_(input));
    x = relu(enc1_(x));
    x = relu(enc2_(x));
    return enc3_(x);
}

Tensor CatSpRetriever::decode(const Tensor& grid) const {
    const int k = opts_.grid;
    if (grid.rank() != 3 || grid.dim(0) != opts_.codeword_dim || grid.dim(1) != k || grid.dim(2) != k) {
        throw ShapeError("retriever decoder expects [v, k, k], got " + shape_str(grid.shape()));
    }
    Tensor x = relu(dec_in_(grid));
    x = relu(up0_(x));
    x = relu(up1_(x));
    x = relu(up2_(x));
    return sigmoid(dec_out_(x));
}

Tensor CatSpRetriever::grid_to_tokens(const Tensor& grid) { return to_tokens(grid); }

Tensor CatSpRetriever::tokens_to_grid(const Tensor& tokens) const {
    const int k = opts_.grid;
    return reshape(transpose(tokens), {opts_.codeword_dim, k, k});
}

ShapePrior CatSpRetriever::retrieve(const BinaryMask& visible, int category) const {
    const int id = codebook_id(category);
    NoGradGuard no_grad;
    const Tensor e = grid_to_tokens(encode(mask_input(visible)));
    const auto q = quantize(e.values(), opts_.codeword_dim, codebooks_[id].values());
    const Tensor b = Tensor::constant(e.shape(), q.codewords);
    const Tensor prior = decode(tokens_to_grid(b));
    ShapePrior out;
    out.size = opts_.resolution;
    out.soft.assign(prior.values().begin(), prior.values().end());
    out.binary = threshold_mask(out.soft, out.size, out.size, kMaskThreshold);
    return out;
}

PriorLosses CatSpRetriever::losses(const BinaryMask& visible, const BinaryMask& amodal, int category,
                                   double commitment) const {
    const int id = codebook_id(category);
    const Tensor target = mask_input(amodal);
    const Tensor e = grid_to_tokens(encode(mask_input(visible)));
    auto q = quantize(e.values(), opts_.codeword_dim, codebooks_[id].values());
    // Indices are a discrete choice: freeze them for the gradient checker.
    std::vector<double> idx_d(q.indices.begin(), q.indices.end());
    idx_d = frozen(std::move(idx_d));
    std::vector<int> idx(idx_d.begin(), idx_d.end());

    const Tensor b = gather_rows(codebooks_[id], idx);
    const Tensor st = add(e, detach(sub(b, e)));
    const Tensor prior = decode(tokens_to_grid(st));

    PriorLosses out;
    out.rec = mse_mean(prior, target.values());
    out.vq = mse_mean(e, b);
    if (commitment != 0.0) out.vq = add(out.vq, scale(mse_mean(e, detach(b)), commitment));
    out.total = add(out.rec, out.vq);
    out.indices = std::move(idx);
    out.latents.assign(e.values().begin(), e.values().end());
    return out;
}

void CatSpRetriever::reseed_codeword(int codebook_id_, int index, std::span<const double> value) {
    auto& cb = codebooks_.at(codebook_id_);
    const int v = opts_.codeword_dim;
    if (static_cast<int>(value.size()) != v || index < 0 || index >= opts_.codebook_size) {
        throw ShapeError("reseed_codeword: bad index or value size");
    }
    auto vals = cb.mutable_values();
    std::copy(value.begin(), value.end(), vals.begin() + static_cast<std::ptrdiff_t>(index) * v);
}

std::uint64_t CatSpRetriever::hash() const { return mix_seed(net_.hash(), books_.hash()); }

namespace {
constexpr char kMagic[4] = {'S', 'F', 'R', 'T'};
}

void CatSpRetriever::save(const std::filesystem::path& path) const {
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw ParseError("cannot write " + tmp.string());
        out.write(kMagic, 4);
        write_u32(out, kRetrieverFormatVersion);
        for (int x : {opts_.num_categories, opts_.per_category ? 1 : 0, opts_.resolution, opts_.grid,
                      opts_.codebook_size, opts_.codeword_dim, opts_.channels}) {
            write_u32(out, static_cast<std::uint32_t>(x));
        }
        write_checkpoint(out, net_);
        write_u32(out, static_cast<std::uint32_t>(codebooks_.size()));
        for (const auto& cb : codebooks_) {
            write_u32(out, static_cast<std::uint32_t>(cb.dim(0)));
            write_u32(out, static_cast<std::uint32_t>(cb.dim(1)));
            for (double x : cb.values()) write_f32(out, static_cast<float>(x));
        }
        if (!out) throw ParseError("failed writing " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

CatSpRetriever CatSpRetriever::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifact("retriever checkpoint not found: " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || !std::equal(magic, magic + 4, kMagic)) throw ParseError(path.string() + " is not a retriever checkpoint");
    const auto version = read_u32(in);
    if (version != kRetrieverFormatVersion) {
        throw FormatVersionMismatch("retriever format version " + std::to_string(version));
    }
    RetrieverOptions o;
    o.num_categories = static_cast<int>(read_u32(in));
    o.per_category = read_u32(in) != 0;
    o.resolution = static_cast<int>(read_u32(in));
    o.grid = static_cast<int>(read_u32(in));
    o.codebook_size = static_cast<int>(read_u32(in));
    o.codeword_dim = static_cast<int>(read_u32(in));
    o.channels = static_cast<int>(read_u32(in));
    CatSpRetriever r(o, 0);
    assign_checkpoint(read_checkpoint(in), r.net_);
    const auto books = read_u32(in);
    if (books != r.codebooks_.size()) throw ParseError("retriever codebook count mismatch");
    for (auto& cb : r.codebooks_) {
        const auto k = read_u32(in), v = read_u32(in);
        if (static_cast<int>(k) != o.codebook_size || static_cast<int>(v) != o.codeword_dim) {
            throw ParseError("retriever codebook header mismatch");
        }
        auto vals = cb.mutable_values();
        for (auto& x : vals) x = read_f32(in);
    }
    if (!in) throw ParseError("truncated retriever checkpoint");
    return r;
}

} // namespace shapeformer
