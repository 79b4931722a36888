#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "shapeformer/config.hpp"
#include "shapeformer/mask.hpp"
#include "shapeformer/nn/layers.hpp"

namespace shapeformer {

struct ShapePrior {
    int size = 0;
    std::vector<double> soft;  // size * size values in (0, 1)
    BinaryMask binary;         // soft >= 0.5
};

struct QuantizeResult {
    std::vector<int> indices;        // one per latent
    std::vector<double> codewords;   // selected rows, m * v
};

// Nearest codeword by cosine similarity, ties to the lowest index. A
// zero-norm latent (or codeword) has similarity 0 to everything.
// latents: m * v row-major; codebook: K * v row-major.
QuantizeResult quantize(std::span<const double> latents, int v, std::span<const double> codebook);

struct PriorLosses {
    nn::Tensor rec;    // MSE(prior, amodal target)
    nn::Tensor vq;     // MSE(e', b') + commitment * MSE(e', detach(b'))
    nn::Tensor total;  // rec + vq
    std::vector<int> indices;
    std::vector<double> latents;  // e', m * v
};

inline constexpr std::uint32_t kRetrieverFormatVersion = 1;

// Vector-quantised mask autoencoder with one codebook per category (or one
// shared codebook). Input masks live in the RoI box frame at a fixed
// resolution; encoder downsamples by 8 to a k x k grid of v-dim latents.
class CatSpRetriever {
public:
    CatSpRetriever(const RetrieverOptions& opts, std::uint64_t seed);
    // Layers alias the parameter tensors, so copies would share state.
    CatSpRetriever(const CatSpRetriever&) = delete;
    CatSpRetriever& operator=(const CatSpRetriever&) = delete;
    CatSpRetriever(CatSpRetriever&&) = default;

    const RetrieverOptions& options() const { return opts_; }
    // Encoder/decoder weights; codebooks are kept separately.
    nn::ParameterSet& network() { return net_; }
    const nn::ParameterSet& network() const { return net_; }
    // Every tensor the prior objective trains (network + codebooks).
    std::vector<nn::Tensor> trainable() const;
    int num_codebooks() const { return static_cast<int>(codebooks_.size()); }
    // Codebook used for a category; UnknownCategory when out of range.
    const nn::Tensor& codebook(int category) const;
    nn::Tensor& codebook(int category);

    // Mask (resolution x resolution) as a [1, R, R] constant.
    nn::Tensor mask_input(const BinaryMask& mask) const;
    // [1, R, R] -> e [v, k, k].
    nn::Tensor encode(const nn::Tensor& input) const;
    // [v, k, k] -> prior [1, R, R] in (0, 1).
    nn::Tensor decode(const nn::Tensor& grid) const;
    // e [v, k, k] <-> e' [m, v].
    static nn::Tensor grid_to_tokens(const nn::Tensor& grid);
    nn::Tensor tokens_to_grid(const nn::Tensor& tokens) const;

    // Frozen inference path. Any mask size is accepted and resized with
    // nearest neighbour to the prior resolution.
    ShapePrior retrieve(const BinaryMask& visible, int category) const;

    // Differentiable training objective with a straight-through copy at the
    // quantisation step.
    PriorLosses losses(const BinaryMask& visible, const BinaryMask& amodal, int category,
                       double commitment = 0.0) const;

    // Overwrites codeword `index` of a codebook (used to revive dead codewords).
    void reseed_codeword(int codebook_id, int index, std::span<const double> value);
    int codebook_id(int category) const;

    // Covers the network and all codebooks.
    std::uint64_t hash() const;

    void save(const std::filesystem::path& path) const;
    static CatSpRetriever load(const std::filesystem::path& path);

private:
    RetrieverOptions opts_;
    nn::ParameterSet net_;
    nn::ParameterSet books_;
    nn::Conv2d enc0_, enc1_, enc2_, enc3_;
    nn::Conv2d dec_in_;
    nn::ConvTranspose2d up0_, up1_, up2_;
    nn::Conv2d dec_out_;
    std::vector<nn::Tensor> codebooks_;
};

} // namespace shapeformer
