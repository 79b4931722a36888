#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace shapeformer {

// Synthetic benchmark generation (gen-data).
struct DataOptions {
    int image_size = 64;
    int num_categories = 4;
    int min_instances = 2;
    int max_instances = 4;
    std::uint64_t seed = 0;
};

struct ModelOptions {
    int num_categories = 4;
    int image_size = 64;
    int embed_dim = 64;  // C_e
    int roi_size = 14;   // H_r = W_r
    int vis_layers = 3;
    int amodal_layers = 3;
    int num_heads = 1;
    bool attn_scale = true;
    bool pre_norm = true;
    bool ffn = true;
    int ffn_dim = 128;
    bool positional_encoding = false;
    // Stop amodal-loss gradients at the visible -> amodal embedding transfer.
    bool stop_gradient = false;
    // Apply the shape prior as an attention bias in the amodal decoder.
    bool use_prior_mask = true;
    // Query the retriever at all (off = no shape prior anywhere).
    bool use_retriever = true;
    // Bidirectional baseline: one decoder with four queries sharing E_v.
    bool bidirectional = false;
    // Amodal/occluded losses contribute to training.
    bool amodal_losses = true;
    // Diagnostics: feed ground-truth visible mask and category to the retriever.
    bool prior_from_gt = false;
};

struct RetrieverOptions {
    int num_categories = 4;
    bool per_category = true;
    int resolution = 32;
    int grid = 4;            // k
    int codebook_size = 64;  // K
    int codeword_dim = 16;   // v
    int channels = 16;       // base conv width
};

struct TrainOptions {
    std::uint64_t seed = 0;
    int epochs = 20;
    double learning_rate = 0.01;
    double momentum = 0.9;
    double weight_decay = 0.0;
    double grad_clip = 5.0;
    int batch_images = 2;
    std::string lr_schedule = "cosine";  // cosine | step | constant
    int eval_every = 5;
};

struct PriorTrainOptions {
    int epochs = 20;
    double learning_rate = 0.002;
    int batch_size = 16;
    bool augment = true;
    double commitment = 0.0;
    std::uint64_t seed = 0;
};

struct RunConfig {
    DataOptions data;
    ModelOptions model;
    RetrieverOptions retriever;
    TrainOptions train;
    PriorTrainOptions prior;
    std::string variant = "full";

    // key = value lines; '#' starts a comment. Unknown keys -> ConfigError.
    static RunConfig parse(const std::string& text);
    static RunConfig load(const std::filesystem::path& path);
    // Every key in a fixed order; parse(echo()) reproduces the config.
    std::string echo() const;
    void set(const std::string& key, const std::string& value);
    void validate() const;
};

enum class Variant { Full, NoPriorMask, NoPrior, Bidirectional, VisibleOnly };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& name);
std::vector<Variant> parse_variant_list(const std::string& csv);
// Applies the variant's single mechanism change to a base config.
RunConfig apply_variant(const RunConfig& base, Variant v);

} // namespace shapeformer
