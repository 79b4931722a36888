#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "shapeformer/config.hpp"
#include "shapeformer/metrics.hpp"
#include "shapeformer/model.hpp"
#include "shapeformer/retriever.hpp"
#include "shapeformer/synth.hpp"

namespace shapeformer {

// ---- retriever pretraining ----

struct PriorSample {
    BinaryMask visible;  // box frame, prior resolution
    BinaryMask amodal;
    int category = 0;
};

// One sample per instance: masks cropped to the amodal box and resized to the
// prior resolution. With augment, the visible input is either the scene's
// visible mask or an occlusion_augment of the amodal mask (even odds, seeded).
std::vector<PriorSample> prior_samples(const std::vector<SceneRecord>& scenes, int resolution,
                                       bool augment, std::uint64_t seed);

struct PriorEpochLog {
    int epoch = 0;
    double rec = 0, vq = 0, total = 0;
    int reseeded = 0;
};

struct PriorTrainResult {
    std::vector<PriorEpochLog> history;
    std::vector<double> step_losses;  // L_csp per optimisation step
};

// Adam on encoder, decoder and codebooks. Dead codewords (unused for a whole
// epoch) are re-seeded from random encoder outputs of that epoch.
PriorTrainResult train_retriever(CatSpRetriever& retriever, const std::vector<SceneRecord>& scenes,
                                 const PriorTrainOptions& opts, std::uint64_t seed,
                                 const std::function<void(const PriorEpochLog&)>& on_epoch = {});
// Step-level variant on prepared samples.
PriorTrainResult train_retriever_samples(CatSpRetriever& retriever, std::vector<PriorSample> samples,
                                         const PriorTrainOptions& opts, std::uint64_t seed,
                                         const std::function<void(const PriorEpochLog&)>& on_epoch = {});

// Mean IoU of the binarised prior against the amodal mask (box frame, prior
// resolution), fed with ground-truth visible mask and category.
double evaluate_prior(const CatSpRetriever& retriever, const std::vector<SceneRecord>& scenes);

// ---- ShapeFormer training ----

struct EpochLog {
    int epoch = 0;
    double learning_rate = 0;
    LossReport loss;  // mean over RoIs
    std::optional<EvalReport> eval;
};

struct TrainResult {
    std::vector<EpochLog> history;
    std::uint64_t param_hash = 0;
    std::uint64_t retriever_hash_before = 0;
    std::uint64_t retriever_hash_after = 0;
};

double learning_rate_at(const TrainOptions& opts, int epoch);

struct TrainCallbacks {
    std::function<void(const EpochLog&)> on_epoch;
    // Called with the restored last-good parameters before NonFiniteLoss propagates.
    std::function<void(const ShapeFormer&)> on_abort;
};

// SGD with momentum over shuffled images; the RoIs of an image share one
// backbone pass. Deterministic in (model init, data, opts.seed). Throws
// NonFiniteLoss after restoring the parameters of the last finished epoch.
TrainResult train_shapeformer(ShapeFormer& model, const std::vector<SceneRecord>& train,
                              const TrainOptions& opts, const std::vector<SceneRecord>* eval_split = nullptr,
                              const TrainCallbacks& callbacks = {});

// Loss of one image (mean over its instances); gradients are not computed.
LossReport image_loss(const ShapeFormer& model, const SceneRecord& scene);

// Predictions pasted back into image coordinates; score = max class probability.
EvalReport evaluate(const ShapeFormer& model, const std::vector<SceneRecord>& scenes);

// ---- ablations ----

struct VariantResult {
    Variant variant = Variant::Full;
    std::vector<std::uint64_t> seeds;
    std::vector<EvalReport> reports;
    std::vector<std::vector<EpochLog>> histories;  // one per seed
    EvalReport mean;
};

struct AblationResult {
    std::vector<VariantResult> variants;
    nlohmann::ordered_json to_json() const;
};

EvalReport mean_report(const std::vector<EvalReport>& reports);

// Builds the retriever a variant needs for one seed (may return nullptr).
using RetrieverProvider = std::function<std::shared_ptr<const CatSpRetriever>(std::uint64_t seed)>;

AblationResult run_ablation(const std::vector<Variant>& variants, const RunConfig& base,
                            const std::vector<SceneRecord>& train, const std::vector<SceneRecord>& test,
                            const std::vector<std::uint64_t>& seeds, const RetrieverProvider& retriever,
                            const std::function<void(const std::string&)>& log = {});

} // namespace shapeformer
