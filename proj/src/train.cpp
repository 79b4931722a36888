#include "shapeformer/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "shapeformer/errors.hpp"
#include "shapeformer/nn/optim.hpp"
#include "shapeformer/rng.hpp"

namespace shapeformer {

using namespace nn;

namespace {

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1));
        std::swap(v[i - 1], v[j]);
    }
}

std::vector<double> snapshot(const std::vector<Tensor>& params) {
    std::vector<double> out;
    for (const auto& p : params) out.insert(out.end(), p.values().begin(), p.values().end());
    return out;
}

void restore(std::vector<Tensor>& params, const std::vector<double>& values) {
    std::size_t k = 0;
    for (auto& p : params) {
        auto v = p.mutable_values();
        std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(k), v.size(), v.begin());
        k += v.size();
    }
}

PriorSample make_prior_sample(const InstanceRecord& inst, int resolution, bool augmented,
                              std::uint64_t aug_seed) {
    PriorSample s;
    s.category = inst.category;
    s.amodal = crop_resize_mask(inst.quartet.amodal, inst.box, resolution, resolution);
    s.visible = augmented ? occlusion_augment(s.amodal, aug_seed)
                          : crop_resize_mask(inst.quartet.visible, inst.box, resolution, resolution);
    return s;
}

PriorTrainResult run_prior_training(CatSpRetriever& retriever,
                                    const std::function<std::vector<PriorSample>(int)>& samples_for_epoch,
                                    const PriorTrainOptions& opts, std::uint64_t seed,
                                    const std::function<void(const PriorEpochLog&)>& on_epoch) {
    const auto params = retriever.trainable();
    Adam adam(params);
    Rng rng(mix_seed(seed, 0x9e11));
    const auto& ro = retriever.options();
    const int books = retriever.num_codebooks();
    const int v = ro.codeword_dim;
    PriorTrainResult result;

    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        auto samples = samples_for_epoch(epoch);
        if (samples.empty()) throw EmptySplit("no instances to train the retriever on");
        shuffle(samples, rng);
        std::vector<std::vector<int>> usage(books, std::vector<int>(ro.codebook_size, 0));
        // Reservoir of encoder outputs per codebook for re-seeding.
        constexpr std::size_t kReservoir = 512;
        std::vector<std::vector<std::vector<double>>> reservoir(books);
        std::vector<std::size_t> seen(books, 0);
        PriorEpochLog log;
        log.epoch = epoch + 1;

        for (std::size_t start = 0; start < samples.size(); start += opts.batch_size) {
            const std::size_t end = std::min(samples.size(), start + opts.batch_size);
            const double inv = 1.0 / static_cast<double>(end - start);
            for (auto& p : retriever.trainable()) p.zero_grad();
            double step_total = 0.0;
            for (std::size_t i = start; i < end; ++i) {
                const auto& s = samples[i];
                auto l = retriever.losses(s.visible, s.amodal, s.category, opts.commitment);
                if (!std::isfinite(l.total.item())) throw NonFiniteLoss("non-finite retriever loss");
                backward(scale(l.total, inv));
                log.rec += l.rec.item();
                log.vq += l.vq.item();
                step_total += l.total.item() * inv;
                const int book = retriever.codebook_id(s.category);
                for (std::size_t t = 0; t < l.indices.size(); ++t) {
                    ++usage[book][l.indices[t]];
                    std::vector<double> lat(l.latents.begin() + static_cast<std::ptrdiff_t>(t * v),
                                            l.latents.begin() + static_cast<std::ptrdiff_t>((t + 1) * v));
                    const std::size_t n = ++seen[book];
                    if (reservoir[book].size() < kReservoir) {
                        reservoir[book].push_back(std::move(lat));
                    } else {
                        const auto j = static_cast<std::size_t>(rng.next_u64() % n);
                        if (j < kReservoir) reservoir[book][j] = std::move(lat);
                    }
                }
            }
            result.step_losses.push_back(step_total);
            adam.step(opts.learning_rate);
        }
        for (int b = 0; b < books; ++b) {
            if (reservoir[b].empty()) continue;
            for (int k = 0; k < ro.codebook_size; ++k) {
                if (usage[b][k] > 0) continue;
                const auto& lat = reservoir[b][rng.next_u64() % reservoir[b].size()];
                double norm = 0;
                for (double x : lat) norm += x * x;
                if (norm <= 0.0) continue;
                retriever.reseed_codeword(b, k, lat);
                ++log.reseeded;
            }
        }
        const double n = static_cast<double>(samples.size());
        log.rec /= n;
        log.vq /= n;
        log.total = log.rec + log.vq;
        result.history.push_back(log);
        if (on_epoch) on_epoch(log);
    }
    return result;
}

} // namespace

std::vector<PriorSample> prior_samples(const std::vector<SceneRecord>& scenes, int resolution,
                                       bool augment, std::uint64_t seed) {
    std::vector<PriorSample> out;
    Rng rng(seed);
    for (const auto& scene : scenes) {
        for (const auto& inst : scene.instances) {
            const bool aug = augment && rng.bernoulli(0.5);
            out.push_back(make_prior_sample(inst, resolution, aug, rng.next_u64()));
        }
    }
    return out;
}

PriorTrainResult train_retriever(CatSpRetriever& retriever, const std::vector<SceneRecord>& scenes,
                                 const PriorTrainOptions& opts, std::uint64_t seed,
                                 const std::function<void(const PriorEpochLog&)>& on_epoch) {
    const int r = retriever.options().resolution;
    std::vector<PriorSample> fixed;
    if (!opts.augment) fixed = prior_samples(scenes, r, false, seed);
    return run_prior_training(
        retriever,
        [&](int epoch) {
            if (!opts.augment) return fixed;
            return prior_samples(scenes, r, true, mix_seed(seed, static_cast<std::uint64_t>(epoch)));
        },
        opts, seed, on_epoch);
}

PriorTrainResult train_retriever_samples(CatSpRetriever& retriever, std::vector<PriorSample> samples,
                                         const PriorTrainOptions& opts, std::uint64_t seed,
                                         const std::function<void(const PriorEpochLog&)>& on_epoch) {
    return run_prior_training(retriever, [&](int) { return samples; }, opts, seed, on_epoch);
}

double evaluate_prior(const CatSpRetriever& retriever, const std::vector<SceneRecord>& scenes) {
    const int r = retriever.options().resolution;
    double total = 0.0;
    int n = 0;
    for (const auto& scene : scenes) {
        for (const auto& inst : scene.instances) {
            const auto visible = crop_resize_mask(inst.quartet.visible, inst.box, r, r);
            const auto amodal = crop_resize_mask(inst.quartet.amodal, inst.box, r, r);
            total += mask_iou(retriever.retrieve(visible, inst.category).binary, amodal);
            ++n;
        }
    }
    if (n == 0) throw EmptySplit("no instances to evaluate the retriever on");
    return total / n;
}

double learning_rate_at(const TrainOptions& opts, int epoch) {
    if (opts.lr_schedule == "constant" || opts.epochs <= 1) return opts.learning_rate;
    if (opts.lr_schedule == "step") {
        return epoch >= (2 * opts.epochs) / 3 ? opts.learning_rate * 0.1 : opts.learning_rate;
    }
    return opts.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * epoch / opts.epochs));
}

namespace {

LossTensors scene_loss(const ShapeFormer& model, const SceneRecord& scene, const Tensor& fmap,
                       std::vector<LossReport>* per_roi) {
    const bool amodal = model.options().amodal_losses || model.options().bidirectional;
    const int ms = model.mask_size();
    LossTensors sum;
    const double inv = 1.0 / static_cast<double>(scene.instances.size());
    for (const auto& inst : scene.instances) {
        const auto pred = model.predict(fmap, inst.box, scene.height, scene.width, &inst,
                                        model.options().amodal_losses);
        const auto l = shapeformer_loss(pred, make_targets(inst, ms), amodal);
        if (per_roi) per_roi->push_back(l.report());
        if (!sum.total.defined()) {
            sum = {scale(l.cls, inv), scale(l.v, inv), scale(l.o, inv),
                   scale(l.a, inv), scale(l.p, inv), scale(l.total, inv)};
        } else {
            sum.cls = add(sum.cls, scale(l.cls, inv));
            sum.v = add(sum.v, scale(l.v, inv));
            sum.o = add(sum.o, scale(l.o, inv));
            sum.a = add(sum.a, scale(l.a, inv));
            sum.p = add(sum.p, scale(l.p, inv));
            sum.total = add(sum.total, scale(l.total, inv));
        }
    }
    return sum;
}

} // namespace

LossReport image_loss(const ShapeFormer& model, const SceneRecord& scene) {
    if (scene.instances.empty()) return {};
    NoGradGuard no_grad;
    return scene_loss(model, scene, model.features(scene), nullptr).report();
}

TrainResult train_shapeformer(ShapeFormer& model, const std::vector<SceneRecord>& train,
                              const TrainOptions& opts, const std::vector<SceneRecord>* eval_split,
                              const TrainCallbacks& callbacks) {
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < train.size(); ++i) {
        if (!train[i].instances.empty()) order.push_back(i);
    }
    if (order.empty()) throw EmptySplit("training split has no instances");

    TrainResult result;
    if (model.retriever()) result.retriever_hash_before = model.retriever()->hash();
    auto params = model.params().tensors();
    Sgd sgd(params, opts.momentum, opts.weight_decay);
    Rng rng(mix_seed(opts.seed, 0x7ea1));
    auto last_good = snapshot(params);

    auto abort = [&](const std::string& why) {
        restore(params, last_good);
        model.params().zero_grad();
        if (callbacks.on_abort) callbacks.on_abort(model);
        throw NonFiniteLoss(why);
    };

    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        shuffle(order, rng);
        EpochLog log;
        log.epoch = epoch + 1;
        log.learning_rate = learning_rate_at(opts, epoch);
        std::size_t rois = 0;
        for (std::size_t start = 0; start < order.size(); start += opts.batch_images) {
            const std::size_t end = std::min(order.size(), start + opts.batch_images);
            model.params().zero_grad();
            for (std::size_t b = start; b < end; ++b) {
                const auto& scene = train[order[b]];
                const Tensor fmap = model.features(scene);
                std::vector<LossReport> per_roi;
                LossTensors l;
                try {
                    l = scene_loss(model, scene, fmap, &per_roi);
                } catch (const NonFiniteLoss& e) {
                    abort(e.what());
                }
                for (const auto& r : per_roi) log.loss += r;
                rois += per_roi.size();
                backward(scale(l.total, 1.0 / static_cast<double>(end - start)));
            }
            const double norm = clip_grad_norm(params, opts.grad_clip > 0 ? opts.grad_clip : 1e300);
            if (!std::isfinite(norm)) abort("non-finite gradient norm");
            sgd.step(log.learning_rate);
        }
        log.loss = log.loss.scaled(1.0 / static_cast<double>(rois));
        if (!std::isfinite(log.loss.total)) abort("non-finite epoch loss");
        const bool last = epoch + 1 == opts.epochs;
        if (eval_split && !eval_split->empty() && opts.eval_every > 0 &&
            ((epoch + 1) % opts.eval_every == 0 || last)) {
            log.eval = evaluate(model, *eval_split);
        }
        last_good = snapshot(params);
        result.history.push_back(log);
        if (callbacks.on_epoch) callbacks.on_epoch(log);
    }
    result.param_hash = model.params().hash();
    if (model.retriever()) result.retriever_hash_after = model.retriever()->hash();
    return result;
}

EvalReport evaluate(const ShapeFormer& model, const std::vector<SceneRecord>& scenes) {
    std::size_t instances = 0;
    for (const auto& s : scenes) instances += s.instances.size();
    if (instances == 0) throw EmptySplit("evaluation split has no instances");

    const int ms = model.mask_size();
    struct Bucket {
        std::vector<Detection> dets;
        std::vector<GroundTruth> gts;
        std::vector<double> ious;
    };
    Bucket vis, amo, occl, occd;
    for (std::size_t si = 0; si < scenes.size(); ++si) {
        const auto& scene = scenes[si];
        const auto preds = model.predict_scene(scene);
        for (std::size_t k = 0; k < preds.size(); ++k) {
            const auto& p = preds[k];
            const auto& inst = scene.instances[k];
            const double score = *std::max_element(p.vis.probs.values().begin(), p.vis.probs.values().end());
            auto add_pair = [&](Bucket& b, const Tensor& soft, const BinaryMask& gt) {
                const BinaryMask roi = threshold_mask(soft.values(), ms, ms, kMaskThreshold);
                BinaryMask pasted = paste_mask(roi, inst.box, scene.height, scene.width);
                b.ious.push_back(mask_iou(pasted, gt));
                b.dets.push_back({static_cast<int>(si), p.vis.category, score, std::move(pasted)});
                b.gts.push_back({static_cast<int>(si), inst.category, gt});
            };
            add_pair(vis, p.vis.m_v, inst.quartet.visible);
            add_pair(occl, p.vis.m_o, inst.quartet.occluding);
            add_pair(amo, p.m_a, inst.quartet.amodal);
            add_pair(occd, p.m_p, inst.quartet.occluded);
        }
    }
    EvalReport r;
    r.visible = compute_metrics(vis.dets, vis.gts, vis.ious);
    r.amodal = compute_metrics(amo.dets, amo.gts, amo.ious);
    r.occluding = compute_metrics(occl.dets, occl.gts, occl.ious);
    r.occluded = compute_metrics(occd.dets, occd.gts, occd.ious);
    r.num_images = static_cast<int>(scenes.size());
    r.num_instances = static_cast<int>(instances);
    return r;
}

EvalReport mean_report(const std::vector<EvalReport>& reports) {
    EvalReport m;
    if (reports.empty()) return m;
    auto acc = [](MaskTypeMetrics& a, const MaskTypeMetrics& b, double w) {
        a.mean_iou += b.mean_iou * w;
        a.ap50 += b.ap50 * w;
        a.ap75 += b.ap75 * w;
        a.ap += b.ap * w;
        a.ar100 += b.ar100 * w;
    };
    const double w = 1.0 / static_cast<double>(reports.size());
    for (const auto& r : reports) {
        acc(m.visible, r.visible, w);
        acc(m.amodal, r.amodal, w);
        acc(m.occluding, r.occluding, w);
        acc(m.occluded, r.occluded, w);
    }
    m.num_images = reports.front().num_images;
    m.num_instances = reports.front().num_instances;
    return m;
}

nlohmann::ordered_json AblationResult::to_json() const {
    const VariantResult* full = nullptr;
    for (const auto& v : variants) {
        if (v.variant == Variant::Full) full = &v;
    }
    auto out = nlohmann::ordered_json::array();
    for (const auto& v : variants) {
        nlohmann::ordered_json j;
        j["variant"] = to_string(v.variant);
        j["seeds"] = v.seeds;
        auto reports = nlohmann::ordered_json::array();
        for (const auto& r : v.reports) reports.push_back(r.to_json());
        j["reports"] = std::move(reports);
        j["mean"] = v.mean.to_json();
        if (full) {
            nlohmann::ordered_json d;
            d["visible_mean_iou"] = v.mean.visible.mean_iou - full->mean.visible.mean_iou;
            d["amodal_mean_iou"] = v.mean.amodal.mean_iou - full->mean.amodal.mean_iou;
            d["occluding_mean_iou"] = v.mean.occluding.mean_iou - full->mean.occluding.mean_iou;
            d["occluded_mean_iou"] = v.mean.occluded.mean_iou - full->mean.occluded.mean_iou;
            d["amodal_ap"] = v.mean.amodal.ap - full->mean.amodal.ap;
            d["visible_ap"] = v.mean.visible.ap - full->mean.visible.ap;
            j["delta_vs_full"] = std::move(d);
        }
        out.push_back(std::move(j));
    }
    nlohmann::ordered_json root;
    root["variants"] = std::move(out);
    return root;
}

AblationResult run_ablation(const std::vector<Variant>& variants, const RunConfig& base,
                            const std::vector<SceneRecord>& train, const std::vector<SceneRecord>& test,
                            const std::vector<std::uint64_t>& seeds, const RetrieverProvider& retriever,
                            const std::function<void(const std::string&)>& log) {
    AblationResult result;
    for (Variant v : variants) {
        VariantResult vr;
        vr.variant = v;
        const RunConfig cfg = apply_variant(base, v);
        for (std::uint64_t seed : seeds) {
            std::shared_ptr<const CatSpRetriever> r;
            if (cfg.model.use_retriever && !cfg.model.bidirectional) r = retriever(seed);
            ShapeFormer model(cfg.model, seed, r);
            TrainOptions topts = cfg.train;
            topts.seed = seed;
            auto trained = train_shapeformer(model, train, topts);
            vr.seeds.push_back(seed);
            vr.histories.push_back(std::move(trained.history));
            vr.reports.push_back(evaluate(model, test));
            if (log) {
                log(to_string(v) + " seed " + std::to_string(seed) + ": amodal mIoU " +
                    std::to_string(vr.reports.back().amodal.mean_iou) + ", visible mIoU " +
                    std::to_string(vr.reports.back().visible.mean_iou));
            }
        }
        vr.mean = mean_report(vr.reports);
        result.variants.push_back(std::move(vr));
    }
    return result;
}

} // namespace shapeformer
