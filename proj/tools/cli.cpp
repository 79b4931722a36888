#include "shapeformer/cli.hpp"

#include <cxxabi.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <sstream>

#include <CLI11.hpp>

#include "shapeformer/backbone.hpp"
#include "shapeformer/config.hpp"
#include "shapeformer/dataset.hpp"
#include "shapeformer/errors.hpp"
#include "shapeformer/image_io.hpp"
#include "shapeformer/nn/checkpoint.hpp"
#include "shapeformer/train.hpp"

namespace shapeformer::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_text_atomic(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw IoError("cannot write " + tmp.string());
        out << text;
        if (!out.flush()) throw IoError("cannot write " + tmp.string());
    }
    fs::rename(tmp, path);
}

void write_json(const fs::path& path, const ordered_json& j) { write_text_atomic(path, j.dump(2) + "\n"); }

nlohmann::json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifact("missing " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

std::string error_name(const std::exception& e) {
    int status = 0;
    std::unique_ptr<char, void (*)(void*)> name(abi::__cxa_demangle(typeid(e).name(), nullptr, nullptr, &status),
                                                std::free);
    std::string s = status == 0 && name ? name.get() : typeid(e).name();
    if (const auto p = s.rfind("::"); p != std::string::npos) s = s.substr(p + 2);
    return s;
}

void report_error(std::ostream& err, const std::string& kind, const std::string& message) {
    ordered_json j;
    j["error"] = kind;
    j["message"] = message;
    err << j.dump() << "\n";
}

// Shared state of one command invocation.
struct Session {
    std::ostream& out;
    std::ostream& err;
    bool quiet = false;
    RunManifest manifest;
    fs::path manifest_path;

    void log(const std::string& msg) const {
        if (!quiet) err << "[" << manifest.command << "] " << msg << "\n";
    }
    void output(const fs::path& p) {
        const fs::path base = manifest_path.parent_path();
        manifest.outputs.push_back(base.empty() ? p.string() : fs::relative(p, base).string());
    }
    void finish() {
        manifest.finished_at = utc_now();
        write_run_manifest(manifest_path, manifest);
    }
};

RunConfig load_config(const std::string& path) { return path.empty() ? RunConfig{} : RunConfig::load(path); }

struct LoadedRun {
    RunConfig config;
    std::shared_ptr<const CatSpRetriever> retriever;
    std::unique_ptr<ShapeFormer> model;
    fs::path dir;
};

// `ckpt` is a train output directory or the model.ckpt inside one.
LoadedRun load_run(const fs::path& ckpt) {
    LoadedRun run;
    const bool is_dir = fs::is_directory(ckpt);
    run.dir = is_dir ? ckpt : ckpt.parent_path();
    const fs::path model_path = is_dir ? ckpt / "model.ckpt" : ckpt;
    if (!fs::exists(model_path)) throw MissingArtifact("missing checkpoint " + model_path.string());
    if (!fs::exists(run.dir / "config.txt")) throw MissingArtifact("missing " + (run.dir / "config.txt").string());
    run.config = RunConfig::load(run.dir / "config.txt");
    const auto& m = run.config.model;
    if (m.use_retriever && !m.bidirectional) {
        const fs::path prior = run.dir / "prior.ckpt";
        if (!fs::exists(prior)) throw MissingArtifact("missing " + prior.string());
        run.retriever = std::make_shared<const CatSpRetriever>(CatSpRetriever::load(prior));
    }
    run.model = std::make_unique<ShapeFormer>(run.config.model, run.config.train.seed, run.retriever);
    nn::assign_checkpoint(nn::load_checkpoint_file(model_path), run.model->params());
    return run;
}

std::vector<SceneRecord> load_split(const fs::path& data, const std::string& split, bool required = true) {
    const fs::path manifest = resolve_manifest(data);
    const auto m = read_manifest(manifest);
    if (!m.splits.count(split)) {
        if (required) throw EmptySplit("dataset has no '" + split + "' split");
        return {};
    }
    return read_dataset(manifest, split);
}

ordered_json loss_json(const LossReport& l) {
    ordered_json j;
    j["cls"] = l.cls;
    j["v"] = l.v;
    j["o"] = l.o;
    j["a"] = l.a;
    j["p"] = l.p;
    j["total"] = l.total;
    return j;
}

ordered_json history_json(const std::vector<EpochLog>& history) {
    ordered_json arr = ordered_json::array();
    for (const auto& e : history) {
        ordered_json j;
        j["epoch"] = e.epoch;
        j["learning_rate"] = e.learning_rate;
        j["loss"] = loss_json(e.loss);
        if (e.eval) j["eval"] = e.eval->to_json();
        arr.push_back(std::move(j));
    }
    return arr;
}

// ---- gen-data ----

struct GenArgs {
    std::string config, out;
    std::size_t train = 500, test = 100;
    std::optional<std::uint64_t> seed;
};

void run_gen_data(Session& s, const GenArgs& a) {
    RunConfig cfg = load_config(a.config);
    cfg.data.seed = resolve_seed(a.seed, cfg.data.seed);
    GenConfig g;
    g.image_size = cfg.data.image_size;
    g.num_categories = cfg.data.num_categories;
    g.min_instances = cfg.data.min_instances;
    g.max_instances = cfg.data.max_instances;
    g.seed = cfg.data.seed;
    g.validate();
    s.manifest.config_echo = cfg.echo();
    s.manifest.seed = g.seed;
    s.log("generating " + std::to_string(a.train) + " train + " + std::to_string(a.test) + " test scenes");
    std::map<std::string, std::vector<SceneRecord>> splits;
    splits["train"] = generate_split(g, "train", a.train);
    splits["test"] = generate_split(g, "test", a.test);
    const fs::path out(a.out);
    const auto m = write_dataset(splits, g, out);
    s.output(out / "manifest.json");
    for (const auto& [split, files] : m.splits)
        for (const auto& f : files) s.output(out / f);
    s.out << "wrote " << m.scene_count() << " scenes to " << out.string() << "\n";
}

// ---- train-prior ----

struct PriorArgs {
    std::string config, data, out;
    bool no_category = false, no_augment = false;
    std::optional<int> epochs;
    std::optional<std::uint64_t> seed;
};

void run_train_prior(Session& s, const PriorArgs& a) {
    RunConfig cfg = load_config(a.config);
    if (a.no_category) cfg.retriever.per_category = false;
    if (a.no_augment) cfg.prior.augment = false;
    if (a.epochs) cfg.prior.epochs = *a.epochs;
    cfg.prior.seed = resolve_seed(a.seed, cfg.prior.seed);
    const fs::path manifest = resolve_manifest(a.data);
    cfg.retriever.num_categories = read_manifest(manifest).config.num_categories;
    cfg.validate();
    s.manifest.config_echo = cfg.echo();
    s.manifest.seed = cfg.prior.seed;

    const auto train = load_split(a.data, "train");
    const auto test = load_split(a.data, "test", false);
    CatSpRetriever r(cfg.retriever, cfg.prior.seed);
    const auto result = train_retriever(r, train, cfg.prior, cfg.prior.seed, [&](const PriorEpochLog& e) {
        std::ostringstream m;
        m << "epoch " << e.epoch + 1 << " rec " << e.rec << " vq " << e.vq << " reseeded " << e.reseeded;
        s.log(m.str());
    });
    const fs::path out(a.out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    r.save(out);
    s.output(out);

    ordered_json report;
    ordered_json hist = ordered_json::array();
    for (const auto& e : result.history) {
        hist.push_back({{"epoch", e.epoch}, {"rec", e.rec}, {"vq", e.vq}, {"total", e.total}, {"reseeded", e.reseeded}});
    }
    report["history"] = std::move(hist);
    if (!test.empty()) {
        report["heldout_prior_iou"] = evaluate_prior(r, test);
        s.out << "held-out prior IoU " << report["heldout_prior_iou"].get<double>() << "\n";
    }
    const fs::path report_path = out.parent_path() / (out.stem().string() + ".report.json");
    write_json(report_path, report);
    s.output(report_path);
}

// ---- train ----

struct TrainArgs {
    std::string config, data, prior_ckpt, out, variant;
    std::optional<int> epochs;
    std::optional<std::uint64_t> seed;
};

void run_train(Session& s, const TrainArgs& a) {
    RunConfig cfg = RunConfig::load(a.config);
    if (!a.variant.empty()) cfg.variant = a.variant;
    cfg = apply_variant(cfg, variant_from_string(cfg.variant));
    if (a.epochs) cfg.train.epochs = *a.epochs;
    cfg.train.seed = resolve_seed(a.seed, cfg.train.seed);
    const fs::path out(a.out);
    fs::create_directories(out);

    std::shared_ptr<const CatSpRetriever> retriever;
    if (cfg.model.use_retriever && !cfg.model.bidirectional) {
        if (a.prior_ckpt.empty()) throw UsageError("variant '" + cfg.variant + "' needs --prior-ckpt");
        retriever = std::make_shared<const CatSpRetriever>(CatSpRetriever::load(a.prior_ckpt));
        cfg.retriever = retriever->options();
        const fs::path copy = out / "prior.ckpt";
        if (!fs::exists(copy) || !fs::equivalent(a.prior_ckpt, copy)) {
            fs::copy_file(a.prior_ckpt, copy, fs::copy_options::overwrite_existing);
        }
        s.output(copy);
    }
    cfg.validate();
    s.manifest.config_echo = cfg.echo();
    s.manifest.seed = cfg.train.seed;
    write_text_atomic(out / "config.txt", cfg.echo());
    s.output(out / "config.txt");

    const auto train = load_split(a.data, "train");
    const auto test = load_split(a.data, "test", false);
    ShapeFormer model(cfg.model, cfg.train.seed, retriever);
    TrainCallbacks cb;
    cb.on_epoch = [&](const EpochLog& e) {
        std::ostringstream m;
        m << "epoch " << e.epoch + 1 << "/" << cfg.train.epochs << " lr " << e.learning_rate << " loss "
          << e.loss.total;
        if (e.eval) m << " amodal mIoU " << e.eval->amodal.mean_iou;
        s.log(m.str());
    };
    cb.on_abort = [&](const ShapeFormer& m) {
        nn::save_checkpoint(out / "model_last_good.ckpt", m.params());
        s.log("non-finite loss; last good parameters saved to model_last_good.ckpt");
    };
    const auto result = train_shapeformer(model, train, cfg.train, test.empty() ? nullptr : &test, cb);
    nn::save_checkpoint(out / "model.ckpt", model.params());
    s.output(out / "model.ckpt");
    ordered_json history;
    history["param_hash"] = result.param_hash;
    history["retriever_hash_before"] = result.retriever_hash_before;
    history["retriever_hash_after"] = result.retriever_hash_after;
    history["epochs"] = history_json(result.history);
    write_json(out / "history.json", history);
    s.output(out / "history.json");
    if (!test.empty()) {
        const auto report = evaluate(model, test);
        write_json(out / "eval_report.json", report.to_json());
        s.output(out / "eval_report.json");
        s.out << report.to_json().dump(2) << "\n";
    }
    s.out << "param_hash " << result.param_hash << "\n";
}

// ---- eval ----

struct EvalArgs {
    std::string ckpt, data, split = "test", out;
};

void run_eval(Session& s, const EvalArgs& a, const fs::path& out) {
    const auto run = load_run(a.ckpt);
    s.manifest.config_echo = run.config.echo();
    s.manifest.seed = run.config.train.seed;
    const auto scenes = load_split(a.data, a.split);
    const auto report = evaluate(*run.model, scenes);
    write_json(out / "eval_report.json", report.to_json());
    s.output(out / "eval_report.json");
    s.out << report.to_json().dump(2) << "\n";
}

// ---- infer ----

std::vector<double> resize_nearest(std::span<const double> src, int sh, int sw, int dh, int dw) {
    std::vector<double> out(static_cast<std::size_t>(dh) * dw);
    for (int y = 0; y < dh; ++y)
        for (int x = 0; x < dw; ++x) out[y * dw + x] = src[(y * sh / dh) * sw + (x * sw / dw)];
    return out;
}

std::vector<double> normalized(std::vector<double> v) {
    const double hi = v.empty() ? 0.0 : *std::max_element(v.begin(), v.end());
    if (hi > 0) for (auto& x : v) x /= hi;
    return v;
}

Image labelled_grid(const std::vector<std::string>& labels, const std::vector<Image>& tiles, int tile) {
    const int gap = 6, head = 14;
    int col = tile;
    for (const auto& l : labels) col = std::max(col, text_width(l));
    Image img(static_cast<int>(tiles.size()) * (col + gap) + gap, tile + head + gap);
    for (std::size_t i = 0; i < tiles.size(); ++i) {
        const int x = gap + static_cast<int>(i) * (col + gap);
        img.draw_text(x, 4, labels[i], {40, 40, 40});
        img.blit(tiles[i], x, head);
    }
    return img;
}

struct InferArgs {
    std::string ckpt, image, out;
    int scale = 3;
};

void run_infer(Session& s, const InferArgs& a) {
    const fs::path image_path(a.image);
    if (image_path.extension() != ".json") {
        throw UsageError("--image must be a scene record (.json) carrying RoI boxes");
    }
    const auto run = load_run(a.ckpt);
    s.manifest.config_echo = run.config.echo();
    s.manifest.seed = run.config.train.seed;
    const SceneRecord scene = scene_from_json(read_json(image_path));
    const ShapeFormer& model = *run.model;
    const int ms = model.mask_size(), hr = model.options().roi_size;
    const fs::path out(a.out);
    fs::create_directories(out);

    nn::NoGradGuard no_grad;
    const nn::Tensor fmap = model.features(scene);
    ordered_json rois = ordered_json::array();
    for (std::size_t i = 0; i < scene.instances.size(); ++i) {
        const auto& inst = scene.instances[i];
        const RoiPrediction pred = model.predict(fmap, inst.box, scene.height, scene.width, &inst);
        auto soft = [&](const nn::Tensor& t) { return std::vector<double>(t.values().begin(), t.values().end()); };
        const auto v = soft(pred.vis.m_v), o = soft(pred.vis.m_o), am = soft(pred.m_a), oc = soft(pred.m_p);

        std::vector<double> masked = pred.amodal_attention, unmasked;
        if (!model.options().bidirectional) {
            const RoIFeature roi = roi_extract(fmap, inst.box, hr, scene.height, scene.width);
            unmasked = model.spa()(pred.vis.x_v, pred.vis.x_o, roi.tensor, {}).attention;
        }
        const std::size_t cells = static_cast<std::size_t>(hr) * hr;
        masked.resize(cells, 0.0);  // keep the amodal query's row
        unmasked.resize(cells, 0.0);

        std::vector<double> crop(static_cast<std::size_t>(ms) * ms);
        const Box& b = inst.box;
        for (int y = 0; y < ms; ++y)
            for (int x = 0; x < ms; ++x)
                crop[y * ms + x] =
                    scene.image[(b.y0 + y * b.height() / ms) * scene.width + b.x0 + x * b.width() / ms] / 255.0;
        std::vector<double> prior(static_cast<std::size_t>(ms) * ms, 0.0);
        if (pred.prior) prior = resize_nearest(pred.prior->soft, pred.prior->size, pred.prior->size, ms, ms);

        const int sc = a.scale;
        const std::vector<Image> tiles{value_image(crop, ms, ms, sc),
                                       value_image(v, ms, ms, sc),
                                       value_image(o, ms, ms, sc),
                                       value_image(prior, ms, ms, sc),
                                       value_image(resize_nearest(normalized(masked), hr, hr, ms, ms), ms, ms, sc, true),
                                       value_image(am, ms, ms, sc),
                                       value_image(oc, ms, ms, sc)};
        char name[32];
        std::snprintf(name, sizeof name, "roi_%02zu.png", i);
        write_png(out / name, labelled_grid({"INPUT", "VISIBLE", "OCCLUDING", "PRIOR", "ATTENTION", "AMODAL", "OCCLUDED"},
                                            tiles, ms * sc));
        s.output(out / name);
        std::snprintf(name, sizeof name, "attention_%02zu.png", i);
        write_png(out / name,
                  labelled_grid({"MASKED", "UNMASKED"},
                                {value_image(resize_nearest(normalized(masked), hr, hr, ms, ms), ms, ms, sc, true),
                                 value_image(resize_nearest(normalized(unmasked), hr, hr, ms, ms), ms, ms, sc, true)},
                                ms * sc));
        s.output(out / name);

        auto pasted = [&](const std::vector<double>& m) {
            return rle_to_json(rle_encode(paste_mask(threshold_mask(m, ms, ms, kMaskThreshold), b, scene.height,
                                                     scene.width)));
        };
        ordered_json r;
        r["index"] = i;
        r["box"] = {b.x0, b.y0, b.x1, b.y1};
        r["category"] = pred.vis.category;
        const auto probs = pred.vis.probs.values();
        r["score"] = *std::max_element(probs.begin(), probs.end());
        r["masks"] = {{"visible", pasted(v)}, {"occluding", pasted(o)}, {"amodal", pasted(am)}, {"occluded", pasted(oc)}};
        r["attention"] = {{"size", hr}, {"masked", masked}, {"unmasked", unmasked}};
        rois.push_back(std::move(r));
    }
    ordered_json j;
    j["image"] = image_path.filename().string();
    j["height"] = scene.height;
    j["width"] = scene.width;
    j["rois"] = std::move(rois);
    write_json(out / "masks.json", j);
    s.output(out / "masks.json");
    s.out << "wrote " << scene.instances.size() << " RoI panels to " << out.string() << "\n";
}

// ---- ablate ----

struct AblateArgs {
    std::string config, data, variants = "full,no-prior-mask,bidirectional-baseline,visible-only", out, prior_ckpt;
    int seeds = 3;
    std::optional<std::uint64_t> seed;
};

void run_ablate(Session& s, const AblateArgs& a) {
    RunConfig cfg = load_config(a.config);
    const auto variants = parse_variant_list(a.variants);
    if (a.seeds < 1) throw UsageError("--seeds must be >= 1");
    const std::uint64_t base = resolve_seed(a.seed, cfg.train.seed);
    std::vector<std::uint64_t> seeds;
    for (int i = 0; i < a.seeds; ++i) seeds.push_back(base + static_cast<std::uint64_t>(i));
    const fs::path out(a.out);
    fs::create_directories(out);

    const auto train = load_split(a.data, "train");
    const auto test = load_split(a.data, "test");
    cfg.retriever.num_categories = read_manifest(resolve_manifest(a.data)).config.num_categories;
    std::shared_ptr<const CatSpRetriever> shared;
    if (!a.prior_ckpt.empty()) {
        shared = std::make_shared<const CatSpRetriever>(CatSpRetriever::load(a.prior_ckpt));
        cfg.retriever = shared->options();
    }
    cfg.validate();
    s.manifest.config_echo = cfg.echo();
    s.manifest.seed = base;
    write_text_atomic(out / "config.txt", cfg.echo());
    s.output(out / "config.txt");

    std::map<std::uint64_t, std::shared_ptr<const CatSpRetriever>> cache;
    const RetrieverProvider provider = [&](std::uint64_t seed) {
        if (shared) return shared;
        auto& slot = cache[seed];
        if (!slot) {
            s.log("training retriever for seed " + std::to_string(seed));
            auto r = std::make_shared<CatSpRetriever>(cfg.retriever, seed);
            train_retriever(*r, train, cfg.prior, seed);
            const fs::path p = out / ("prior_seed" + std::to_string(seed) + ".ckpt");
            r->save(p);
            s.output(p);
            slot = r;
        }
        return slot;
    };
    const auto result = run_ablation(variants, cfg, train, test, seeds, provider, [&](const std::string& m) { s.log(m); });
    write_json(out / "ablation.json", result.to_json());
    s.output(out / "ablation.json");
    s.out << result.to_json().dump(2) << "\n";
}

// ---- plot ----

const std::vector<std::string> kMaskTypes{"visible", "occluding", "amodal", "occluded"};

void run_plot(Session& s, const fs::path& run, const fs::path& out) {
    if (!fs::is_directory(run)) throw MissingArtifact("no run directory " + run.string());
    fs::create_directories(out);
    int made = 0;
    if (fs::exists(run / "history.json")) {
        const auto h = read_json(run / "history.json");
        std::vector<Series> series;
        for (const char* k : {"total", "cls", "v", "o", "a", "p"}) {
            Series ser{k, {}};
            for (const auto& e : h.at("epochs")) ser.y.push_back(e.at("loss").at(k).get<double>());
            series.push_back(std::move(ser));
        }
        write_png(out / "loss_curve.png", line_plot("TRAINING LOSS PER EPOCH", series));
        s.output(out / "loss_curve.png");
        ++made;
    }
    if (fs::exists(run / "eval_report.json")) {
        const auto r = read_json(run / "eval_report.json");
        std::vector<Series> series{{"mean IoU", {}}, {"AP", {}}, {"AP50", {}}};
        for (const auto& t : kMaskTypes) {
            series[0].y.push_back(r.at(t).at("mean_iou").get<double>());
            series[1].y.push_back(r.at(t).at("ap").get<double>());
            series[2].y.push_back(r.at(t).at("ap50").get<double>());
        }
        write_png(out / "iou_bars.png", bar_chart("METRICS PER MASK TYPE", kMaskTypes, series));
        s.output(out / "iou_bars.png");
        ++made;
    }
    if (fs::exists(run / "ablation.json")) {
        const auto r = read_json(run / "ablation.json");
        std::vector<std::string> groups;
        std::vector<Series> series;
        for (const auto& t : kMaskTypes) series.push_back({t, {}});
        for (const auto& v : r.at("variants")) {
            groups.push_back(v.at("variant").get<std::string>());
            for (std::size_t k = 0; k < kMaskTypes.size(); ++k)
                series[k].y.push_back(v.at("mean").at(kMaskTypes[k]).at("mean_iou").get<double>());
        }
        write_png(out / "ablation_iou.png", bar_chart("MEAN IOU PER VARIANT", groups, series, 900));
        s.output(out / "ablation_iou.png");
        ++made;
    }
    if (fs::exists(run / "masks.json")) {
        const auto m = read_json(run / "masks.json");
        const auto& rois = m.at("rois");
        if (!rois.empty()) {
            const int hr = rois[0].at("attention").at("size").get<int>();
            const int sc = std::max(1, 84 / hr), tile = hr * sc, gap = 6, head = 14;
            Image grid(2 * (tile + gap) + gap + 24, static_cast<int>(rois.size()) * (tile + gap) + head + gap);
            grid.draw_text(24 + gap, 4, "MASKED", {40, 40, 40});
            grid.draw_text(24 + 2 * gap + tile, 4, "UNMASKED", {40, 40, 40});
            for (std::size_t i = 0; i < rois.size(); ++i) {
                const int y = head + static_cast<int>(i) * (tile + gap);
                grid.draw_text(4, y + tile / 2, std::to_string(i), {40, 40, 40});
                for (int c = 0; c < 2; ++c) {
                    const auto vals = normalized(rois[i].at("attention").at(c == 0 ? "masked" : "unmasked").get<std::vector<double>>());
                    grid.blit(value_image(vals, hr, hr, sc, true), 24 + gap + c * (tile + gap), y);
                }
            }
            write_png(out / "attention_grid.png", grid);
            s.output(out / "attention_grid.png");
            ++made;
        }
    }
    if (made == 0) {
        throw MissingArtifact(run.string() + " has no history.json, eval_report.json, ablation.json or masks.json");
    }
    s.out << "wrote " << made << " figure(s) to " << out.string() << "\n";
}

} // namespace

nlohmann::ordered_json RunManifest::to_json() const {
    ordered_json j;
    j["command"] = command;
    j["args"] = args;
    j["config"] = config_echo;
    j["seed"] = seed;
    j["version"] = version;
    j["started_at"] = started_at;
    j["finished_at"] = finished_at;
    j["outputs"] = outputs;
    return j;
}

void write_run_manifest(const fs::path& path, RunManifest manifest) {
    const fs::path base = path.parent_path();
    std::erase_if(manifest.outputs, [&](const std::string& p) { return !fs::exists(base / p); });
    write_json(path, manifest.to_json());
}

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, std::uint64_t config_seed) {
    if (flag) return *flag;
    if (const char* env = std::getenv("SHAPEFORMER_SEED"); env && *env) {
        std::uint64_t v = 0;
        const char* end = env + std::char_traits<char>::length(env);
        const auto [ptr, ec] = std::from_chars(env, end, v);
        if (ec != std::errc() || ptr != end) throw UsageError(std::string("bad SHAPEFORMER_SEED '") + env + "'");
        return v;
    }
    return config_seed;
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Amodal instance segmentation with shape-prior masked attention", "shapeformer"};
    app.require_subcommand(1);
    bool quiet = false;
    app.add_flag("-q,--quiet", quiet, "Suppress progress logging");
    app.set_version_flag("--version", kVersion);

    GenArgs gen;
    auto* c_gen = app.add_subcommand("gen-data", "Generate the synthetic benchmark");
    c_gen->add_option("--config", gen.config, "Config file (data.* keys)")->check(CLI::ExistingFile);
    c_gen->add_option("--train", gen.train, "Train scenes");
    c_gen->add_option("--test", gen.test, "Test scenes");
    c_gen->add_option("--seed", gen.seed, "Generation seed");
    c_gen->add_option("--out", gen.out, "Dataset directory")->required();

    PriorArgs prior;
    auto* c_prior = app.add_subcommand("train-prior", "Pretrain the category-specific shape-prior retriever");
    c_prior->add_option("--config", prior.config)->check(CLI::ExistingFile);
    c_prior->add_option("--data", prior.data, "Dataset directory or manifest")->required();
    c_prior->add_option("--out", prior.out, "Codebook checkpoint path")->required();
    c_prior->add_flag("--no-category", prior.no_category, "One codebook shared by all categories");
    c_prior->add_flag("--no-augment", prior.no_augment, "Train on scene-visible masks only");
    c_prior->add_option("--epochs", prior.epochs);
    c_prior->add_option("--seed", prior.seed);

    TrainArgs train;
    auto* c_train = app.add_subcommand("train", "Train the amodal segmentation model");
    c_train->add_option("--config", train.config)->required()->check(CLI::ExistingFile);
    c_train->add_option("--data", train.data)->required();
    c_train->add_option("--prior-ckpt", train.prior_ckpt)->check(CLI::ExistingFile);
    c_train->add_option("--out", train.out)->required();
    c_train->add_option("--variant", train.variant, "Override the config's variant");
    c_train->add_option("--epochs", train.epochs);
    c_train->add_option("--seed", train.seed);

    EvalArgs ev;
    auto* c_eval = app.add_subcommand("eval", "Evaluate a trained model on a split");
    c_eval->add_option("--ckpt", ev.ckpt, "Train output directory or its model.ckpt")->required();
    c_eval->add_option("--data", ev.data)->required();
    c_eval->add_option("--split", ev.split);
    c_eval->add_option("--out", ev.out, "Defaults to <run>/eval_<split>");

    InferArgs inf;
    auto* c_infer = app.add_subcommand("infer", "Per-RoI panels and masks for one scene");
    c_infer->add_option("--ckpt", inf.ckpt)->required();
    c_infer->add_option("--image", inf.image, "Scene record (.json)")->required()->check(CLI::ExistingFile);
    c_infer->add_option("--out", inf.out)->required();
    c_infer->add_option("--scale", inf.scale, "Panel upsampling")->check(CLI::Range(1, 16));

    AblateArgs abl;
    auto* c_abl = app.add_subcommand("ablate", "Train and evaluate variants over several seeds");
    c_abl->add_option("--config", abl.config)->check(CLI::ExistingFile);
    c_abl->add_option("--data", abl.data)->required();
    c_abl->add_option("--variants", abl.variants);
    c_abl->add_option("--seeds", abl.seeds, "Number of seeds");
    c_abl->add_option("--seed", abl.seed, "First seed");
    c_abl->add_option("--prior-ckpt", abl.prior_ckpt, "Shared retriever (default: one per seed)")
        ->check(CLI::ExistingFile);
    c_abl->add_option("--out", abl.out)->required();

    std::string plot_run, plot_out;
    auto* c_plot = app.add_subcommand("plot", "Render figures from a run directory");
    c_plot->add_option("--run", plot_run)->required();
    c_plot->add_option("--out", plot_out, "Defaults to the run directory");

    std::vector<const char*> argv{"shapeformer"};
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::Success& e) {
        out << (e.get_name() == "CallForVersion" ? std::string(kVersion) + "\n" : app.help());
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        report_error(err, "UsageError", e.what());
        err << app.help();
        return kExitUsage;
    }

    CLI::App* sub = app.get_subcommands().front();
    Session s{out, err, quiet, {}, {}};
    s.manifest.command = sub->get_name();
    s.manifest.args = args;
    s.manifest.started_at = utc_now();
    try {
        const std::string name = sub->get_name();
        if (name == "gen-data") {
            s.manifest_path = fs::path(gen.out) / "run_manifest.json";
            run_gen_data(s, gen);
        } else if (name == "train-prior") {
            const fs::path p(prior.out);
            s.manifest_path = p.parent_path() / (p.stem().string() + ".run_manifest.json");
            run_train_prior(s, prior);
        } else if (name == "train") {
            s.manifest_path = fs::path(train.out) / "run_manifest.json";
            run_train(s, train);
        } else if (name == "eval") {
            const fs::path ck(ev.ckpt);
            const fs::path o = !ev.out.empty() ? fs::path(ev.out)
                                               : (fs::is_directory(ck) ? ck : ck.parent_path()) / ("eval_" + ev.split);
            fs::create_directories(o);
            s.manifest_path = o / "run_manifest.json";
            run_eval(s, ev, o);
        } else if (name == "infer") {
            s.manifest_path = fs::path(inf.out) / "run_manifest.json";
            run_infer(s, inf);
        } else if (name == "ablate") {
            s.manifest_path = fs::path(abl.out) / "run_manifest.json";
            run_ablate(s, abl);
        } else {
            const fs::path o = plot_out.empty() ? fs::path(plot_run) : fs::path(plot_out);
            s.manifest_path = o / "plot_manifest.json";
            run_plot(s, plot_run, o);
        }
        s.finish();
    } catch (const UsageError& e) {
        report_error(err, "UsageError", e.what());
        err << sub->help();
        return kExitUsage;
    } catch (const std::exception& e) {
        report_error(err, error_name(e), e.what());
        return kExitRuntime;
    }
    return kExitOk;
}

} // namespace shapeformer::cli
