#include "shapeformer/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <variant>

#include "shapeformer/errors.hpp"

namespace shapeformer {

namespace {

using Slot = std::variant<int*, double*, bool*, std::string*, std::uint64_t*>;

struct Binding {
    const char* key;
    Slot slot;
};

std::vector<Binding> bindings(RunConfig& c) {
    return {
        {"variant", &c.variant},
        {"data.image_size", &c.data.image_size},
        {"data.num_categories", &c.data.num_categories},
        {"data.min_instances", &c.data.min_instances},
        {"data.max_instances", &c.data.max_instances},
        {"data.seed", &c.data.seed},
        {"model.num_categories", &c.model.num_categories},
        {"model.image_size", &c.model.image_size},
        {"model.embed_dim", &c.model.embed_dim},
        {"model.roi_size", &c.model.roi_size},
        {"model.vis_layers", &c.model.vis_layers},
        {"model.amodal_layers", &c.model.amodal_layers},
        {"model.num_heads", &c.model.num_heads},
        {"model.attn_scale", &c.model.attn_scale},
        {"model.pre_norm", &c.model.pre_norm},
        {"model.ffn", &c.model.ffn},
        {"model.ffn_dim", &c.model.ffn_dim},
        {"model.positional_encoding", &c.model.positional_encoding},
        {"model.stop_gradient", &c.model.stop_gradient},
        {"model.use_prior_mask", &c.model.use_prior_mask},
        {"model.use_retriever", &c.model.use_retriever},
        {"model.bidirectional", &c.model.bidirectional},
        {"model.amodal_losses", &c.model.amodal_losses},
        {"model.prior_from_gt", &c.model.prior_from_gt},
        {"retriever.num_categories", &c.retriever.num_categories},
        {"retriever.per_category", &c.retriever.per_category},
        {"retriever.resolution", &c.retriever.resolution},
        {"retriever.grid", &c.retriever.grid},
        {"retriever.codebook_size", &c.retriever.codebook_size},
        {"retriever.codeword_dim", &c.retriever.codeword_dim},
        {"retriever.channels", &c.retriever.channels},
        {"train.seed", &c.train.seed},
        {"train.epochs", &c.train.epochs},
        {"train.learning_rate", &c.train.learning_rate},
        {"train.momentum", &c.train.momentum},
        {"train.weight_decay", &c.train.weight_decay},
        {"train.grad_clip", &c.train.grad_clip},
        {"train.batch_images", &c.train.batch_images},
        {"train.lr_schedule", &c.train.lr_schedule},
        {"train.eval_every", &c.train.eval_every},
        {"prior.epochs", &c.prior.epochs},
        {"prior.learning_rate", &c.prior.learning_rate},
        {"prior.batch_size", &c.prior.batch_size},
        {"prior.augment", &c.prior.augment},
        {"prior.commitment", &c.prior.commitment},
        {"prior.seed", &c.prior.seed},
    };
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
    T out{};
    const auto* end = value.data() + value.size();
    const auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc() || ptr != end) throw ConfigError("bad value for " + key + ": '" + value + "'");
    return out;
}

std::string format_double(double v) {
    std::ostringstream ss;
    ss.precision(17);
    ss << v;
    return ss.str();
}

} // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
    for (auto& b : bindings(*this)) {
        if (key != b.key) continue;
        std::visit(
            [&](auto* p) {
                using T = std::remove_pointer_t<decltype(p)>;
                if constexpr (std::is_same_v<T, bool>) {
                    if (value == "true" || value == "1") *p = true;
                    else if (value == "false" || value == "0") *p = false;
                    else throw ConfigError("bad boolean for " + key + ": '" + value + "'");
                } else if constexpr (std::is_same_v<T, std::string>) {
                    *p = value;
                } else {
                    *p = parse_number<T>(key, value);
                }
            },
            b.slot);
        return;
    }
    throw ConfigError("unknown config key '" + key + "'");
}

RunConfig RunConfig::parse(const std::string& text) {
    RunConfig c;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        }
        c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    c.validate();
    return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

std::string RunConfig::echo() const {
    RunConfig copy = *this;
    std::ostringstream out;
    for (const auto& b : bindings(copy)) {
        out << b.key << " = ";
        std::visit(
            [&](auto* p) {
                using T = std::remove_pointer_t<decltype(p)>;
                if constexpr (std::is_same_v<T, bool>) out << (*p ? "true" : "false");
                else if constexpr (std::is_same_v<T, double>) out << format_double(*p);
                else out << *p;
            },
            b.slot);
        out << "\n";
    }
    return out.str();
}

void RunConfig::validate() const {
    if (data.image_size < 8 || data.num_categories < 1 || data.min_instances < 1 ||
        data.max_instances < data.min_instances) {
        throw ConfigError("bad data.* settings");
    }
    const auto& m = model;
    if (m.num_categories < 1) throw ConfigError("model.num_categories must be >= 1");
    if (m.embed_dim < 1 || m.roi_size < 1) throw ConfigError("model dimensions must be positive");
    if (m.num_heads < 1 || m.embed_dim % m.num_heads != 0) {
        throw ConfigError("model.embed_dim must be divisible by model.num_heads");
    }
    if (m.vis_layers < 0 || m.amodal_layers < 0) throw ConfigError("layer counts must be >= 0");
    if (m.positional_encoding && m.embed_dim % 4 != 0) {
        throw ConfigError("sinusoidal positions need embed_dim divisible by 4");
    }
    const auto& r = retriever;
    if (r.resolution % 8 != 0 || r.resolution / 8 != r.grid) {
        throw ConfigError("retriever.grid must equal retriever.resolution / 8");
    }
    if (r.codebook_size < 1 || r.codeword_dim < 1 || r.channels < 1) {
        throw ConfigError("retriever sizes must be positive");
    }
    if (train.epochs < 0 || train.batch_images < 1) throw ConfigError("bad train epochs/batch");
    if (train.lr_schedule != "cosine" && train.lr_schedule != "step" && train.lr_schedule != "constant") {
        throw ConfigError("train.lr_schedule must be cosine, step or constant");
    }
    if (prior.epochs < 0 || prior.batch_size < 1) throw ConfigError("bad prior epochs/batch");
    variant_from_string(variant);
}

std::string to_string(Variant v) {
    switch (v) {
        case Variant::Full: return "full";
        case Variant::NoPriorMask: return "no-prior-mask";
        case Variant::NoPrior: return "no-prior";
        case Variant::Bidirectional: return "bidirectional-baseline";
        case Variant::VisibleOnly: return "visible-only";
    }
    return "?";
}

Variant variant_from_string(const std::string& name) {
    for (Variant v : {Variant::Full, Variant::NoPriorMask, Variant::NoPrior, Variant::Bidirectional,
                      Variant::VisibleOnly}) {
        if (to_string(v) == name) return v;
    }
    throw ConfigError("unknown variant '" + name + "'");
}

std::vector<Variant> parse_variant_list(const std::string& csv) {
    std::vector<Variant> out;
    std::istringstream in(csv);
    std::string item;
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(variant_from_string(item));
    }
    if (out.empty()) throw ConfigError("empty variant list");
    return out;
}

RunConfig apply_variant(const RunConfig& base, Variant v) {
    RunConfig c = base;
    c.variant = to_string(v);
    switch (v) {
        case Variant::Full: break;
        case Variant::NoPriorMask: c.model.use_prior_mask = false; break;
        case Variant::NoPrior: c.model.use_retriever = false; break;
        case Variant::Bidirectional: c.model.bidirectional = true; break;
        case Variant::VisibleOnly: c.model.amodal_losses = false; break;
    }
    return c;
}

} // namespace shapeformer
