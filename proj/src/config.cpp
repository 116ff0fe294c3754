#include "dpr/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "dpr/common.hpp"

namespace dpr {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

[[noreturn]] void bad(const std::string& what) { throw Error(ErrorKind::Config, what); }

long long parse_int(const std::string& v) {
    long long out = 0;
    const auto* end = v.data() + v.size();
    auto [p, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || p != end) bad("expected an integer, got '" + v + "'");
    return out;
}

std::uint64_t parse_u64(const std::string& v) {
    std::uint64_t out = 0;
    const auto* end = v.data() + v.size();
    auto [p, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || p != end) bad("expected a non-negative integer, got '" + v + "'");
    return out;
}

double parse_double(const std::string& v) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) bad("expected a number, got '" + v + "'");
        return d;
    } catch (const std::logic_error&) {
        bad("expected a number, got '" + v + "'");
    }
}

bool parse_bool(const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    bad("expected true or false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) bad("empty list element in '" + v + "'");
        out.push_back(item);
    }
    if (out.empty()) bad("expected a comma-separated list");
    return out;
}

std::vector<int> parse_int_list(const std::string& v) {
    std::vector<int> out;
    for (const auto& s : split_list(v)) out.push_back(static_cast<int>(parse_int(s)));
    return out;
}

// shortest text that parses back to the same double
std::string num(double d) {
    char buf[32];
    const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, d);
    return std::string(buf, end);
}

std::string num(int i) { return std::to_string(i); }

template <typename T>
std::string join(const std::vector<T>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + num(v[i]);
    return out;
}

std::string boolstr(bool b) { return b ? "true" : "false"; }

#define DPR_INT(key, field, doc)                                                                       \
    ConfigKey { key, "int", doc, [](RunConfig& c, const std::string& v) { c.field = static_cast<int>(parse_int(v)); }, \
                [](const RunConfig& c) { return std::to_string(c.field); } }
#define DPR_U64(key, field, doc)                                                                   \
    ConfigKey { key, "uint", doc, [](RunConfig& c, const std::string& v) { c.field = parse_u64(v); }, \
                [](const RunConfig& c) { return std::to_string(c.field); } }
#define DPR_REAL(key, field, doc)                                                                     \
    ConfigKey { key, "real", doc, [](RunConfig& c, const std::string& v) { c.field = parse_double(v); }, \
                [](const RunConfig& c) { return num(c.field); } }
#define DPR_BOOL(key, field, doc)                                                                   \
    ConfigKey { key, "bool", doc, [](RunConfig& c, const std::string& v) { c.field = parse_bool(v); }, \
                [](const RunConfig& c) { return boolstr(c.field); } }

std::vector<ConfigKey> build_schema() {
    std::vector<ConfigKey> s;
    // data
    s.push_back({"data.path", "path", "pretraining dataset directory (empty: generate synthetic scenes on the fly)",
                 [](RunConfig& c, const std::string& v) { c.data_path = v; },
                 [](const RunConfig& c) { return c.data_path; }});
    s.push_back({"data.split", "train|val", "manifest split to read",
                 [](RunConfig& c, const std::string& v) { c.data_split = split_from_string(v); },
                 [](const RunConfig& c) { return std::string(to_string(c.data_split)); }});
    s.push_back(DPR_U64("data.synthetic_count", synthetic_count, "number of synthetic scenes when data.path is empty"));
    s.push_back(DPR_U64("data.synthetic_seed", synthetic_seed, "seed of the synthetic scene generator"));
    s.push_back(DPR_INT("data.scene_size", scene.height, "synthetic scene height and width in pixels"));
    s.push_back(DPR_INT("data.scene_objects", scene.n_objects, "mean object count per synthetic scene"));
    s.push_back(DPR_REAL("data.depth_lo", depth.lo, "raw depth value mapped to 0"));
    s.push_back(DPR_REAL("data.depth_hi", depth.hi, "raw depth value mapped to 1"));

    // encoder
    s.push_back({"encoder.variant", "tiny|resnet18", "visual encoder architecture",
                 [](RunConfig& c, const std::string& v) {
                     if (v == "tiny") {
                         c.pretrain.net.encoder = EncoderConfig::tiny();
                     } else if (v == "resnet18") {
                         c.pretrain.net.encoder = EncoderConfig::resnet18();
                     } else {
                         bad("unknown encoder variant '" + v + "'");
                     }
                     c.bc.encoder = c.pretrain.net.encoder;
                 },
                 [](const RunConfig& c) {
                     return std::string(c.pretrain.net.encoder.variant == EncoderVariant::Tiny ? "tiny" : "resnet18");
                 }});
    s.push_back({"encoder.widths", "int list", "tiny encoder stage widths (4 values)",
                 [](RunConfig& c, const std::string& v) {
                     c.pretrain.net.encoder.widths = parse_int_list(v);
                     c.bc.encoder = c.pretrain.net.encoder;
                 },
                 [](const RunConfig& c) { return join(c.pretrain.net.encoder.widths); }});
    s.push_back({"encoder.extra_convs", "int list", "tiny encoder refinement convs per stage (4 values)",
                 [](RunConfig& c, const std::string& v) {
                     c.pretrain.net.encoder.extra_convs = parse_int_list(v);
                     c.bc.encoder = c.pretrain.net.encoder;
                 },
                 [](const RunConfig& c) { return join(c.pretrain.net.encoder.extra_convs); }});
    s.push_back({"encoder.groups", "int", "GroupNorm groups",
                 [](RunConfig& c, const std::string& v) {
                     c.pretrain.net.encoder.groups = static_cast<int>(parse_int(v));
                     c.bc.encoder = c.pretrain.net.encoder;
                 },
                 [](const RunConfig& c) { return std::to_string(c.pretrain.net.encoder.groups); }});

    // pretraining
    s.push_back(DPR_INT("pretrain.epochs", pretrain.epochs, "pretraining epochs"));
    s.push_back(DPR_INT("pretrain.batch_size", pretrain.batch_size, "samples per step"));
    s.push_back(DPR_INT("pretrain.low_res", pretrain.low_res, "view resolution for the first epochs"));
    s.push_back(DPR_INT("pretrain.high_res", pretrain.high_res, "view resolution for the last epochs"));
    s.push_back(DPR_REAL("pretrain.high_res_fraction", pretrain.high_frac, "fraction of epochs at high_res"));
    s.push_back(DPR_REAL("pretrain.base_lr", pretrain.base_lr, "learning rate at the end of warmup"));
    s.push_back(DPR_REAL("pretrain.final_lr", pretrain.final_lr, "learning rate at the last step"));
    s.push_back(DPR_REAL("pretrain.warmup_fraction", pretrain.warmup_frac, "fraction of steps with linear warmup"));
    s.push_back(DPR_REAL("pretrain.weight_decay", pretrain.optimizer.weight_decay, "decoupled weight decay"));
    s.push_back({"pretrain.optimizer", "adamw|lars", "optimizer",
                 [](RunConfig& c, const std::string& v) { c.pretrain.optimizer.kind = optimizer_from_string(v); },
                 [](const RunConfig& c) { return std::string(to_string(c.pretrain.optimizer.kind)); }});
    s.push_back(DPR_REAL("pretrain.tau", pretrain.tau, "pixel contrast temperature"));
    s.push_back(DPR_REAL("pretrain.alpha", pretrain.alpha, "weight of the instance term"));
    s.push_back(DPR_REAL("pretrain.momentum", pretrain.momentum, "EMA coefficient of the momentum branch"));
    s.push_back(DPR_U64("pretrain.seed", pretrain.seed, "seed for initialization, shuffling and augmentation"));
    s.push_back(DPR_INT("pretrain.workers", pretrain.workers, "data preparation threads (0: inline, deterministic)"));
    s.push_back(DPR_BOOL("pretrain.photometric", pretrain.photometric, "color jitter, grayscale and blur on rgb views"));
    s.push_back({"pretrain.thresholds", "real list", "spatial/depth thresholds for positive pairs",
                 [](RunConfig& c, const std::string& v) {
                     c.pretrain.pairs.thresholds.clear();
                     for (const auto& t : split_list(v)) c.pretrain.pairs.thresholds.push_back(parse_double(t));
                 },
                 [](const RunConfig& c) { return join(c.pretrain.pairs.thresholds); }});
    s.push_back(DPR_BOOL("pretrain.threshold_cross_product", pretrain.pairs.cross_product,
                         "pair every spatial threshold with every depth threshold"));
    s.push_back({"pretrain.distance_norm", "image_diagonal|feature_bin", "normalizer of cell distances",
                 [](RunConfig& c, const std::string& v) {
                     if (v == "image_diagonal") {
                         c.pretrain.pairs.distance_norm = DistanceNorm::ImageDiagonal;
                     } else if (v == "feature_bin") {
                         c.pretrain.pairs.distance_norm = DistanceNorm::FeatureBin;
                     } else {
                         bad("unknown distance_norm '" + v + "'");
                     }
                 },
                 [](const RunConfig& c) {
                     return std::string(c.pretrain.pairs.distance_norm == DistanceNorm::ImageDiagonal ? "image_diagonal"
                                                                                                     : "feature_bin");
                 }});
    s.push_back(DPR_REAL("pretrain.min_valid_fraction", pretrain.pairs.min_valid_fraction,
                         "non-hole area a cell needs to take part in pairs"));
    s.push_back(DPR_REAL("augment.scale_min", pretrain.augment.scale_min, "smallest crop area fraction"));
    s.push_back(DPR_REAL("augment.scale_max", pretrain.augment.scale_max, "largest crop area fraction"));
    s.push_back(DPR_REAL("augment.hflip_prob", pretrain.augment.hflip_prob, "horizontal flip probability"));

    // behavior cloning
    s.push_back(DPR_INT("bc.epochs", bc.epochs, "behavior cloning epochs"));
    s.push_back(DPR_INT("bc.batch_size", bc.batch_size, "demo steps per update"));
    s.push_back(DPR_REAL("bc.lr", bc.lr, "initial learning rate (cosine decay)"));
    s.push_back(DPR_REAL("bc.final_lr", bc.final_lr, "learning rate at the last step"));
    s.push_back(DPR_REAL("bc.weight_decay", bc.weight_decay, "decoupled weight decay"));
    s.push_back(DPR_INT("bc.eval_every", bc.eval_every, "epochs between online evaluations"));
    s.push_back(DPR_INT("bc.eval_episodes", bc.eval_episodes, "episodes per evaluation"));
    s.push_back(DPR_U64("bc.eval_seed", bc.eval_seed, "first evaluation episode seed"));
    s.push_back(DPR_U64("bc.seed", bc.seed, "seed for initialization and shuffling"));
    s.push_back({"bc.encoder_mode", "frozen|finetune", "treatment of a pretrained encoder",
                 [](RunConfig& c, const std::string& v) { c.bc.mode = encoder_mode_from_string(v); },
                 [](const RunConfig& c) { return std::string(to_string(c.bc.mode)); }});
    s.push_back(DPR_BOOL("bc.use_proprio", bc.use_proprio, "inject proprioception through cross-attention"));
    s.push_back(DPR_INT("bc.attention_dim", bc.attention_dim, "cross-attention width"));
    s.push_back(DPR_INT("bc.attention_heads", bc.attention_heads, "cross-attention heads"));

    // environment
    s.push_back(DPR_INT("env.resolution", env.resolution, "rendered observation size"));
    s.push_back(DPR_INT("env.max_steps", env.max_steps, "episode horizon"));

    s.push_back(DPR_INT("runtime.threads", threads, "intra-op threads (0: library default)"));
    return s;
}

#undef DPR_INT
#undef DPR_U64
#undef DPR_REAL
#undef DPR_BOOL

const ConfigKey* find_key(const std::string& name) {
    for (const auto& k : config_schema()) {
        if (k.name == name) return &k;
    }
    return nullptr;
}

void set_key(RunConfig& cfg, const std::string& key, const std::string& value, const std::string& where) {
    const ConfigKey* k = find_key(key);
    if (!k) bad(where + "unknown key '" + key + "'");
    try {
        k->set(cfg, value);
    } catch (const Error& e) {
        bad(where + key + ": " + e.what());
    }
}

void finish(RunConfig& cfg) {
    cfg.scene.width = cfg.scene.height;
    validate(cfg.pretrain);
    validate(cfg.bc);
    validate_scene_spec(cfg.scene);
    if (cfg.threads < 0) bad("runtime.threads must be >= 0");
}

}  // namespace

const std::vector<ConfigKey>& config_schema() {
    static const std::vector<ConfigKey> schema = build_schema();
    return schema;
}

RunConfig parse_config(const std::string& text, const std::string& source) {
    RunConfig cfg;
    std::set<std::string> seen;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::string where = source + ":" + std::to_string(lineno) + ": ";
        const auto eq = line.find('=');
        if (eq == std::string::npos) bad(where + "expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (!seen.insert(key).second) bad(where + "duplicate key '" + key + "'");
        set_key(cfg, key, value, where);
    }
    finish(cfg);
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Config, "cannot read config '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path.string());
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) bad("override '" + assignment + "' is not key=value");
    set_key(cfg, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)), "override: ");
    finish(cfg);
}

std::string render_config(const RunConfig& cfg) {
    std::ostringstream os;
    for (const auto& k : config_schema()) {
        os << "# " << k.doc << " (" << k.type << ")\n" << k.name << " = " << k.get(cfg) << "\n";
    }
    return os.str();
}

std::filesystem::path resolve_data_path(const std::string& path) {
    std::filesystem::path p(path);
    if (p.is_absolute()) return p;
    if (const char* root = std::getenv("DPR_DATA_ROOT"); root && *root) return std::filesystem::path(root) / p;
    return p;
}

}  // namespace dpr
