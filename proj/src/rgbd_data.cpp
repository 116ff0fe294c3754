#include "dpr/rgbd_data.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <set>

#include <json.hpp>

#include "dpr/image_ops.hpp"
#include "dpr/io.hpp"

namespace dpr {

using nlohmann::json;

void validate_sample(const RgbdSample& s) {
    if (s.rgb.channels != 3 || s.depth.channels != 1) {
        throw Error(ErrorKind::InvalidSpec, "sample '" + s.id + "': expected 3-channel rgb and 1-channel depth");
    }
    if (s.rgb.height != s.depth.height || s.rgb.width != s.depth.width) {
        throw Error(ErrorKind::InvalidSpec, "sample '" + s.id + "': rgb and depth sizes differ");
    }
    auto in_unit = [](float v) { return v >= 0.0f && v <= 1.0f; };
    if (!std::all_of(s.rgb.data.begin(), s.rgb.data.end(), in_unit) ||
        !std::all_of(s.depth.data.begin(), s.depth.data.end(), in_unit)) {
        throw Error(ErrorKind::InvalidSpec, "sample '" + s.id + "': values outside [0,1]");
    }
}

double normalize_depth_value(double raw, double lo, double hi) {
    if (!(hi > lo)) {
        throw Error(ErrorKind::InvalidRange, "normalize_depth requires hi > lo (got lo=" + std::to_string(lo) +
                                                 ", hi=" + std::to_string(hi) + ")");
    }
    return (std::clamp(raw, lo, hi) - lo) / (hi - lo);
}

Image normalize_depth(const Image& raw, double lo, double hi) {
    normalize_depth_value(lo, lo, hi);  // range check
    Image out = raw;
    for (auto& v : out.data) v = static_cast<float>(normalize_depth_value(v, lo, hi));
    return out;
}

// ---------------------------------------------------------------------------

void validate_scene_spec(const SceneSpec& spec) {
    if (spec.height <= 0 || spec.width <= 0) {
        throw Error(ErrorKind::InvalidSpec, "scene image size must be positive");
    }
    if (!(spec.z_near < spec.z_far) || spec.z_far <= 0.0) {
        throw Error(ErrorKind::InvalidSpec, "scene requires 0 < z_far and z_near < z_far");
    }
    if (spec.n_objects < 0 || spec.n_objects > spec.max_objects) {
        throw Error(ErrorKind::InvalidSpec, "n_objects must lie in [0, max_objects]");
    }
    if (spec.background_tilt < 0.0 || spec.background_tilt > 1.0) {
        throw Error(ErrorKind::InvalidSpec, "background_tilt must lie in [0,1]");
    }
}

double background_depth(const SceneSpec& spec, int row) {
    const double span = spec.background_tilt * (spec.z_far - spec.z_near);
    const double t = (row + 0.5) / spec.height;  // 0 at the top edge, 1 at the bottom
    return spec.z_far - span * t;
}

namespace {

void hsv_to_rgb(double h, double s, double v, float out[3]) {
    const double c = v * s;
    const double hp = std::fmod(h * 6.0, 6.0);
    const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    switch (static_cast<int>(hp)) {
        case 0: r = c, g = x; break;
        case 1: r = x, g = c; break;
        case 2: g = c, b = x; break;
        case 3: g = x, b = c; break;
        case 4: r = x, b = c; break;
        default: r = c, b = x; break;
    }
    const double m = v - c;
    out[0] = static_cast<float>(r + m);
    out[1] = static_cast<float>(g + m);
    out[2] = static_cast<float>(b + m);
}

// Surface depth of `o` at pixel center (x, y), or nullopt if not covered.
std::optional<double> surface_depth(const SceneObject& o, double x, double y) {
    if (o.kind == ShapeKind::Box) {
        if (std::abs(x - o.cx) < o.half_w && std::abs(y - o.cy) < o.half_h) return o.z;
        return std::nullopt;
    }
    const double r = o.half_w;
    const double d2 = (x - o.cx) * (x - o.cx) + (y - o.cy) * (y - o.cy);
    if (d2 >= r * r) return std::nullopt;
    return o.z + o.depth_radius * (1.0 - std::sqrt(1.0 - d2 / (r * r)));
}

struct Background {
    float base[3];
    double stripe_freq;
    double stripe_phase;
};

Background sample_background(Rng& rng) {
    Background bg{};
    // Low-saturation table tones so colored objects stay distinct.
    hsv_to_rgb(uniform(rng, 0.05, 0.15), uniform(rng, 0.15, 0.3), uniform(rng, 0.45, 0.65), bg.base);
    bg.stripe_freq = uniform(rng, 0.15, 0.35);
    bg.stripe_phase = uniform(rng, 0.0, 6.283185307179586);
    return bg;
}

}  // namespace

std::vector<SceneObject> sample_scene_objects(const SceneSpec& spec) {
    validate_scene_spec(spec);
    Rng rng = make_rng(spec.rng_seed, {1});
    const double min_side = std::min(spec.height, spec.width);
    const double bg_nearest = spec.z_far - spec.background_tilt * (spec.z_far - spec.z_near);
    const double z_max = spec.z_near + 0.85 * (bg_nearest - spec.z_near);

    std::vector<SceneObject> objects;
    objects.reserve(spec.n_objects);
    for (int i = 0; i < spec.n_objects; ++i) {
        SceneObject o;
        o.kind = bernoulli(rng, 0.5) ? ShapeKind::Box : ShapeKind::Sphere;
        o.cx = uniform(rng, 0.0, spec.width);
        o.cy = uniform(rng, 0.0, spec.height);
        o.half_w = uniform(rng, 0.06, 0.18) * min_side;
        o.half_h = o.kind == ShapeKind::Box ? uniform(rng, 0.06, 0.18) * min_side : o.half_w;
        o.z = uniform(rng, spec.z_near, z_max);
        o.depth_radius = o.kind == ShapeKind::Sphere ? uniform(rng, 0.3, 1.0) * (bg_nearest - o.z) : 0.0;
        hsv_to_rgb(uniform01(rng), uniform(rng, 0.65, 1.0), uniform(rng, 0.6, 1.0), o.color);
        objects.push_back(o);
    }
    return objects;
}

RgbdSample render_scene(const SceneSpec& spec, const std::vector<SceneObject>& objects) {
    validate_scene_spec(spec);
    Rng rng = make_rng(spec.rng_seed, {2});
    const Background bg = sample_background(rng);

    RgbdSample s;
    s.id = "scene_" + std::to_string(spec.rng_seed);
    s.rgb = Image(spec.height, spec.width, 3);
    s.depth = Image(spec.height, spec.width, 1);
    for (int r = 0; r < spec.height; ++r) {
        const double y = r + 0.5;
        const double z_bg = background_depth(spec, r);
        for (int c = 0; c < spec.width; ++c) {
            const double x = c + 0.5;
            double z = z_bg;
            const float* color = nullptr;
            for (const auto& o : objects) {
                if (auto d = surface_depth(o, x, y); d && *d < z) {
                    z = *d;
                    color = o.color;
                }
            }
            if (color) {
                for (int ch = 0; ch < 3; ++ch) s.rgb.at(r, c, ch) = color[ch];
            } else {
                const double wave = std::sin(bg.stripe_freq * (x + 0.35 * y) + bg.stripe_phase);
                const float shade = static_cast<float>(0.9 + 0.1 * wave);
                for (int ch = 0; ch < 3; ++ch) s.rgb.at(r, c, ch) = std::clamp(bg.base[ch] * shade, 0.0f, 1.0f);
            }
            s.depth.at(r, c) = static_cast<float>(normalize_depth_value(z, 0.0, spec.z_far));
        }
    }
    return s;
}

RgbdSample generate_scene(const SceneSpec& spec) {
    return render_scene(spec, sample_scene_objects(spec));
}

// ---------------------------------------------------------------------------

const char* to_string(Split split) {
    return split == Split::Train ? "train" : "val";
}

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    throw Error(ErrorKind::Schema, "unknown split '" + s + "'");
}

namespace {

bool has_ext(const fs::path& p, std::initializer_list<const char*> exts) {
    auto e = p.extension().string();
    std::transform(e.begin(), e.end(), e.begin(), [](unsigned char ch) { return std::tolower(ch); });
    return std::any_of(exts.begin(), exts.end(), [&](const char* x) { return e == x; });
}

std::map<std::string, fs::path> files_by_stem(const fs::path& dir, std::initializer_list<const char*> exts) {
    std::map<std::string, fs::path> out;
    if (!fs::is_directory(dir)) return out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file() || !has_ext(entry.path(), exts)) continue;
        out.emplace(entry.path().stem().string(), entry.path().lexically_relative(dir.parent_path()));
    }
    return out;
}

DatasetManifest manifest_from_json(const fs::path& root, Split split) {
    json doc;
    try {
        doc = json::parse(io::read_file(root / "manifest.json"));
    } catch (const json::exception& e) {
        throw Error(ErrorKind::Schema, "manifest.json: " + std::string(e.what()));
    }
    DatasetManifest m;
    m.root = root;
    m.split = doc.contains("split") ? split_from_string(doc.at("split").get<std::string>()) : split;
    std::set<std::string> seen;
    std::vector<std::string> missing;
    for (const auto& e : doc.at("entries")) {
        ManifestEntry entry{e.at("rgb").get<std::string>(), e.at("depth").get<std::string>(),
                            e.at("id").get<std::string>()};
        if (!seen.insert(entry.id).second) throw Error(ErrorKind::Schema, "duplicate id '" + entry.id + "'");
        for (const auto& p : {entry.rgb_path, entry.depth_path}) {
            if (!fs::exists(root / p)) missing.push_back(p.string());
        }
        m.entries.push_back(std::move(entry));
    }
    if (!missing.empty()) {
        std::string names;
        for (const auto& n : missing) names += (names.empty() ? "" : ", ") + n;
        throw Error(ErrorKind::Io, "manifest references missing files: " + names);
    }
    return m;
}

}  // namespace

DatasetManifest load_manifest(const fs::path& root, Split split) {
    if (!fs::is_directory(root)) throw Error(ErrorKind::Io, "dataset root '" + root.string() + "' is not a directory");

    DatasetManifest m;
    if (fs::exists(root / "manifest.json")) {
        m = manifest_from_json(root, split);
    } else {
        m.root = root;
        m.split = split;
        auto rgb = files_by_stem(root / "rgb", {".png", ".jpg", ".jpeg"});
        if (rgb.empty()) rgb = files_by_stem(root / "color", {".png", ".jpg", ".jpeg"});
        const auto depth = files_by_stem(root / "depth", {".png", ".f32"});

        std::vector<std::string> orphans;
        for (const auto& [stem, path] : rgb) {
            if (!depth.count(stem)) orphans.push_back(path.string());
        }
        for (const auto& [stem, path] : depth) {
            if (!rgb.count(stem)) orphans.push_back(path.string());
        }
        if (!orphans.empty()) {
            std::string names;
            for (const auto& n : orphans) names += (names.empty() ? "" : ", ") + n;
            throw Error(ErrorKind::Io, "unpaired files (no rgb/depth partner): " + names);
        }
        for (const auto& [stem, path] : rgb) m.entries.push_back({path, depth.at(stem), stem});
    }

    std::sort(m.entries.begin(), m.entries.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    if (m.entries.empty()) {
        m.warnings.push_back("dataset '" + root.string() + "' contains no samples");
        std::clog << "warning: " << m.warnings.back() << '\n';
    }
    return m;
}

RgbdSample load_sample(const DatasetManifest& manifest, const ManifestEntry& entry, const DepthDecode& decode) {
    RgbdSample s;
    s.id = entry.id;
    s.rgb = io::read_rgb(manifest.root / entry.rgb_path);
    Image raw = has_ext(entry.depth_path, {".f32"})
                    ? io::read_raw_f32(manifest.root / entry.depth_path, s.rgb.height, s.rgb.width)
                    : io::read_png_gray_raw(manifest.root / entry.depth_path);
    s.depth = normalize_depth(raw, decode.lo, decode.hi);
    if (s.rgb.height != s.depth.height || s.rgb.width != s.depth.width) {
        // e.g. ScanNet color frames are larger than their depth frames
        s.rgb = resize_bilinear(s.rgb, s.depth.height, s.depth.width);
    }
    validate_sample(s);
    return s;
}

void write_sample_files(const fs::path& root, const RgbdSample& sample) {
    validate_sample(sample);
    fs::create_directories(root / "rgb");
    fs::create_directories(root / "depth");
    io::write_png_rgb8(root / "rgb" / (sample.id + ".png"), sample.rgb);
    std::vector<std::uint16_t> q(sample.depth.data.size());
    std::transform(sample.depth.data.begin(), sample.depth.data.end(), q.begin(),
                   [](float v) { return static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 65535.0)); });
    io::write_png_gray16(root / "depth" / (sample.id + ".png"), sample.depth.height, sample.depth.width, q);
}

void write_manifest(const fs::path& root, const std::vector<std::string>& ids, Split split) {
    json doc;
    doc["schema_version"] = 1;
    doc["split"] = to_string(split);
    doc["entries"] = json::array();
    for (const auto& id : ids) {
        doc["entries"].push_back({{"id", id}, {"rgb", "rgb/" + id + ".png"}, {"depth", "depth/" + id + ".png"}});
    }
    fs::create_directories(root);
    const auto text = doc.dump(2) + "\n";
    io::write_file(root / "manifest.json", text.data(), text.size());
}

void write_dataset(const fs::path& root, const std::vector<RgbdSample>& samples, Split split) {
    std::vector<std::string> ids;
    for (const auto& s : samples) {
        write_sample_files(root, s);
        ids.push_back(s.id);
    }
    write_manifest(root, ids, split);
}

// ---------------------------------------------------------------------------

SyntheticSource::SyntheticSource(std::size_t count, std::uint64_t seed, SceneSpec templ)
    : count_(count), seed_(seed), templ_(templ) {
    validate_scene_spec(templ_);
}

SceneSpec SyntheticSource::spec_for(std::size_t index) const {
    SceneSpec spec = templ_;
    spec.rng_seed = derive_seed(seed_, {index});
    Rng rng(spec.rng_seed);
    spec.n_objects = static_cast<int>(uniform_int(rng, 1, std::max(1, templ_.n_objects * 2 - 1)));
    spec.n_objects = std::min(spec.n_objects, spec.max_objects);
    return spec;
}

RgbdSample SyntheticSource::get(std::size_t index) const {
    RgbdSample s = generate_scene(spec_for(index));
    char buf[32];
    std::snprintf(buf, sizeof buf, "syn_%06zu", index);
    s.id = buf;
    return s;
}

ManifestSource::ManifestSource(DatasetManifest manifest, DepthDecode decode)
    : manifest_(std::move(manifest)), decode_(decode) {}

RgbdSample ManifestSource::get(std::size_t index) const {
    return load_sample(manifest_, manifest_.entries.at(index), decode_);
}

}  // namespace dpr
