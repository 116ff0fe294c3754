#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dpr/common.hpp"
#include "dpr/image.hpp"

namespace dpr {

namespace fs = std::filesystem;

/// An RGB image with an aligned depth map, both in [0,1].
/// Depth value 0 marks a hole (no measurement).
struct RgbdSample {
    Image rgb;    // H x W x 3
    Image depth;  // H x W x 1
    std::string id;

    int height() const { return rgb.height; }
    int width() const { return rgb.width; }
};

/// Throws InvalidSpec if the sample violates its shape/range invariants.
void validate_sample(const RgbdSample& sample);

/// (clip(raw, lo, hi) - lo) / (hi - lo), elementwise.
Image normalize_depth(const Image& raw, double lo, double hi);
double normalize_depth_value(double raw, double lo, double hi);

// ---------------------------------------------------------------------------
// Procedural scenes

enum class ShapeKind { Box, Sphere };

/// A primitive seen from above. Positions and sizes are in pixels; depth is in
/// scene units (distance from the camera plane) before normalization.
struct SceneObject {
    ShapeKind kind = ShapeKind::Box;
    double cx = 0, cy = 0;
    double half_w = 0, half_h = 0;  // box half extents; sphere uses half_w as radius
    double z = 0;                   // box top depth, sphere apex depth
    double depth_radius = 0;        // sphere only: depth bulge of the cap
    float color[3] = {0, 0, 0};
};

struct SceneSpec {
    int height = 160;
    int width = 160;
    int n_objects = 4;
    int max_objects = 12;
    double z_near = 0.1;
    double z_far = 1.0;
    /// Fraction of [z_near, z_far] the background plane spans; its far edge sits at z_far.
    double background_tilt = 0.2;
    std::uint64_t rng_seed = 0;
};

void validate_scene_spec(const SceneSpec& spec);

/// Analytic background-plane depth (scene units) at pixel row `row`.
double background_depth(const SceneSpec& spec, int row);

/// Draws `spec.n_objects` random primitives, deterministic in `spec.rng_seed`.
std::vector<SceneObject> sample_scene_objects(const SceneSpec& spec);

/// Z-buffer render of the given objects over the background plane. Depth is
/// normalized with lo = 0, hi = z_far so that stored depth = z / z_far.
RgbdSample render_scene(const SceneSpec& spec, const std::vector<SceneObject>& objects);

RgbdSample generate_scene(const SceneSpec& spec);

// ---------------------------------------------------------------------------
// On-disk datasets

enum class Split { Train, Val };

const char* to_string(Split split);
Split split_from_string(const std::string& s);

struct ManifestEntry {
    fs::path rgb_path;    // relative to root
    fs::path depth_path;  // relative to root
    std::string id;
};

struct DatasetManifest {
    fs::path root;
    std::vector<ManifestEntry> entries;
    Split split = Split::Train;
    std::vector<std::string> warnings;
};

/// How raw depth files are mapped into [0,1]. PNG depth is read as its integer
/// sample value; `.f32` files as raw floats. Both then go through normalize_depth(lo, hi).
struct DepthDecode {
    double lo = 0.0;
    double hi = 65535.0;
};

/// Reads `root/manifest.json` when present; otherwise pairs `rgb/` (or `color/`)
/// with `depth/` by file stem. Entries are sorted by id.
DatasetManifest load_manifest(const fs::path& root, Split split = Split::Train);

RgbdSample load_sample(const DatasetManifest& manifest, const ManifestEntry& entry,
                       const DepthDecode& decode = {});

/// Writes rgb/<id>.png (8-bit), depth/<id>.png (16-bit, v = round(depth * 65535))
/// and a manifest.json listing them.
void write_dataset(const fs::path& root, const std::vector<RgbdSample>& samples, Split split = Split::Train);
void write_sample_files(const fs::path& root, const RgbdSample& sample);
void write_manifest(const fs::path& root, const std::vector<std::string>& ids, Split split = Split::Train);

// ---------------------------------------------------------------------------
// Sample sources used by pretraining

class SampleSource {
public:
    virtual ~SampleSource() = default;
    virtual std::size_t size() const = 0;
    virtual RgbdSample get(std::size_t index) const = 0;
};

/// Synthetic scenes generated on demand; sample i uses seed derive_seed(seed, {i}).
class SyntheticSource final : public SampleSource {
public:
    SyntheticSource(std::size_t count, std::uint64_t seed, SceneSpec templ = {});
    std::size_t size() const override { return count_; }
    RgbdSample get(std::size_t index) const override;

    SceneSpec spec_for(std::size_t index) const;

private:
    std::size_t count_;
    std::uint64_t seed_;
    SceneSpec templ_;
};

class ManifestSource final : public SampleSource {
public:
    explicit ManifestSource(DatasetManifest manifest, DepthDecode decode = {});
    std::size_t size() const override { return manifest_.entries.size(); }
    RgbdSample get(std::size_t index) const override;

private:
    DatasetManifest manifest_;
    DepthDecode decode_;
};

}  // namespace dpr
