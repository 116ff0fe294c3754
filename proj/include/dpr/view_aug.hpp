#pragma once

#include <ostream>
#include <utility>
#include <vector>

#include "dpr/common.hpp"
#include "dpr/image.hpp"
#include "dpr/rgbd_data.hpp"

namespace dpr {

struct AugmentConfig {
    // random-resized-crop, shared by rgb and depth
    double scale_min = 0.3;
    double scale_max = 1.0;
    double ratio_min = 3.0 / 4.0;
    double ratio_max = 4.0 / 3.0;
    double hflip_prob = 0.5;
    int min_crop = 8;
    int max_retries = 20;

    // photometric, rgb only
    double jitter_prob = 0.8;
    double brightness = 0.4;
    double contrast = 0.4;
    double saturation = 0.4;
    double grayscale_prob = 0.2;
    double blur_prob = 0.5;
    double blur_sigma_min = 0.1;
    double blur_sigma_max = 2.0;
};

struct CropBox {
    int x = 0, y = 0, w = 0, h = 0;
    friend bool operator==(const CropBox&, const CropBox&) = default;
};

struct ViewGeometry {
    CropBox crop;
    bool hflip = false;
    int out_h = 0;
    int out_w = 0;
    friend bool operator==(const ViewGeometry&, const ViewGeometry&) = default;
};

/// Intersection area (source pixels) of the two crop boxes.
long long crop_intersection_area(const CropBox& a, const CropBox& b);

struct GeometryPair {
    ViewGeometry first;
    ViewGeometry second;
    bool fell_back = false;
};

/// Two random-resized-crop geometries whose boxes overlap by at least one feature
/// cell footprint. After `cfg.max_retries` failures the second view copies the first.
GeometryPair sample_view_geometry(int source_h, int source_w, int out_h, int out_w, int grid_h, int grid_w,
                                  const AugmentConfig& cfg, Rng& rng);

void validate_geometry(const ViewGeometry& geom, int source_h, int source_w);

enum class Interp { Bilinear, Nearest, Area, DepthAuto };

/// crop -> optional horizontal flip -> resize. DepthAuto uses area averaging when
/// shrinking along both axes and nearest otherwise.
Image apply_geometry(const Image& image, const ViewGeometry& geom, Interp interp);

/// Color jitter, grayscale and blur on an RGB image; output clipped to [0,1].
Image photometric_augment(const Image& rgb, const AugmentConfig& cfg, Rng& rng);

struct Point2 {
    double x = 0;
    double y = 0;
    friend bool operator==(const Point2&, const Point2&) = default;
    friend std::ostream& operator<<(std::ostream& os, const Point2& t) { return os << "(" << t.x << ", " << t.y << ")"; }
};

/// Source-image coordinates of each feature cell's center (row-major grid_h x grid_w):
/// the center of the matching sub-rectangle of the crop box, mirrored about the crop's
/// vertical axis when the view is flipped.
std::vector<Point2> feature_cell_coords(const ViewGeometry& geom, int grid_h, int grid_w);

bool inside_crop(const Point2& p, const CropBox& box);

struct ViewPair {
    Image view1_rgb, view2_rgb;
    Image view1_depth, view2_depth;
    ViewGeometry geom1, geom2;
    bool fell_back = false;
};

struct ViewPairOptions {
    int out_h = 112;
    int out_w = 112;
    int grid_h = 7;
    int grid_w = 7;
    bool photometric = true;
};

ViewPair make_view_pair(const RgbdSample& sample, const ViewPairOptions& opts, const AugmentConfig& cfg, Rng& rng);

}  // namespace dpr
