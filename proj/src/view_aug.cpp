#include "dpr/view_aug.hpp"

#include <algorithm>
#include <cmath>

#include "dpr/image_ops.hpp"

namespace dpr {

long long crop_intersection_area(const CropBox& a, const CropBox& b) {
    const long long w = std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x);
    const long long h = std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y);
    return w > 0 && h > 0 ? w * h : 0;
}

void validate_geometry(const ViewGeometry& g, int source_h, int source_w) {
    const auto& b = g.crop;
    if (b.x < 0 || b.y < 0 || b.x + b.w > source_w || b.y + b.h > source_h) {
        throw Error(ErrorKind::InvalidGeometry, "crop box lies outside the " + std::to_string(source_w) + "x" +
                                                    std::to_string(source_h) + " source");
    }
    if (b.w < 1 || b.h < 1 || g.out_h < 1 || g.out_w < 1) {
        throw Error(ErrorKind::InvalidGeometry, "crop box and output resolution must be non-empty");
    }
}

namespace {

CropBox random_resized_crop(int H, int W, const AugmentConfig& cfg, Rng& rng) {
    const double area = static_cast<double>(H) * W;
    const double log_rmin = std::log(cfg.ratio_min);
    const double log_rmax = std::log(cfg.ratio_max);
    for (int attempt = 0; attempt < 10; ++attempt) {
        const double target = area * uniform(rng, cfg.scale_min, cfg.scale_max);
        const double ratio = std::exp(uniform(rng, log_rmin, log_rmax));
        const int w = static_cast<int>(std::lround(std::sqrt(target * ratio)));
        const int h = static_cast<int>(std::lround(std::sqrt(target / ratio)));
        if (w >= cfg.min_crop && h >= cfg.min_crop && w <= W && h <= H) {
            const int x = static_cast<int>(uniform_int(rng, 0, W - w));
            const int y = static_cast<int>(uniform_int(rng, 0, H - h));
            return {x, y, w, h};
        }
    }
    const int side = std::min(H, W);
    return {(W - side) / 2, (H - side) / 2, side, side};
}

double cell_footprint(const CropBox& b, int grid_h, int grid_w) {
    return static_cast<double>(b.w) * b.h / (static_cast<double>(grid_h) * grid_w);
}

}  // namespace

GeometryPair sample_view_geometry(int source_h, int source_w, int out_h, int out_w, int grid_h, int grid_w,
                                  const AugmentConfig& cfg, Rng& rng) {
    if (source_h < cfg.min_crop || source_w < cfg.min_crop) {
        throw Error(ErrorKind::InvalidGeometry, "source image smaller than the minimum crop");
    }
    auto draw = [&] {
        ViewGeometry g;
        g.crop = random_resized_crop(source_h, source_w, cfg, rng);
        g.hflip = bernoulli(rng, cfg.hflip_prob);
        g.out_h = out_h;
        g.out_w = out_w;
        return g;
    };
    GeometryPair pair;
    pair.first = draw();
    for (int attempt = 0; attempt < cfg.max_retries; ++attempt) {
        ViewGeometry second = draw();
        const double need = std::max(cell_footprint(pair.first.crop, grid_h, grid_w),
                                     cell_footprint(second.crop, grid_h, grid_w));
        if (static_cast<double>(crop_intersection_area(pair.first.crop, second.crop)) >= need) {
            pair.second = second;
            return pair;
        }
    }
    pair.second = pair.first;
    pair.fell_back = true;
    return pair;
}

Image apply_geometry(const Image& image, const ViewGeometry& geom, Interp interp) {
    validate_geometry(geom, image.height, image.width);
    Image out = crop(image, geom.crop.x, geom.crop.y, geom.crop.w, geom.crop.h);
    if (geom.hflip) out = hflip(out);
    if (out.height == geom.out_h && out.width == geom.out_w) return out;
    if (interp == Interp::DepthAuto) {
        interp = (geom.out_h <= out.height && geom.out_w <= out.width) ? Interp::Area : Interp::Nearest;
    }
    switch (interp) {
        case Interp::Bilinear: return resize_bilinear(out, geom.out_h, geom.out_w);
        case Interp::Nearest: return resize_nearest(out, geom.out_h, geom.out_w);
        case Interp::Area: return resize_area(out, geom.out_h, geom.out_w);
        default: return resize_area(out, geom.out_h, geom.out_w, /*skip_zeros=*/true);
    }
}

Image photometric_augment(const Image& rgb, const AugmentConfig& cfg, Rng& rng) {
    Image out = rgb;
    if (bernoulli(rng, cfg.jitter_prob)) {
        const float b = static_cast<float>(uniform(rng, 1 - cfg.brightness, 1 + cfg.brightness));
        const float c = static_cast<float>(uniform(rng, 1 - cfg.contrast, 1 + cfg.contrast));
        const float s = static_cast<float>(uniform(rng, 1 - cfg.saturation, 1 + cfg.saturation));
        for (auto& v : out.data) v = std::clamp(v * b, 0.0f, 1.0f);

        double mean = 0;
        const Image gray = to_grayscale(out);
        for (std::size_t i = 0; i < gray.data.size(); i += 3) mean += gray.data[i];
        const float m = static_cast<float>(mean / std::max<std::size_t>(1, gray.data.size() / 3));
        for (auto& v : out.data) v = std::clamp((v - m) * c + m, 0.0f, 1.0f);

        const Image gray2 = to_grayscale(out);
        for (std::size_t i = 0; i < out.data.size(); ++i) {
            out.data[i] = std::clamp(gray2.data[i] + (out.data[i] - gray2.data[i]) * s, 0.0f, 1.0f);
        }
    }
    if (bernoulli(rng, cfg.grayscale_prob)) out = to_grayscale(out);
    if (bernoulli(rng, cfg.blur_prob)) {
        out = gaussian_blur(out, uniform(rng, cfg.blur_sigma_min, cfg.blur_sigma_max));
    }
    for (auto& v : out.data) v = std::clamp(v, 0.0f, 1.0f);
    return out;
}

std::vector<Point2> feature_cell_coords(const ViewGeometry& geom, int grid_h, int grid_w) {
    const auto& b = geom.crop;
    const double cell_w = static_cast<double>(b.w) / grid_w;
    const double cell_h = static_cast<double>(b.h) / grid_h;
    std::vector<Point2> out;
    out.reserve(static_cast<std::size_t>(grid_h) * grid_w);
    for (int r = 0; r < grid_h; ++r) {
        for (int c = 0; c < grid_w; ++c) {
            const double offset = (c + 0.5) * cell_w;
            const double x = geom.hflip ? b.x + (b.w - offset) : b.x + offset;
            out.push_back({x, b.y + (r + 0.5) * cell_h});
        }
    }
    return out;
}

bool inside_crop(const Point2& p, const CropBox& box) {
    return p.x >= box.x && p.x <= box.x + box.w && p.y >= box.y && p.y <= box.y + box.h;
}

ViewPair make_view_pair(const RgbdSample& sample, const ViewPairOptions& opts, const AugmentConfig& cfg, Rng& rng) {
    const auto geoms = sample_view_geometry(sample.height(), sample.width(), opts.out_h, opts.out_w, opts.grid_h,
                                            opts.grid_w, cfg, rng);
    ViewPair vp;
    vp.geom1 = geoms.first;
    vp.geom2 = geoms.second;
    vp.fell_back = geoms.fell_back;
    vp.view1_rgb = apply_geometry(sample.rgb, vp.geom1, Interp::Bilinear);
    vp.view2_rgb = apply_geometry(sample.rgb, vp.geom2, Interp::Bilinear);
    vp.view1_depth = apply_geometry(sample.depth, vp.geom1, Interp::DepthAuto);
    vp.view2_depth = apply_geometry(sample.depth, vp.geom2, Interp::DepthAuto);
    if (opts.photometric) {
        vp.view1_rgb = photometric_augment(vp.view1_rgb, cfg, rng);
        vp.view2_rgb = photometric_augment(vp.view2_rgb, cfg, rng);
    }
    return vp;
}

}  // namespace dpr
