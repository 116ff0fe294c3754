#include "dpr/pair_select.hpp"

#include <algorithm>
#include <cmath>

#include "dpr/common.hpp"

namespace dpr {

std::vector<ThresholdPair> threshold_pairs(const PairSelectConfig& cfg) {
    std::vector<ThresholdPair> out;
    for (double t : cfg.thresholds) {
        if (cfg.cross_product) {
            for (double td : cfg.thresholds) out.push_back({t, td});
        } else {
            out.push_back({t, t});
        }
    }
    return out;
}

PairMask PairMask::transposed() const {
    PairMask t;
    t.a_image = a_image.transpose(-2, -1).contiguous();
    t.a_depth = a_depth.transpose(-2, -1).contiguous();
    t.a = a.transpose(-2, -1).contiguous();
    t.valid = valid_reverse.transpose(-2, -1).contiguous();
    t.valid_reverse = valid.transpose(-2, -1).contiguous();
    t.thresholds = thresholds;
    return t;
}

namespace {

std::vector<std::int64_t> columns_where(const torch::Tensor& row) {
    auto idx = row.nonzero().flatten().contiguous();
    return {idx.data_ptr<std::int64_t>(), idx.data_ptr<std::int64_t>() + idx.numel()};
}

}  // namespace

std::vector<std::int64_t> PairMask::positives(std::int64_t i) const {
    return columns_where(a[i].logical_and(valid[i]));
}

std::vector<std::int64_t> PairMask::negatives(std::int64_t i) const {
    return columns_where(a[i].logical_not().logical_and(valid[i]));
}

PairMask PairMask::stack(const std::vector<PairMask>& masks) {
    if (masks.empty()) throw Error(ErrorKind::ShapeMismatch, "cannot stack zero masks");
    auto gather = [&](torch::Tensor PairMask::*field) {
        std::vector<torch::Tensor> parts;
        parts.reserve(masks.size());
        for (const auto& m : masks) parts.push_back(m.*field);
        return torch::stack(parts);
    };
    PairMask out;
    out.a_image = gather(&PairMask::a_image);
    out.a_depth = gather(&PairMask::a_depth);
    out.a = gather(&PairMask::a);
    out.valid = gather(&PairMask::valid);
    out.valid_reverse = gather(&PairMask::valid_reverse);
    out.thresholds = masks.front().thresholds;
    return out;
}

torch::Tensor points_tensor(const std::vector<Point2>& points) {
    auto t = torch::empty({static_cast<std::int64_t>(points.size()), 2}, torch::kFloat64);
    auto acc = t.accessor<double, 2>();
    for (std::size_t i = 0; i < points.size(); ++i) {
        acc[i][0] = points[i].x;
        acc[i][1] = points[i].y;
    }
    return t;
}

torch::Tensor coord_distance_matrix(const torch::Tensor& coords1, const torch::Tensor& coords2, int source_h,
                                    int source_w) {
    const auto c1 = coords1.to(torch::kFloat64);
    const auto c2 = coords2.to(torch::kFloat64);
    const auto dx = c1.select(1, 0).unsqueeze(1) - c2.select(1, 0).unsqueeze(0);
    const auto dy = c1.select(1, 1).unsqueeze(1) - c2.select(1, 1).unsqueeze(0);
    const double diag = std::sqrt(static_cast<double>(source_h) * source_h + static_cast<double>(source_w) * source_w);
    return (dx * dx + dy * dy).sqrt() / diag;
}

torch::Tensor image_mask(const torch::Tensor& dist, double threshold) {
    if (threshold < 0) throw Error(ErrorKind::InvalidThreshold, "spatial threshold must be >= 0");
    return dist.le(threshold);
}

torch::Tensor DepthGrid::values_tensor() const {
    return torch::tensor(values, torch::kFloat64);
}

torch::Tensor DepthGrid::valid_tensor() const {
    auto t = torch::empty({static_cast<std::int64_t>(valid.size())}, torch::kBool);
    auto acc = t.accessor<bool, 1>();
    for (std::size_t i = 0; i < valid.size(); ++i) acc[i] = valid[i];
    return t;
}

DepthGrid depth_grid(const Image& depth_crop, int grid_h, int grid_w, double min_valid_fraction) {
    if (grid_h < 1 || grid_w < 1 || grid_h > depth_crop.height || grid_w > depth_crop.width) {
        throw Error(ErrorKind::ShapeMismatch, "feature grid " + std::to_string(grid_h) + "x" + std::to_string(grid_w) +
                                                  " larger than depth crop " + std::to_string(depth_crop.height) +
                                                  "x" + std::to_string(depth_crop.width));
    }
    DepthGrid g;
    g.height = grid_h;
    g.width = grid_w;
    g.values.resize(static_cast<std::size_t>(grid_h) * grid_w);
    g.valid.resize(g.values.size());

    const double sy = static_cast<double>(depth_crop.height) / grid_h;
    const double sx = static_cast<double>(depth_crop.width) / grid_w;
    for (int r = 0; r < grid_h; ++r) {
        const double y0 = r * sy, y1 = (r + 1) * sy;
        for (int c = 0; c < grid_w; ++c) {
            const double x0 = c * sx, x1 = (c + 1) * sx;
            double sum = 0.0, weight = 0.0, total = 0.0;
            for (int y = static_cast<int>(std::floor(y0)); y < std::min<int>(std::ceil(y1), depth_crop.height); ++y) {
                const double wy = std::min<double>(y + 1, y1) - std::max<double>(y, y0);
                if (wy <= 0) continue;
                for (int x = static_cast<int>(std::floor(x0)); x < std::min<int>(std::ceil(x1), depth_crop.width);
                     ++x) {
                    const double wx = std::min<double>(x + 1, x1) - std::max<double>(x, x0);
                    if (wx <= 0) continue;
                    const double w = wy * wx;
                    total += w;
                    const float v = depth_crop.at(y, x);
                    if (v == 0.0f) continue;
                    sum += w * v;
                    weight += w;
                }
            }
            const std::size_t k = static_cast<std::size_t>(r) * grid_w + c;
            g.values[k] = weight > 0 ? sum / weight : 0.0;
            g.valid[k] = weight > 0 && weight >= min_valid_fraction * total;
        }
    }
    return g;
}

torch::Tensor depth_mask(const torch::Tensor& d1, const torch::Tensor& d2, double threshold) {
    if (threshold < 0) throw Error(ErrorKind::InvalidThreshold, "depth threshold must be >= 0");
    const auto a = d1.to(torch::kFloat64).flatten();
    const auto b = d2.to(torch::kFloat64).flatten();
    return (a.unsqueeze(1) - b.unsqueeze(0)).abs().le(threshold);
}

PairMask combine_masks(const torch::Tensor& a_image, const torch::Tensor& a_depth, const torch::Tensor& valid,
                       torch::Tensor valid_reverse) {
    if (!valid_reverse.defined()) valid_reverse = valid;
    if (a_image.sizes() != a_depth.sizes() || a_image.sizes() != valid.sizes() ||
        a_image.sizes() != valid_reverse.sizes()) {
        throw Error(ErrorKind::ShapeMismatch, "combine_masks requires identically shaped masks");
    }
    PairMask m;
    m.a_image = a_image.to(torch::kBool);
    m.a_depth = a_depth.to(torch::kBool);
    m.a = m.a_image.logical_and(m.a_depth);
    m.valid = valid.to(torch::kBool);
    m.valid_reverse = valid_reverse.to(torch::kBool);
    return m;
}

ViewCells view_cells(const ViewGeometry& geom, const Image& depth_crop, int grid_h, int grid_w,
                     double min_valid_fraction) {
    ViewCells v;
    v.coords = feature_cell_coords(geom, grid_h, grid_w);
    v.depth = depth_grid(depth_crop, grid_h, grid_w, min_valid_fraction);
    v.crop = geom.crop;
    v.grid_h = grid_h;
    v.grid_w = grid_w;
    return v;
}

namespace {

torch::Tensor inside_tensor(const std::vector<Point2>& pts, const CropBox& box) {
    auto t = torch::empty({static_cast<std::int64_t>(pts.size())}, torch::kBool);
    auto acc = t.accessor<bool, 1>();
    for (std::size_t i = 0; i < pts.size(); ++i) acc[i] = inside_crop(pts[i], box);
    return t;
}

double bin_diagonal(const ViewCells& v) {
    const double w = static_cast<double>(v.crop.w) / v.grid_w;
    const double h = static_cast<double>(v.crop.h) / v.grid_h;
    return std::sqrt(w * w + h * h);
}

}  // namespace

std::vector<PairMask> build_pair_masks(const ViewCells& v1, const ViewCells& v2, int source_h, int source_w,
                                       const PairSelectConfig& cfg) {
    auto dist = coord_distance_matrix(points_tensor(v1.coords), points_tensor(v2.coords), source_h, source_w);
    if (cfg.distance_norm == DistanceNorm::FeatureBin) {
        const double diag = std::sqrt(static_cast<double>(source_h) * source_h +
                                      static_cast<double>(source_w) * source_w);
        dist = dist * (diag / std::max(bin_diagonal(v1), bin_diagonal(v2)));
    }
    const auto d1 = v1.depth.values_tensor();
    const auto d2 = v2.depth.values_tensor();
    const auto depth_ok = v1.depth.valid_tensor().unsqueeze(1).logical_and(v2.depth.valid_tensor().unsqueeze(0));
    const auto valid = depth_ok.logical_and(inside_tensor(v1.coords, v2.crop).unsqueeze(1));
    const auto valid_reverse = depth_ok.logical_and(inside_tensor(v2.coords, v1.crop).unsqueeze(0));

    std::vector<PairMask> out;
    for (const auto& tp : threshold_pairs(cfg)) {
        PairMask m = combine_masks(image_mask(dist, tp.spatial), depth_mask(d1, d2, tp.depth), valid, valid_reverse);
        m.thresholds = tp;
        out.push_back(std::move(m));
    }
    return out;
}

}  // namespace dpr
