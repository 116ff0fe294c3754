#pragma once

#include <vector>

#include <torch/torch.h>

#include "dpr/image.hpp"
#include "dpr/view_aug.hpp"

namespace dpr {

/// (spatial threshold, depth threshold) for one mask instantiation.
struct ThresholdPair {
    double spatial = 0.3;
    double depth = 0.3;
    friend bool operator==(const ThresholdPair&, const ThresholdPair&) = default;
    friend std::ostream& operator<<(std::ostream& os, const ThresholdPair& t) { return os << "(" << t.spatial << ", " << t.depth << ")"; }
};

enum class DistanceNorm {
    ImageDiagonal,  // divide by sqrt(H^2 + W^2) of the source image
    FeatureBin,     // divide by the larger feature-bin diagonal of the two views
};

struct PairSelectConfig {
    std::vector<double> thresholds{0.3, 0.5, 0.7};
    bool cross_product = false;  // pair every spatial threshold with every depth threshold
    DistanceNorm distance_norm = DistanceNorm::ImageDiagonal;
    double min_valid_fraction = 0.5;  // of a feature cell's depth pixels
};

/// Paired (t, t) instantiations by default; the full cross product when configured.
std::vector<ThresholdPair> threshold_pairs(const PairSelectConfig& cfg);

/// Binary masks over (view-1 cells x view-2 cells), optionally batched as [B, N1, N2].
/// `valid` gates the view-1 -> view-2 direction (view-1 cell inside view-2's crop);
/// `valid_reverse` gates view-2 -> view-1 (view-2 cell inside view-1's crop).
/// Both also require valid depth on either cell.
struct PairMask {
    torch::Tensor a_image;
    torch::Tensor a_depth;
    torch::Tensor a;
    torch::Tensor valid;
    torch::Tensor valid_reverse;
    ThresholdPair thresholds;

    /// The same masks seen from view 2: a -> a^T, valid <-> valid_reverse^T.
    PairMask transposed() const;
    /// Ω_p^i: columns j with a(i,j) = 1 and valid(i,j). Unbatched masks only.
    std::vector<std::int64_t> positives(std::int64_t i) const;
    /// Ω_n^i: columns j with a(i,j) = 0 and valid(i,j). Unbatched masks only.
    std::vector<std::int64_t> negatives(std::int64_t i) const;

    static PairMask stack(const std::vector<PairMask>& masks);
};

/// Row-major [N, 2] float64 tensor of (x, y) points.
torch::Tensor points_tensor(const std::vector<Point2>& points);

/// ||c1[i] - c2[j]|| / sqrt(H^2 + W^2), float64 [N1, N2].
torch::Tensor coord_distance_matrix(const torch::Tensor& coords1, const torch::Tensor& coords2, int source_h,
                                    int source_w);

/// 1 where dist <= threshold (boolean tensor).
torch::Tensor image_mask(const torch::Tensor& dist, double threshold);

/// Depth crop pooled onto a feature grid.
struct DepthGrid {
    int height = 0;
    int width = 0;
    std::vector<double> values;  // masked area average, row-major
    std::vector<bool> valid;     // at least `min_valid_fraction` of the cell area is non-hole

    torch::Tensor values_tensor() const;
    torch::Tensor valid_tensor() const;
};

/// Area-average pooling of `depth_crop` (H_out x W_out x 1) onto grid_h x grid_w.
/// Hole pixels (value 0) are excluded from the average.
DepthGrid depth_grid(const Image& depth_crop, int grid_h, int grid_w, double min_valid_fraction = 0.5);

/// 1 where |d1[i] - d2[j]| <= threshold.
torch::Tensor depth_mask(const torch::Tensor& d1, const torch::Tensor& d2, double threshold);

/// a = a_image ⊙ a_depth. `valid_reverse` defaults to `valid`.
PairMask combine_masks(const torch::Tensor& a_image, const torch::Tensor& a_depth, const torch::Tensor& valid,
                       torch::Tensor valid_reverse = {});

/// Per-view cell description needed to build masks.
struct ViewCells {
    std::vector<Point2> coords;
    DepthGrid depth;
    CropBox crop;
    int grid_h = 0;
    int grid_w = 0;
};

ViewCells view_cells(const ViewGeometry& geom, const Image& depth_crop, int grid_h, int grid_w,
                     double min_valid_fraction = 0.5);

/// One PairMask per threshold pair for the given two views of a source image.
std::vector<PairMask> build_pair_masks(const ViewCells& v1, const ViewCells& v2, int source_h, int source_w,
                                       const PairSelectConfig& cfg);

}  // namespace dpr
