#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "dpr/pair_select.hpp"
#include "dpr/rgbd_data.hpp"
#include "dpr/view_aug.hpp"
#include "support/oracles.hpp"

namespace dpr::testing {

/// One random (sample, view pair, threshold pair) case, with sensor-style holes
/// punched into the depth map so the validity gating is exercised.
struct MaskInstance {
    RgbdSample sample;
    ViewPair views;
    ThresholdPair thresholds;
    int grid = 7;
};

inline MaskInstance random_mask_instance(std::uint64_t seed) {
    auto rng = make_rng(seed, {0x3a5c});
    MaskInstance inst;
    SceneSpec spec;
    spec.height = static_cast<int>(uniform_int(rng, 64, 160));
    spec.width = static_cast<int>(uniform_int(rng, 64, 160));
    spec.rng_seed = seed;
    inst.sample = generate_scene(spec);
    const int holes = static_cast<int>(uniform_int(rng, 0, 4));
    for (int k = 0; k < holes; ++k) {
        const int h = static_cast<int>(uniform_int(rng, 4, spec.height / 2));
        const int w = static_cast<int>(uniform_int(rng, 4, spec.width / 2));
        const int y = static_cast<int>(uniform_int(rng, 0, spec.height - h));
        const int x = static_cast<int>(uniform_int(rng, 0, spec.width - w));
        for (int r = y; r < y + h; ++r) {
            for (int c = x; c < x + w; ++c) inst.sample.depth.at(r, c) = 0.0f;
        }
    }
    const int grids[] = {4, 7};
    inst.grid = grids[uniform_int(rng, 0, 1)];
    const int out = inst.grid * 16;
    inst.views = make_view_pair(inst.sample, ViewPairOptions{out, out, inst.grid, inst.grid, false}, AugmentConfig{},
                                rng);
    const double choices[] = {0.0, 0.1, 0.3, 0.5, 0.7, 1.0};
    inst.thresholds = {choices[uniform_int(rng, 0, 5)], choices[uniform_int(rng, 0, 5)]};
    // sometimes use an arbitrary threshold value
    if (bernoulli(rng, 0.5)) inst.thresholds = {uniform01(rng), uniform(rng, 0.0, 0.3)};
    return inst;
}

struct MaskComparison {
    bool image = false, depth = false, combined = false, valid = false;
    bool all() const { return image && depth && combined && valid; }
};

inline MaskComparison compare_with_oracle(const MaskInstance& inst) {
    const auto& v = inst.views;
    const auto c1 = view_cells(v.geom1, v.view1_depth, inst.grid, inst.grid);
    const auto c2 = view_cells(v.geom2, v.view2_depth, inst.grid, inst.grid);
    PairSelectConfig cfg;
    cfg.thresholds = {inst.thresholds.spatial, inst.thresholds.depth};
    cfg.cross_product = true;
    const auto masks = build_pair_masks(c1, c2, inst.sample.height(), inst.sample.width(), cfg);
    const auto m = *std::find_if(masks.begin(), masks.end(),
                                 [&](const PairMask& x) { return x.thresholds == inst.thresholds; });

    const auto ref = oracle::reference_masks(v.geom1, v.view1_depth, v.geom2, v.view2_depth, inst.grid, inst.grid,
                                             inst.sample.height(), inst.sample.width(), inst.thresholds.spatial,
                                             inst.thresholds.depth);
    MaskComparison out;
    out.image = oracle::flat_bool(m.a_image) == ref.a_image;
    out.depth = oracle::flat_bool(m.a_depth) == ref.a_depth;
    out.combined = oracle::flat_bool(m.a) == ref.a;
    out.valid = oracle::flat_bool(m.valid) == ref.valid;
    return out;
}

}  // namespace dpr::testing
