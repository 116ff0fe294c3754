#include "support/doctest.hpp"

#include <algorithm>
#include <cmath>

#include "dpr/image_ops.hpp"
#include "dpr/rgbd_data.hpp"
#include "dpr/view_aug.hpp"

using namespace dpr;

namespace {

Image random_image(int h, int w, int c, std::uint64_t seed) {
    Image img(h, w, c);
    auto rng = make_rng(seed);
    for (auto& v : img.data) v = static_cast<float>(uniform01(rng));
    return img;
}

AugmentConfig no_photometric() {
    AugmentConfig cfg;
    cfg.jitter_prob = 0;
    cfg.grayscale_prob = 0;
    cfg.blur_prob = 0;
    return cfg;
}

}  // namespace

TEST_SUITE("view_aug") {

TEST_CASE("identity geometry leaves the image unchanged") {
    const auto img = random_image(20, 30, 3, 1);
    const ViewGeometry g{{0, 0, 30, 20}, false, 20, 30};
    for (auto interp : {Interp::Bilinear, Interp::Nearest, Interp::Area, Interp::DepthAuto}) {
        CHECK(apply_geometry(img, g, interp) == img);
    }
    CHECK(resize_bilinear(img, 20, 30) == img);
    CHECK(resize_nearest(img, 20, 30) == img);
    CHECK(resize_area(img, 20, 30) == img);
}

TEST_CASE("hflip is an involution") {
    const auto img = random_image(7, 11, 3, 2);
    CHECK(hflip(hflip(img)) == img);
    CHECK_FALSE(hflip(img) == img);
    CHECK(hflip(img).at(3, 0, 1) == img.at(3, 10, 1));
}

TEST_CASE("constant images stay constant under any geometry") {
    const Image img(40, 50, 3, 0.37f);
    auto rng = make_rng(3);
    AugmentConfig cfg;
    for (int i = 0; i < 50; ++i) {
        const auto pair = sample_view_geometry(40, 50, 32, 32, 4, 4, cfg, rng);
        for (auto interp : {Interp::Bilinear, Interp::Nearest, Interp::Area, Interp::DepthAuto}) {
            for (float v : apply_geometry(img, pair.first, interp).data) REQUIRE(v == doctest::Approx(0.37f).epsilon(1e-6));
        }
    }
}

TEST_CASE("crop outside the source is rejected") {
    const Image img(10, 10, 1);
    CHECK_THROWS_AS(apply_geometry(img, ViewGeometry{{5, 5, 6, 4}, false, 4, 4}, Interp::Nearest), Error);
    CHECK_THROWS_AS(apply_geometry(img, ViewGeometry{{-1, 0, 4, 4}, false, 4, 4}, Interp::Nearest), Error);
    CHECK_THROWS_AS(apply_geometry(img, ViewGeometry{{0, 0, 0, 4}, false, 4, 4}, Interp::Nearest), Error);
}

TEST_CASE("area resize averages blocks and skips holes on request") {
    Image img(2, 2, 1);
    img.data = {0.0f, 1.0f, 1.0f, 0.0f};
    CHECK(resize_area(img, 1, 1).data[0] == doctest::Approx(0.5));
    CHECK(resize_area(img, 1, 1, true).data[0] == doctest::Approx(1.0));
    const Image holes(2, 2, 1, 0.0f);
    CHECK(resize_area(holes, 1, 1, true).data[0] == 0.0f);
}

TEST_CASE("all photometric probabilities zero is the identity") {
    const auto img = random_image(16, 16, 3, 4);
    auto rng = make_rng(5);
    CHECK(photometric_augment(img, no_photometric(), rng) == img);
}

TEST_CASE("grayscale makes all channels equal") {
    auto cfg = no_photometric();
    cfg.grayscale_prob = 1.0;
    const auto img = random_image(16, 16, 3, 6);
    auto rng = make_rng(7);
    const auto out = photometric_augment(img, cfg, rng);
    for (int r = 0; r < 16; ++r) {
        for (int c = 0; c < 16; ++c) {
            CHECK(out.at(r, c, 0) == out.at(r, c, 1));
            CHECK(out.at(r, c, 1) == out.at(r, c, 2));
        }
    }
}

TEST_CASE("photometric output is reproducible and clipped") {
    AugmentConfig cfg;
    cfg.jitter_prob = cfg.blur_prob = 1.0;
    const auto img = random_image(24, 24, 3, 8);
    auto r1 = make_rng(9), r2 = make_rng(9);
    const auto a = photometric_augment(img, cfg, r1);
    CHECK(a == photometric_augment(img, cfg, r2));
    CHECK_FALSE(a == img);
    for (float v : a.data) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
}

TEST_CASE("feature cell centers") {
    const auto one = feature_cell_coords(ViewGeometry{{0, 0, 100, 100}, false, 10, 10}, 1, 1);
    REQUIRE(one.size() == 1);
    CHECK(one[0] == Point2{50, 50});

    const auto four = feature_cell_coords(ViewGeometry{{0, 0, 4, 4}, false, 4, 4}, 2, 2);
    CHECK(four == std::vector<Point2>{{1, 1}, {3, 1}, {1, 3}, {3, 3}});

    // flipping mirrors each row about the crop's vertical axis
    const auto flipped = feature_cell_coords(ViewGeometry{{10, 0, 4, 4}, true, 4, 4}, 2, 2);
    CHECK(flipped == std::vector<Point2>{{13, 1}, {11, 1}, {13, 3}, {11, 3}});
}

TEST_CASE("cell centers lie inside their crop") {
    auto rng = make_rng(10);
    AugmentConfig cfg;
    for (int i = 0; i < 500; ++i) {
        const auto pair = sample_view_geometry(120, 160, 112, 112, 7, 7, cfg, rng);
        for (const auto& g : {pair.first, pair.second}) {
            for (const auto& p : feature_cell_coords(g, 7, 7)) REQUIRE(inside_crop(p, g.crop));
        }
    }
}

TEST_CASE("sampled view pairs always intersect") {
    auto rng = make_rng(11);
    AugmentConfig cfg;
    int fell_back = 0;
    for (int i = 0; i < 1000; ++i) {
        const auto pair = sample_view_geometry(160, 160, 112, 112, 7, 7, cfg, rng);
        REQUIRE(crop_intersection_area(pair.first.crop, pair.second.crop) > 0);
        CHECK_NOTHROW(validate_geometry(pair.first, 160, 160));
        CHECK_NOTHROW(validate_geometry(pair.second, 160, 160));
        fell_back += pair.fell_back;
    }
    CHECK(fell_back < 1000);
}

TEST_CASE("fallback copies the first view") {
    AugmentConfig cfg;
    cfg.max_retries = 0;
    auto rng = make_rng(12);
    const auto pair = sample_view_geometry(64, 64, 32, 32, 4, 4, cfg, rng);
    CHECK(pair.fell_back);
    CHECK(pair.first == pair.second);
    CHECK(crop_intersection_area(pair.first.crop, pair.second.crop) ==
          static_cast<long long>(pair.first.crop.w) * pair.first.crop.h);
}

TEST_CASE("geometry sampling is deterministic in the seed") {
    AugmentConfig cfg;
    auto a = make_rng(13), b = make_rng(13);
    for (int i = 0; i < 20; ++i) {
        const auto p = sample_view_geometry(100, 80, 64, 64, 4, 4, cfg, a);
        const auto q = sample_view_geometry(100, 80, 64, 64, 4, 4, cfg, b);
        CHECK(p.first == q.first);
        CHECK(p.second == q.second);
    }
}

TEST_CASE("geometry commutes with pointwise functions of position (nearest)") {
    // index image: value = r * W + c, exactly representable in float
    const int h = 37, w = 53;
    Image index(h, w, 1);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) index.at(r, c) = static_cast<float>(r * w + c);
    }
    auto f = [&](float idx) {
        const int r = static_cast<int>(idx) / w, c = static_cast<int>(idx) % w;
        return static_cast<float>(std::sin(0.3 * r) + 0.01 * c * c);
    };
    Image depth(h, w, 1);
    for (std::size_t i = 0; i < depth.data.size(); ++i) depth.data[i] = f(index.data[i]);

    auto rng = make_rng(14);
    AugmentConfig cfg;
    for (int i = 0; i < 100; ++i) {
        const auto g = sample_view_geometry(h, w, 24, 40, 4, 4, cfg, rng).first;
        const auto moved_index = apply_geometry(index, g, Interp::Nearest);
        const auto moved_depth = apply_geometry(depth, g, Interp::Nearest);
        for (std::size_t k = 0; k < moved_index.data.size(); ++k) REQUIRE(moved_depth.data[k] == f(moved_index.data[k]));
    }
}

TEST_CASE("rgb and depth crops of a view share their geometry (canary)") {
    const int n = 48;
    RgbdSample s;
    s.rgb = Image(n, n, 3, 0.0f);
    s.depth = Image(n, n, 1, 0.5f);
    const int cy = 20, cx = 29;
    for (int ch = 0; ch < 3; ++ch) s.rgb.at(cy, cx, ch) = 1.0f;
    s.depth.at(cy, cx) = 1.0f;

    ViewPairOptions opts{96, 96, 6, 6, false};
    auto rng = make_rng(15);
    int seen = 0;
    for (int i = 0; i < 200; ++i) {
        const auto vp = make_view_pair(s, opts, AugmentConfig{}, rng);
        const std::pair<const Image*, const Image*> views[] = {{&vp.view1_rgb, &vp.view1_depth},
                                                               {&vp.view2_rgb, &vp.view2_depth}};
        const ViewGeometry* geoms[] = {&vp.geom1, &vp.geom2};
        for (int v = 0; v < 2; ++v) {
            const auto& g = *geoms[v];
            const bool inside = cx >= g.crop.x && cx < g.crop.x + g.crop.w && cy >= g.crop.y && cy < g.crop.y + g.crop.h;
            const auto& rgb = *views[v].first;
            const auto& depth = *views[v].second;
            const auto rgb_max = std::max_element(rgb.data.begin(), rgb.data.end()) - rgb.data.begin();
            std::vector<std::size_t> hits;
            for (std::size_t k = 0; k < depth.data.size(); ++k) {
                if (depth.data[k] == 1.0f) hits.push_back(k);
            }
            REQUIRE(inside == !hits.empty());
            if (!inside) continue;
            ++seen;
            // the brightest rgb pixel is one of the canary's depth pixels
            const auto pixel = static_cast<std::size_t>(rgb_max / 3);
            CHECK(std::find(hits.begin(), hits.end(), pixel) != hits.end());
            // and lands where the geometry predicts
            const int r = static_cast<int>(pixel) / depth.width, c = static_cast<int>(pixel) % depth.width;
            const double sy = g.crop.y + (r + 0.5) * g.crop.h / depth.height;
            double lx = (c + 0.5) * g.crop.w / depth.width;
            if (g.hflip) lx = g.crop.w - lx;
            CHECK(static_cast<int>(std::floor(sy)) == cy);
            CHECK(static_cast<int>(std::floor(g.crop.x + lx)) == cx);
        }
    }
    CHECK(seen > 50);
}

}
