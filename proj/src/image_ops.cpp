#include "dpr/image_ops.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "dpr/common.hpp"

namespace dpr {

Image crop(const Image& img, int x, int y, int w, int h) {
    if (x < 0 || y < 0 || w <= 0 || h <= 0 || x + w > img.width || y + h > img.height) {
        throw Error(ErrorKind::InvalidGeometry, "crop box (" + std::to_string(x) + "," + std::to_string(y) + "," +
                                                    std::to_string(w) + "," + std::to_string(h) +
                                                    ") outside image " + std::to_string(img.width) + "x" +
                                                    std::to_string(img.height));
    }
    Image out(h, w, img.channels);
    for (int r = 0; r < h; ++r) {
        const auto* src = &img.data[img.index(y + r, x)];
        std::copy(src, src + static_cast<std::size_t>(w) * img.channels, &out.data[out.index(r, 0)]);
    }
    return out;
}

Image hflip(const Image& img) {
    Image out(img.height, img.width, img.channels);
    for (int r = 0; r < img.height; ++r) {
        for (int c = 0; c < img.width; ++c) {
            for (int ch = 0; ch < img.channels; ++ch) out.at(r, img.width - 1 - c, ch) = img.at(r, c, ch);
        }
    }
    return out;
}

Image resize_bilinear(const Image& img, int out_h, int out_w) {
    Image out(out_h, out_w, img.channels);
    const double sy = static_cast<double>(img.height) / out_h;
    const double sx = static_cast<double>(img.width) / out_w;
    for (int r = 0; r < out_h; ++r) {
        const double fy = std::clamp((r + 0.5) * sy - 0.5, 0.0, img.height - 1.0);
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, img.height - 1);
        const double wy = fy - y0;
        for (int c = 0; c < out_w; ++c) {
            const double fx = std::clamp((c + 0.5) * sx - 0.5, 0.0, img.width - 1.0);
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, img.width - 1);
            const double wx = fx - x0;
            for (int ch = 0; ch < img.channels; ++ch) {
                const double top = img.at(y0, x0, ch) * (1 - wx) + img.at(y0, x1, ch) * wx;
                const double bot = img.at(y1, x0, ch) * (1 - wx) + img.at(y1, x1, ch) * wx;
                out.at(r, c, ch) = static_cast<float>(top * (1 - wy) + bot * wy);
            }
        }
    }
    return out;
}

Image resize_nearest(const Image& img, int out_h, int out_w) {
    Image out(out_h, out_w, img.channels);
    const double sy = static_cast<double>(img.height) / out_h;
    const double sx = static_cast<double>(img.width) / out_w;
    for (int r = 0; r < out_h; ++r) {
        const int y = std::min(static_cast<int>((r + 0.5) * sy), img.height - 1);
        for (int c = 0; c < out_w; ++c) {
            const int x = std::min(static_cast<int>((c + 0.5) * sx), img.width - 1);
            for (int ch = 0; ch < img.channels; ++ch) out.at(r, c, ch) = img.at(y, x, ch);
        }
    }
    return out;
}

namespace {

struct Span {
    int index;
    double weight;
};

// Source cells overlapping [lo, hi) and their overlap lengths.
std::vector<Span> overlaps(double lo, double hi, int limit) {
    std::vector<Span> out;
    const int first = static_cast<int>(std::floor(lo));
    const int last = std::min(static_cast<int>(std::ceil(hi)), limit);
    for (int i = first; i < last; ++i) {
        const double w = std::min<double>(i + 1, hi) - std::max<double>(i, lo);
        if (w > 0) out.push_back({i, w});
    }
    return out;
}

}  // namespace

Image resize_area(const Image& img, int out_h, int out_w, bool skip_zeros) {
    Image out(out_h, out_w, img.channels);
    const double sy = static_cast<double>(img.height) / out_h;
    const double sx = static_cast<double>(img.width) / out_w;
    for (int r = 0; r < out_h; ++r) {
        const auto rows = overlaps(r * sy, (r + 1) * sy, img.height);
        for (int c = 0; c < out_w; ++c) {
            const auto cols = overlaps(c * sx, (c + 1) * sx, img.width);
            for (int ch = 0; ch < img.channels; ++ch) {
                double acc = 0.0;
                double area = 0.0;
                for (const auto& ry : rows) {
                    for (const auto& cx : cols) {
                        const float v = img.at(ry.index, cx.index, ch);
                        if (skip_zeros && v == 0.0f) continue;
                        const double w = ry.weight * cx.weight;
                        area += w;
                        acc += w * v;
                    }
                }
                out.at(r, c, ch) = area > 0 ? static_cast<float>(acc / area) : 0.0f;
            }
        }
    }
    return out;
}

Image to_grayscale(const Image& rgb) {
    Image out = rgb;
    for (int r = 0; r < rgb.height; ++r) {
        for (int c = 0; c < rgb.width; ++c) {
            const float y = 0.299f * rgb.at(r, c, 0) + 0.587f * rgb.at(r, c, 1) + 0.114f * rgb.at(r, c, 2);
            for (int ch = 0; ch < 3; ++ch) out.at(r, c, ch) = y;
        }
    }
    return out;
}

Image gaussian_blur(const Image& img, double sigma) {
    if (sigma <= 0) return img;
    const int radius = std::max(1, static_cast<int>(std::ceil(3 * sigma)));
    std::vector<double> k(2 * radius + 1);
    double total = 0;
    for (int i = -radius; i <= radius; ++i) total += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (auto& v : k) v /= total;

    Image tmp(img.height, img.width, img.channels);
    for (int r = 0; r < img.height; ++r) {
        for (int c = 0; c < img.width; ++c) {
            for (int ch = 0; ch < img.channels; ++ch) {
                double s = 0;
                for (int i = -radius; i <= radius; ++i) {
                    s += k[i + radius] * img.at(r, std::clamp(c + i, 0, img.width - 1), ch);
                }
                tmp.at(r, c, ch) = static_cast<float>(s);
            }
        }
    }
    Image out(img.height, img.width, img.channels);
    for (int r = 0; r < img.height; ++r) {
        for (int c = 0; c < img.width; ++c) {
            for (int ch = 0; ch < img.channels; ++ch) {
                double s = 0;
                for (int i = -radius; i <= radius; ++i) {
                    s += k[i + radius] * tmp.at(std::clamp(r + i, 0, img.height - 1), c, ch);
                }
                out.at(r, c, ch) = static_cast<float>(s);
            }
        }
    }
    return out;
}

}  // namespace dpr
