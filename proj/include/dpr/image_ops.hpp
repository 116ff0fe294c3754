#pragma once

#include "dpr/image.hpp"

namespace dpr {

// Pixel (r, c) covers [c, c+1) x [r, r+1); its center is at (c + 0.5, r + 0.5).

Image crop(const Image& img, int x, int y, int w, int h);
Image hflip(const Image& img);

/// Half-pixel-centered bilinear resampling with edge clamping.
Image resize_bilinear(const Image& img, int out_h, int out_w);
/// Output pixel center maps to the source pixel containing it.
Image resize_nearest(const Image& img, int out_h, int out_w);
/// Exact area-weighted average; intended for downscaling. With `skip_zeros`, zero
/// pixels (depth holes) carry no weight and an all-hole cell stays 0.
Image resize_area(const Image& img, int out_h, int out_w, bool skip_zeros = false);

Image to_grayscale(const Image& rgb);
Image gaussian_blur(const Image& img, double sigma);

}  // namespace dpr
