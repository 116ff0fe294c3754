#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "dpr/image.hpp"

namespace dpr::io {

namespace fs = std::filesystem;

/// 8-bit RGB PNG from an H x W x 3 image in [0,1] (values are clamped and rounded).
void write_png_rgb8(const fs::path& path, const Image& rgb);

/// 8-bit grayscale PNG from an H x W x 1 image in [0,1].
void write_png_gray8(const fs::path& path, const Image& gray);

/// 16-bit grayscale PNG; `values` is row-major H x W.
void write_png_gray16(const fs::path& path, int height, int width, const std::vector<std::uint16_t>& values);

/// Reads any 8-bit PNG (gray, gray+alpha, RGB, RGBA) as H x W x 3 in [0,1].
Image read_png_rgb(const fs::path& path);

/// Reads a single-channel PNG and returns the raw integer sample values (8- or 16-bit) as floats.
Image read_png_gray_raw(const fs::path& path);

/// Reads a baseline JPEG as H x W x 3 in [0,1].
Image read_jpeg_rgb(const fs::path& path);

/// Reads an image file by extension (.png, .jpg, .jpeg) as RGB.
Image read_rgb(const fs::path& path);

/// Raw little-endian float32 H x W array.
Image read_raw_f32(const fs::path& path, int height, int width);
void write_raw_f32(const fs::path& path, const Image& gray);

std::vector<std::uint8_t> read_file(const fs::path& path);
void write_file(const fs::path& path, const void* data, std::size_t size);

}  // namespace dpr::io
