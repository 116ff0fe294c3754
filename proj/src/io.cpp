#include "dpr/io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include <jpeglib.h>

#include "dpr/common.hpp"

namespace dpr::io {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const fs::path& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) throw Error(ErrorKind::Io, "cannot open '" + path.string() + "'");
    return f;
}

std::uint8_t to_u8(float v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

void png_error_fn(png_structp, png_const_charp msg) {
    throw Error(ErrorKind::Io, std::string("libpng: ") + msg);
}

void png_warning_fn(png_structp, png_const_charp) {}

void write_png(const fs::path& path, int height, int width, int color_type, int bit_depth,
               const std::vector<std::uint8_t>& rows_data, std::size_t row_bytes) {
    auto f = open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warning_fn);
    png_infop info = png_create_info_struct(png);
    try {
        png_init_io(png, f.get());
        png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth,
                     color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        if (bit_depth == 16) png_set_swap(png);  // rows are host (little-endian) order
        for (int r = 0; r < height; ++r) {
            png_write_row(png, const_cast<png_bytep>(rows_data.data() + r * row_bytes));
        }
        png_write_end(png, nullptr);
    } catch (...) {
        png_destroy_write_struct(&png, &info);
        throw;
    }
    png_destroy_write_struct(&png, &info);
}

struct PngData {
    int height = 0;
    int width = 0;
    int channels = 0;
    int bit_depth = 0;
    std::vector<std::uint16_t> values;  // row-major, interleaved
};

PngData read_png(const fs::path& path) {
    auto f = open_file(path, "rb");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warning_fn);
    png_infop info = png_create_info_struct(png);
    PngData out;
    try {
        png_init_io(png, f.get());
        png_read_info(png, info);
        const int color_type = png_get_color_type(png, info);
        int bit_depth = png_get_bit_depth(png, info);
        if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
        if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) {
            png_set_expand_gray_1_2_4_to_8(png);
        }
        if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
        if (bit_depth == 16) png_set_swap(png);
        png_read_update_info(png, info);
        out.height = static_cast<int>(png_get_image_height(png, info));
        out.width = static_cast<int>(png_get_image_width(png, info));
        out.channels = png_get_channels(png, info);
        out.bit_depth = png_get_bit_depth(png, info);
        const std::size_t row_bytes = png_get_rowbytes(png, info);
        std::vector<std::uint8_t> buf(row_bytes * out.height);
        std::vector<png_bytep> rows(out.height);
        for (int r = 0; r < out.height; ++r) rows[r] = buf.data() + r * row_bytes;
        png_read_image(png, rows.data());
        png_read_end(png, nullptr);

        const std::size_t n = static_cast<std::size_t>(out.height) * out.width * out.channels;
        out.values.resize(n);
        if (out.bit_depth == 16) {
            std::memcpy(out.values.data(), buf.data(), n * 2);
        } else {
            for (std::size_t i = 0; i < n; ++i) out.values[i] = buf[i];
        }
    } catch (...) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw;
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

}  // namespace

void write_png_rgb8(const fs::path& path, const Image& rgb) {
    if (rgb.channels != 3) throw Error(ErrorKind::ShapeMismatch, "write_png_rgb8 expects 3 channels");
    std::vector<std::uint8_t> buf(rgb.data.size());
    std::transform(rgb.data.begin(), rgb.data.end(), buf.begin(), to_u8);
    write_png(path, rgb.height, rgb.width, PNG_COLOR_TYPE_RGB, 8, buf, static_cast<std::size_t>(rgb.width) * 3);
}

void write_png_gray8(const fs::path& path, const Image& gray) {
    if (gray.channels != 1) throw Error(ErrorKind::ShapeMismatch, "write_png_gray8 expects 1 channel");
    std::vector<std::uint8_t> buf(gray.data.size());
    std::transform(gray.data.begin(), gray.data.end(), buf.begin(), to_u8);
    write_png(path, gray.height, gray.width, PNG_COLOR_TYPE_GRAY, 8, buf, static_cast<std::size_t>(gray.width));
}

void write_png_gray16(const fs::path& path, int height, int width, const std::vector<std::uint16_t>& values) {
    if (values.size() != static_cast<std::size_t>(height) * width) {
        throw Error(ErrorKind::ShapeMismatch, "write_png_gray16: value count does not match H x W");
    }
    std::vector<std::uint8_t> buf(values.size() * 2);
    std::memcpy(buf.data(), values.data(), buf.size());
    write_png(path, height, width, PNG_COLOR_TYPE_GRAY, 16, buf, static_cast<std::size_t>(width) * 2);
}

Image read_png_rgb(const fs::path& path) {
    PngData png = read_png(path);
    const float scale = png.bit_depth == 16 ? 1.0f / 65535.0f : 1.0f / 255.0f;
    Image out(png.height, png.width, 3);
    for (int r = 0; r < png.height; ++r) {
        for (int c = 0; c < png.width; ++c) {
            const std::size_t base = (static_cast<std::size_t>(r) * png.width + c) * png.channels;
            for (int ch = 0; ch < 3; ++ch) {
                const int src = png.channels >= 3 ? ch : 0;
                out.at(r, c, ch) = static_cast<float>(png.values[base + src]) * scale;
            }
        }
    }
    return out;
}

Image read_png_gray_raw(const fs::path& path) {
    PngData png = read_png(path);
    if (png.channels != 1) {
        throw Error(ErrorKind::Io, "'" + path.string() + "' is not a single-channel image");
    }
    Image out(png.height, png.width, 1);
    std::transform(png.values.begin(), png.values.end(), out.data.begin(),
                   [](std::uint16_t v) { return static_cast<float>(v); });
    return out;
}

namespace {

struct JpegErrorMgr {
    jpeg_error_mgr pub;
    std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
    std::longjmp(err->jump, 1);
}

}  // namespace

Image read_jpeg_rgb(const fs::path& path) {
    auto f = open_file(path, "rb");
    jpeg_decompress_struct cinfo{};
    JpegErrorMgr err{};
    cinfo.err = jpeg_std_error(&err.pub);
    err.pub.error_exit = jpeg_error_exit;
    Image out;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw Error(ErrorKind::Io, "cannot decode JPEG '" + path.string() + "'");
    }
    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, f.get());
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    out = Image(static_cast<int>(cinfo.output_height), static_cast<int>(cinfo.output_width), 3);
    std::vector<JSAMPLE> row(static_cast<std::size_t>(cinfo.output_width) * cinfo.output_components);
    while (cinfo.output_scanline < cinfo.output_height) {
        const int r = static_cast<int>(cinfo.output_scanline);
        JSAMPROW ptr = row.data();
        jpeg_read_scanlines(&cinfo, &ptr, 1);
        for (int c = 0; c < out.width; ++c) {
            for (int ch = 0; ch < 3; ++ch) out.at(r, c, ch) = row[c * 3 + ch] / 255.0f;
        }
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return out;
}

Image read_rgb(const fs::path& path) {
    auto ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (ext == ".jpg" || ext == ".jpeg") return read_jpeg_rgb(path);
    return read_png_rgb(path);
}

Image read_raw_f32(const fs::path& path, int height, int width) {
    auto bytes = read_file(path);
    const std::size_t n = static_cast<std::size_t>(height) * width;
    if (bytes.size() != n * sizeof(float)) {
        throw Error(ErrorKind::Io, "'" + path.string() + "' has " + std::to_string(bytes.size()) +
                                       " bytes, expected " + std::to_string(n * sizeof(float)));
    }
    Image out(height, width, 1);
    std::memcpy(out.data.data(), bytes.data(), bytes.size());
    return out;
}

void write_raw_f32(const fs::path& path, const Image& gray) {
    write_file(path, gray.data.data(), gray.data.size() * sizeof(float));
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::Io, "cannot open '" + path.string() + "'");
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const fs::path& path, const void* data, std::size_t size) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot write '" + path.string() + "'");
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    if (!out) throw Error(ErrorKind::Io, "short write to '" + path.string() + "'");
}

}  // namespace dpr::io
