#pragma once

#include <cstddef>
#include <vector>

namespace dpr {

/// Row-major H x W x C float image.
struct Image {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<float> data;

    Image() = default;
    Image(int h, int w, int c, float fill = 0.0f)
        : height(h), width(w), channels(c),
          data(static_cast<std::size_t>(h) * w * c, fill) {}

    bool empty() const { return data.empty(); }
    std::size_t index(int r, int c, int ch = 0) const {
        return (static_cast<std::size_t>(r) * width + c) * channels + ch;
    }
    float& at(int r, int c, int ch = 0) { return data[index(r, c, ch)]; }
    float at(int r, int c, int ch = 0) const { return data[index(r, c, ch)]; }

    bool same_shape(const Image& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }
    friend bool operator==(const Image&, const Image&) = default;
};

}  // namespace dpr
