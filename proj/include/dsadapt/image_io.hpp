#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dsadapt {

// 8-bit planar image, [channels, h, w].
struct Image8 {
    int channels = 0, h = 0, w = 0;
    std::vector<std::uint8_t> data;

    Image8() = default;
    Image8(int channels, int h, int w)
        : channels(channels), h(h), w(w),
          data(static_cast<std::size_t>(channels) * h * w, 0) {}

    std::uint8_t& at(int c, int y, int x) {
        return data[(static_cast<std::size_t>(c) * h + y) * w + x];
    }
    std::uint8_t at(int c, int y, int x) const {
        return data[(static_cast<std::size_t>(c) * h + y) * w + x];
    }
    std::size_t numel() const { return data.size(); }
};

// Reads PNG/TIF into RGB planar form (grayscale is replicated to 3 channels).
Image8 read_image_rgb(const std::string& path);
// Single-channel read; color inputs rejected.
Image8 read_image_gray(const std::string& path);
void write_image(const std::string& path, const Image8& img);  // 1 or 3 channels

}  // namespace dsadapt
