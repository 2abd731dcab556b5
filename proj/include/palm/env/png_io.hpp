#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace palm::env {

/// Interleaved 8-bit image, rows top to bottom. channels is 1 or 3.
struct ImageU8 {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<std::uint8_t> pixels;

    std::uint8_t& at(int row, int col, int c = 0) {
        return pixels[(static_cast<std::size_t>(row) * width + col) * channels + c];
    }
    std::uint8_t at(int row, int col, int c = 0) const {
        return pixels[(static_cast<std::size_t>(row) * width + col) * channels + c];
    }
};

void write_png(const std::string& path, const ImageU8& img);
ImageU8 read_png(const std::string& path);

} // namespace palm::env
