#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace amil {

// 8-bit RGB image, rows top to bottom, channels interleaved.
struct SourceImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  // width * height * 3
    int label = 0;
    std::string id;

    std::uint8_t* px(int x, int y) { return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
    const std::uint8_t* px(int x, int y) const {
        return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
    }
};

SourceImage make_image(int width, int height);

// PNG, 8-bit RGB. Reading converts palette/gray/16-bit/alpha inputs to RGB8.
SourceImage read_png(const std::string& path);
void write_png(const std::string& path, const SourceImage& img);

// Binary PPM (P6), maxval 255. The bit-exact interchange format for tests.
SourceImage read_ppm(const std::string& path);
void write_ppm(const std::string& path, const SourceImage& img);

// Dispatches on the file extension (.png / .ppm).
SourceImage read_image(const std::string& path);

}  // namespace amil
