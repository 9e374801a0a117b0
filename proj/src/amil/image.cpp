#include "amil/image.hpp"

#include <png.h>

#include <cctype>
#include <cstdio>
#include <memory>

#include "amil/errors.hpp"

namespace amil {

SourceImage make_image(int width, int height) {
    if (width <= 0 || height <= 0)
        throw ContractError("image dimensions must be positive, got " + std::to_string(width) +
                            "x" + std::to_string(height));
    SourceImage img;
    img.width = width;
    img.height = height;
    img.pixels.assign(static_cast<std::size_t>(width) * height * 3, 0);
    return img;
}

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

SourceImage read_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IngestionError("cannot open image file: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("libpng: failed to create read struct");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("libpng: failed to create info struct");
    }

    SourceImage img;
    std::vector<png_bytep> row_ptrs;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IngestionError("failed to decode PNG: " + path);
    }

    png_init_io(png, fp.get());
    png_read_info(png, info);

    png_set_strip_16(png);
    png_set_packing(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
        png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    img.width = static_cast<int>(png_get_image_width(png, info));
    img.height = static_cast<int>(png_get_image_height(png, info));
    img.pixels.assign(static_cast<std::size_t>(img.width) * img.height * 3, 0);
    row_ptrs.resize(static_cast<std::size_t>(img.height));
    for (int y = 0; y < img.height; ++y)
        row_ptrs[static_cast<std::size_t>(y)] =
            img.pixels.data() + static_cast<std::size_t>(y) * img.width * 3;
    png_read_image(png, row_ptrs.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    img.id = path;
    return img;
}

void write_png(const std::string& path, const SourceImage& img) {
    if (img.pixels.size() != static_cast<std::size_t>(img.width) * img.height * 3)
        throw ContractError("image pixel buffer does not match dimensions");
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("cannot create file: " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("libpng: failed to create write struct");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("libpng: failed to create info struct");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("failed to encode PNG: " + path);
    }

    png_init_io(png, fp.get());
    png_set_compression_level(png, 6);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
                 static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < img.height; ++y)
        png_write_row(png, const_cast<png_bytep>(img.pixels.data() +
                                                 static_cast<std::size_t>(y) * img.width * 3));
    png_write_end(png, info);
    png_destroy_write_struct(&png, &info);
}

namespace {

// Reads one PPM header token, skipping whitespace and # comments.
int ppm_token(std::FILE* f, const std::string& path) {
    int c = std::fgetc(f);
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = std::fgetc(f);
        } else if (!std::isspace(c)) {
            break;
        }
        c = std::fgetc(f);
    }
    if (c == EOF || !std::isdigit(c)) throw IngestionError("malformed PPM header: " + path);
    int v = 0;
    while (c != EOF && std::isdigit(c)) {
        v = v * 10 + (c - '0');
        c = std::fgetc(f);
    }
    return v;
}

}  // namespace

SourceImage read_ppm(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IngestionError("cannot open image file: " + path);
    if (std::fgetc(fp.get()) != 'P' || std::fgetc(fp.get()) != '6')
        throw IngestionError("not a binary PPM (P6): " + path);
    const int w = ppm_token(fp.get(), path);
    const int h = ppm_token(fp.get(), path);
    const int maxval = ppm_token(fp.get(), path);
    if (w <= 0 || h <= 0 || maxval != 255)
        throw IngestionError("unsupported PPM geometry or maxval in " + path);
    SourceImage img = make_image(w, h);
    if (std::fread(img.pixels.data(), 1, img.pixels.size(), fp.get()) != img.pixels.size())
        throw IngestionError("truncated PPM pixel data: " + path);
    img.id = path;
    return img;
}

void write_ppm(const std::string& path, const SourceImage& img) {
    if (img.pixels.size() != static_cast<std::size_t>(img.width) * img.height * 3)
        throw ContractError("image pixel buffer does not match dimensions");
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("cannot create file: " + path);
    std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) +
                         "\n255\n";
    if (std::fwrite(header.data(), 1, header.size(), fp.get()) != header.size() ||
        std::fwrite(img.pixels.data(), 1, img.pixels.size(), fp.get()) != img.pixels.size())
        throw IoError("short write: " + path);
}

SourceImage read_image(const std::string& path) {
    auto dot = path.rfind('.');
    std::string ext = dot == std::string::npos ? "" : path.substr(dot);
    for (auto& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    if (ext == ".png") return read_png(path);
    if (ext == ".ppm") return read_ppm(path);
    throw IngestionError("unsupported image format (want .png or .ppm): " + path);
}

}  // namespace amil
