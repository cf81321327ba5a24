#include "onca/png_io.hpp"

#include <cstdio>
#include <memory>
#include <stdexcept>

#include <png.h>

namespace onca {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

PngImage read_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw std::runtime_error("read_png: cannot open " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("read_png: out of memory");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw std::runtime_error("read_png: out of memory");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("read_png: invalid PNG " + path);
    }

    png_init_io(png, fp.get());
    png_read_info(png, info);

    const png_byte color = png_get_color_type(png, info);
    const png_byte depth = png_get_bit_depth(png, info);

    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color == PNG_COLOR_TYPE_PALETTE && depth < 8) png_set_packing(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    // Palette images stay as raw indices; gray and rgb stay as-is.
    png_read_update_info(png, info);

    PngImage img;
    img.width = int(png_get_image_width(png, info));
    img.height = int(png_get_image_height(png, info));
    img.channels = int(png_get_channels(png, info));
    if (img.channels != 1 && img.channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("read_png: unsupported channel count in " + path);
    }

    const std::size_t stride = std::size_t(img.width) * img.channels;
    img.pixels.resize(stride * std::size_t(img.height));
    std::vector<png_bytep> rows(std::size_t(img.height));
    for (int y = 0; y < img.height; ++y) rows[std::size_t(y)] = img.pixels.data() + std::size_t(y) * stride;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

namespace {

void write_png_impl(const std::string& path, int width, int height, int color_type,
                    const std::uint8_t* pixels, const png_color* palette, int palette_size) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw std::runtime_error("write_png: cannot open " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("write_png: out of memory");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw std::runtime_error("write_png: out of memory");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("write_png: failed writing " + path);
    }

    png_init_io(png, fp.get());
    png_set_IHDR(png, info, png_uint_32(width), png_uint_32(height), 8, color_type,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    if (color_type == PNG_COLOR_TYPE_PALETTE)
        png_set_PLTE(png, info, palette, palette_size);
    png_write_info(png, info);

    const int ch = color_type == PNG_COLOR_TYPE_RGB ? 3 : 1;
    const std::size_t stride = std::size_t(width) * ch;
    std::vector<png_bytep> rows;
    rows.resize(std::size_t(height));
    for (int y = 0; y < height; ++y)
        rows[std::size_t(y)] = const_cast<std::uint8_t*>(pixels) + std::size_t(y) * stride;
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_png_gray(const std::string& path, int width, int height,
                    const std::vector<std::uint8_t>& pixels) {
    if (pixels.size() != std::size_t(width) * std::size_t(height))
        throw std::invalid_argument("write_png_gray: size mismatch");
    write_png_impl(path, width, height, PNG_COLOR_TYPE_GRAY, pixels.data(), nullptr, 0);
}

void write_png_palette(const std::string& path, int width, int height,
                       const std::vector<std::uint8_t>& ids) {
    if (ids.size() != std::size_t(width) * std::size_t(height))
        throw std::invalid_argument("write_png_palette: size mismatch");
    png_color palette[256];
    palette[0] = {0, 0, 0};
    for (int i = 1; i < 256; ++i) {
        // Spread hues so neighboring ids are visually distinct.
        const int h = (i * 47) % 255;
        palette[i] = {png_byte(55 + (h * 200) / 255), png_byte(255 - h), png_byte(h)};
    }
    write_png_impl(path, width, height, PNG_COLOR_TYPE_PALETTE, ids.data(), palette, 256);
}

}  // namespace onca
