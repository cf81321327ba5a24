#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace onca {

/// 8-bit raster, row-major, channel-innermost. Palette PNGs load as raw
/// indices (1 channel) so mask class ids survive a round trip.
struct PngImage {
    int width = 0;
    int height = 0;
    int channels = 0;  // 1 (gray or palette index) or 3 (rgb)
    std::vector<std::uint8_t> pixels;
};

PngImage read_png(const std::string& path);

void write_png_gray(const std::string& path, int width, int height,
                    const std::vector<std::uint8_t>& pixels);

/// Class-id image stored as a palette PNG with a fixed color table, so the
/// file is viewable while the payload stays exactly the ids.
void write_png_palette(const std::string& path, int width, int height,
                       const std::vector<std::uint8_t>& ids);

}  // namespace onca
