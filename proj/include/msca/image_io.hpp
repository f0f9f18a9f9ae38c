#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "msca/metrics.hpp"

namespace msca {

/// 8-bit grayscale raster as stored in a binary PGM file.
struct GrayImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  // row-major
    bool operator==(const GrayImage&) const = default;
};

/// Binary PGM (P5, maxval 255). Header fields may be separated by any whitespace
/// and `#` comments; a single whitespace byte precedes the raster.
std::vector<std::uint8_t> encode_pgm(const GrayImage& image);
GrayImage decode_pgm(std::span<const std::uint8_t> bytes);

void write_pgm(const std::string& path, const GrayImage& image);
GrayImage read_pgm(const std::string& path);

/// Masks are stored as {0,255}; any other value is a format error.
void write_mask(const std::string& path, const BinaryMask& mask);
BinaryMask read_mask(const std::string& path);
BinaryMask mask_from_pgm(const GrayImage& image, std::uint64_t raster_offset = 0);

}  // namespace msca
