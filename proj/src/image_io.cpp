#include "msca/image_io.hpp"

#include <cctype>

#include "msca/tensor_io.hpp"

namespace msca {

namespace {

std::string header_for(int width, int height) {
    return "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
}

// Offset of the raster in an encoded PGM, recomputed for mask diagnostics.
std::size_t raster_offset(std::span<const std::uint8_t> bytes, const GrayImage& img) {
    return bytes.size() - img.pixels.size();
}

}  // namespace

std::vector<std::uint8_t> encode_pgm(const GrayImage& image) {
    if (image.width <= 0 || image.height <= 0) throw DimensionError("PGM dimensions must be positive");
    if (image.pixels.size() != static_cast<std::size_t>(image.width) * image.height) {
        throw DimensionError("PGM pixel count does not match its dimensions");
    }
    const auto header = header_for(image.width, image.height);
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), image.pixels.begin(), image.pixels.end());
    return out;
}

GrayImage decode_pgm(std::span<const std::uint8_t> bytes) {
    std::size_t pos = 0;
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw FormatError("not a binary PGM (P5)", 0);
    pos = 2;
    auto skip_space = [&] {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(bytes[pos])) {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto number = [&](const char* what) {
        if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw FormatError("expected whitespace before PGM " + std::string(what), pos);
        skip_space();
        const std::size_t start = pos;
        std::uint64_t v = 0;
        while (pos < bytes.size() && std::isdigit(bytes[pos])) {
            v = v * 10 + (bytes[pos] - '0');
            if (v > 1'000'000) throw FormatError("PGM " + std::string(what) + " too large", start);
            ++pos;
        }
        if (pos == start) throw FormatError("expected PGM " + std::string(what), start);
        return std::pair{static_cast<int>(v), start};
    };
    const auto [width, wpos] = number("width");
    const auto [height, hpos] = number("height");
    const auto [maxval, mpos] = number("maxval");
    if (width == 0) throw FormatError("PGM width must be positive", wpos);
    if (height == 0) throw FormatError("PGM height must be positive", hpos);
    if (maxval != 255) throw FormatError("unsupported PGM maxval " + std::to_string(maxval) + " (need 255)", mpos);
    if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw FormatError("expected whitespace after PGM maxval", pos);
    ++pos;
    const std::size_t need = static_cast<std::size_t>(width) * height;
    if (bytes.size() - pos < need) throw FormatError("truncated PGM raster", bytes.size());
    if (bytes.size() - pos > need) throw FormatError("trailing bytes after PGM raster", pos + need);
    GrayImage img{width, height, std::vector<std::uint8_t>(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end())};
    return img;
}

void write_pgm(const std::string& path, const GrayImage& image) { write_file(path, encode_pgm(image)); }

GrayImage read_pgm(const std::string& path) { return decode_pgm(read_file(path)); }

BinaryMask mask_from_pgm(const GrayImage& image, std::uint64_t offset) {
    std::vector<std::uint8_t> v(image.pixels.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const auto p = image.pixels[i];
        if (p != 0 && p != 255) throw FormatError("mask value " + std::to_string(p) + " is not 0 or 255", offset + i);
        v[i] = p ? 1 : 0;
    }
    return BinaryMask(image.width, image.height, std::move(v));
}

void write_mask(const std::string& path, const BinaryMask& mask) {
    GrayImage img{mask.width(), mask.height(), std::vector<std::uint8_t>(mask.values().size())};
    for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = mask.values()[i] ? 255 : 0;
    write_pgm(path, img);
}

BinaryMask read_mask(const std::string& path) {
    const auto bytes = read_file(path);
    const auto img = decode_pgm(bytes);
    return mask_from_pgm(img, raster_offset(bytes, img));
}

}  // namespace msca
