#include "msca/preprocess.hpp"

#include <algorithm>
#include <cmath>

namespace msca {

std::vector<double> window_ct(std::span<const double> raw, double width, double level) {
    if (!(width > 0)) throw ConfigError("CT window width must be positive");
    const double lo = level - width / 2.0, hi = level + width / 2.0;
    std::vector<double> out(raw.begin(), raw.end());
    for (auto& v : out) v = std::clamp(v, lo, hi);
    return out;
}

double nearest_rank_percentile(std::span<const double> values, double p) {
    if (values.empty()) throw ValidationError("percentile of an empty array");
    if (!(p >= 0.0 && p <= 100.0)) throw ConfigError("percentile must lie in [0,100]");
    const auto n = values.size();
    // p*n is formed before dividing so that integral ranks stay exact.
    auto rank = static_cast<std::size_t>(std::ceil(p * static_cast<double>(n) / 100.0 - 1e-9));
    rank = std::clamp<std::size_t>(rank, 1, n);
    std::vector<double> sorted(values.begin(), values.end());
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(rank - 1), sorted.end());
    return sorted[rank - 1];
}

std::vector<double> clip_percentiles(std::span<const double> raw, double lo, double hi) {
    if (raw.empty()) throw ValidationError("cannot clip an empty array");
    if (!(lo >= 0.0 && lo < hi && hi <= 100.0)) throw ConfigError("percentiles must satisfy 0 <= lo < hi <= 100");
    const double plo = nearest_rank_percentile(raw, lo), phi = nearest_rank_percentile(raw, hi);
    std::vector<double> out(raw.begin(), raw.end());
    for (auto& v : out) v = std::clamp(v, plo, phi);
    return out;
}

std::vector<double> minmax_normalize(std::span<const double> x) {
    if (x.empty()) throw ValidationError("cannot normalize an empty array");
    const auto [mn, mx] = std::minmax_element(x.begin(), x.end());
    const double lo = *mn, range = *mx - *mn;
    std::vector<double> out(x.size(), 0.0);
    if (range > 0) {
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - lo) / range * 255.0;
    }
    return out;
}

Image resize(const Image& image, int size, ResizeMode mode) {
    if (size < 1) throw ConfigError("resize target must be >= 1");
    if (image.width < 1 || image.height < 1) throw DimensionError("resize source must be at least 1x1");
    Image out{size, size, std::vector<double>(static_cast<std::size_t>(size) * size)};
    const double sy = static_cast<double>(image.height) / size, sx = static_cast<double>(image.width) / size;
    for (int r = 0; r < size; ++r) {
        for (int c = 0; c < size; ++c) {
            double v;
            if (mode == ResizeMode::Nearest) {
                const int rr = std::min(image.height - 1, static_cast<int>(std::floor((r + 0.5) * sy)));
                const int cc = std::min(image.width - 1, static_cast<int>(std::floor((c + 0.5) * sx)));
                v = image.at(rr, cc);
            } else {
                const double fy = std::clamp((r + 0.5) * sy - 0.5, 0.0, static_cast<double>(image.height - 1));
                const double fx = std::clamp((c + 0.5) * sx - 0.5, 0.0, static_cast<double>(image.width - 1));
                const int y0 = static_cast<int>(std::floor(fy)), x0 = static_cast<int>(std::floor(fx));
                const int y1 = std::min(y0 + 1, image.height - 1), x1 = std::min(x0 + 1, image.width - 1);
                const double wy = fy - y0, wx = fx - x0;
                v = (1 - wy) * ((1 - wx) * image.at(y0, x0) + wx * image.at(y0, x1)) +
                    wy * ((1 - wx) * image.at(y1, x0) + wx * image.at(y1, x1));
            }
            out.pixels[static_cast<std::size_t>(r) * size + c] = v;
        }
    }
    return out;
}

std::vector<double> normalize_intensities(std::span<const double> raw, Modality modality,
                                          const PreprocessOptions& options) {
    const auto clipped = modality == Modality::CT ? window_ct(raw, options.window_width, options.window_level)
                                                  : clip_percentiles(raw, options.p_lo, options.p_hi);
    return minmax_normalize(clipped);
}

std::vector<Image> preprocess_volume(const Tensor& volume, Modality modality, int size,
                                     const PreprocessOptions& options) {
    if (volume.ndim() != 3) throw DimensionError("volume must be [D,H,W], got " + shape_str(volume.shape()));
    const auto norm = normalize_intensities(volume.data(), modality, options);
    const int d = static_cast<int>(volume.dim(0)), h = static_cast<int>(volume.dim(1)),
              w = static_cast<int>(volume.dim(2));
    std::vector<Image> slices;
    slices.reserve(static_cast<std::size_t>(d));
    for (int k = 0; k < d; ++k) {
        const auto begin = norm.begin() + static_cast<std::ptrdiff_t>(k) * h * w;
        Image slice{w, h, std::vector<double>(begin, begin + static_cast<std::ptrdiff_t>(h) * w)};
        slices.push_back(resize(slice, size, ResizeMode::Bilinear));
    }
    return slices;
}

}  // namespace msca
