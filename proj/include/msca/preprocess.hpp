#pragma once

#include <span>
#include <vector>

#include "msca/tensor.hpp"

namespace msca {

/// Clip to [level - width/2, level + width/2] (Hounsfield units).
std::vector<double> window_ct(std::span<const double> raw, double width = 400.0, double level = 40.0);

/// Nearest-rank percentile: the ceil(p/100 * n)-th smallest value (the minimum for p = 0).
double nearest_rank_percentile(std::span<const double> values, double p);

/// Clip to [P_lo, P_hi] computed over the whole array.
std::vector<double> clip_percentiles(std::span<const double> raw, double lo = 0.5, double hi = 99.5);

/// (x - min) / (max - min) * 255. A constant input maps to zeros.
std::vector<double> minmax_normalize(std::span<const double> x);

/// Row-major single-channel image.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<double> pixels;

    double at(int row, int col) const { return pixels[static_cast<std::size_t>(row) * width + col]; }
};

enum class ResizeMode { Bilinear, Nearest };

/// Resize to size x size. Bilinear uses half-pixel centers (align_corners = false)
/// with edge clamping; nearest picks the source pixel containing the target center.
Image resize(const Image& image, int size, ResizeMode mode);

enum class Modality { CT, MRI };

struct PreprocessOptions {
    double window_width = 400.0;
    double window_level = 40.0;
    double p_lo = 0.5;
    double p_hi = 99.5;
};

/// Intensity clipping (CT window or MRI percentiles) followed by min-max
/// normalization to [0,255], both over the whole volume.
std::vector<double> normalize_intensities(std::span<const double> raw, Modality modality,
                                          const PreprocessOptions& options = {});

/// Volume [D,H,W] -> D slices of size x size in [0,255]. Intensity steps run on the
/// whole volume before slicing; each slice is then resized bilinearly.
std::vector<Image> preprocess_volume(const Tensor& volume, Modality modality, int size,
                                     const PreprocessOptions& options = {});

}  // namespace msca
