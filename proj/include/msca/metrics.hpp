#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "msca/tensor.hpp"

namespace msca {

/// H x W array over {0,1}, row-major.
class BinaryMask {
public:
    BinaryMask() = default;
    BinaryMask(int width, int height);
    BinaryMask(int width, int height, std::vector<std::uint8_t> values);

    int width() const { return width_; }
    int height() const { return height_; }
    std::uint8_t at(int row, int col) const { return values_[static_cast<std::size_t>(row) * width_ + col]; }
    void set(int row, int col, bool on) { values_[static_cast<std::size_t>(row) * width_ + col] = on ? 1 : 0; }
    const std::vector<std::uint8_t>& values() const { return values_; }
    std::int64_t count() const;
    bool empty() const { return count() == 0; }
    bool operator==(const BinaryMask&) const = default;

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<std::uint8_t> values_;
};

struct Pixel {
    int row;
    int col;
    bool operator==(const Pixel&) const = default;
};

/// sigmoid(logit) >= threshold, per image of an [N,1,H,W] tensor.
std::vector<BinaryMask> binarize(const Tensor& logits, double threshold = 0.5);

/// 2|A∩B| / (|A|+|B|); 1 when both are empty.
double dice(const BinaryMask& a, const BinaryMask& b);
/// |A∩B| / |A∪B|; 1 when both are empty.
double iou(const BinaryMask& a, const BinaryMask& b);
/// (TP+TN) / all pixels.
double acc(const BinaryMask& a, const BinaryMask& b);

/// Foreground pixels with a 4-neighbour that is background or outside the image.
std::vector<Pixel> boundary(const BinaryMask& mask);

/// Position of the nearest-rank 95th percentile among n sorted values (0-based): ceil(0.95 n) - 1.
std::size_t p95_rank(std::size_t n);

/// Symmetric 95th-percentile boundary distance in pixels. 0 when both masks are
/// empty; std::nullopt when exactly one is. All-pairs brute force.
std::optional<double> hd95(const BinaryMask& a, const BinaryMask& b);

/// Same contract as hd95(), via exact squared Euclidean distance transforms.
std::optional<double> hd95_fast(const BinaryMask& a, const BinaryMask& b);

/// Exact squared Euclidean distance from every pixel to the nearest pixel of
/// `sites` (row-major, height x width). Pixels are at infinity when `sites` is empty.
std::vector<std::int64_t> squared_distance_transform(const std::vector<Pixel>& sites, int width, int height);

struct MetricsReport {
    double dice = 0.0;
    double iou = 0.0;
    double acc = 0.0;
    std::optional<double> hd95;
};

MetricsReport evaluate_masks(const BinaryMask& prediction, const BinaryMask& truth);

/// Macro averages over images; undefined HD95 cases are counted and excluded.
struct MetricsSummary {
    double dice = 0.0;
    double iou = 0.0;
    double acc = 0.0;
    double hd95 = 0.0;
    std::size_t images = 0;
    std::size_t hd95_undefined = 0;
};

MetricsSummary summarize(const std::vector<MetricsReport>& reports);

}  // namespace msca
