#include "msca/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace msca {

namespace {

void require_same_size(const BinaryMask& a, const BinaryMask& b) {
    if (a.width() != b.width() || a.height() != b.height()) {
        throw DimensionError("mask sizes differ: " + std::to_string(a.width()) + "x" + std::to_string(a.height()) +
                             " vs " + std::to_string(b.width()) + "x" + std::to_string(b.height()));
    }
}

struct Counts {
    std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

Counts confusion(const BinaryMask& pred, const BinaryMask& truth) {
    require_same_size(pred, truth);
    Counts c;
    const auto& p = pred.values();
    const auto& t = truth.values();
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] && t[i]) ++c.tp;
        else if (p[i]) ++c.fp;
        else if (t[i]) ++c.fn;
        else ++c.tn;
    }
    return c;
}

constexpr std::int64_t kFar = std::numeric_limits<std::int64_t>::max() / 4;

// Directed nearest-rank P95 of squared distances, or nothing for an empty source.
std::int64_t directed_p95(std::vector<std::int64_t> sq) {
    const auto k = p95_rank(sq.size());
    std::nth_element(sq.begin(), sq.begin() + static_cast<std::ptrdiff_t>(k), sq.end());
    return sq[k];
}

std::optional<double> symmetric(const std::vector<Pixel>& sa, const std::vector<Pixel>& sb,
                                const std::vector<std::int64_t>& ab, const std::vector<std::int64_t>& ba) {
    if (sa.empty() && sb.empty()) return 0.0;
    if (sa.empty() || sb.empty()) return std::nullopt;
    const std::int64_t worst = std::max(directed_p95(ab), directed_p95(ba));
    return std::sqrt(static_cast<double>(worst));
}

}  // namespace

BinaryMask::BinaryMask(int width, int height) : width_(width), height_(height) {
    if (width <= 0 || height <= 0) throw DimensionError("mask dimensions must be positive");
    values_.assign(static_cast<std::size_t>(width) * height, 0);
}

BinaryMask::BinaryMask(int width, int height, std::vector<std::uint8_t> values)
    : width_(width), height_(height), values_(std::move(values)) {
    if (width <= 0 || height <= 0) throw DimensionError("mask dimensions must be positive");
    if (values_.size() != static_cast<std::size_t>(width) * height) {
        throw DimensionError("mask value count does not match " + std::to_string(width) + "x" +
                             std::to_string(height));
    }
    for (auto v : values_) {
        if (v > 1) throw ValidationError("mask values must be 0 or 1");
    }
}

std::int64_t BinaryMask::count() const {
    return std::accumulate(values_.begin(), values_.end(), std::int64_t{0});
}

std::vector<BinaryMask> binarize(const Tensor& logits, double threshold) {
    if (logits.ndim() != 4 || logits.dim(1) != 1) {
        throw DimensionError("binarize expects [N,1,H,W], got " + shape_str(logits.shape()));
    }
    const auto n = logits.dim(0);
    const int h = static_cast<int>(logits.dim(2)), w = static_cast<int>(logits.dim(3));
    std::vector<BinaryMask> out;
    out.reserve(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        std::vector<std::uint8_t> v(static_cast<std::size_t>(h) * w);
        for (std::size_t j = 0; j < v.size(); ++j) {
            const double z = logits.data()[i * h * w + static_cast<std::int64_t>(j)];
            const double p = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
            v[j] = p >= threshold ? 1 : 0;
        }
        out.emplace_back(w, h, std::move(v));
    }
    return out;
}

double dice(const BinaryMask& a, const BinaryMask& b) {
    const Counts c = confusion(a, b);
    const std::int64_t denom = 2 * c.tp + c.fp + c.fn;
    return denom == 0 ? 1.0 : 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
}

double iou(const BinaryMask& a, const BinaryMask& b) {
    const Counts c = confusion(a, b);
    const std::int64_t uni = c.tp + c.fp + c.fn;
    return uni == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(uni);
}

double acc(const BinaryMask& a, const BinaryMask& b) {
    const Counts c = confusion(a, b);
    return static_cast<double>(c.tp + c.tn) / static_cast<double>(c.tp + c.tn + c.fp + c.fn);
}

std::vector<Pixel> boundary(const BinaryMask& mask) {
    std::vector<Pixel> out;
    const int h = mask.height(), w = mask.width();
    auto bg = [&](int r, int c) { return r < 0 || c < 0 || r >= h || c >= w || !mask.at(r, c); };
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            if (mask.at(r, c) && (bg(r - 1, c) || bg(r + 1, c) || bg(r, c - 1) || bg(r, c + 1))) {
                out.push_back({r, c});
            }
        }
    }
    return out;
}

std::size_t p95_rank(std::size_t n) {
    if (n == 0) throw ValidationError("percentile of an empty set");
    return (95 * n + 99) / 100 - 1;
}

std::optional<double> hd95(const BinaryMask& a, const BinaryMask& b) {
    require_same_size(a, b);
    const auto sa = boundary(a), sb = boundary(b);
    auto directed = [](const std::vector<Pixel>& from, const std::vector<Pixel>& to) {
        std::vector<std::int64_t> out;
        out.reserve(from.size());
        for (const auto& p : from) {
            std::int64_t best = kFar;
            for (const auto& q : to) {
                const std::int64_t dr = p.row - q.row, dc = p.col - q.col;
                best = std::min(best, dr * dr + dc * dc);
            }
            out.push_back(best);
        }
        return out;
    };
    return symmetric(sa, sb, directed(sa, sb), directed(sb, sa));
}

std::vector<std::int64_t> squared_distance_transform(const std::vector<Pixel>& sites, int width, int height) {
    const std::int64_t inf = static_cast<std::int64_t>(width) + height;
    const auto idx = [width](int r, int c) { return static_cast<std::size_t>(r) * width + c; };
    std::vector<std::int64_t> g(static_cast<std::size_t>(width) * height, inf);
    for (const auto& p : sites) g[idx(p.row, p.col)] = 0;

    // Phase 1: per column, distance to the nearest site in that column.
    for (int c = 0; c < width; ++c) {
        for (int r = 1; r < height; ++r) {
            if (g[idx(r, c)] != 0) g[idx(r, c)] = std::min(inf, g[idx(r - 1, c)] + 1);
        }
        for (int r = height - 2; r >= 0; --r) {
            if (g[idx(r + 1, c)] < g[idx(r, c)]) g[idx(r, c)] = g[idx(r + 1, c)] + 1;
        }
    }

    // Phase 2: per row, lower envelope of parabolas (x - i)^2 + g(i)^2 in integers.
    std::vector<std::int64_t> out(g.size(), kFar);
    if (sites.empty()) return out;
    std::vector<std::int64_t> s(static_cast<std::size_t>(width)), t(static_cast<std::size_t>(width));
    for (int r = 0; r < height; ++r) {
        auto gi = [&](std::int64_t i) { return g[idx(r, static_cast<int>(i))]; };
        auto f = [&](std::int64_t x, std::int64_t i) { return (x - i) * (x - i) + gi(i) * gi(i); };
        auto sep = [&](std::int64_t i, std::int64_t u) {
            const std::int64_t num = u * u - i * i + gi(u) * gi(u) - gi(i) * gi(i);
            const std::int64_t den = 2 * (u - i);
            return num >= 0 ? num / den : -((-num + den - 1) / den);
        };
        std::int64_t q = 0;
        s[0] = 0;
        t[0] = 0;
        for (std::int64_t u = 1; u < width; ++u) {
            while (q >= 0 && f(t[q], s[q]) > f(t[q], u)) --q;
            if (q < 0) {
                q = 0;
                s[0] = u;
            } else {
                const std::int64_t w = 1 + sep(s[q], u);
                if (w < width) {
                    ++q;
                    s[q] = u;
                    t[q] = w;
                }
            }
        }
        for (std::int64_t u = width - 1; u >= 0; --u) {
            const std::int64_t d = f(u, s[q]);
            // Rows without any site in reach keep the kFar marker.
            out[idx(r, static_cast<int>(u))] = gi(s[q]) >= inf ? kFar : d;
            if (u == t[q]) --q;
        }
    }
    return out;
}

std::optional<double> hd95_fast(const BinaryMask& a, const BinaryMask& b) {
    require_same_size(a, b);
    const auto sa = boundary(a), sb = boundary(b);
    if (sa.empty() || sb.empty()) return symmetric(sa, sb, {}, {});
    const int w = a.width(), h = a.height();
    const auto dt_a = squared_distance_transform(sa, w, h);
    const auto dt_b = squared_distance_transform(sb, w, h);
    auto sample = [w](const std::vector<Pixel>& at, const std::vector<std::int64_t>& dt) {
        std::vector<std::int64_t> out;
        out.reserve(at.size());
        for (const auto& p : at) out.push_back(dt[static_cast<std::size_t>(p.row) * w + p.col]);
        return out;
    };
    return symmetric(sa, sb, sample(sa, dt_b), sample(sb, dt_a));
}

MetricsReport evaluate_masks(const BinaryMask& prediction, const BinaryMask& truth) {
    return {dice(prediction, truth), iou(prediction, truth), acc(prediction, truth), hd95_fast(prediction, truth)};
}

MetricsSummary summarize(const std::vector<MetricsReport>& reports) {
    MetricsSummary s;
    s.images = reports.size();
    std::size_t defined = 0;
    for (const auto& r : reports) {
        s.dice += r.dice;
        s.iou += r.iou;
        s.acc += r.acc;
        if (r.hd95) {
            s.hd95 += *r.hd95;
            ++defined;
        } else {
            ++s.hd95_undefined;
        }
    }
    if (s.images) {
        const auto n = static_cast<double>(s.images);
        s.dice /= n;
        s.iou /= n;
        s.acc /= n;
    }
    s.hd95 = defined ? s.hd95 / static_cast<double>(defined) : std::numeric_limits<double>::quiet_NaN();
    return s;
}

}  // namespace msca
