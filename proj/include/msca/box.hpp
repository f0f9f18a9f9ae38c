#pragma once

#include <string>

namespace msca {

/// Axis-aligned box in pixel coordinates, [x0, x1) x [y0, y1).
struct BoxPrompt {
    int x0 = 0;
    int y0 = 0;
    int x1 = 0;
    int y1 = 0;

    int width() const { return x1 - x0; }
    int height() const { return y1 - y0; }
    bool contains(const BoxPrompt& o) const { return x0 <= o.x0 && y0 <= o.y0 && x1 >= o.x1 && y1 >= o.y1; }
    bool inside(int image_w, int image_h) const {
        return x0 >= 0 && y0 >= 0 && x1 <= image_w && y1 <= image_h;
    }
    bool operator==(const BoxPrompt&) const = default;

    /// Throws ValidationError unless 0 <= x0 < x1 <= W and 0 <= y0 < y1 <= H.
    void validate(int image_w, int image_h) const;
    std::string str() const;
};

}  // namespace msca
