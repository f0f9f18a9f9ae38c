#include "msca/box.hpp"

#include "msca/errors.hpp"

namespace msca {

void BoxPrompt::validate(int image_w, int image_h) const {
    if (x0 >= x1 || y0 >= y1) throw ValidationError("degenerate box " + str());
    if (!inside(image_w, image_h)) {
        throw ValidationError("box " + str() + " outside " + std::to_string(image_w) + "x" +
                              std::to_string(image_h) + " image");
    }
}

std::string BoxPrompt::str() const {
    return "(" + std::to_string(x0) + "," + std::to_string(y0) + "," + std::to_string(x1) + "," +
           std::to_string(y1) + ")";
}

}  // namespace msca
