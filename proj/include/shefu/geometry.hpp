#pragma once

#include <algorithm>
#include <string>

#include "shefu/common.hpp"

namespace shefu {

// Axis-aligned box in pixel coordinates, carrying the dimensions of the image
// it lives in. Invariants: 0 <= x1 < x2 <= W, 0 <= y1 < y2 <= H.
struct BBox {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
    double W = 0, H = 0;

    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
    double area() const { return width() * height(); }

    void validate() const {
        if (!(W > 0 && H > 0)) throw ContractError("bbox: image dimensions must be positive");
        if (!(x1 >= 0 && x1 < x2 && x2 <= W && y1 >= 0 && y1 < y2 && y2 <= H))
            throw ContractError("bbox: degenerate or out-of-image box (" + std::to_string(x1) + "," +
                                std::to_string(y1) + "," + std::to_string(x2) + "," +
                                std::to_string(y2) + ") in " + std::to_string(W) + "x" +
                                std::to_string(H));
    }

    bool operator==(const BBox& o) const {
        return x1 == o.x1 && y1 == o.y1 && x2 == o.x2 && y2 == o.y2 && W == o.W && H == o.H;
    }
};

// Intersection over union; 0 for disjoint boxes.
inline double iou(const BBox& a, const BBox& b) {
    a.validate();
    b.validate();
    double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
    double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
    double inter = ix * iy;
    double uni = a.area() + b.area() - inter;
    return inter / uni;
}

}  // namespace shefu
