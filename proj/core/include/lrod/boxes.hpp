#pragma once

#include <cstddef>

namespace lrod {

/// Axis-aligned box in pixel coordinates, (x0, y0) inclusive top-left and
/// (x1, y1) exclusive bottom-right.
struct Box {
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

    double width() const { return x1 - x0; }
    double height() const { return y1 - y0; }
    double area() const { return width() > 0 && height() > 0 ? width() * height() : 0.0; }
    double center_x() const { return 0.5 * (x0 + x1); }
    double center_y() const { return 0.5 * (y0 + y1); }

    friend bool operator==(const Box&, const Box&) = default;
};

double iou(const Box& a, const Box& b);

struct BoxLabel {
    int class_id = 0;
    Box box;

    friend bool operator==(const BoxLabel&, const BoxLabel&) = default;
};

struct Detection {
    int class_id = 0;
    double score = 0;
    Box box;
};

}  // namespace lrod
