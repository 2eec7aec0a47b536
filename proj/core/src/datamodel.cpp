#include "vodet/datamodel.hpp"

#include <algorithm>
#include <cmath>

#include "vodet/errors.hpp"

namespace vodet {

bool BoundingBox::valid() const {
    return std::isfinite(x_min) && std::isfinite(y_min) && std::isfinite(x_max) &&
           std::isfinite(y_max) && x_min < x_max && y_min < y_max;
}

FrameWindow make_window(const std::vector<Frame>& clip, int t, int context_radius_n) {
    if (clip.empty()) throw InvalidClip("make_window: empty clip");
    if (context_radius_n < 0) throw InvalidConfig("make_window: negative context radius");
    if (t < 0 || t >= static_cast<int>(clip.size()))
        throw InvalidClip("make_window: center index out of range");

    FrameWindow w;
    w.context_radius_n = context_radius_n;
    w.center_index = context_radius_n;
    const int last = static_cast<int>(clip.size()) - 1;
    for (int i = t - context_radius_n; i <= t + context_radius_n; ++i) {
        int j = std::clamp(i, 0, last);
        w.frames.push_back(clip[static_cast<std::size_t>(j)]);
    }
    return w;
}

double iou(const BoundingBox& a, const BoundingBox& b) {
    if (!a.valid() || !b.valid()) throw InvalidBox("iou: degenerate box");
    const double ix = std::max(0.0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
    const double iy = std::max(0.0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
    const double inter = ix * iy;
    if (inter <= 0.0) return 0.0;
    return inter / (a.area() + b.area() - inter);
}

}  // namespace vodet
