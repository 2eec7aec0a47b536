#pragma once

#include <string>
#include <vector>

#include "vodet/tensor.hpp"

namespace vodet {

// One video frame. Pixels are HxWx3 in [0,1], stored as a 3xHxW tensor.
struct Frame {
    Tensor image;  // 3 x H x W
    int timestamp_index = 0;
    std::string source_video_id;

    int height() const { return image.dim(1); }
    int width() const { return image.dim(2); }
};

// 2N+1 frames centered on the current frame, edge-replicated at clip bounds.
struct FrameWindow {
    std::vector<Frame> frames;
    int center_index = 0;
    int context_radius_n = 0;

    const Frame& center() const { return frames[static_cast<std::size_t>(center_index)]; }
};

// Corner-form box in absolute pixels. Fractional coordinates allowed.
struct BoundingBox {
    double x_min = 0, y_min = 0, x_max = 0, y_max = 0;

    double width() const { return x_max - x_min; }
    double height() const { return y_max - y_min; }
    double area() const { return width() * height(); }
    bool valid() const;
};

struct Detection {
    BoundingBox box;
    int label = 0;
    double score = 0;
};

struct GroundTruthInstance {
    BoundingBox box;
    int label = 0;
    std::string video_id;
    int timestamp_index = 0;
};

inline const std::vector<std::string> kDefaultClassNames = {"bicycle", "skateboard", "e-scooter"};

FrameWindow make_window(const std::vector<Frame>& clip, int t, int context_radius_n);

double iou(const BoundingBox& a, const BoundingBox& b);

}  // namespace vodet
