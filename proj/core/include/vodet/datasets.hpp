#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vodet/datamodel.hpp"

namespace vodet {

struct VideoEntry {
    std::string id;
    double fps = 10.0;
    std::vector<std::string> frame_paths;  // on-disk videos
    std::vector<Frame> frames;             // in-memory videos (synthetic)
    bool in_memory = false;

    int num_frames() const {
        return static_cast<int>(in_memory ? frames.size() : frame_paths.size());
    }
};

struct DatasetIndex {
    std::vector<VideoEntry> videos;
    std::map<std::pair<std::string, int>, std::vector<GroundTruthInstance>> annotations;
    std::vector<std::string> class_names;

    Frame get_frame(int video_index, int t) const;
    const std::vector<GroundTruthInstance>& gts(const std::string& video_id, int t) const;
    std::size_t total_instances() const;
};

struct LetterboxTransform {
    double scale = 1.0;
    int pad_x = 0, pad_y = 0;
    std::pair<int, int> target_size = {0, 0};  // (w, h)

    BoundingBox apply(const BoundingBox& b) const;
    BoundingBox unapply(const BoundingBox& b) const;
};

// Aspect-preserving resize plus symmetric gray padding.
std::pair<Frame, LetterboxTransform> letterbox(const Frame& frame, std::pair<int, int> target);

// Annotation loaders. All return boxes in absolute corner form.
DatasetIndex load_yolo(const std::string& root_path);
DatasetIndex load_coco(const std::string& json_path);
DatasetIndex load_voc(const std::string& root_path);

// Writers (used by make-synthetic and the round-trip tests). Frame images
// are written as binary PPM.
void export_yolo(const DatasetIndex& index, const std::string& root_path);
void export_coco(const DatasetIndex& index, const std::string& root_path);
void export_voc(const DatasetIndex& index, const std::string& root_path);

struct ClipSample {
    int video_index = 0;
    int t = 0;  // current-frame index at native rate
};

// Current-frame candidates subsampled to target_fps; context frames stay at
// native rate around each sample.
std::vector<ClipSample> sample_clips(const DatasetIndex& index, double target_fps,
                                     int context_radius_n);

FrameWindow window_for_sample(const DatasetIndex& index, const ClipSample& sample,
                              int context_radius_n);

struct SyntheticOptions {
    unsigned long long seed = 0;
    int num_videos = 8;
    int frames_per_video = 40;
    int width = 64, height = 64;
    double fps = 10.0;
    int max_blur = 3;           // directional box-filter length, sampled per frame
    bool occluders = false;     // moving unannotated bars that hide sprites
    double speed_min = 1.0, speed_max = 3.0;
    bool horizontal_only = false;
};

// Moving-sprite videos with exact ground truth: one class per sprite shape
// (disc / plank / wedge), linear motion with edge bounce, per-frame
// directional motion blur, optional occluder bars. Deterministic per seed.
DatasetIndex generate_synthetic_dataset(const SyntheticOptions& opts);

// PPM (P6) image I/O
Frame read_ppm(const std::string& path);
void write_ppm(const Frame& frame, const std::string& path);

}  // namespace vodet
