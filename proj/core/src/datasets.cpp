#include "vodet/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "vodet/errors.hpp"
#include "vodet/tensor.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace vodet {

Frame DatasetIndex::get_frame(int video_index, int t) const {
    const VideoEntry& v = videos[static_cast<std::size_t>(video_index)];
    if (t < 0 || t >= v.num_frames())
        throw InvalidClip("get_frame: index " + std::to_string(t) + " out of range for " + v.id);
    if (v.in_memory) return v.frames[static_cast<std::size_t>(t)];
    Frame f = read_ppm(v.frame_paths[static_cast<std::size_t>(t)]);
    f.timestamp_index = t;
    f.source_video_id = v.id;
    return f;
}

const std::vector<GroundTruthInstance>& DatasetIndex::gts(const std::string& video_id,
                                                          int t) const {
    static const std::vector<GroundTruthInstance> kEmpty;
    auto it = annotations.find({video_id, t});
    return it == annotations.end() ? kEmpty : it->second;
}

std::size_t DatasetIndex::total_instances() const {
    std::size_t n = 0;
    for (const auto& [k, v] : annotations) n += v.size();
    return n;
}

// ---------------------------------------------------------------- letterbox

BoundingBox LetterboxTransform::apply(const BoundingBox& b) const {
    return BoundingBox{b.x_min * scale + pad_x, b.y_min * scale + pad_y, b.x_max * scale + pad_x,
                       b.y_max * scale + pad_y};
}

BoundingBox LetterboxTransform::unapply(const BoundingBox& b) const {
    return BoundingBox{(b.x_min - pad_x) / scale, (b.y_min - pad_y) / scale,
                       (b.x_max - pad_x) / scale, (b.y_max - pad_y) / scale};
}

std::pair<Frame, LetterboxTransform> letterbox(const Frame& frame, std::pair<int, int> target) {
    const auto [tw, th] = target;
    const int w = frame.width(), h = frame.height();
    LetterboxTransform tf;
    tf.target_size = target;
    tf.scale = std::min(static_cast<double>(tw) / w, static_cast<double>(th) / h);
    const int nw = static_cast<int>(std::lround(w * tf.scale));
    const int nh = static_cast<int>(std::lround(h * tf.scale));
    tf.pad_x = (tw - nw) / 2;
    tf.pad_y = (th - nh) / 2;

    Frame out;
    out.timestamp_index = frame.timestamp_index;
    out.source_video_id = frame.source_video_id;
    if (nw == w && nh == h && tf.pad_x == 0 && tf.pad_y == 0 && tw == w && th == h) {
        out.image = frame.image;  // identity
        return {out, tf};
    }

    Tensor resized;
    {
        NoGradGuard ng;
        resized = bilinear_resize(make_var(frame.image), nh, nw)->value;
    }
    out.image = Tensor::full({3, th, tw}, 0.5);  // gray padding
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < nh; ++y)
            for (int x = 0; x < nw; ++x)
                out.image.at(c, y + tf.pad_y, x + tf.pad_x) = resized.at(c, y, x);
    return {out, tf};
}

// --------------------------------------------------------------------- PPM

Frame read_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ParseError("cannot open image: " + path);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    f >> magic >> w >> h >> maxval;
    if (magic != "P6" || w <= 0 || h <= 0 || maxval != 255)
        throw ParseError("unsupported PPM header in " + path);
    f.get();  // single whitespace after header
    std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h * 3);
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!f) throw ParseError("truncated PPM data in " + path);

    Frame frame;
    frame.image = Tensor({3, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                frame.image.at(c, y, x) = buf[(static_cast<std::size_t>(y) * w + x) * 3 + c] / 255.0;
    return frame;
}

void write_ppm(const Frame& frame, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ParseError("cannot open image for writing: " + path);
    const int w = frame.width(), h = frame.height();
    f << "P6\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h * 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                double v = std::clamp(frame.image.at(c, y, x), 0.0, 1.0);
                buf[(static_cast<std::size_t>(y) * w + x) * 3 + c] =
                    static_cast<unsigned char>(std::lround(v * 255.0));
            }
    f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

// ----------------------------------------------------------------- helpers

namespace {

std::string frame_stem(const std::string& video_id, int t) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "_%06d", t);
    return video_id + buf;
}

// "videoID_frameIndex" naming convention
std::pair<std::string, int> split_stem(const std::string& stem) {
    auto pos = stem.rfind('_');
    if (pos == std::string::npos || pos + 1 >= stem.size())
        throw ParseError("file stem '" + stem + "' does not follow videoID_frameIndex");
    try {
        return {stem.substr(0, pos), std::stoi(stem.substr(pos + 1))};
    } catch (const std::exception&) {
        throw ParseError("non-numeric frame index in stem '" + stem + "'");
    }
}

std::vector<std::string> read_class_names(const fs::path& file) {
    std::ifstream f(file);
    if (!f) throw ParseError("missing class names file: " + file.string());
    std::vector<std::string> names;
    std::string line;
    while (std::getline(f, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (!line.empty()) names.push_back(line);
    }
    if (names.empty()) throw ParseError("empty class names file: " + file.string());
    return names;
}

std::map<std::string, double> read_fps_file(const fs::path& file) {
    std::map<std::string, double> fps;
    std::ifstream f(file);
    if (!f) return fps;
    std::string vid;
    double v;
    while (f >> vid >> v) fps[vid] = v;
    return fps;
}

struct FrameSize {
    int w = 0, h = 0;
};

FrameSize ppm_size(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    std::string magic;
    FrameSize s;
    int maxval;
    f >> magic >> s.w >> s.h >> maxval;
    if (!f || magic != "P6") throw ParseError("unreadable PPM header: " + path);
    return s;
}

// Collects root/images into videos, grouped and ordered by frame index.
std::vector<VideoEntry> index_image_dir(const fs::path& images, const std::map<std::string, double>& fps) {
    if (!fs::is_directory(images)) throw ParseError("missing image directory: " + images.string());
    std::map<std::string, std::vector<std::pair<int, std::string>>> by_video;
    for (const auto& e : fs::directory_iterator(images)) {
        if (!e.is_regular_file() || e.path().extension() != ".ppm") continue;
        auto [vid, t] = split_stem(e.path().stem().string());
        by_video[vid].emplace_back(t, e.path().string());
    }
    std::vector<VideoEntry> videos;
    for (auto& [vid, frames] : by_video) {
        std::sort(frames.begin(), frames.end());
        VideoEntry v;
        v.id = vid;
        auto it = fps.find(vid);
        v.fps = it == fps.end() ? 10.0 : it->second;
        for (auto& [t, p] : frames) v.frame_paths.push_back(p);
        videos.push_back(std::move(v));
    }
    return videos;
}

}  // namespace

// ------------------------------------------------------------------- YOLO

DatasetIndex load_yolo(const std::string& root_path) {
    fs::path root(root_path);
    DatasetIndex idx;
    idx.class_names = read_class_names(root / "classes.txt");
    idx.videos = index_image_dir(root / "images", read_fps_file(root / "fps.txt"));

    for (std::size_t vi = 0; vi < idx.videos.size(); ++vi) {
        const VideoEntry& v = idx.videos[vi];
        for (int t = 0; t < v.num_frames(); ++t) {
            fs::path label = root / "labels" / (frame_stem(v.id, t) + ".txt");
            if (!fs::exists(label)) continue;  // no annotation record for this frame
            FrameSize sz = ppm_size(v.frame_paths[static_cast<std::size_t>(t)]);
            std::ifstream f(label);
            std::string line;
            int lineno = 0;
            std::vector<GroundTruthInstance> gts;
            while (std::getline(f, line)) {
                ++lineno;
                if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
                std::istringstream ss(line);
                int cls;
                double cx, cy, w, h;
                if (!(ss >> cls >> cx >> cy >> w >> h))
                    throw ParseError(label.string() + ":" + std::to_string(lineno) +
                                     ": malformed YOLO line");
                if (cls < 0 || cls >= static_cast<int>(idx.class_names.size()))
                    throw ValidationError(label.string() + ":" + std::to_string(lineno) +
                                          ": class index out of range");
                for (double val : {cx, cy, w, h})
                    if (val < 0.0 || val > 1.0)
                        throw ValidationError(label.string() + ":" + std::to_string(lineno) +
                                              ": normalized value outside [0,1]");
                GroundTruthInstance g;
                g.label = cls;
                g.video_id = v.id;
                g.timestamp_index = t;
                g.box = BoundingBox{(cx - w / 2) * sz.w, (cy - h / 2) * sz.h, (cx + w / 2) * sz.w,
                                    (cy + h / 2) * sz.h};
                gts.push_back(g);
            }
            idx.annotations[{v.id, t}] = std::move(gts);
        }
    }
    return idx;
}

void export_yolo(const DatasetIndex& index, const std::string& root_path) {
    fs::path root(root_path);
    fs::create_directories(root / "images");
    fs::create_directories(root / "labels");
    {
        std::ofstream f(root / "classes.txt");
        for (const auto& n : index.class_names) f << n << "\n";
    }
    {
        std::ofstream f(root / "fps.txt");
        for (const auto& v : index.videos) f << v.id << " " << v.fps << "\n";
    }
    for (std::size_t vi = 0; vi < index.videos.size(); ++vi) {
        const VideoEntry& v = index.videos[vi];
        for (int t = 0; t < v.num_frames(); ++t) {
            Frame fr = index.get_frame(static_cast<int>(vi), t);
            std::string stem = frame_stem(v.id, t);
            write_ppm(fr, (root / "images" / (stem + ".ppm")).string());
            std::ofstream lf(root / "labels" / (stem + ".txt"));
            for (const auto& g : index.gts(v.id, t)) {
                double cx = (g.box.x_min + g.box.x_max) / 2 / fr.width();
                double cy = (g.box.y_min + g.box.y_max) / 2 / fr.height();
                double w = g.box.width() / fr.width();
                double h = g.box.height() / fr.height();
                char buf[128];
                std::snprintf(buf, sizeof buf, "%d %.9f %.9f %.9f %.9f\n", g.label, cx, cy, w, h);
                lf << buf;
            }
        }
    }
}

// ------------------------------------------------------------------- COCO

DatasetIndex load_coco(const std::string& json_path) {
    std::ifstream f(json_path);
    if (!f) throw ParseError("cannot open COCO json: " + json_path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw ParseError(std::string("invalid COCO json: ") + e.what());
    }
    for (const char* key : {"images", "annotations", "categories"})
        if (!j.contains(key)) throw ParseError(std::string("COCO json missing key '") + key + "'");

    DatasetIndex idx;
    std::map<int, int> cat_to_class;
    for (const auto& c : j["categories"]) {
        cat_to_class[c.at("id").get<int>()] = static_cast<int>(idx.class_names.size());
        idx.class_names.push_back(c.at("name").get<std::string>());
    }

    std::map<std::string, double> fps;
    if (j.contains("videos"))
        for (const auto& v : j["videos"])
            fps[v.at("id").get<std::string>()] = v.at("fps").get<double>();

    fs::path images_dir = fs::path(json_path).parent_path() / "images";
    std::map<int, std::pair<std::string, int>> image_map;  // image_id -> (video, t)
    std::map<std::string, std::vector<std::pair<int, std::string>>> by_video;
    for (const auto& im : j["images"]) {
        int id = im.at("id").get<int>();
        std::string file_name = im.at("file_name").get<std::string>();
        auto [vid, t] = split_stem(fs::path(file_name).stem().string());
        image_map[id] = {vid, t};
        by_video[vid].emplace_back(t, (images_dir / file_name).string());
    }
    for (auto& [vid, frames] : by_video) {
        std::sort(frames.begin(), frames.end());
        VideoEntry v;
        v.id = vid;
        auto it = fps.find(vid);
        v.fps = it == fps.end() ? 10.0 : it->second;
        for (auto& [t, p] : frames) v.frame_paths.push_back(p);
        idx.videos.push_back(std::move(v));
        for (int t = 0; t < idx.videos.back().num_frames(); ++t)
            idx.annotations[{vid, t}];  // ensure record exists for every image
    }

    for (const auto& a : j["annotations"]) {
        int image_id = a.at("image_id").get<int>();
        auto im = image_map.find(image_id);
        if (im == image_map.end())
            throw ValidationError("annotation references unknown image_id " +
                                  std::to_string(image_id));
        auto cat = cat_to_class.find(a.at("category_id").get<int>());
        if (cat == cat_to_class.end())
            throw ValidationError("annotation references unknown category_id");
        const auto& bbox = a.at("bbox");
        GroundTruthInstance g;
        g.label = cat->second;
        g.video_id = im->second.first;
        g.timestamp_index = im->second.second;
        double x = bbox.at(0).get<double>(), y = bbox.at(1).get<double>();
        double w = bbox.at(2).get<double>(), h = bbox.at(3).get<double>();
        g.box = BoundingBox{x, y, x + w, y + h};
        idx.annotations[{g.video_id, g.timestamp_index}].push_back(g);
    }
    return idx;
}

void export_coco(const DatasetIndex& index, const std::string& root_path) {
    fs::path root(root_path);
    fs::create_directories(root / "images");
    json j;
    j["images"] = json::array();
    j["annotations"] = json::array();
    j["categories"] = json::array();
    j["videos"] = json::array();
    for (std::size_t i = 0; i < index.class_names.size(); ++i)
        j["categories"].push_back({{"id", static_cast<int>(i) + 1}, {"name", index.class_names[i]}});

    int image_id = 1, ann_id = 1;
    for (std::size_t vi = 0; vi < index.videos.size(); ++vi) {
        const VideoEntry& v = index.videos[vi];
        j["videos"].push_back({{"id", v.id}, {"fps", v.fps}});
        for (int t = 0; t < v.num_frames(); ++t) {
            Frame fr = index.get_frame(static_cast<int>(vi), t);
            std::string file_name = frame_stem(v.id, t) + ".ppm";
            write_ppm(fr, (root / "images" / file_name).string());
            j["images"].push_back({{"id", image_id},
                                   {"file_name", file_name},
                                   {"width", fr.width()},
                                   {"height", fr.height()}});
            for (const auto& g : index.gts(v.id, t)) {
                j["annotations"].push_back(
                    {{"id", ann_id++},
                     {"image_id", image_id},
                     {"category_id", g.label + 1},
                     {"bbox", {g.box.x_min, g.box.y_min, g.box.width(), g.box.height()}},
                     {"area", g.box.area()},
                     {"iscrowd", 0}});
            }
            ++image_id;
        }
    }
    std::ofstream f(root / "annotations.json");
    f << j.dump(2) << "\n";
}

// -------------------------------------------------------------------- VOC

namespace {

std::string xml_tag(const std::string& xml, const std::string& tag, std::size_t from,
                    std::size_t* end_out, const std::string& file) {
    std::string open = "<" + tag + ">", close = "</" + tag + ">";
    auto b = xml.find(open, from);
    if (b == std::string::npos) throw ParseError(file + ": missing <" + tag + ">");
    auto e = xml.find(close, b);
    if (e == std::string::npos) throw ParseError(file + ": unterminated <" + tag + ">");
    if (end_out) *end_out = e + close.size();
    return xml.substr(b + open.size(), e - b - open.size());
}

}  // namespace

DatasetIndex load_voc(const std::string& root_path) {
    fs::path root(root_path);
    DatasetIndex idx;
    idx.class_names = read_class_names(root / "classes.txt");
    idx.videos = index_image_dir(root / "images", read_fps_file(root / "fps.txt"));

    for (const VideoEntry& v : idx.videos) {
        for (int t = 0; t < v.num_frames(); ++t) {
            fs::path xml_file = root / "annotations" / (frame_stem(v.id, t) + ".xml");
            if (!fs::exists(xml_file)) continue;
            std::ifstream f(xml_file);
            std::stringstream ss;
            ss << f.rdbuf();
            std::string xml = ss.str();
            std::vector<GroundTruthInstance> gts;
            std::size_t pos = 0;
            while (true) {
                auto ob = xml.find("<object>", pos);
                if (ob == std::string::npos) break;
                auto oe = xml.find("</object>", ob);
                if (oe == std::string::npos) throw ParseError(xml_file.string() + ": unterminated <object>");
                std::string obj = xml.substr(ob, oe - ob);
                pos = oe + 9;

                std::string name = xml_tag(obj, "name", 0, nullptr, xml_file.string());
                auto it = std::find(idx.class_names.begin(), idx.class_names.end(), name);
                if (it == idx.class_names.end())
                    throw ValidationError(xml_file.string() + ": unknown class name '" + name + "'");
                GroundTruthInstance g;
                g.label = static_cast<int>(it - idx.class_names.begin());
                g.video_id = v.id;
                g.timestamp_index = t;
                try {
                    // VOC pixel coordinates are 1-based
                    g.box.x_min = std::stod(xml_tag(obj, "xmin", 0, nullptr, xml_file.string())) - 1;
                    g.box.y_min = std::stod(xml_tag(obj, "ymin", 0, nullptr, xml_file.string())) - 1;
                    g.box.x_max = std::stod(xml_tag(obj, "xmax", 0, nullptr, xml_file.string()));
                    g.box.y_max = std::stod(xml_tag(obj, "ymax", 0, nullptr, xml_file.string()));
                } catch (const std::invalid_argument&) {
                    throw ParseError(xml_file.string() + ": non-numeric bndbox value");
                }
                gts.push_back(g);
            }
            idx.annotations[{v.id, t}] = std::move(gts);
        }
    }
    return idx;
}

void export_voc(const DatasetIndex& index, const std::string& root_path) {
    fs::path root(root_path);
    fs::create_directories(root / "images");
    fs::create_directories(root / "annotations");
    {
        std::ofstream f(root / "classes.txt");
        for (const auto& n : index.class_names) f << n << "\n";
    }
    {
        std::ofstream f(root / "fps.txt");
        for (const auto& v : index.videos) f << v.id << " " << v.fps << "\n";
    }
    for (std::size_t vi = 0; vi < index.videos.size(); ++vi) {
        const VideoEntry& v = index.videos[vi];
        for (int t = 0; t < v.num_frames(); ++t) {
            Frame fr = index.get_frame(static_cast<int>(vi), t);
            std::string stem = frame_stem(v.id, t);
            write_ppm(fr, (root / "images" / (stem + ".ppm")).string());
            std::ofstream f(root / "annotations" / (stem + ".xml"));
            f << "<annotation>\n  <filename>" << stem << ".ppm</filename>\n";
            f << "  <size><width>" << fr.width() << "</width><height>" << fr.height()
              << "</height><depth>3</depth></size>\n";
            for (const auto& g : index.gts(v.id, t)) {
                f << "  <object>\n    <name>" << index.class_names[static_cast<std::size_t>(g.label)]
                  << "</name>\n    <bndbox>"
                  << "<xmin>" << std::lround(g.box.x_min) + 1 << "</xmin>"
                  << "<ymin>" << std::lround(g.box.y_min) + 1 << "</ymin>"
                  << "<xmax>" << std::lround(g.box.x_max) << "</xmax>"
                  << "<ymax>" << std::lround(g.box.y_max) << "</ymax>"
                  << "</bndbox>\n  </object>\n";
            }
            f << "</annotation>\n";
        }
    }
}

// ----------------------------------------------------------- clip sampling

std::vector<ClipSample> sample_clips(const DatasetIndex& index, double target_fps,
                                     int context_radius_n) {
    if (target_fps <= 0) throw InvalidConfig("sample_clips: target_fps must be positive");
    if (context_radius_n < 0) throw InvalidConfig("sample_clips: negative context radius");
    std::vector<ClipSample> samples;
    for (std::size_t vi = 0; vi < index.videos.size(); ++vi) {
        const VideoEntry& v = index.videos[vi];
        int stride = std::max(1, static_cast<int>(std::lround(v.fps / target_fps)));
        for (int t = 0; t < v.num_frames(); t += stride)
            samples.push_back(ClipSample{static_cast<int>(vi), t});
    }
    return samples;
}

FrameWindow window_for_sample(const DatasetIndex& index, const ClipSample& sample,
                              int context_radius_n) {
    const VideoEntry& v = index.videos[static_cast<std::size_t>(sample.video_index)];
    const int n = v.num_frames();
    std::vector<Frame> clip;
    const int lo = std::max(0, sample.t - context_radius_n);
    const int hi = std::min(n - 1, sample.t + context_radius_n);
    clip.reserve(static_cast<std::size_t>(hi - lo + 1));
    for (int t = lo; t <= hi; ++t) clip.push_back(index.get_frame(sample.video_index, t));
    return make_window(clip, sample.t - lo, context_radius_n);
}

// ------------------------------------------------------ synthetic dataset

namespace {

struct Sprite {
    int cls;
    double cx, cy, vx, vy;
    double rx, ry;  // half extents of the ground-truth box
    double r, g, b;
};

void draw_sprite(Tensor& img, const Sprite& s) {
    const int h = img.dim(1), w = img.dim(2);
    const int y0 = std::max(0, static_cast<int>(std::floor(s.cy - s.ry)));
    const int y1 = std::min(h - 1, static_cast<int>(std::ceil(s.cy + s.ry)));
    const int x0 = std::max(0, static_cast<int>(std::floor(s.cx - s.rx)));
    const int x1 = std::min(w - 1, static_cast<int>(std::ceil(s.cx + s.rx)));
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            const double dx = (x + 0.5 - s.cx) / s.rx;
            const double dy = (y + 0.5 - s.cy) / s.ry;
            bool inside = false;
            switch (s.cls) {
                case 0: inside = dx * dx + dy * dy <= 1.0; break;              // disc
                case 1: inside = std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0; break;  // plank
                default:  // wedge: apex at top, base at bottom
                    inside = dy >= -1.0 && dy <= 1.0 && std::abs(dx) <= (dy + 1.0) / 2.0;
                    break;
            }
            if (inside) {
                img.at(0, y, x) = s.r;
                img.at(1, y, x) = s.g;
                img.at(2, y, x) = s.b;
            }
        }
    }
}

void directional_blur(Tensor& img, double angle, int len) {
    if (len < 2) return;
    const int h = img.dim(1), w = img.dim(2);
    const double dx = std::cos(angle), dy = std::sin(angle);
    Tensor out({3, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc[3] = {0, 0, 0};
            for (int k = 0; k < len; ++k) {
                double off = k - (len - 1) / 2.0;
                int sy = std::clamp(static_cast<int>(std::lround(y + dy * off)), 0, h - 1);
                int sx = std::clamp(static_cast<int>(std::lround(x + dx * off)), 0, w - 1);
                for (int c = 0; c < 3; ++c) acc[c] += img.at(c, sy, sx);
            }
            for (int c = 0; c < 3; ++c) out.at(c, y, x) = acc[c] / len;
        }
    img = std::move(out);
}

}  // namespace

DatasetIndex generate_synthetic_dataset(const SyntheticOptions& opts) {
    if (opts.num_videos <= 0 || opts.frames_per_video <= 0 || opts.width <= 0 || opts.height <= 0)
        throw InvalidConfig("generate_synthetic_dataset: sizes must be positive");
    std::mt19937_64 rng(opts.seed);
    auto uni = [&](double a, double b) {
        return a + (b - a) * (static_cast<double>(rng() >> 11) * 0x1.0p-53);
    };
    auto uni_int = [&](int a, int b) {  // inclusive
        return a + static_cast<int>(rng() % static_cast<unsigned long long>(b - a + 1));
    };

    DatasetIndex idx;
    idx.class_names = kDefaultClassNames;
    const double kBaseColors[3][3] = {{0.90, 0.20, 0.20}, {0.20, 0.85, 0.25}, {0.25, 0.35, 0.95}};

    for (int vi = 0; vi < opts.num_videos; ++vi) {
        VideoEntry v;
        v.id = "vid" + std::to_string(vi);
        v.fps = opts.fps;
        v.in_memory = true;

        double bg[3] = {uni(0.35, 0.65), uni(0.35, 0.65), uni(0.35, 0.65)};

        const int num_sprites = uni_int(1, 3);
        std::vector<Sprite> sprites;
        for (int si = 0; si < num_sprites; ++si) {
            Sprite s;
            s.cls = uni_int(0, 2);
            double base = uni(5.0, 9.0);
            s.rx = s.cls == 1 ? base * 1.6 : base;
            s.ry = s.cls == 1 ? base * 0.6 : base;
            s.cx = uni(s.rx + 2, opts.width - s.rx - 2);
            s.cy = uni(s.ry + 2, opts.height - s.ry - 2);
            double speed = uni(opts.speed_min, opts.speed_max);
            double ang = opts.horizontal_only ? 0.0 : uni(0.0, 2 * 3.14159265358979323846);
            s.vx = speed * std::cos(ang);
            s.vy = speed * std::sin(ang);
            const double* bc = kBaseColors[s.cls];
            s.r = std::clamp(bc[0] + uni(-0.08, 0.08), 0.0, 1.0);
            s.g = std::clamp(bc[1] + uni(-0.08, 0.08), 0.0, 1.0);
            s.b = std::clamp(bc[2] + uni(-0.08, 0.08), 0.0, 1.0);
            sprites.push_back(s);
        }

        struct Occluder {
            double x, vx;
            int width;
        };
        std::vector<Occluder> occs;
        if (opts.occluders) {
            const int n_occ = uni_int(1, 2);
            for (int i = 0; i < n_occ; ++i)
                occs.push_back({uni(0, opts.width), uni(2.0, 4.0) * (uni_int(0, 1) ? 1 : -1),
                                uni_int(8, 12)});
        }

        for (int t = 0; t < opts.frames_per_video; ++t) {
            Tensor img({3, opts.height, opts.width});
            for (int c = 0; c < 3; ++c)
                for (int y = 0; y < opts.height; ++y)
                    for (int x = 0; x < opts.width; ++x) img.at(c, y, x) = bg[c];

            std::vector<GroundTruthInstance> gts;
            for (Sprite& s : sprites) {
                draw_sprite(img, s);
                GroundTruthInstance g;
                g.label = s.cls;
                g.video_id = v.id;
                g.timestamp_index = t;
                g.box = BoundingBox{s.cx - s.rx, s.cy - s.ry, s.cx + s.rx, s.cy + s.ry};
                gts.push_back(g);  // occluded sprites keep their ground truth

                s.cx += s.vx;
                s.cy += s.vy;
                if (s.cx - s.rx < 0 || s.cx + s.rx > opts.width) {
                    s.vx = -s.vx;
                    s.cx = std::clamp(s.cx, s.rx, opts.width - s.rx);
                }
                if (s.cy - s.ry < 0 || s.cy + s.ry > opts.height) {
                    s.vy = -s.vy;
                    s.cy = std::clamp(s.cy, s.ry, opts.height - s.ry);
                }
            }

            for (Occluder& o : occs) {
                int x0 = static_cast<int>(std::lround(o.x));
                for (int x = x0; x < x0 + o.width; ++x) {
                    int xx = ((x % opts.width) + opts.width) % opts.width;
                    for (int y = 0; y < opts.height; ++y)
                        for (int c = 0; c < 3; ++c) img.at(c, y, xx) = 0.18;
                }
                o.x += o.vx;
            }

            const int blur_len = uni_int(0, opts.max_blur);
            const double blur_ang = uni(0.0, 3.14159265358979323846);
            directional_blur(img, blur_ang, blur_len);

            // quantize to 8 bits so exported images reload bit-identically
            for (std::size_t i = 0; i < img.size(); ++i)
                img[i] = std::lround(std::clamp(img[i], 0.0, 1.0) * 255.0) / 255.0;

            Frame fr;
            fr.image = std::move(img);
            fr.timestamp_index = t;
            fr.source_video_id = v.id;
            v.frames.push_back(std::move(fr));
            idx.annotations[{v.id, t}] = std::move(gts);
        }
        idx.videos.push_back(std::move(v));
    }
    return idx;
}

}  // namespace vodet
