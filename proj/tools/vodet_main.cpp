// vodet: flow-guided temporal-aggregation video object detection CLI.
//
// Subcommands:
//   make-synthetic  generate a moving-sprites dataset and export it
//   train           train a detector, write checkpoint.bin + loss.csv
//   eval            run detection over a dataset, write metric reports
//   render          write annotated frames (optionally side-by-side compare)
//
// Exit codes: 0 ok, 1 configuration error, 2 data error, 3 training
// divergence, 4 checkpoint mismatch.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "vodet/datasets.hpp"
#include "vodet/detector.hpp"
#include "vodet/errors.hpp"
#include "vodet/evaluation.hpp"
#include "vodet/training.hpp"

namespace fs = std::filesystem;
using namespace vodet;

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitData = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitCheckpoint = 4;

struct DatasetOptions {
    std::string path;
    std::string format = "yolo";  // yolo | coco | voc | synthetic
    // synthetic-only knobs
    unsigned long long synth_seed = 0;
    int synth_videos = 8;
    int synth_frames = 40;
    int synth_size = 64;
    double synth_fps = 10.0;
    int synth_max_blur = 3;
    bool synth_occluders = false;
    double synth_speed_min = 1.0, synth_speed_max = 3.0;
    bool synth_horizontal_only = false;
};

struct ModelOptions {
    std::string preset = "desk";  // desk | paper
    int context_radius = 2;
    unsigned long long model_seed = 0;
    double score_threshold = -1.0;  // <0: keep preset default
    double nms_iou_threshold = -1.0;
};

// Applies a key=value config file to a subcommand after parsing. Keys match
// long option names without the leading dashes; values from the command line
// take precedence (config only fills options the user did not pass).
void apply_config_file(CLI::App* cmd, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidConfig("cannot open config file: " + path);
    std::string line;
    int lineno = 0;
    auto trim = [](std::string s) {
        const char* ws = " \t\r\n";
        s.erase(0, s.find_first_not_of(ws));
        const auto last = s.find_last_not_of(ws);
        s.erase(last == std::string::npos ? 0 : last + 1);
        return s;
    };
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw InvalidConfig(path + ":" + std::to_string(lineno) + ": expected key=value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        CLI::Option* opt = nullptr;
        try {
            opt = cmd->get_option("--" + key);
        } catch (const CLI::OptionNotFound&) {
            throw InvalidConfig(path + ":" + std::to_string(lineno) + ": unknown option '" + key +
                                "'");
        }
        if (opt->count() > 0) continue;  // command-line flag wins
        opt->add_result(value);
        opt->run_callback();
    }
}

void add_config_flag(CLI::App* cmd, std::string& path) {
    cmd->add_option("--config", path, "key=value config file (flags take precedence)");
}

void require_value(const std::string& value, const std::string& flag) {
    if (value.empty()) throw InvalidConfig(flag + " is required (flag or config file)");
}

void add_dataset_flags(CLI::App* cmd, DatasetOptions& d, bool allow_synthetic) {
    cmd->add_option("--dataset", d.path,
                    allow_synthetic ? "Dataset root (or 'synthetic')" : "Dataset root");
    cmd->add_option("--format", d.format, "Annotation format: yolo|coco|voc (default yolo)");
    if (allow_synthetic) {
        cmd->add_option("--synth-seed", d.synth_seed, "Synthetic dataset seed");
        cmd->add_option("--synth-videos", d.synth_videos, "Synthetic video count");
        cmd->add_option("--synth-frames", d.synth_frames, "Frames per synthetic video");
        cmd->add_option("--synth-size", d.synth_size, "Synthetic frame width/height");
        cmd->add_option("--synth-fps", d.synth_fps, "Synthetic native fps");
        cmd->add_option("--synth-max-blur", d.synth_max_blur, "Max motion-blur length");
        cmd->add_flag("--synth-occluders", d.synth_occluders, "Add unannotated occluder bars");
        cmd->add_option("--synth-speed-min", d.synth_speed_min, "Min sprite speed (px/frame)");
        cmd->add_option("--synth-speed-max", d.synth_speed_max, "Max sprite speed (px/frame)");
        cmd->add_flag("--synth-horizontal", d.synth_horizontal_only, "Horizontal motion only");
    }
}

void add_model_flags(CLI::App* cmd, ModelOptions& m) {
    cmd->add_option("--preset", m.preset, "Model preset: desk|paper (default desk)");
    cmd->add_option("--context-radius", m.context_radius,
                    "Temporal context radius N (default 2; 0 = single frame)");
    cmd->add_option("--model-seed", m.model_seed, "Parameter initialization seed");
    cmd->add_option("--score-thr", m.score_threshold, "Detection score threshold");
    cmd->add_option("--nms-iou-thr", m.nms_iou_threshold, "NMS IoU threshold");
}

SyntheticOptions synthetic_options(const DatasetOptions& d) {
    SyntheticOptions o;
    o.seed = d.synth_seed;
    o.num_videos = d.synth_videos;
    o.frames_per_video = d.synth_frames;
    o.width = o.height = d.synth_size;
    o.fps = d.synth_fps;
    o.max_blur = d.synth_max_blur;
    o.occluders = d.synth_occluders;
    o.speed_min = d.synth_speed_min;
    o.speed_max = d.synth_speed_max;
    o.horizontal_only = d.synth_horizontal_only;
    return o;
}

DatasetIndex load_dataset(const DatasetOptions& d) {
    if (d.path == "synthetic" || d.format == "synthetic")
        return generate_synthetic_dataset(synthetic_options(d));
    if (d.format == "yolo") return load_yolo(d.path);
    if (d.format == "voc") return load_voc(d.path);
    if (d.format == "coco") {
        fs::path p(d.path);
        if (fs::is_directory(p)) p /= "annotations.json";
        return load_coco(p.string());
    }
    throw InvalidConfig("unknown dataset format '" + d.format + "'");
}

DetectionModel build_model(const ModelOptions& m, int num_classes) {
    if (m.context_radius < 0) throw InvalidConfig("context radius must be >= 0");
    ModelConfig cfg;
    if (m.preset == "desk") cfg = ModelConfig::desk(m.context_radius);
    else if (m.preset == "paper") cfg = ModelConfig::paper(m.context_radius);
    else throw InvalidConfig("unknown model preset '" + m.preset + "'");
    cfg.num_classes = num_classes;
    if (m.score_threshold >= 0) cfg.post.score_threshold = m.score_threshold;
    if (m.nms_iou_threshold >= 0) cfg.post.nms_iou_threshold = m.nms_iou_threshold;
    return DetectionModel(cfg, m.model_seed);
}

// class colors for rendered boxes (RGB in [0,1])
const double kClassColors[][3] = {{1.0, 0.1, 0.1}, {0.1, 1.0, 0.1}, {0.15, 0.3, 1.0},
                                  {1.0, 1.0, 0.1}, {1.0, 0.1, 1.0}, {0.1, 1.0, 1.0}};

void draw_box(Tensor& img, const BoundingBox& b, int label, double score) {
    const int h = img.dim(1), w = img.dim(2);
    const double* col = kClassColors[label % 6];
    const int x0 = std::clamp(static_cast<int>(std::lround(b.x_min)), 0, w - 1);
    const int x1 = std::clamp(static_cast<int>(std::lround(b.x_max)), 0, w - 1);
    const int y0 = std::clamp(static_cast<int>(std::lround(b.y_min)), 0, h - 1);
    const int y1 = std::clamp(static_cast<int>(std::lround(b.y_max)), 0, h - 1);
    auto put = [&](int y, int x) {
        for (int c = 0; c < 3; ++c) img.at(c, y, x) = col[c];
    };
    for (int x = x0; x <= x1; ++x) {
        put(y0, x);
        put(y1, x);
    }
    for (int y = y0; y <= y1; ++y) {
        put(y, x0);
        put(y, x1);
    }
    // confidence bar: filled stripe under the top edge, length ~ score
    const int bar = static_cast<int>(std::lround(score * (x1 - x0)));
    for (int x = x0; x <= std::min(x0 + bar, x1); ++x)
        if (y0 + 1 <= y1) put(y0 + 1, x);
}

struct FrameDetections {
    std::vector<std::vector<Detection>> per_frame;
    std::vector<std::vector<GroundTruthInstance>> gts_per_frame;
    std::vector<ClipSample> samples;
};

FrameDetections detect_dataset(DetectionModel& model, const DatasetIndex& data,
                               double target_fps) {
    const int n = model.aggregator().context_radius_n();
    FrameDetections out;
    out.samples = sample_clips(data, target_fps, n);
    for (const ClipSample& s : out.samples) {
        FrameWindow w = window_for_sample(data, s, n);
        out.per_frame.push_back(model.detect(w));
        const std::string& vid = data.videos[static_cast<std::size_t>(s.video_index)].id;
        out.gts_per_frame.push_back(data.gts(vid, s.t));
    }
    return out;
}

int cmd_make_synthetic(const DatasetOptions& d, const std::string& out_dir,
                       const std::string& export_format) {
    DatasetIndex idx = generate_synthetic_dataset(synthetic_options(d));
    if (export_format == "yolo") export_yolo(idx, out_dir);
    else if (export_format == "coco") export_coco(idx, out_dir);
    else if (export_format == "voc") export_voc(idx, out_dir);
    else throw InvalidConfig("unknown export format '" + export_format + "'");
    std::cout << "wrote " << idx.videos.size() << " videos, " << idx.total_instances()
              << " annotations to " << out_dir << "\n";
    return 0;
}

int cmd_train(const DatasetOptions& d, const ModelOptions& m, const TrainConfig& tcfg,
              const std::string& out_dir) {
    tcfg.validate();

    DatasetIndex data = load_dataset(d);

    DetectionModel model = build_model(m, static_cast<int>(
        data.class_names.empty() ? 3 : data.class_names.size()));
    std::vector<LossRow> history = train(model, data, tcfg);

    fs::create_directories(out_dir);
    nn::ParamStore store = model.params();
    nn::save_checkpoint(store, (fs::path(out_dir) / "checkpoint.bin").string());
    write_loss_csv(history, (fs::path(out_dir) / "loss.csv").string());
    std::cout << "trained " << history.size() << " iterations; final loss "
              << (history.empty() ? 0.0 : history.back().loss.total) << "\n";
    return 0;
}

int cmd_eval(const DatasetOptions& d, const ModelOptions& m, const std::string& checkpoint,
             const std::string& out_dir, double target_fps, double confusion_iou,
             double confusion_score, bool export_predictions) {
    DatasetIndex data = load_dataset(d);

    DetectionModel model = build_model(m, static_cast<int>(
        data.class_names.empty() ? 3 : data.class_names.size()));
    nn::ParamStore store = model.params();
    nn::load_checkpoint(store, checkpoint);

    FrameDetections fd = detect_dataset(model, data, target_fps);
    EvalConfig ecfg;
    ecfg.num_classes = static_cast<int>(data.class_names.size());
    ecfg.confusion_iou_threshold = confusion_iou;
    ecfg.confusion_score_threshold = confusion_score;
    EvalReport report = evaluate(fd.per_frame, fd.gts_per_frame, ecfg);

    fs::create_directories(out_dir);
    write_report_text(report, data.class_names, (fs::path(out_dir) / "eval_report.txt").string());
    write_report_kv(report, data.class_names, (fs::path(out_dir) / "eval_report.kv").string());
    write_confusion_csv(report, data.class_names, (fs::path(out_dir) / "confusion.csv").string());
    if (export_predictions)
        export_predictions_coco(fd.per_frame, (fs::path(out_dir) / "predictions.json").string());
    std::cout << "mAP " << report.map << "  mAP@50 " << report.map50 << "  (" << fd.samples.size()
              << " frames)\n";
    return 0;
}

int cmd_render(const DatasetOptions& d, const ModelOptions& m, const std::string& checkpoint,
               const std::string& compare_checkpoint, const std::string& out_dir,
               double target_fps) {
    DatasetIndex data = load_dataset(d);
    const int nc = static_cast<int>(data.class_names.empty() ? 3 : data.class_names.size());

    DetectionModel model = build_model(m, nc);
    nn::ParamStore store = model.params();
    nn::load_checkpoint(store, checkpoint);

    std::unique_ptr<DetectionModel> compare;
    if (!compare_checkpoint.empty()) {
        ModelOptions m0 = m;
        m0.context_radius = 0;
        compare = std::make_unique<DetectionModel>(build_model(m0, nc));
        nn::ParamStore cstore = compare->params();
        nn::load_checkpoint(cstore, compare_checkpoint);
    }

    fs::create_directories(out_dir);
    FrameDetections fd = detect_dataset(model, data, target_fps);
    for (std::size_t i = 0; i < fd.samples.size(); ++i) {
        const ClipSample& s = fd.samples[i];
        const VideoEntry& v = data.videos[static_cast<std::size_t>(s.video_index)];
        Frame frame = data.get_frame(s.video_index, s.t);

        Tensor canvas = frame.image;
        for (const Detection& det : fd.per_frame[i]) draw_box(canvas, det.box, det.label, det.score);

        if (compare) {
            // side-by-side: single-frame model on the left, main model right
            FrameWindow w0 = make_window({frame}, 0, 0);
            auto dets0 = compare->detect(w0);
            Tensor left = frame.image;
            for (const Detection& det : dets0) draw_box(left, det.box, det.label, det.score);
            const int h = canvas.dim(1), w = canvas.dim(2);
            Tensor joined({3, h, 2 * w});
            for (int c = 0; c < 3; ++c)
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x) {
                        joined.at(c, y, x) = left.at(c, y, x);
                        joined.at(c, y, x + w) = canvas.at(c, y, x);
                    }
            canvas = std::move(joined);
        }

        char stem[64];
        std::snprintf(stem, sizeof stem, "%s_%06d.ppm", v.id.c_str(), s.t);
        Frame out;
        out.image = std::move(canvas);
        write_ppm(out, (fs::path(out_dir) / stem).string());
    }
    std::cout << "rendered " << fd.samples.size() << " frames to " << out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"flow-guided temporal-aggregation video object detector"};
    app.require_subcommand(1);

    // ---- make-synthetic
    DatasetOptions synth_d;
    std::string synth_out, synth_fmt = "yolo";
    std::string mk_cfg;
    auto* mk = app.add_subcommand("make-synthetic", "Generate a moving-sprites dataset");
    add_config_flag(mk, mk_cfg);
    mk->add_option("--out-dir", synth_out, "Output directory");
    mk->add_option("--export-format", synth_fmt, "Export format: yolo|coco|voc");
    mk->add_option("--synth-seed", synth_d.synth_seed, "Dataset seed");
    mk->add_option("--synth-videos", synth_d.synth_videos, "Video count");
    mk->add_option("--synth-frames", synth_d.synth_frames, "Frames per video");
    mk->add_option("--synth-size", synth_d.synth_size, "Frame width/height");
    mk->add_option("--synth-fps", synth_d.synth_fps, "Native fps");
    mk->add_option("--synth-max-blur", synth_d.synth_max_blur, "Max motion-blur length");
    mk->add_flag("--synth-occluders", synth_d.synth_occluders, "Add unannotated occluder bars");
    mk->add_option("--synth-speed-min", synth_d.synth_speed_min, "Min sprite speed");
    mk->add_option("--synth-speed-max", synth_d.synth_speed_max, "Max sprite speed");
    mk->add_flag("--synth-horizontal", synth_d.synth_horizontal_only, "Horizontal motion only");

    // ---- train
    DatasetOptions train_d;
    ModelOptions train_m;
    TrainConfig tcfg;
    std::string train_out;
    std::string tr_cfg;
    auto* tr = app.add_subcommand("train", "Train a detector");
    add_config_flag(tr, tr_cfg);
    add_dataset_flags(tr, train_d, true);
    add_model_flags(tr, train_m);
    tr->add_option("--out-dir", train_out, "Output directory");
    tr->add_option("--lr", tcfg.learning_rate, "Base learning rate (default 1e-4)");
    tr->add_option("--momentum", tcfg.momentum, "SGD momentum (default 0.9)");
    tr->add_option("--weight-decay", tcfg.weight_decay, "Decoupled weight decay (default 1e-5)");
    tr->add_option("--epochs", tcfg.epochs, "Training epochs (default 3)");
    tr->add_option("--warmup-iters", tcfg.warmup_iters, "Linear warmup iterations (default 500)");
    tr->add_option("--final-lr-fraction", tcfg.final_lr_fraction,
                   "Cosine-decay floor as a fraction of --lr (default 0.05; 1 = constant)");
    tr->add_option("--max-grad-norm", tcfg.max_grad_norm,
                   "Global-norm gradient clip (default 10; 0 disables)");
    tr->add_option("--seed", tcfg.seed, "Training shuffle seed");
    tr->add_option("--target-fps", tcfg.target_fps, "Clip sampling rate (default 10)");
    tr->add_flag("--flip", tcfg.horizontal_flip, "Random horizontal flip augmentation");

    // ---- eval
    DatasetOptions eval_d;
    ModelOptions eval_m;
    std::string eval_ckpt, eval_out;
    double eval_fps = 10.0, eval_conf_iou = 0.5, eval_conf_score = 0.3;
    bool eval_export = false;
    std::string ev_cfg;
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
    add_config_flag(ev, ev_cfg);
    add_dataset_flags(ev, eval_d, true);
    add_model_flags(ev, eval_m);
    ev->add_option("--checkpoint", eval_ckpt, "Checkpoint file");
    ev->add_option("--out-dir", eval_out, "Output directory");
    ev->add_option("--target-fps", eval_fps, "Clip sampling rate (default 10)");
    ev->add_option("--iou-thr", eval_conf_iou, "Confusion-matrix IoU threshold (default 0.5)");
    ev->add_option("--conf-score-thr", eval_conf_score,
                   "Confusion-matrix score threshold (default 0.3)");
    ev->add_flag("--export-predictions", eval_export, "Write COCO-format predictions.json");

    // ---- render
    DatasetOptions ren_d;
    ModelOptions ren_m;
    std::string ren_ckpt, ren_out, ren_compare;
    double ren_fps = 10.0;
    std::string rn_cfg;
    auto* rn = app.add_subcommand("render", "Write annotated frames");
    add_config_flag(rn, rn_cfg);
    add_dataset_flags(rn, ren_d, true);
    add_model_flags(rn, ren_m);
    ren_m.score_threshold = 0.3;  // visualization default
    rn->add_option("--checkpoint", ren_ckpt, "Checkpoint file");
    rn->add_option("--out-dir", ren_out, "Output directory");
    rn->add_option("--target-fps", ren_fps, "Clip sampling rate (default 10)");
    rn->add_option("--compare", ren_compare,
                   "Single-frame (N=0) checkpoint for side-by-side rendering");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : kExitConfig;
    }

    try {
        if (mk->parsed()) {
            if (!mk_cfg.empty()) apply_config_file(mk, mk_cfg);
            require_value(synth_out, "--out-dir");
            return cmd_make_synthetic(synth_d, synth_out, synth_fmt);
        }
        if (tr->parsed()) {
            if (!tr_cfg.empty()) apply_config_file(tr, tr_cfg);
            require_value(train_d.path, "--dataset");
            require_value(train_out, "--out-dir");
            return cmd_train(train_d, train_m, tcfg, train_out);
        }
        if (ev->parsed()) {
            if (!ev_cfg.empty()) apply_config_file(ev, ev_cfg);
            require_value(eval_d.path, "--dataset");
            require_value(eval_ckpt, "--checkpoint");
            require_value(eval_out, "--out-dir");
            return cmd_eval(eval_d, eval_m, eval_ckpt, eval_out, eval_fps, eval_conf_iou,
                            eval_conf_score, eval_export);
        }
        if (rn->parsed()) {
            if (!rn_cfg.empty()) apply_config_file(rn, rn_cfg);
            require_value(ren_d.path, "--dataset");
            require_value(ren_ckpt, "--checkpoint");
            require_value(ren_out, "--out-dir");
            return cmd_render(ren_d, ren_m, ren_ckpt, ren_compare, ren_out, ren_fps);
        }
    } catch (const InvalidConfig& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const CheckpointError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitCheckpoint;
    } catch (const DivergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitDivergence;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return 0;
}
