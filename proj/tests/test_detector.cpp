#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "test_util.hpp"
#include "vodet/detector.hpp"
#include "vodet/errors.hpp"

using namespace vodet;
using testutil::random_tensor;

namespace {

FeatureMap feat(int ch, int h, int w, int stride, std::mt19937_64& rng) {
    return FeatureMap{make_var(random_tensor({ch, h, w}, rng)), stride};
}

std::vector<Detection> random_dets(int n, std::mt19937_64& rng, int num_classes = 3) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<Detection> dets;
    for (int i = 0; i < n; ++i) {
        double x0 = u(rng) * 50, y0 = u(rng) * 50;
        dets.push_back(Detection{BoundingBox{x0, y0, x0 + 1 + u(rng) * 12, y0 + 1 + u(rng) * 12},
                                 static_cast<int>(rng() % static_cast<unsigned>(num_classes)),
                                 u(rng)});
    }
    return dets;
}

// Independent O(n^2) greedy class-wise suppression with the documented
// tie-break order.
std::vector<Detection> nms_oracle(std::vector<Detection> dets, const PostprocessConfig& cfg) {
    std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.box.x_min != b.box.x_min) return a.box.x_min < b.box.x_min;
        return a.box.y_min < b.box.y_min;
    });
    std::vector<Detection> kept;
    std::vector<bool> dead(dets.size(), false);
    for (std::size_t i = 0; i < dets.size(); ++i) {
        if (dead[i]) continue;
        kept.push_back(dets[i]);
        if (static_cast<int>(kept.size()) >= cfg.max_detections) break;
        for (std::size_t j = i + 1; j < dets.size(); ++j)
            if (!dead[j] && dets[j].label == dets[i].label &&
                iou(dets[j].box, dets[i].box) > cfg.nms_iou_threshold)
                dead[j] = true;
    }
    return kept;
}

bool same_dets(const std::vector<Detection>& a, const std::vector<Detection>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i].score != b[i].score || a[i].label != b[i].label ||
            a[i].box.x_min != b[i].box.x_min || a[i].box.y_min != b[i].box.y_min ||
            a[i].box.x_max != b[i].box.x_max || a[i].box.y_max != b[i].box.y_max)
            return false;
    return true;
}

Frame random_frame(int h, int w, std::mt19937_64& rng, int t = 0) {
    Frame f;
    f.image = random_tensor({3, h, w}, rng, 0.0, 1.0);
    f.timestamp_index = t;
    return f;
}

}  // namespace

TEST_CASE("neck shape contract on desk inputs") {
    nn::Rng rng(1);
    Neck neck(NeckConfig{}, rng);
    std::mt19937_64 drng(2);
    MultiScaleFeatures in = {feat(16, 8, 8, 8, drng), feat(32, 4, 4, 16, drng),
                             feat(64, 2, 2, 32, drng)};
    auto out = neck.forward(in, false);
    CHECK(out[0].data->value.dims() == std::vector<int>({32, 8, 8}));
    CHECK(out[1].data->value.dims() == std::vector<int>({32, 4, 4}));
    CHECK(out[2].data->value.dims() == std::vector<int>({32, 2, 2}));
    CHECK(out[0].stride == 8);
    CHECK(out[2].stride == 32);
}

TEST_CASE("neck stays finite on zero inputs") {
    nn::Rng rng(3);
    Neck neck(NeckConfig{}, rng);
    MultiScaleFeatures in = {FeatureMap{make_var(Tensor::zeros({16, 8, 8})), 8},
                             FeatureMap{make_var(Tensor::zeros({32, 4, 4})), 16},
                             FeatureMap{make_var(Tensor::zeros({64, 2, 2})), 32}};
    auto out = neck.forward(in, false);
    for (auto& f : out) CHECK(f.data->value.all_finite());
}

TEST_CASE("perturbing the coarsest input changes the finest output") {
    nn::Rng rng(4);
    Neck neck(NeckConfig{}, rng);
    std::mt19937_64 drng(5);
    MultiScaleFeatures in = {feat(16, 8, 8, 8, drng), feat(32, 4, 4, 16, drng),
                             feat(64, 2, 2, 32, drng)};
    auto base = neck.forward(in, false)[0].data->value;
    Tensor bumped = in[2].data->value;
    bumped[0] += 1.0;
    in[2].data = make_var(bumped);
    auto changed = neck.forward(in, false)[0].data->value;
    double diff = 0;
    for (std::size_t i = 0; i < base.size(); ++i) diff += std::abs(base[i] - changed[i]);
    CHECK(diff > 0.0);
}

TEST_CASE("neck rejects wrong channel counts") {
    nn::Rng rng(6);
    Neck neck(NeckConfig{}, rng);
    std::mt19937_64 drng(7);
    MultiScaleFeatures in = {feat(8, 8, 8, 8, drng), feat(32, 4, 4, 16, drng),
                             feat(64, 2, 2, 32, drng)};
    CHECK_THROWS_AS(neck.forward(in, false), InvalidInputShape);
}

TEST_CASE("head shapes and initialization math") {
    nn::Rng rng(8);
    Head head(32, 3, rng);
    std::mt19937_64 drng(9);
    MultiScaleFeatures in = {feat(32, 8, 8, 8, drng), feat(32, 4, 4, 16, drng),
                             feat(32, 2, 2, 32, drng)};
    auto outs = head.forward(in, false);
    REQUIRE(outs.size() == 3);
    CHECK(outs[0].cls_logits->value.dims() == std::vector<int>({3, 8, 8}));
    CHECK(outs[0].obj_logits->value.dims() == std::vector<int>({1, 8, 8}));
    CHECK(outs[0].box_reg->value.dims() == std::vector<int>({4, 8, 8}));
    CHECK(outs[0].stride == 8);

    // class-prior bias: post-sigmoid scores start at pi = 0.01
    for (auto& o : outs) {
        for (std::size_t i = 0; i < o.obj_logits->value.size(); ++i) {
            double p = 1.0 / (1.0 + std::exp(-o.obj_logits->value[i]));
            CHECK(p == doctest::Approx(0.01).epsilon(0.5));
        }
    }
}

TEST_CASE("zeroed classification weights give post-sigmoid 0.5") {
    CHECK(1.0 / (1.0 + std::exp(-0.0)) == 0.5);
    double bias = -std::log((1.0 - 0.01) / 0.01);
    CHECK(1.0 / (1.0 + std::exp(-bias)) == doctest::Approx(0.01).epsilon(1e-9));
}

TEST_CASE("decode arithmetic on a hand-built cell") {
    HeadOutput o;
    o.stride = 8;
    Tensor cls({3, 1, 1}), obj({1, 1, 1}), reg({4, 1, 1});
    cls.at(0, 0, 0) = 0.3;
    cls.at(1, 0, 0) = 1.2;  // best class -> label 1
    cls.at(2, 0, 0) = -0.5;
    obj[0] = 0.7;
    reg.at(0, 0, 0) = 0.5;  // dx
    reg.at(1, 0, 0) = 0.5;  // dy
    reg.at(2, 0, 0) = 0.0;  // log-w
    reg.at(3, 0, 0) = 0.0;  // log-h
    o.cls_logits = make_var(cls);
    o.obj_logits = make_var(obj);
    o.box_reg = make_var(reg);

    auto dets = decode_boxes({o}, 64, 64);
    REQUIRE(dets.size() == 1);
    CHECK(dets[0].label == 1);
    CHECK(dets[0].box.x_min == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(dets[0].box.y_min == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(dets[0].box.x_max == doctest::Approx(8.0).epsilon(1e-12));
    CHECK(dets[0].box.y_max == doctest::Approx(8.0).epsilon(1e-12));
    double expect = (1.0 / (1.0 + std::exp(-0.7))) * (1.0 / (1.0 + std::exp(-1.2)));
    CHECK(dets[0].score == doctest::Approx(expect).epsilon(1e-12));

    // exp law: log-w = ln 2 at stride 8 -> width 16 (interior cell, no clipping)
    HeadOutput p;
    p.stride = 8;
    p.cls_logits = make_var(Tensor::zeros({3, 2, 2}));
    p.obj_logits = make_var(Tensor::zeros({1, 2, 2}));
    Tensor reg2 = Tensor::zeros({4, 2, 2});
    reg2.at(0, 1, 1) = 0.5;
    reg2.at(1, 1, 1) = 0.5;
    reg2.at(2, 1, 1) = std::log(2.0);
    p.box_reg = make_var(reg2);
    auto d2 = decode_boxes({p}, 64, 64);
    REQUIRE(d2.size() == 4);
    // cell (1,1): center (12,12), width 16, height 8
    CHECK(d2[3].box.x_max - d2[3].box.x_min == doctest::Approx(16.0).epsilon(1e-9));
    CHECK(d2[3].box.y_max - d2[3].box.y_min == doctest::Approx(8.0).epsilon(1e-9));
}

TEST_CASE("decode matches an independent per-cell recomputation") {
    std::mt19937_64 rng(10);
    HeadOutput o;
    o.stride = 16;
    const int h = 3, w = 4;
    o.cls_logits = make_var(random_tensor({3, h, w}, rng, -2.0, 2.0));
    o.obj_logits = make_var(random_tensor({1, h, w}, rng, -2.0, 2.0));
    o.box_reg = make_var(random_tensor({4, h, w}, rng, -1.0, 1.0));
    const int iw = 64, ih = 48;
    auto dets = decode_boxes({o}, iw, ih);
    REQUIRE(dets.size() == static_cast<std::size_t>(h * w));

    std::size_t k = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x, ++k) {
            int best = 0;
            for (int c = 1; c < 3; ++c)
                if (o.cls_logits->value.at(c, y, x) > o.cls_logits->value.at(best, y, x)) best = c;
            double cx = (x + o.box_reg->value.at(0, y, x)) * 16.0;
            double cy = (y + o.box_reg->value.at(1, y, x)) * 16.0;
            double bw = std::exp(o.box_reg->value.at(2, y, x)) * 16.0;
            double bh = std::exp(o.box_reg->value.at(3, y, x)) * 16.0;
            double score = (1.0 / (1.0 + std::exp(-o.obj_logits->value[static_cast<std::size_t>(
                               y * w + x)]))) *
                           (1.0 / (1.0 + std::exp(-o.cls_logits->value.at(best, y, x))));
            CHECK(dets[k].label == best);
            CHECK(dets[k].score == doctest::Approx(score).epsilon(1e-12));
            CHECK(dets[k].box.x_min ==
                  doctest::Approx(std::clamp(cx - bw / 2, 0.0, double(iw))).epsilon(1e-9));
            CHECK(dets[k].box.y_max ==
                  doctest::Approx(std::clamp(cy + bh / 2, 0.0, double(ih))).epsilon(1e-9));
        }
}

TEST_CASE("nms basics") {
    PostprocessConfig cfg;
    cfg.nms_iou_threshold = 0.5;
    std::vector<Detection> one = {Detection{BoundingBox{0, 0, 10, 10}, 1, 0.9}};
    auto kept = nms(one, cfg);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].score == 0.9);

    // overlapping same-class pair: only the stronger survives
    std::vector<Detection> pair = {Detection{BoundingBox{0, 0, 10, 10}, 0, 0.9},
                                   Detection{BoundingBox{1, 0, 11, 10}, 0, 0.8}};
    CHECK(iou(pair[0].box, pair[1].box) > 0.5);
    kept = nms(pair, cfg);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].score == 0.9);

    // same boxes, different classes: both survive
    pair[1].label = 2;
    kept = nms(pair, cfg);
    CHECK(kept.size() == 2);
}

TEST_CASE("nms matches the brute-force oracle on random sets") {
    std::mt19937_64 rng(11);
    PostprocessConfig cfg;
    for (int trial = 0; trial < 100; ++trial) {
        cfg.nms_iou_threshold = 0.3 + 0.4 * (trial % 5) / 4.0;
        cfg.max_detections = 1 + static_cast<int>(rng() % 25);
        auto dets = random_dets(static_cast<int>(rng() % 25), rng);
        // inject exact score ties to exercise the tie-break keys
        if (dets.size() > 3) {
            dets[1].score = dets[0].score;
            dets[2].score = dets[0].score;
        }
        REQUIRE(same_dets(nms(dets, cfg), nms_oracle(dets, cfg)));
    }
}

TEST_CASE("nms is idempotent") {
    std::mt19937_64 rng(12);
    PostprocessConfig cfg;
    for (int trial = 0; trial < 20; ++trial) {
        auto dets = random_dets(20, rng);
        auto once = nms(dets, cfg);
        REQUIRE(same_dets(nms(once, cfg), once));
    }
}

TEST_CASE("N=0 detect equals the single-frame pipeline bit-for-bit") {
    DetectionModel model(ModelConfig::desk(0), 123);
    std::mt19937_64 rng(13);
    for (int trial = 0; trial < 5; ++trial) {
        Frame f = random_frame(64, 64, rng);
        std::vector<Frame> clip = {f};
        auto a = model.detect(make_window(clip, 0, 0));
        auto b = model.detect_single_frame(f);
        REQUIRE(same_dets(a, b));
    }
}

TEST_CASE("untrained prior-initialized model yields only low scores") {
    DetectionModel model(ModelConfig::desk(1), 7);
    std::mt19937_64 rng(14);
    std::vector<Frame> clip;
    for (int t = 0; t < 3; ++t) clip.push_back(random_frame(64, 64, rng, t));
    auto dets = model.detect(make_window(clip, 1, 1));
    for (auto& d : dets) {
        CHECK(d.score < 0.5);
        CHECK(std::isfinite(d.score));
        CHECK(d.box.valid());
    }
}

TEST_CASE("raising the score threshold only removes detections") {
    DetectionModel model(ModelConfig::desk(0), 21);
    std::mt19937_64 rng(15);
    HeadOutput o;
    o.stride = 8;
    o.cls_logits = make_var(random_tensor({3, 8, 8}, rng, -3.0, 3.0));
    o.obj_logits = make_var(random_tensor({1, 8, 8}, rng, -3.0, 3.0));
    o.box_reg = make_var(random_tensor({4, 8, 8}, rng, -1.0, 1.0));
    auto all = decode_boxes({o}, 64, 64);
    PostprocessConfig lo, hi;
    lo.score_threshold = 0.05;
    hi.score_threshold = 0.3;
    auto keep_above = [&](double thr) {
        std::vector<Detection> v;
        for (auto& d : all)
            if (d.score >= thr && d.box.valid()) v.push_back(d);
        return nms(v, lo);
    };
    auto a = keep_above(lo.score_threshold);
    auto b = keep_above(hi.score_threshold);
    CHECK(b.size() <= a.size());
    for (auto& d : b) {
        bool found = false;
        for (auto& e : a)
            if (e.score == d.score && e.label == d.label && e.box.x_min == d.box.x_min)
                found = true;
        CHECK(found);
    }
}
