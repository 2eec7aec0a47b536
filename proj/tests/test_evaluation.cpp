#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>

#include "vodet/errors.hpp"
#include "vodet/evaluation.hpp"

using namespace vodet;
namespace fs = std::filesystem;

namespace {

Detection det(double x0, double y0, double x1, double y1, int label, double score) {
    return Detection{BoundingBox{x0, y0, x1, y1}, label, score};
}

GroundTruthInstance gt(double x0, double y0, double x1, double y1, int label) {
    GroundTruthInstance g;
    g.box = BoundingBox{x0, y0, x1, y1};
    g.label = label;
    return g;
}

// Independent re-implementation of the greedy COCO-style matcher.
std::vector<MatchRecord> match_oracle(const std::vector<Detection>& dets,
                                      const std::vector<GroundTruthInstance>& gts,
                                      double thr) {
    std::vector<int> order(dets.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return dets[a].score > dets[b].score; });
    std::vector<bool> gt_used(gts.size(), false);
    std::vector<MatchRecord> out;
    for (int di : order) {
        MatchRecord r;
        r.det_index = di;
        r.score = dets[di].score;
        r.label = dets[di].label;
        double best = -1;
        int best_gt = -1;
        for (std::size_t gi = 0; gi < gts.size(); ++gi) {
            if (gt_used[gi] || gts[gi].label != dets[di].label) continue;
            double v = iou(dets[di].box, gts[gi].box);
            if (v >= thr && v > best) {
                best = v;
                best_gt = static_cast<int>(gi);
            }
        }
        if (best_gt >= 0) {
            gt_used[best_gt] = true;
            r.gt_index = best_gt;
            r.iou = best;
            r.is_true_positive = true;
        }
        out.push_back(r);
    }
    return out;
}

std::vector<Detection> random_dets(std::mt19937_64& rng, int max_n) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<Detection> v;
    int n = static_cast<int>(rng() % static_cast<unsigned>(max_n + 1));
    for (int i = 0; i < n; ++i) {
        double x0 = u(rng) * 20, y0 = u(rng) * 20;
        v.push_back(det(x0, y0, x0 + 2 + u(rng) * 8, y0 + 2 + u(rng) * 8,
                        static_cast<int>(rng() % 3), u(rng)));
    }
    return v;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("exact detection on one ground truth is a true positive") {
    auto recs = match_detections({det(0, 0, 10, 10, 1, 0.9)}, {gt(0, 0, 10, 10, 1)}, 0.5);
    REQUIRE(recs.size() == 1);
    CHECK(recs[0].is_true_positive);
    CHECK(recs[0].iou == 1.0);
    CHECK(recs[0].gt_index == 0);
}

TEST_CASE("double detection: second hit on the same gt is a false positive") {
    auto recs = match_detections({det(0, 0, 10, 10, 0, 0.9), det(0.5, 0, 10.5, 10, 0, 0.8)},
                                 {gt(0, 0, 10, 10, 0)}, 0.5);
    REQUIRE(recs.size() == 2);
    CHECK(recs[0].is_true_positive);
    CHECK(recs[0].score == 0.9);
    CHECK_FALSE(recs[1].is_true_positive);
}

TEST_CASE("class mismatch prevents matching") {
    auto recs = match_detections({det(0, 0, 10, 10, 2, 0.9)}, {gt(0, 0, 10, 10, 1)}, 0.5);
    REQUIRE(recs.size() == 1);
    CHECK_FALSE(recs[0].is_true_positive);
}

TEST_CASE("matcher rejects invalid thresholds") {
    CHECK_THROWS_AS(match_detections({}, {}, 0.0), InvalidConfig);
    CHECK_THROWS_AS(match_detections({}, {}, 1.5), InvalidConfig);
}

TEST_CASE("matcher agrees with the brute-force oracle on random instances") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 300; ++trial) {
        auto dets = random_dets(rng, 6);
        std::vector<GroundTruthInstance> gts;
        int ng = static_cast<int>(rng() % 5);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (int i = 0; i < ng; ++i) {
            double x0 = u(rng) * 20, y0 = u(rng) * 20;
            gts.push_back(gt(x0, y0, x0 + 2 + u(rng) * 8, y0 + 2 + u(rng) * 8,
                             static_cast<int>(rng() % 3)));
        }
        double thr = 0.3 + 0.4 * u(rng);
        auto a = match_detections(dets, gts, thr);
        auto b = match_oracle(dets, gts, thr);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            REQUIRE(a[i].det_index == b[i].det_index);
            REQUIRE(a[i].gt_index == b[i].gt_index);
            REQUIRE(a[i].is_true_positive == b[i].is_true_positive);
            REQUIRE(a[i].iou == doctest::Approx(b[i].iou).epsilon(1e-12));
        }
    }
}

TEST_CASE("average precision: trivial anchors") {
    CHECK(average_precision({true, true, true}, 3) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(average_precision({}, 2) == 0.0);
    CHECK(average_precision({false, false}, 2) == 0.0);
    CHECK_THROWS_AS(average_precision({true}, 0), InvalidConfig);
}

TEST_CASE("average precision: hand-computed 101-point case") {
    // ranked TP, FP, TP over 2 GTs:
    //   recall 0.5 at precision 1.0; recall 1.0 at precision 2/3
    //   envelope: 1.0 for r <= 0.5 (51 sample points), 2/3 above (50 points)
    double expect = (51.0 * 1.0 + 50.0 * (2.0 / 3.0)) / 101.0;
    CHECK(average_precision({true, false, true}, 2) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("appending a lowest-ranked false positive never increases AP") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 100; ++trial) {
        int n = 1 + static_cast<int>(rng() % 8);
        std::vector<bool> flags;
        int tp = 0;
        for (int i = 0; i < n; ++i) {
            bool t = rng() % 2;
            flags.push_back(t);
            tp += t;
        }
        int num_gt = tp + static_cast<int>(rng() % 3);
        if (num_gt == 0) continue;
        double base = average_precision(flags, num_gt);
        flags.push_back(false);
        CHECK(average_precision(flags, num_gt) <= base + 1e-12);
    }
}

TEST_CASE("perfect predictions give mAP 1 and a diagonal confusion matrix") {
    std::vector<std::vector<GroundTruthInstance>> gts = {
        {gt(0, 0, 10, 10, 0), gt(20, 20, 30, 32, 1)}, {gt(5, 5, 15, 18, 2)}};
    std::vector<std::vector<Detection>> dets;
    for (auto& frame : gts) {
        std::vector<Detection> d;
        for (auto& g : frame)
            d.push_back(det(g.box.x_min, g.box.y_min, g.box.x_max, g.box.y_max, g.label, 1.0));
        dets.push_back(d);
    }
    auto r = evaluate(dets, gts, EvalConfig{});
    CHECK(r.map == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(r.map50 == doctest::Approx(1.0).epsilon(1e-9));
    for (int c = 0; c < 3; ++c) {
        CHECK(r.per_class_ap50[static_cast<std::size_t>(c)] == doctest::Approx(1.0).epsilon(1e-9));
        for (int k = 0; k < 4; ++k)
            CHECK(r.confusion[static_cast<std::size_t>(c)][static_cast<std::size_t>(k)] ==
                  doctest::Approx(c == k ? 1.0 : 0.0).epsilon(1e-9));
    }
}

TEST_CASE("empty predictions give zero AP and background-column confusion") {
    std::vector<std::vector<GroundTruthInstance>> gts = {{gt(0, 0, 10, 10, 0)},
                                                         {gt(5, 5, 15, 15, 1)}};
    std::vector<std::vector<Detection>> dets = {{}, {}};
    auto r = evaluate(dets, gts, EvalConfig{});
    CHECK(r.map == 0.0);
    CHECK(r.map50 == 0.0);
    CHECK(r.confusion[0][3] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.confusion[1][3] == doctest::Approx(1.0).epsilon(1e-12));
    // class 2 has no instances: AP undefined, excluded from the means
    CHECK(r.per_class_ap[2] == -1.0);
}

TEST_CASE("background row splits evenly across three spurious detections") {
    std::vector<std::vector<GroundTruthInstance>> gts = {{}};
    std::vector<std::vector<Detection>> dets = {
        {det(0, 0, 5, 5, 0, 0.9), det(10, 10, 15, 15, 1, 0.9), det(20, 20, 25, 25, 2, 0.9)}};
    auto counts = confusion_matrix_counts(dets, gts, 3, 0.5, 0.3);
    CHECK(counts[3][0] == 1);
    CHECK(counts[3][1] == 1);
    CHECK(counts[3][2] == 1);
    CHECK(counts[3][3] == 0);
    auto norm = normalize_confusion(counts);
    for (int c = 0; c < 3; ++c)
        CHECK(norm[3][static_cast<std::size_t>(c)] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("label-agnostic confusion records cross-class mistakes") {
    // detection sits on a class-0 gt but claims class 2
    std::vector<std::vector<GroundTruthInstance>> gts = {{gt(0, 0, 10, 10, 0)}};
    std::vector<std::vector<Detection>> dets = {{det(0, 0, 10, 10, 2, 0.9)}};
    auto counts = confusion_matrix_counts(dets, gts, 3, 0.5, 0.3);
    CHECK(counts[0][2] == 1);
    CHECK(counts[0][0] == 0);
    CHECK(counts[0][3] == 0);
    CHECK(counts[3][2] == 0);
}

TEST_CASE("confusion score threshold drops weak detections") {
    std::vector<std::vector<GroundTruthInstance>> gts = {{gt(0, 0, 10, 10, 0)}};
    std::vector<std::vector<Detection>> dets = {{det(0, 0, 10, 10, 0, 0.1)}};
    auto counts = confusion_matrix_counts(dets, gts, 3, 0.5, 0.3);
    CHECK(counts[0][0] == 0);
    CHECK(counts[0][3] == 1);  // gt unmatched -> background column
}

TEST_CASE("AP ranking only depends on score order") {
    std::mt19937_64 rng(3);
    std::vector<std::vector<GroundTruthInstance>> gts;
    std::vector<std::vector<Detection>> dets, dets_sq;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int f = 0; f < 4; ++f) {
        std::vector<GroundTruthInstance> g;
        for (int i = 0; i < 3; ++i) {
            double x0 = u(rng) * 20, y0 = u(rng) * 20;
            g.push_back(gt(x0, y0, x0 + 4 + u(rng) * 6, y0 + 4 + u(rng) * 6,
                           static_cast<int>(rng() % 3)));
        }
        gts.push_back(g);
        auto d = random_dets(rng, 6);
        for (auto& gi : g)
            if (rng() % 2)
                d.push_back(det(gi.box.x_min + u(rng), gi.box.y_min, gi.box.x_max, gi.box.y_max,
                                gi.label, u(rng)));
        dets.push_back(d);
        for (auto& x : d) x.score = x.score * x.score;  // strictly monotone on (0,1)
        dets_sq.push_back(d);
    }
    auto a = evaluate(dets, gts, EvalConfig{});
    auto b = evaluate(dets_sq, gts, EvalConfig{});
    CHECK(a.map == doctest::Approx(b.map).epsilon(1e-12));
    CHECK(a.map50 == doctest::Approx(b.map50).epsilon(1e-12));
}

TEST_CASE("report writers are deterministic and timestamp-free") {
    std::vector<std::vector<GroundTruthInstance>> gts = {{gt(0, 0, 10, 10, 0)}};
    std::vector<std::vector<Detection>> dets = {{det(0, 0, 10, 10, 0, 0.9)}};
    auto r = evaluate(dets, gts, EvalConfig{});
    fs::path dir = fs::temp_directory_path() / "vodet_test_report";
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::vector<std::string> names = {"bicycle", "skateboard", "e-scooter"};
    write_report_text(r, names, (dir / "a.txt").string());
    write_report_kv(r, names, (dir / "a.kv").string());
    write_confusion_csv(r, names, (dir / "a.csv").string());
    write_report_text(r, names, (dir / "b.txt").string());
    write_report_kv(r, names, (dir / "b.kv").string());
    write_confusion_csv(r, names, (dir / "b.csv").string());
    CHECK(slurp(dir / "a.txt") == slurp(dir / "b.txt"));
    CHECK(slurp(dir / "a.kv") == slurp(dir / "b.kv"));
    CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
    CHECK(slurp(dir / "a.kv").find("map50") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("prediction export round-trips through the COCO results format") {
    std::vector<std::vector<Detection>> dets = {
        {det(1.25, 2.5, 10.75, 12.0, 0, 0.875), det(3, 4, 9, 11, 2, 0.5)}, {}};
    fs::path dir = fs::temp_directory_path() / "vodet_test_preds";
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::string p = (dir / "preds.json").string();
    export_predictions_coco(dets, p);
    auto back = load_predictions_coco(p, 2);
    REQUIRE(back.size() == 2);
    REQUIRE(back[0].size() == 2);
    CHECK(back[1].empty());
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(back[0][i].label == dets[0][i].label);
        CHECK(back[0][i].score == dets[0][i].score);
        CHECK(back[0][i].box.x_min == doctest::Approx(dets[0][i].box.x_min).epsilon(1e-12));
        CHECK(back[0][i].box.y_max == doctest::Approx(dets[0][i].box.y_max).epsilon(1e-12));
    }
    fs::remove_all(dir);
}
