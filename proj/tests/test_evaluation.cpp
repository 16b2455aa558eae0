#include <doctest.h>

#include <algorithm>
#include <set>

#include <json.hpp>

#include "fmow/error.hpp"
#include "fmow/evaluation.hpp"
#include "fmow/oracle.hpp"
#include "fmow/rng.hpp"

using namespace fmow;

namespace {

ConfusionMatrix toy() { return ConfusionMatrix(2, {5, 1, 2, 2}); }

ImageMetadata record(double cloud, int w, int h) {
    ImageMetadata m;
    m.image_id = "r";
    m.gsd_m = 1.0;
    m.cloud_cover_pct = cloud;
    m.img_width_px = 200;
    m.img_height_px = 200;
    m.boxes = {{0, 0, w, h}};
    return m;
}

}  // namespace

TEST_CASE("confusion matrix accumulation") {
    const std::vector<int> none;
    CHECK(confusion_matrix(none, none).total() == 0);
    const std::vector<int> t = {3}, p = {3};
    const ConfusionMatrix one = confusion_matrix(t, p);
    CHECK(one.at(3, 3) == 1);
    CHECK(one.total() == 1);

    const std::vector<int> t2 = {0, 0, 1, 4, 4, 4}, p2 = {0, 1, 1, 4, 0, 62};
    const ConfusionMatrix m = confusion_matrix(t2, p2);
    CHECK(m.row_sum(0) == 2);
    CHECK(m.row_sum(4) == 3);
    CHECK(m.col_sum(0) == 2);
    CHECK(m.trace() == 3);

    const std::vector<int> bad_t = {1, 2, 63}, bad_p = {1, 2, 3};
    CHECK_THROWS_WITH_AS(confusion_matrix(bad_t, bad_p), doctest::Contains("pairs[2]"), ValidationError);
    const std::vector<int> neg = {1, -1};
    CHECK_THROWS_AS(confusion_matrix(neg, neg), ValidationError);
    CHECK_THROWS_AS(confusion_matrix(t2, t), ValidationError);
}

TEST_CASE("two-class toy matrix") {
    const auto pc = per_class_metrics(toy());
    CHECK(pc[0].precision == 5.0 / 7.0);
    CHECK(pc[0].recall == 5.0 / 6.0);
    CHECK(pc[0].f1 == doctest::Approx(10.0 / 13.0).epsilon(1e-15));
    CHECK(pc[1].precision == 2.0 / 3.0);
    CHECK(pc[1].recall == 0.5);
    CHECK(pc[1].f1 == doctest::Approx(4.0 / 7.0).epsilon(1e-15));
    CHECK(accuracy(toy()) == 0.7);
    const std::vector<double> w = {1.0, 1.0};
    const double wf1 = weighted_f1(pc, w);
    CHECK(wf1 == doctest::Approx(0.6703).epsilon(1e-4));
    CHECK(competition_score(wf1) == 670330);
    CHECK(wf1 == macro_f1(pc));
    const std::vector<double> one_sided = {1.0, 1e-300};
    CHECK(weighted_f1(pc, one_sided) == doctest::Approx(pc[0].f1).epsilon(1e-15));
}

TEST_CASE("metric conventions") {
    ConfusionMatrix diag(4);
    for (std::size_t c = 0; c < 4; ++c) diag.at(c, c) = 3;
    for (const ClassMetrics& m : per_class_metrics(diag)) {
        CHECK(m.precision == 1.0);
        CHECK(m.recall == 1.0);
        CHECK(m.f1 == 1.0);
    }
    CHECK(accuracy(diag) == 1.0);

    ConfusionMatrix anti(2, {0, 3, 4, 0});
    CHECK(accuracy(anti) == 0.0);

    ConfusionMatrix gap(3, {2, 0, 0, 0, 0, 0, 0, 0, 1});
    const auto pc = per_class_metrics(gap);
    CHECK(pc[1].precision == 0.0);
    CHECK(pc[1].recall == 0.0);
    CHECK(pc[1].f1 == 0.0);
    CHECK_THROWS_AS(accuracy(ConfusionMatrix(3)), ValidationError);
    const std::vector<double> short_w = {1.0};
    CHECK_THROWS_AS(weighted_f1(pc, short_w), ValidationError);
    const std::vector<double> zero_w = {1.0, 0.0, 1.0};
    CHECK_THROWS_AS(weighted_f1(pc, zero_w), ValidationError);
    CHECK_THROWS_AS(ConfusionMatrix(2, {1, 2, 3}), ValidationError);
}

TEST_CASE("score mapping") {
    CHECK(competition_score(0.765663) == 765663);
    CHECK(competition_score(1.0) == 1000000);
    CHECK(competition_score(0.0) == 0);
}

TEST_CASE("metrics agree with the brute-force oracle") {
    SplitMix64 rng(17);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t n = static_cast<std::size_t>(rng.between(1, 3000));
        std::vector<int> t(n), p(n);
        for (std::size_t i = 0; i < n; ++i) {
            t[i] = static_cast<int>(rng.below(63));
            p[i] = rng.bernoulli(0.6) ? t[i] : static_cast<int>(rng.below(63));
        }
        std::vector<double> w(63);
        for (double& x : w) x = rng.uniform(0.1, 3.0);
        const ConfusionMatrix m = confusion_matrix(t, p, 63, trial % 2 ? kernels::Backend::serial
                                                                       : kernels::Backend::parallel);
        const oracle::Metrics o = oracle::metrics(t, p, 63, w);
        for (std::size_t a = 0; a < 63; ++a)
            for (std::size_t b = 0; b < 63; ++b) REQUIRE(m.at(a, b) == o.confusion[a][b]);
        const auto pc = per_class_metrics(m);
        for (std::size_t c = 0; c < 63; ++c) {
            CHECK(std::abs(pc[c].precision - o.precision[c]) <= 1e-12);
            CHECK(std::abs(pc[c].recall - o.recall[c]) <= 1e-12);
            CHECK(std::abs(pc[c].f1 - o.f1[c]) <= 1e-12);
            CHECK(pc[c].f1 <= std::min(1.0, 2.0 * std::min(pc[c].precision, pc[c].recall)) + 1e-15);
        }
        CHECK(std::abs(accuracy(m) - o.accuracy) <= 1e-12);
        CHECK(std::abs(macro_f1(pc) - o.macro_f1) <= 1e-12);
        CHECK(std::abs(weighted_f1(pc, w) - o.weighted_f1) <= 1e-12);
    }
}

TEST_CASE("sharded counts merge to the full matrix") {
    SplitMix64 rng(18);
    std::vector<int> t(5000), p(5000);
    for (std::size_t i = 0; i < t.size(); ++i) {
        t[i] = static_cast<int>(rng.below(63));
        p[i] = static_cast<int>(rng.below(63));
    }
    const std::span<const int> ts(t), ps(p);
    ConfusionMatrix merged = confusion_matrix(ts.subspan(0, 1234), ps.subspan(0, 1234));
    merged += confusion_matrix(ts.subspan(1234), ps.subspan(1234));
    CHECK(merged == confusion_matrix(t, p));
}

TEST_CASE("report formats") {
    const ClassRegistry reg = default_class_registry();
    const std::vector<int> t = {0, 0, 1, 62}, p = {0, 1, 1, 62};
    const EvalReport r = make_report(confusion_matrix(t, p), reg.weights);
    CHECK(r.n_records == 4);
    CHECK(r.accuracy == 0.75);
    const auto j = nlohmann::json::parse(report_json(r, reg));
    CHECK(j["score"] == r.score);
    CHECK(j["classes"].size() == 63);
    CHECK(j["confusion"].size() == 63);
    const std::string csv = confusion_csv(r.confusion, reg);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 64);
    CHECK(report_text(r, reg).find("false_detection") != std::string::npos);
}

TEST_CASE("training filter") {
    CHECK(drop_reason(record(41.0, 50, 50)) == DropReason::cloud_cover);
    CHECK(drop_reason(record(10.0, 4, 100)) == DropReason::box_size);
    CHECK_FALSE(drop_reason(record(40.0, 5, 5)).has_value());
    CHECK(drop_reason(record(90.0, 2, 2)) == DropReason::cloud_cover);

    const std::vector<ImageMetadata> rs = {record(0, 10, 10), record(41, 10, 10), record(0, 4, 9), record(40, 5, 5)};
    const FilterResult f = filter_training_records(rs);
    CHECK(f.kept == std::vector<std::size_t>{0, 3});
    REQUIRE(f.dropped.size() == 2);
    CHECK(f.dropped[0].index == 1);
    CHECK(f.dropped[1].reason == DropReason::box_size);
    CHECK(std::string(to_string(DropReason::cloud_cover)) == "cloud_cover");
}

TEST_CASE("false detection split") {
    const SplitResult ten = split_false_detections(10, 1);
    CHECK(ten.train.size() == 9);
    CHECK(ten.val.size() == 1);
    const SplitResult big = split_false_detections(11000, 2);
    CHECK(big.train.size() == 9900);
    CHECK(big.val.size() == 1100);
    CHECK(split_false_detections(11000, 2).train == big.train);
    CHECK(split_false_detections(11000, 3).train != big.train);
    std::set<std::size_t> all(big.train.begin(), big.train.end());
    all.insert(big.val.begin(), big.val.end());
    CHECK(all.size() == 11000);
    CHECK(*all.rbegin() == 10999);
    CHECK(split_false_detections(11, 0).train.size() == 10);  // ceil(9.9)
    CHECK(split_false_detections(0, 0).train.empty());

    const std::vector<int> labels(20, kFalseDetectionClass);
    CHECK(split_false_detections(labels, 4).train.size() == 18);
    std::vector<int> mixed = labels;
    mixed[3] = 0;
    CHECK_THROWS_AS(split_false_detections(mixed, 4), ValidationError);
}
