#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "fmow/error.hpp"
#include "fmow/image_prep.hpp"
#include "fmow/rng.hpp"

using namespace fmow;

namespace {

Raster numbered(std::size_t w, std::size_t h, std::size_t bands) {
    Raster r(w, h, bands);
    for (std::size_t i = 0; i < r.samples.size(); ++i) r.samples[i] = static_cast<float>(i);
    return r;
}

Raster random_raster(std::size_t w, std::size_t h, std::size_t bands, SplitMix64& rng) {
    Raster r(w, h, bands);
    for (float& v : r.samples) v = static_cast<float>(rng.uniform(-5.0, 5.0));
    return r;
}

// Independent construction of the eight symmetries from two primitives.
Raster rot90_cw(const Raster& r) {
    const std::size_t n = r.width;
    Raster out(n, n, r.bands);
    for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x)
            for (std::size_t b = 0; b < r.bands; ++b) out.at(n - 1 - y, x, b) = r.at(x, y, b);
    return out;
}

Raster hflip(const Raster& r) {
    Raster out(r.width, r.height, r.bands);
    for (std::size_t y = 0; y < r.height; ++y)
        for (std::size_t x = 0; x < r.width; ++x)
            for (std::size_t b = 0; b < r.bands; ++b) out.at(r.width - 1 - x, y, b) = r.at(x, y, b);
    return out;
}

Raster oracle_transform(Raster r, int id) {
    if (id >= 4) r = hflip(r);
    for (int k = 0; k < id % 4; ++k) r = rot90_cw(r);
    return r;
}

bool contains(const BoundingBox& outer, const BoundingBox& inner) {
    return inner.x >= outer.x && inner.y >= outer.y && inner.x + inner.w <= outer.x + outer.w &&
           inner.y + inner.h <= outer.y + outer.h;
}

}  // namespace

TEST_CASE("enlarge_box examples") {
    CHECK(enlarge_box({100, 100, 40, 20}, 0.25, 1000, 1000) == BoundingBox{90, 95, 60, 30});
    CHECK(enlarge_box({100, 100, 40, 20}, 0.0, 1000, 1000) == BoundingBox{100, 100, 40, 20});
    CHECK(enlarge_box({0, 0, 100, 100}, 0.5, 120, 120) == BoundingBox{0, 0, 120, 120});
    CHECK(enlarge_box({10, 10, 10, 10}, 0.5, 1000, 1000) == BoundingBox{5, 5, 20, 20});
    CHECK(enlarge_box({0, 0, 1, 1}, 0.0, 1, 1) == BoundingBox{0, 0, 1, 1});
}

TEST_CASE("enlarge_box is monotone in the context factor") {
    SplitMix64 rng(3);
    for (int i = 0; i < 2000; ++i) {
        const int iw = static_cast<int>(rng.between(1, 3000));
        const int ih = static_cast<int>(rng.between(1, 3000));
        const int x = static_cast<int>(rng.between(0, iw - 1));
        const int y = static_cast<int>(rng.between(0, ih - 1));
        const BoundingBox b{x, y, static_cast<int>(rng.between(1, iw - x)), static_cast<int>(rng.between(1, ih - y))};
        const double c1 = rng.uniform(0.0, 2.0);
        const double c2 = c1 + rng.uniform(0.0, 2.0);
        const BoundingBox e1 = enlarge_box(b, c1, iw, ih);
        const BoundingBox e2 = enlarge_box(b, c2, iw, ih);
        CHECK(static_cast<long long>(e1.w) * e1.h <= static_cast<long long>(e2.w) * e2.h);
        CHECK(contains({0, 0, iw, ih}, e2));
        CHECK(e1.w >= 1);
        CHECK(e1.h >= 1);
    }
}

TEST_CASE("square_box examples") {
    CHECK(square_box({10, 20, 30, 10}, 200, 200) == BoundingBox{10, 10, 30, 30});
    CHECK(square_box({5, 5, 40, 40}, 200, 200) == BoundingBox{5, 5, 40, 40});
    CHECK(square_box({0, 0, 100, 10}, 100, 50) == BoundingBox{25, 0, 50, 50});
    // shifted back inside rather than shrunk
    CHECK(square_box({0, 0, 40, 10}, 200, 200) == BoundingBox{0, 0, 40, 40});
    CHECK(square_box({190, 195, 10, 5}, 200, 200) == BoundingBox{190, 190, 10, 10});
}

TEST_CASE("square_box output is square whenever the image can hold it") {
    SplitMix64 rng(4);
    for (int i = 0; i < 2000; ++i) {
        const int iw = static_cast<int>(rng.between(1, 500));
        const int ih = static_cast<int>(rng.between(1, 500));
        const int x = static_cast<int>(rng.between(0, iw - 1));
        const int y = static_cast<int>(rng.between(0, ih - 1));
        const BoundingBox b{x, y, static_cast<int>(rng.between(1, iw - x)), static_cast<int>(rng.between(1, ih - y))};
        const BoundingBox s = square_box(b, iw, ih);
        CHECK(contains({0, 0, iw, ih}, s));
        CHECK(s.w == s.h);
        if (std::max(b.w, b.h) <= std::min(iw, ih)) CHECK(s.w == std::max(b.w, b.h));
    }
}

TEST_CASE("crop") {
    const Raster r = numbered(5, 4, 2);
    CHECK(crop(r, {0, 0, 5, 4}) == r);
    const Raster px = crop(r, {3, 2, 1, 1});
    CHECK(px.width == 1);
    CHECK(px.at(0, 0, 0) == r.at(3, 2, 0));
    CHECK(px.at(0, 0, 1) == r.at(3, 2, 1));
    // crop of a crop equals the crop of the composed box
    const Raster outer = crop(r, {1, 1, 4, 3});
    CHECK(crop(outer, {1, 0, 2, 2}) == crop(r, {2, 1, 2, 2}));
    CHECK_THROWS_AS(crop(r, {4, 0, 2, 1}), ValidationError);
    CHECK_THROWS_AS(crop(r, {0, 0, 0, 1}), ValidationError);
}

TEST_CASE("resize") {
    SplitMix64 rng(6);
    const Raster r = random_raster(9, 9, 3, rng);
    const Raster same = resize(r, 9);
    for (std::size_t i = 0; i < r.samples.size(); ++i) CHECK(std::abs(same.samples[i] - r.samples[i]) <= 1e-9);

    Raster c(13, 7, 2, 4.25f);
    for (const float v : resize(c, 5).samples) CHECK(v == 4.25f);
    for (const float v : resize(c, 31).samples) CHECK(v == 4.25f);

    Raster two(2, 2, 1);
    two.samples = {0.f, 1.f, 2.f, 3.f};
    const Raster three = resize(two, 3);
    CHECK(three.at(1, 1, 0) == 1.5f);
    CHECK(three.at(0, 0, 0) == 0.0f);  // corner clamps to the source corner
    CHECK(three.at(2, 2, 0) == 3.0f);
}

TEST_CASE("resize stays within each band's input range") {
    SplitMix64 rng(7);
    for (int i = 0; i < 50; ++i) {
        const Raster r = random_raster(static_cast<std::size_t>(rng.between(1, 40)),
                                       static_cast<std::size_t>(rng.between(1, 40)), 2, rng);
        const Raster out = resize(r, static_cast<int>(rng.between(1, 64)), i % 2 ? kernels::Backend::serial
                                                                              : kernels::Backend::parallel);
        for (std::size_t b = 0; b < 2; ++b) {
            float lo = 1e30f, hi = -1e30f;
            for (std::size_t k = b; k < r.samples.size(); k += 2) {
                lo = std::min(lo, r.samples[k]);
                hi = std::max(hi, r.samples[k]);
            }
            for (std::size_t k = b; k < out.samples.size(); k += 2) {
                CHECK(out.samples[k] >= lo);
                CHECK(out.samples[k] <= hi);
            }
        }
    }
}

TEST_CASE("augment matches flips and rotations built independently") {
    const Raster r = numbered(3, 3, 1);
    for (int id = 0; id < kNumAugmentations; ++id) {
        CAPTURE(id);
        CHECK(augment(r, id) == oracle_transform(r, id));
    }
    CHECK(augment(r, 0) == r);
    CHECK(augment(augment(augment(augment(r, 1), 1), 1), 1) == r);
    for (int a = 0; a < 8; ++a)
        for (int b = a + 1; b < 8; ++b) CHECK_FALSE(augment(r, a) == augment(r, b));
    CHECK_THROWS_AS(augment(numbered(3, 2, 1), 1), ValidationError);
    CHECK_THROWS_AS(augment(r, 8), ValidationError);
}

TEST_CASE("composition table and inverses") {
    const Raster r = numbered(4, 4, 2);
    for (int a = 0; a < 8; ++a) {
        for (int b = 0; b < 8; ++b) {
            const int c = compose_transforms(b, a);
            CHECK(c >= 0);
            CHECK(c < 8);
            CHECK(augment(augment(r, a), b) == augment(r, c));
        }
        CHECK(augment(augment(r, a), inverse_transform(a)) == r);
        CHECK(compose_transforms(inverse_transform(a), a) == 0);
    }
}

TEST_CASE("crop after augment equals augment after crop on the mapped box") {
    SplitMix64 rng(8);
    const Raster r = random_raster(12, 12, 2, rng);
    for (int i = 0; i < 300; ++i) {
        const int side = static_cast<int>(rng.between(1, 12));
        const BoundingBox b{static_cast<int>(rng.between(0, 12 - side)), static_cast<int>(rng.between(0, 12 - side)),
                            side, side};
        const int id = static_cast<int>(rng.below(8));
        CHECK(crop(augment(r, id), transform_box(b, id, 12)) == augment(crop(r, b), id));
    }
}

TEST_CASE("plan_prep") {
    const BoundingBox box{10, 20, 30, 10};
    CHECK(plan_prep(box, PrepMode::enlarge, 0.0, 224, 200, 200).adjusted_box == box);
    CHECK(plan_prep({5, 5, 8, 8}, PrepMode::square, 0.5, 224, 200, 200).adjusted_box == BoundingBox{5, 5, 8, 8});
    const PrepPlan plan = plan_prep(box, PrepMode::square, 0.5, 224, 200, 200);
    CHECK(plan.adjusted_box == BoundingBox{10, 10, 30, 30});
    CHECK(parse_plan(serialize_plan(plan)) == plan);
    CHECK_THROWS_AS(plan_prep(box, PrepMode::enlarge, -0.1, 224, 200, 200), ValidationError);
    CHECK_THROWS_AS(plan_prep(box, PrepMode::enlarge, 0.5, 0, 200, 200), ValidationError);

    const Raster img = numbered(200, 200, 1);
    const Raster out = apply_plan(img, plan);
    CHECK(out.width == 224);
    CHECK(out.height == 224);
    CHECK(parse_prep_mode("square") == PrepMode::square);
    CHECK_THROWS_AS(parse_prep_mode("pad"), ValidationError);
}

TEST_CASE("raster container round trip") {
    SplitMix64 rng(9);
    const Raster r = random_raster(7, 3, 4, rng);
    CHECK(decode_raster(encode_raster(r)) == r);
    const auto path = std::filesystem::temp_directory_path() / "fmow_test.raster";
    write_raster(r, path);
    CHECK(read_raster(path) == r);
    std::string bytes = encode_raster(r);
    CHECK_THROWS_AS(decode_raster(bytes.substr(0, bytes.size() - 1)), TruncatedFileError);
    CHECK_THROWS_AS(decode_raster("{\"width\": 2"), ParseError);
}
