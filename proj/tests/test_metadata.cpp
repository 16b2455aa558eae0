#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "fmow/error.hpp"
#include "fmow/metadata.hpp"
#include "fmow/rng.hpp"
#include "fmow/text.hpp"

using namespace fmow;
using nlohmann::json;

namespace {

json base_record() {
    return json{{"image_id", "img_1"},
                {"sequence_id", "seq_1"},
                {"gsd_m", 0.5},
                {"cloud_cover_pct", 10.0},
                {"off_nadir_deg", 20.0},
                {"utm", "31U"},
                {"timestamp_utc", "2016-07-01T12:00:00Z"},
                {"sun_azimuth_deg", 140.0},
                {"sun_elevation_deg", 55.0},
                {"target_azimuth_deg", 200.0},
                {"img_width_px", 1000},
                {"img_height_px", 800},
                {"boxes", json::array({json{{"x", 100}, {"y", 120}, {"w", 40}, {"h", 20}}})},
                {"box_index", 0}};
}

std::filesystem::path temp_file(const std::string& name, const std::string& contents) {
    const auto path = std::filesystem::temp_directory_path() / ("fmow_test_" + name);
    write_file(path, contents);
    return path;
}

}  // namespace

TEST_CASE("parse_metadata reads the documented fields") {
    const ImageMetadata m = parse_metadata(base_record().dump());
    CHECK(m.image_id == "img_1");
    CHECK(m.sequence_id == "seq_1");
    CHECK(m.gsd_m == 0.5);
    CHECK(m.utm == UtmZone{31, 'U'});
    CHECK(m.timestamp_utc == Timestamp{2016, 7, 1, 12, 0, 0, 0});
    CHECK(m.box() == BoundingBox{100, 120, 40, 20});
    CHECK_FALSE(m.cloud_cover_defaulted);
    CHECK_FALSE(m.target_azimuth_defaulted);
}

TEST_CASE("out-of-range values name the field") {
    json r = base_record();
    r["cloud_cover_pct"] = 101;
    try {
        parse_metadata(r.dump());
        FAIL("expected a validation error");
    } catch (const ValidationError& e) {
        CHECK(e.field() == "cloud_cover_pct");
    }

    r = base_record();
    r["sun_elevation_deg"] = -90.5;
    CHECK_THROWS_AS(parse_metadata(r.dump()), ValidationError);
    r = base_record();
    r["gsd_m"] = 0.0;
    CHECK_THROWS_AS(parse_metadata(r.dump()), ValidationError);
    r = base_record();
    r["box_index"] = 1;
    CHECK_THROWS_AS(parse_metadata(r.dump()), ValidationError);
}

TEST_CASE("band letters I and O are not UTM bands") {
    json r = base_record();
    for (const char* bad : {"31I", "31O", "61U", "0U", "31B", "31Y"}) {
        r["utm"] = bad;
        CAPTURE(bad);
        try {
            parse_metadata(r.dump());
            FAIL("expected a validation error");
        } catch (const ValidationError& e) {
            CHECK(e.field() == "utm");
        }
    }
}

TEST_CASE("malformed JSON reports a byte offset") {
    const std::string text = R"({"image_id": "a", "gsd_m": })";
    try {
        parse_metadata(text);
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.byte_offset() > 20);
        CHECK(e.byte_offset() <= text.size());
    }
}

TEST_CASE("missing required fields raise a schema error naming them") {
    for (const char* field : {"image_id", "gsd_m", "utm", "timestamp_utc", "img_width_px", "boxes", "box_index"}) {
        json r = base_record();
        r.erase(field);
        CAPTURE(field);
        try {
            parse_metadata(r.dump());
            FAIL("expected a schema error");
        } catch (const SchemaError& e) {
            CHECK(e.field() == field);
        }
    }
}

TEST_CASE("optional fields take defaults and are flagged") {
    json r = base_record();
    r.erase("cloud_cover_pct");
    r.erase("target_azimuth_deg");
    r.erase("sequence_id");
    const ImageMetadata m = parse_metadata(r.dump());
    CHECK(m.cloud_cover_pct == 0.0);
    CHECK(m.target_azimuth_deg == 0.0);
    CHECK(m.cloud_cover_defaulted);
    CHECK(m.target_azimuth_defaulted);
    CHECK(m.sequence_id == "img_1");
    CHECK(parse_metadata(serialize_metadata(m)) == m);
}

TEST_CASE("boxes are clamped to the image") {
    json r = base_record();
    r["boxes"] = json::array({json{{"x", 950}, {"y", 790}, {"w", 100}, {"h", 30}}});
    const ImageMetadata m = parse_metadata(r.dump());
    CHECK(m.box() == BoundingBox{950, 790, 50, 10});
    r["boxes"] = json::array({json{{"x", 1000}, {"y", 0}, {"w", 10}, {"h", 10}}});
    CHECK_THROWS_AS(parse_metadata(r.dump()), ValidationError);
    r["boxes"] = json::array({json{{"x", 10}, {"y", 0}, {"w", 0}, {"h", 10}}});
    CHECK_THROWS_AS(parse_metadata(r.dump()), ValidationError);
}

TEST_CASE("timestamps parse and reject impossible dates") {
    CHECK(parse_timestamp("2017-08-07T23:59:59.25Z") == Timestamp{2017, 8, 7, 23, 59, 59, 250});
    CHECK(format_timestamp(parse_timestamp("2017-08-07T23:59:59.250Z")) == "2017-08-07T23:59:59.250Z");
    CHECK_THROWS_AS(parse_timestamp("2017-02-29T00:00:00Z"), ValidationError);
    CHECK_THROWS_AS(parse_timestamp("2017-08-07 12:00:00Z"), ParseError);
    CHECK_THROWS_AS(parse_timestamp("2017-08-07T12:00:00"), ParseError);
    CHECK_NOTHROW(parse_timestamp("2016-02-29T00:00:00Z"));
}

TEST_CASE("band centers follow the 8 degree table with a 12 degree X band") {
    // Published MGRS bands: C starts at -80, each 8 degrees, X covers 72..84.
    const std::string letters = "CDEFGHJKLMNPQRSTUVW";
    for (std::size_t k = 0; k < letters.size(); ++k) {
        const double south = -80.0 + 8.0 * static_cast<double>(k);
        CHECK(utm_band_center_lat_deg({1, letters[k]}) == south + 4.0);
    }
    CHECK(utm_band_center_lat_deg({1, 'X'}) == 78.0);
    CHECK(utm_band_center_lat_deg({1, 'M'}) == -4.0);
    CHECK(utm_band_center_lat_deg({1, 'N'}) == 4.0);
    CHECK(utm_central_meridian_deg({31, 'U'}) == 3.0);
    CHECK(utm_central_meridian_deg({1, 'C'}) == -177.0);
    CHECK(utm_central_meridian_deg({60, 'C'}) == 177.0);
}

TEST_CASE("parse, serialize, parse is the identity on random records") {
    SplitMix64 rng(99);
    const std::string bands = "CDEFGHJKLMNPQRSTUVWX";
    for (int trial = 0; trial < 500; ++trial) {
        json r = base_record();
        r["image_id"] = "img_" + std::to_string(trial);
        r["gsd_m"] = rng.uniform(0.01, 20.0);
        r["cloud_cover_pct"] = rng.uniform(0.0, 100.0);
        r["off_nadir_deg"] = rng.uniform(0.0, 90.0);
        r["utm"] = std::to_string(rng.between(1, 60)) + bands[rng.below(bands.size())];
        char ts[40];
        std::snprintf(ts, sizeof ts, "%04d-%02d-%02dT%02d:%02d:%02dZ", static_cast<int>(rng.between(2000, 2020)),
                      static_cast<int>(rng.between(1, 12)), static_cast<int>(rng.between(1, 28)),
                      static_cast<int>(rng.between(0, 23)), static_cast<int>(rng.between(0, 59)),
                      static_cast<int>(rng.between(0, 59)));
        r["timestamp_utc"] = ts;
        r["sun_azimuth_deg"] = rng.uniform(0.0, 360.0);
        r["sun_elevation_deg"] = rng.uniform(-90.0, 90.0);
        r["target_azimuth_deg"] = rng.uniform(0.0, 360.0);
        const int w = static_cast<int>(rng.between(1, 5000));
        const int h = static_cast<int>(rng.between(1, 5000));
        r["img_width_px"] = w;
        r["img_height_px"] = h;
        json boxes = json::array();
        const int n_boxes = static_cast<int>(rng.between(1, 4));
        for (int b = 0; b < n_boxes; ++b) {
            boxes.push_back(json{{"x", rng.between(0, w - 1)},
                                 {"y", rng.between(0, h - 1)},
                                 {"w", rng.between(1, 6000)},
                                 {"h", rng.between(1, 6000)}});
        }
        r["boxes"] = boxes;
        r["box_index"] = rng.below(static_cast<std::uint64_t>(n_boxes));
        if (rng.bernoulli(0.2)) r.erase("cloud_cover_pct");
        if (rng.bernoulli(0.2)) r.erase("target_azimuth_deg");

        const ImageMetadata m = parse_metadata(r.dump());
        CHECK_NOTHROW(validate_metadata(m));
        for (const BoundingBox& b : m.boxes) {
            CHECK(b.x + b.w <= m.img_width_px);
            CHECK(b.y + b.h <= m.img_height_px);
            CHECK(b.w >= 1);
            CHECK(b.h >= 1);
        }
        const ImageMetadata again = parse_metadata(serialize_metadata(m));
        REQUIRE(again == m);
        CHECK(serialize_metadata(again) == serialize_metadata(m));
    }
}

TEST_CASE("class registry loading") {
    std::string lines;
    for (int i = 0; i < 62; ++i) lines += "class_" + std::to_string(i) + "\n";
    CHECK_THROWS_WITH_AS(load_class_registry(temp_file("reg62.txt", lines)), doctest::Contains("expected 63, found 62"),
                         ValidationError);

    const ClassRegistry reg = load_class_registry(temp_file("reg63.txt", lines + "false_detection\n\n"));
    CHECK(reg.size() == 63);
    CHECK(reg.labels.back() == "false_detection");
    CHECK(reg.index_of("class_5") == 5);
    CHECK(reg.index_of("nope") == -1);
    CHECK(reg.weights == std::vector<double>(63, 1.0));

    std::string dup = lines;
    dup.replace(dup.find("class_7\n"), 8, "class_3\n");
    CHECK_THROWS_WITH_AS(load_class_registry(temp_file("regdup.txt", dup + "false_detection\n")),
                         doctest::Contains("class_3"), ValidationError);

    json arr = json::array();
    for (const auto& l : reg.labels) arr.push_back(l);
    CHECK(load_class_registry(temp_file("reg.json", arr.dump())).labels == reg.labels);
}

TEST_CASE("class weights file") {
    ClassRegistry reg = default_class_registry();
    load_class_weights(reg, temp_file("weights.json", R"({"port": 2.5, "shipyard": 0.5})"));
    CHECK(reg.weights[static_cast<std::size_t>(reg.index_of("port"))] == 2.5);
    CHECK(reg.weights[static_cast<std::size_t>(reg.index_of("shipyard"))] == 0.5);
    CHECK(reg.weights[0] == 1.0);
    CHECK_THROWS_AS(load_class_weights(reg, temp_file("w_bad.json", R"({"port": 0})")), ValidationError);
    CHECK_THROWS_AS(load_class_weights(reg, temp_file("w_unknown.json", R"({"harbor": 1})")), ValidationError);
}

TEST_CASE("committed class list matches the built-in registry") {
    const ClassRegistry file = load_class_registry(std::filesystem::path(FMOW_SOURCE_DIR) / "config/classes.txt");
    const ClassRegistry builtin = default_class_registry();
    CHECK(file.labels == builtin.labels);
    CHECK(builtin.labels[kFalseDetectionClass] == "false_detection");
}
