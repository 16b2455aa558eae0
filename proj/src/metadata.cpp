#include "fmow/metadata.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "fmow/error.hpp"

namespace fmow {

using nlohmann::json;

namespace {

constexpr std::string_view kBandLetters = "CDEFGHJKLMNPQRSTUVWX";

int parse_int_field(std::string_view text, std::size_t pos, std::size_t len, std::string_view what) {
    int value = 0;
    if (pos + len > text.size()) throw ParseError("timestamp too short for " + std::string(what));
    const char* first = text.data() + pos;
    const auto res = std::from_chars(first, first + len, value);
    if (res.ec != std::errc() || res.ptr != first + len) {
        throw ParseError("timestamp: bad " + std::string(what) + " in '" + std::string(text) + "'");
    }
    return value;
}

void expect_char(std::string_view text, std::size_t pos, char c) {
    if (pos >= text.size() || text[pos] != c) {
        throw ParseError("timestamp: expected '" + std::string(1, c) + "' in '" + std::string(text) + "'", pos);
    }
}

const json& require(const json& obj, const char* key) {
    const auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) throw SchemaError(key);
    return *it;
}

double require_number(const json& obj, const char* key) {
    const json& v = require(obj, key);
    if (!v.is_number()) throw SchemaError(key, "expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw ValidationError(key, "must be finite");
    return d;
}

int require_int(const json& obj, const char* key) {
    const json& v = require(obj, key);
    if (!v.is_number_integer()) throw SchemaError(key, "expected an integer");
    return v.get<int>();
}

std::string require_string(const json& obj, const char* key) {
    const json& v = require(obj, key);
    if (!v.is_string()) throw SchemaError(key, "expected a string");
    return v.get<std::string>();
}

void check_range(const char* field, double v, double lo, double hi) {
    if (!(v >= lo && v <= hi)) {
        std::ostringstream os;
        os << "= " << v << " outside [" << lo << ", " << hi << "]";
        throw ValidationError(field, os.str());
    }
}

BoundingBox parse_box(const json& j, std::size_t i) {
    const std::string field = "boxes[" + std::to_string(i) + "]";
    if (!j.is_object()) throw SchemaError(field, "expected an object {x, y, w, h}");
    BoundingBox b;
    for (const char* key : {"x", "y", "w", "h"}) {
        const auto it = j.find(key);
        if (it == j.end() || !it->is_number_integer()) throw SchemaError(field + "." + key);
    }
    b.x = j["x"].get<int>();
    b.y = j["y"].get<int>();
    b.w = j["w"].get<int>();
    b.h = j["h"].get<int>();
    return b;
}

// Clamps a box to the image; the box origin must already lie inside.
BoundingBox clamp_box(BoundingBox b, int img_w, int img_h, std::size_t i) {
    const std::string field = "boxes[" + std::to_string(i) + "]";
    if (b.x < 0 || b.y < 0) throw ValidationError(field, "has negative origin");
    if (b.w < 1 || b.h < 1) throw ValidationError(field, "must have w >= 1 and h >= 1");
    if (b.x >= img_w || b.y >= img_h) throw ValidationError(field, "lies outside the image");
    b.w = std::min(b.w, img_w - b.x);
    b.h = std::min(b.h, img_h - b.y);
    return b;
}

}  // namespace

Timestamp parse_timestamp(std::string_view text) {
    // YYYY-MM-DDTHH:MM:SS[.fff]Z
    Timestamp ts;
    ts.year = parse_int_field(text, 0, 4, "year");
    expect_char(text, 4, '-');
    ts.month = parse_int_field(text, 5, 2, "month");
    expect_char(text, 7, '-');
    ts.day = parse_int_field(text, 8, 2, "day");
    expect_char(text, 10, 'T');
    ts.hour = parse_int_field(text, 11, 2, "hour");
    expect_char(text, 13, ':');
    ts.minute = parse_int_field(text, 14, 2, "minute");
    expect_char(text, 16, ':');
    ts.second = parse_int_field(text, 17, 2, "second");
    std::size_t pos = 19;
    if (pos < text.size() && text[pos] == '.') {
        ++pos;
        int ms = 0;
        int digits = 0;
        while (pos < text.size() && text[pos] >= '0' && text[pos] <= '9') {
            if (digits < 3) ms = ms * 10 + (text[pos] - '0');
            ++digits;
            ++pos;
        }
        if (digits == 0) throw ParseError("timestamp: empty fraction in '" + std::string(text) + "'", pos);
        for (int d = digits; d < 3; ++d) ms *= 10;
        ts.millisecond = ms;
    }
    expect_char(text, pos, 'Z');
    if (pos + 1 != text.size()) throw ParseError("timestamp: trailing characters in '" + std::string(text) + "'", pos + 1);

    using namespace std::chrono;
    const year_month_day ymd{year{ts.year}, month{static_cast<unsigned>(ts.month)},
                             day{static_cast<unsigned>(ts.day)}};
    if (!ymd.ok()) throw ValidationError("timestamp_utc", "is not a valid calendar date");
    if (ts.hour > 23 || ts.minute > 59 || ts.second > 60) {
        throw ValidationError("timestamp_utc", "has an out-of-range time of day");
    }
    return ts;
}

std::string format_timestamp(const Timestamp& ts) {
    char buf[40];
    if (ts.millisecond != 0) {
        std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", ts.year, ts.month, ts.day, ts.hour,
                      ts.minute, ts.second, ts.millisecond);
    } else {
        std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02dZ", ts.year, ts.month, ts.day, ts.hour,
                      ts.minute, ts.second);
    }
    return buf;
}

UtmZone parse_utm(std::string_view text) {
    if (text.size() < 2 || text.size() > 3) throw ValidationError("utm", "must look like '31U'");
    const std::string_view digits = text.substr(0, text.size() - 1);
    int zone = 0;
    const auto res = std::from_chars(digits.data(), digits.data() + digits.size(), zone);
    if (res.ec != std::errc() || res.ptr != digits.data() + digits.size()) {
        throw ValidationError("utm", "zone number is not an integer in '" + std::string(text) + "'");
    }
    if (zone < 1 || zone > 60) throw ValidationError("utm", "zone number " + std::to_string(zone) + " outside [1, 60]");
    char band = text.back();
    if (band >= 'a' && band <= 'z') band = static_cast<char>(band - 'a' + 'A');
    if (kBandLetters.find(band) == std::string_view::npos) {
        throw ValidationError("utm", std::string("band letter '") + band + "' not in C..X excluding I and O");
    }
    return {zone, band};
}

std::string format_utm(const UtmZone& utm) { return std::to_string(utm.zone) + utm.band; }

double utm_central_meridian_deg(const UtmZone& utm) { return 6.0 * utm.zone - 183.0; }

double utm_band_center_lat_deg(const UtmZone& utm) {
    const auto k = kBandLetters.find(utm.band);
    if (k == std::string_view::npos) throw ValidationError("utm", "invalid band letter");
    if (utm.band == 'X') return 78.0;
    return -76.0 + 8.0 * static_cast<double>(k);
}

void validate_metadata(const ImageMetadata& m) {
    if (m.image_id.empty()) throw ValidationError("image_id", "must be nonempty");
    if (!(m.gsd_m > 0.0) || !std::isfinite(m.gsd_m)) throw ValidationError("gsd_m", "must be > 0");
    check_range("cloud_cover_pct", m.cloud_cover_pct, 0.0, 100.0);
    check_range("off_nadir_deg", m.off_nadir_deg, 0.0, 90.0);
    check_range("sun_azimuth_deg", m.sun_azimuth_deg, 0.0, 360.0);
    check_range("sun_elevation_deg", m.sun_elevation_deg, -90.0, 90.0);
    check_range("target_azimuth_deg", m.target_azimuth_deg, 0.0, 360.0);
    if (m.utm.zone < 1 || m.utm.zone > 60) throw ValidationError("utm", "zone number outside [1, 60]");
    if (kBandLetters.find(m.utm.band) == std::string_view::npos) throw ValidationError("utm", "invalid band letter");
    if (m.img_width_px < 1) throw ValidationError("img_width_px", "must be >= 1");
    if (m.img_height_px < 1) throw ValidationError("img_height_px", "must be >= 1");
    if (m.boxes.empty()) throw ValidationError("boxes", "must contain at least one box");
    if (m.box_index >= m.boxes.size()) {
        throw ValidationError("box_index", "= " + std::to_string(m.box_index) + " but only " +
                                               std::to_string(m.boxes.size()) + " boxes");
    }
    for (std::size_t i = 0; i < m.boxes.size(); ++i) {
        const BoundingBox& b = m.boxes[i];
        const std::string field = "boxes[" + std::to_string(i) + "]";
        if (b.x < 0 || b.y < 0) throw ValidationError(field, "has negative origin");
        if (b.w < 1 || b.h < 1) throw ValidationError(field, "must have w >= 1 and h >= 1");
        if (b.x + b.w > m.img_width_px || b.y + b.h > m.img_height_px) {
            throw ValidationError(field, "does not fit within the image");
        }
    }
}

ImageMetadata parse_metadata(std::string_view json_text) {
    json j;
    try {
        j = json::parse(json_text.begin(), json_text.end());
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("malformed JSON: ") + e.what(), e.byte);
    }
    if (!j.is_object()) throw ParseError("metadata record must be a JSON object", 0);

    ImageMetadata m;
    m.image_id = require_string(j, "image_id");
    if (const auto it = j.find("sequence_id"); it != j.end() && !it->is_null()) {
        if (!it->is_string()) throw SchemaError("sequence_id", "expected a string");
        m.sequence_id = it->get<std::string>();
    } else {
        m.sequence_id = m.image_id;
    }
    m.gsd_m = require_number(j, "gsd_m");
    if (const auto it = j.find("cloud_cover_pct"); it != j.end() && !it->is_null()) {
        m.cloud_cover_pct = require_number(j, "cloud_cover_pct");
    } else {
        m.cloud_cover_defaulted = true;
    }
    m.off_nadir_deg = require_number(j, "off_nadir_deg");
    m.utm = parse_utm(require_string(j, "utm"));
    try {
        m.timestamp_utc = parse_timestamp(require_string(j, "timestamp_utc"));
    } catch (const ParseError& e) {
        throw ValidationError("timestamp_utc", e.what());
    }
    m.sun_azimuth_deg = require_number(j, "sun_azimuth_deg");
    m.sun_elevation_deg = require_number(j, "sun_elevation_deg");
    if (const auto it = j.find("target_azimuth_deg"); it != j.end() && !it->is_null()) {
        m.target_azimuth_deg = require_number(j, "target_azimuth_deg");
    } else {
        m.target_azimuth_defaulted = true;
    }
    m.img_width_px = require_int(j, "img_width_px");
    m.img_height_px = require_int(j, "img_height_px");
    if (m.img_width_px < 1) throw ValidationError("img_width_px", "must be >= 1");
    if (m.img_height_px < 1) throw ValidationError("img_height_px", "must be >= 1");

    const json& boxes = require(j, "boxes");
    if (!boxes.is_array()) throw SchemaError("boxes", "expected an array");
    for (std::size_t i = 0; i < boxes.size(); ++i) {
        m.boxes.push_back(clamp_box(parse_box(boxes[i], i), m.img_width_px, m.img_height_px, i));
    }
    const json& bi = require(j, "box_index");
    if (!bi.is_number_integer()) throw SchemaError("box_index", "expected an integer");
    if (bi.get<long long>() < 0) throw ValidationError("box_index", "must be >= 0");
    m.box_index = bi.get<std::size_t>();

    validate_metadata(m);
    return m;
}

std::string serialize_metadata(const ImageMetadata& m) {
    // ordered_json keeps the documented key order in the output
    nlohmann::ordered_json j;
    j["image_id"] = m.image_id;
    j["sequence_id"] = m.sequence_id;
    j["gsd_m"] = m.gsd_m;
    if (!m.cloud_cover_defaulted) j["cloud_cover_pct"] = m.cloud_cover_pct;
    j["off_nadir_deg"] = m.off_nadir_deg;
    j["utm"] = format_utm(m.utm);
    j["timestamp_utc"] = format_timestamp(m.timestamp_utc);
    j["sun_azimuth_deg"] = m.sun_azimuth_deg;
    j["sun_elevation_deg"] = m.sun_elevation_deg;
    if (!m.target_azimuth_defaulted) j["target_azimuth_deg"] = m.target_azimuth_deg;
    j["img_width_px"] = m.img_width_px;
    j["img_height_px"] = m.img_height_px;
    auto boxes = nlohmann::ordered_json::array();
    for (const BoundingBox& b : m.boxes) {
        nlohmann::ordered_json jb;
        jb["x"] = b.x;
        jb["y"] = b.y;
        jb["w"] = b.w;
        jb["h"] = b.h;
        boxes.push_back(std::move(jb));
    }
    j["boxes"] = std::move(boxes);
    j["box_index"] = m.box_index;
    return j.dump();
}

int ClassRegistry::index_of(std::string_view label) const {
    const auto it = std::find(labels.begin(), labels.end(), label);
    return it == labels.end() ? -1 : static_cast<int>(it - labels.begin());
}

ClassRegistry make_class_registry(std::vector<std::string> labels) {
    if (labels.size() != kNumClasses) {
        throw ValidationError("labels", "expected " + std::to_string(kNumClasses) + ", found " +
                                            std::to_string(labels.size()));
    }
    std::set<std::string> seen;
    for (const std::string& l : labels) {
        if (l.empty()) throw ValidationError("labels", "contains an empty label");
        if (l.find_first_of(",\"\n\r") != std::string::npos) {
            throw ValidationError("labels", "label '" + l + "' contains a comma, quote or newline");
        }
        if (!seen.insert(l).second) throw ValidationError("labels", "duplicate label '" + l + "'");
    }
    ClassRegistry r;
    r.labels = std::move(labels);
    r.weights.assign(r.labels.size(), 1.0);
    return r;
}

ClassRegistry default_class_registry() {
    std::vector<std::string> labels = {
        "airstrip",          "barn",           "car_dealership",          "construction_site",
        "crop_field",        "debris_deposition", "educational_institution", "fire_station",
        "golf_course",       "multi-unit_residential", "nuclear_powerplant", "office_building",
        "oil_and_gas_facility", "place_of_worship", "police_station",    "pond",
        "port",              "road_flooding",  "shipyard",                "single-unit_residential",
        "surface_mine",      "tower",          "tunnel_opening",          "wind_farm",
    };
    for (std::size_t i = labels.size(); i < kNumClasses - 1; ++i) labels.push_back("class_" + std::to_string(i));
    labels.emplace_back("false_detection");
    return make_class_registry(std::move(labels));
}

ClassRegistry load_class_registry(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open class registry " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string text = ss.str();

    std::vector<std::string> labels;
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '[') {
        json j;
        try {
            j = json::parse(text);
        } catch (const json::parse_error& e) {
            throw ParseError(std::string("class registry: ") + e.what(), e.byte);
        }
        for (const json& v : j) {
            if (!v.is_string()) throw SchemaError("labels", "expected an array of strings");
            labels.push_back(v.get<std::string>());
        }
    } else {
        std::istringstream lines(text);
        std::string line;
        while (std::getline(lines, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            labels.push_back(line);
        }
        while (!labels.empty() && labels.back().empty()) labels.pop_back();
    }
    return make_class_registry(std::move(labels));
}

void load_class_weights(ClassRegistry& registry, const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open class weights " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("class weights: ") + e.what(), e.byte);
    }
    if (!j.is_object()) throw SchemaError("weights", "expected an object mapping label to weight");
    for (const auto& [label, value] : j.items()) {
        const int idx = registry.index_of(label);
        if (idx < 0) throw ValidationError("weights", "unknown label '" + label + "'");
        if (!value.is_number() || !(value.get<double>() > 0.0)) {
            throw ValidationError("weights", "weight for '" + label + "' must be a positive number");
        }
        registry.weights[static_cast<std::size_t>(idx)] = value.get<double>();
    }
}

}  // namespace fmow
