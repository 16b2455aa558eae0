#include "fmow/features.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "fmow/error.hpp"

namespace fmow {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

void require_box(const BoundingBox& b, const char* which) {
    if (b.w < 1 || b.h < 1) throw ValidationError(which, "has a zero dimension");
}

}  // namespace

int feature_index(std::string_view name) {
    for (std::size_t i = 0; i < kNumFeatures; ++i) {
        if (kFeatureNames[i] == name) return static_cast<int>(i);
    }
    return -1;
}

NormalizationSpec NormalizationSpec::defaults() {
    NormalizationSpec s;
    auto set = [&s](Feature f, double lo, double hi) { s.ranges[static_cast<std::size_t>(f)] = {lo, hi}; };
    set(Feature::gsd, 0.0, 10.0);
    set(Feature::cloud_cover, 0.0, 100.0);
    set(Feature::off_nadir, 0.0, 60.0);
    set(Feature::year, 2000.0, 2020.0);
    set(Feature::month, 0.0, 11.0);
    set(Feature::day, 0.0, 31.0);
    set(Feature::hour_minute, 0.0, 24.0);
    set(Feature::sun_elev, -90.0, 90.0);
    set(Feature::local_hour, 0.0, 24.0);
    set(Feature::week_day, 0.0, 6.0);
    set(Feature::n_boxes, 0.0, 100.0);
    for (Feature f : {Feature::log_orig_box_w, Feature::log_orig_box_h, Feature::log_adj_box_w,
                      Feature::log_adj_box_h}) {
        set(f, 0.0, 5.0);
    }
    set(Feature::log_aspect, -3.0, 3.0);
    for (Feature f : {Feature::aspect_minmax, Feature::box_img_w_ratio, Feature::box_img_h_ratio,
                      Feature::box_img_minmax_ratio}) {
        set(f, 0.0, 1.0);
    }
    // lon/lat and azimuth components keep the default [-1, 1] pass-through
    return s;
}

NormalizationSpec parse_normalization_spec(std::string_view json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text.begin(), json_text.end());
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("normalization spec: ") + e.what(), e.byte);
    }
    if (!j.is_object()) throw SchemaError("normalization", "expected an object of feature -> {lo, hi}");
    NormalizationSpec spec;
    std::array<bool, kNumFeatures> seen{};
    for (const auto& [name, range] : j.items()) {
        const int idx = feature_index(name);
        if (idx < 0) throw ValidationError(name, "is not a known feature");
        if (!range.is_object() || !range.contains("lo") || !range.contains("hi") || !range["lo"].is_number() ||
            !range["hi"].is_number()) {
            throw SchemaError(name, "expected {\"lo\": number, \"hi\": number}");
        }
        const double lo = range["lo"].get<double>();
        const double hi = range["hi"].get<double>();
        if (!(hi > lo)) throw ValidationError(name, "requires hi > lo");
        spec.ranges[static_cast<std::size_t>(idx)] = {lo, hi};
        seen[static_cast<std::size_t>(idx)] = true;
    }
    for (std::size_t i = 0; i < kNumFeatures; ++i) {
        if (!seen[i]) throw SchemaError(std::string(kFeatureNames[i]), "range missing from normalization spec");
    }
    return spec;
}

NormalizationSpec load_normalization_spec(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open normalization spec " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_normalization_spec(ss.str());
}

std::string serialize_normalization_spec(const NormalizationSpec& spec) {
    nlohmann::ordered_json j;
    for (std::size_t i = 0; i < kNumFeatures; ++i) {
        j[std::string(kFeatureNames[i])] = {{"lo", spec.ranges[i].lo}, {"hi", spec.ranges[i].hi}};
    }
    return j.dump(2) + "\n";
}

DirectionComponents utm_to_direction_components(const UtmZone& utm) {
    const double lon = utm_central_meridian_deg(utm) * kDegToRad;
    const double lat = utm_band_center_lat_deg(utm) * kDegToRad;
    return {std::cos(lon), std::sin(lon), std::sin(lat)};
}

DirectionComponents utm_to_direction_components(std::string_view utm) {
    return utm_to_direction_components(parse_utm(utm));
}

double local_hour_at_longitude(int utc_hour, int utc_minute, double lon_deg) {
    double h = std::fmod(utc_hour + utc_minute / 60.0 + lon_deg / 15.0, 24.0);
    if (h < 0.0) h += 24.0;
    if (h >= 24.0) h -= 24.0;
    return h;
}

double local_hour(const Timestamp& ts, const UtmZone& utm) {
    return local_hour_at_longitude(ts.hour, ts.minute, utm_central_meridian_deg(utm));
}

int week_day(const Timestamp& ts) {
    using namespace std::chrono;
    const year_month_day ymd{year{ts.year}, month{static_cast<unsigned>(ts.month)},
                             day{static_cast<unsigned>(ts.day)}};
    if (!ymd.ok()) throw ValidationError("timestamp_utc", "is not a valid calendar date");
    return static_cast<int>(weekday{sys_days{ymd}}.iso_encoding()) - 1;
}

RawFeatureVector extract_raw_features(const ImageMetadata& meta, const BoundingBox& adjusted_box) {
    const BoundingBox& orig = meta.box();
    require_box(orig, "boxes");
    require_box(adjusted_box, "adjusted_box");

    RawFeatureVector f;
    f[Feature::gsd] = meta.gsd_m;
    f[Feature::cloud_cover] = meta.cloud_cover_pct;
    f[Feature::off_nadir] = meta.off_nadir_deg;

    const DirectionComponents dir = utm_to_direction_components(meta.utm);
    f[Feature::lon_x] = dir.lon_x;
    f[Feature::lon_y] = dir.lon_y;
    f[Feature::lat_z] = dir.lat_z;

    const Timestamp& ts = meta.timestamp_utc;
    f[Feature::year] = ts.year;
    f[Feature::month] = ts.month - 1;
    f[Feature::day] = ts.day;
    f[Feature::hour_minute] = ts.hour + ts.minute / 60.0;

    const double sun_az = meta.sun_azimuth_deg * kDegToRad;
    f[Feature::sun_az_x] = std::cos(sun_az);
    f[Feature::sun_az_y] = std::sin(sun_az);
    f[Feature::sun_elev] = meta.sun_elevation_deg;
    const double tgt_az = meta.target_azimuth_deg * kDegToRad;
    f[Feature::tgt_az_x] = std::cos(tgt_az);
    f[Feature::tgt_az_y] = std::sin(tgt_az);

    f[Feature::local_hour] = local_hour(ts, meta.utm);
    f[Feature::week_day] = week_day(ts);
    f[Feature::n_boxes] = static_cast<double>(meta.boxes.size());

    const double ow = orig.w;
    const double oh = orig.h;
    f[Feature::log_orig_box_w] = std::log10(ow);
    f[Feature::log_orig_box_h] = std::log10(oh);
    f[Feature::log_adj_box_w] = std::log10(static_cast<double>(adjusted_box.w));
    f[Feature::log_adj_box_h] = std::log10(static_cast<double>(adjusted_box.h));
    f[Feature::log_aspect] = std::log10(ow / oh);
    f[Feature::aspect_minmax] = std::min(ow, oh) / std::max(ow, oh);

    const double rw = ow / meta.img_width_px;
    const double rh = oh / meta.img_height_px;
    f[Feature::box_img_w_ratio] = rw;
    f[Feature::box_img_h_ratio] = rh;
    f[Feature::box_img_minmax_ratio] = std::min(rw, rh) / std::max(rw, rh);
    return f;
}

double normalize_value(double v, const FeatureRange& r) {
    double out;
    if (r.lo == -1.0 && r.hi == 1.0) {
        out = v;
    } else {
        out = 2.0 * (v - r.lo) / (r.hi - r.lo) - 1.0;
    }
    return std::clamp(out, -1.0, 1.0);
}

FeatureVector normalize(const RawFeatureVector& raw, const NormalizationSpec& spec) {
    FeatureVector out;
    for (std::size_t i = 0; i < kNumFeatures; ++i) out.values[i] = normalize_value(raw.values[i], spec.ranges[i]);
    return out;
}

}  // namespace fmow
